use std::collections::HashMap;

use netdyn::symreg::{BinaryOp, Expr, UnaryOp};
use netdyn::topology::{gen_er, perturb_topology};
use proptest::prelude::*;

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x", "y", "xi", "xj"]).prop_map(Expr::var),
        (-50i32..50).prop_map(|k| Expr::Const(k as f64 / 8.0)),
    ];
    leaf.prop_recursive(5, 64, 2, |inner| {
        prop_oneof![
            (prop::sample::select(UnaryOp::ALL.to_vec()), inner.clone())
                .prop_map(|(op, a)| Expr::unary(op, a)),
            (
                prop::sample::select(BinaryOp::ALL.to_vec()),
                inner.clone(),
                inner
            )
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prefix_round_trip(e in expr_strategy()) {
        let tokens = e.to_prefix();
        let back = Expr::parse_prefix(&tokens).unwrap();
        prop_assert_eq!(&back, &e);
        prop_assert_eq!(back.to_prefix(), tokens);
    }

    #[test]
    fn infix_round_trip(e in expr_strategy()) {
        let back = Expr::parse_infix(&e.to_infix()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn compiled_matches_tree(e in expr_strategy(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let vars = ["x", "y", "xi", "xj"];
        let point = [x, y, x * 0.5, y - 1.0];
        let bind: HashMap<String, f64> = vars.iter().zip(point).map(|(k, v)| (k.to_string(), v)).collect();
        let tree = e.eval(&bind).ok();
        let prog = e.compile(&vars).unwrap();
        let compiled = prog.eval_point(&point, &mut Vec::new());
        match (tree, compiled) {
            (Some(a), Some(b)) => prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{} vs {}", a, b),
            (None, None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?} for {}", a, b, e),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbation_flips_are_nested(n in 5usize..30, seed in 0u64..1000, lo in 0.0f64..0.5, gap in 0.0f64..0.5) {
        let t = gen_er(n, 0.3, seed).unwrap();
        let flipped = |eta: f64| {
            let p = perturb_topology(&t, eta, seed + 1).unwrap();
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i < j && (t.weight(i, j) != 0.0) != (p.weight(i, j) != 0.0))
                .collect::<Vec<_>>()
        };
        let small = flipped(lo);
        let large = flipped(lo + gap);
        prop_assert!(small.iter().all(|f| large.contains(f)));
        prop_assert!(flipped(0.0).is_empty());
    }

    #[test]
    fn permutation_preserves_degree_multiset(n in 3usize..25, seed in 0u64..1000) {
        let t = gen_er(n, 0.3, seed).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        let p = t.permuted(&perm);
        let mut a = t.degrees();
        let mut b = p.degrees();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}
