//! Scalar performance measures for discovered models.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::symreg::search::linear_parts;
use crate::symreg::{library::lstsq_pinv, Expr, FunctionLibrary};

fn check_same(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "truth has {} entries, prediction {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::shape("empty input"));
    }
    Ok(())
}

fn check_layout(len: usize, n: usize, d: usize) -> Result<usize> {
    let w = n * d;
    if w == 0 || len % w != 0 {
        return Err(Error::shape(format!(
            "{len} entries do not form rows of {n} nodes x {d} dims"
        )));
    }
    Ok(len / w)
}

/// Coefficient of determination over time-major rows of `n` nodes with `d`
/// dimensions each; the reference at each time is the mean over nodes.
pub fn r2_score(truth: &[f64], pred: &[f64], n: usize, d: usize) -> Result<f64> {
    check_same(truth, pred)?;
    let t_len = check_layout(truth.len(), n, d)?;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for t in 0..t_len {
        let row = &truth[t * n * d..(t + 1) * n * d];
        let prow = &pred[t * n * d..(t + 1) * n * d];
        for r in 0..d {
            let mean = (0..n).map(|i| row[i * d + r]).sum::<f64>() / n as f64;
            for i in 0..n {
                ss_tot += (row[i * d + r] - mean).powi(2);
                ss_res += (row[i * d + r] - prow[i * d + r]).powi(2);
            }
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::Undefined(
            "R² of a truth that is constant across nodes".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Largest Euclidean distance between any two true node states. Exact for
/// up to 4000 distinct points; beyond that the search is restricted to the
/// extreme points along the axes and 128 fixed directions.
pub fn max_state_distance(states: &[f64], d: usize) -> f64 {
    if d == 1 {
        let lo = states.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = states.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return if hi >= lo { hi - lo } else { 0.0 };
    }
    let pts: Vec<&[f64]> = states.chunks(d).collect();
    let cand: Vec<&[f64]> = if pts.len() <= 4000 {
        pts
    } else {
        let mut rng = rng::seeded(0x0ED);
        let mut dirs: Vec<Vec<f64>> = (0..d)
            .map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..128 {
            dirs.push((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        let mut idx = Vec::new();
        for dir in &dirs {
            let proj = |p: &[f64]| p.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>();
            let lo = (0..pts.len())
                .min_by(|&a, &b| proj(pts[a]).total_cmp(&proj(pts[b])))
                .unwrap();
            let hi = (0..pts.len())
                .max_by(|&a, &b| proj(pts[a]).total_cmp(&proj(pts[b])))
                .unwrap();
            idx.push(lo);
            idx.push(hi);
        }
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| pts[i]).collect()
    };
    let mut best: f64 = 0.0;
    for a in 0..cand.len() {
        for b in a + 1..cand.len() {
            let dist2: f64 = cand[a]
                .iter()
                .zip(cand[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            best = best.max(dist2);
        }
    }
    best.sqrt()
}

/// Per-node normalized Euclidean distance between true and predicted
/// (state, derivative) trajectories, normalized by the largest distance
/// between true states.
pub fn ned_score(
    truth: &[f64],
    pred: &[f64],
    truth_dot: &[f64],
    pred_dot: &[f64],
    n: usize,
    d: usize,
) -> Result<Vec<f64>> {
    check_same(truth, pred)?;
    check_same(truth, truth_dot)?;
    check_same(truth, pred_dot)?;
    let t_len = check_layout(truth.len(), n, d)?;
    let d_max = max_state_distance(truth, d);
    if d_max == 0.0 {
        return Err(Error::Undefined("NED with identical true states".into()));
    }
    let mut ned = vec![0.0; n];
    for t in 0..t_len {
        for (i, acc) in ned.iter_mut().enumerate() {
            let base = t * n * d + i * d;
            let mut s = 0.0;
            for k in base..base + d {
                s += (truth[k] - pred[k]).powi(2) + (truth_dot[k] - pred_dot[k]).powi(2);
            }
            *acc += s.sqrt();
        }
    }
    ned.iter_mut().for_each(|v| *v /= d_max);
    Ok(ned)
}

fn support_overlap(a: &[f64], b: &[f64]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| **x != 0.0 && **y != 0.0)
        .count()
}

fn nonzero(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Share of true nonzero coefficients that are also nonzero in the prediction.
pub fn recall(xi_true: &[f64], xi_pred: &[f64]) -> Result<f64> {
    check_same(xi_true, xi_pred)?;
    let den = nonzero(xi_true);
    if den == 0 {
        return Err(Error::Undefined(
            "recall with an all-zero true coefficient vector".into(),
        ));
    }
    Ok(support_overlap(xi_true, xi_pred) as f64 / den as f64)
}

/// Share of predicted nonzero coefficients that are nonzero in the truth.
pub fn precision(xi_true: &[f64], xi_pred: &[f64]) -> Result<f64> {
    check_same(xi_true, xi_pred)?;
    let den = nonzero(xi_pred);
    if den == 0 {
        return Err(Error::Undefined(
            "precision with an all-zero predicted coefficient vector".into(),
        ));
    }
    Ok(support_overlap(xi_true, xi_pred) as f64 / den as f64)
}

pub fn recall_precision(xi_true: &[f64], xi_pred: &[f64]) -> Result<(f64, f64)> {
    Ok((recall(xi_true, xi_pred)?, precision(xi_true, xi_pred)?))
}

/// Relative L2 distance between coefficient vectors.
pub fn l2_coeff_error(xi_true: &[f64], xi_pred: &[f64]) -> Result<f64> {
    check_same(xi_true, xi_pred)?;
    let norm = xi_true.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Undefined(
            "L2 error against a zero true coefficient vector".into(),
        ));
    }
    let diff = xi_true
        .iter()
        .zip(xi_pred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MreMae {
    pub mre: f64,
    pub mae: f64,
    /// Truth entries equal to zero, left out of the relative error.
    pub excluded_zeros: usize,
}

/// Mean relative and mean absolute error over all entries.
pub fn mre_mae(truth: &[f64], pred: &[f64]) -> Result<MreMae> {
    check_same(truth, pred)?;
    let mut rel = 0.0;
    let mut used = 0usize;
    let mut abs = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        abs += (t - p).abs();
        if *t != 0.0 {
            rel += ((t - p) / t).abs();
            used += 1;
        }
    }
    Ok(MreMae {
        mre: if used > 0 {
            rel / used as f64
        } else {
            f64::NAN
        },
        mae: abs / truth.len() as f64,
        excluded_zeros: truth.len() - used,
    })
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_same(truth, pred)?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Deterministic probe points in `[lo, hi]` for coefficient matching.
pub fn probe_points(m: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|_| (0..m).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

/// Coefficients of `expr` on a reference library plus the total magnitude
/// of additive pieces the library cannot represent. Each additive term is
/// matched by least squares on the probe points; exact matches distribute
/// their coefficient, the rest land in the residual slot.
pub fn library_coefficients(
    expr: &Expr,
    library: &FunctionLibrary,
    probe: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    let vars: Vec<&str> = library.vars.iter().map(String::as_str).collect();
    let rows: Vec<f64> = probe.iter().flatten().copied().collect();
    let m = probe.len();
    let mut theta = DMatrix::zeros(m, library.len());
    for (c, term) in library.terms.iter().enumerate() {
        let v = term.compile(&vars)?.eval_rows(&rows)?;
        theta.column_mut(c).copy_from_slice(&v);
    }
    let (c0, mut parts) = linear_parts(expr);
    if c0 != 0.0 {
        parts.push((c0, Expr::Const(1.0)));
    }
    let mut xi = vec![0.0; library.len()];
    let mut other = 0.0;
    for (coef, term) in parts {
        let Ok(v) = term.compile(&vars).and_then(|p| p.eval_rows(&rows)) else {
            other += coef.abs();
            continue;
        };
        let y = DVector::from_vec(v);
        let scale = y.norm().max(1e-300);
        let w = lstsq_pinv(&theta, &y);
        match w {
            Some(w) if (&theta * &w - &y).norm() <= 1e-8 * scale => {
                let wmax = w.amax();
                for (k, wk) in w.iter().enumerate() {
                    if wk.abs() > 1e-9 * wmax {
                        xi[k] += coef * wk;
                    }
                }
            }
            _ => other += coef.abs(),
        }
    }
    Ok((xi, other))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2: Option<f64>,
    pub mre: Option<f64>,
    pub mae: Option<f64>,
    pub excluded_zeros: usize,
    pub l2_error: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    /// Mean squared error of the discovered right-hand side against the
    /// true one on the clean states of the inference window.
    pub derivative_mse: Option<f64>,
    /// Mean squared error between the integrated trajectories.
    pub trajectory_mse: Option<f64>,
    pub ned: Vec<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text metrics table.
    pub fn table(&self) -> String {
        let mut s = String::from("metric           value\n");
        let fmt = |v: Option<f64>| {
            v.filter(|x| x.is_finite())
                .map_or("n/a".to_string(), |x| format!("{x:.6e}"))
        };
        for (name, v) in [
            ("r2", self.r2),
            ("mre", self.mre),
            ("mae", self.mae),
            ("l2_error", self.l2_error),
            ("recall", self.recall),
            ("precision", self.precision),
            ("derivative_mse", self.derivative_mse),
            ("trajectory_mse", self.trajectory_mse),
        ] {
            let _ = writeln!(s, "{name:<16} {}", fmt(v));
        }
        let _ = writeln!(s, "{:<16} {}", "excluded_zeros", self.excluded_zeros);
        if !self.ned.is_empty() {
            let mean = self.ned.iter().sum::<f64>() / self.ned.len() as f64;
            let _ = writeln!(s, "{:<16} {}", "ned_mean", fmt(Some(mean)));
        }
        s
    }
}

/// Per-node NED as CSV `node,ned`.
pub fn ned_csv(ned: &[f64]) -> String {
    let mut s = String::from("node,ned\n");
    for (i, v) in ned.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_cases() {
        assert_eq!(
            r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 3, 1).unwrap(),
            1.0
        );
        assert_eq!(
            r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], 3, 1).unwrap(),
            0.0
        );
        assert!((r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 3, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(r2_score(&[1.0, 1.0], &[1.0, 2.0], 2, 1).is_err());
        assert!(r2_score(&[1.0, 2.0], &[1.0], 2, 1).is_err());
    }

    #[test]
    fn r2_uses_per_time_mean() {
        // rows differ in level; the per-time mean removes the level
        let truth = [0.0, 2.0, 10.0, 12.0];
        let pred = [1.0, 1.0, 11.0, 11.0];
        assert_eq!(r2_score(&truth, &pred, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn ned_cases() {
        let x = [0.0, 1.0, 1.0, 3.0];
        let dx = [1.0, 1.0, 0.0, 2.0];
        assert_eq!(ned_score(&x, &x, &dx, &dx, 2, 1).unwrap(), vec![0.0, 0.0]);
        // hand oracle: D_max = 3, node 0 errors (0.3, 0.4) at t=0 and 0 at t=1
        let px = [0.3, 1.0, 1.0, 3.0];
        let pdx = [1.4, 1.0, 0.0, 2.0];
        let ned = ned_score(&x, &px, &dx, &pdx, 2, 1).unwrap();
        assert!((ned[0] - 0.5 / 3.0).abs() < 1e-15 && ned[1] == 0.0);
        // doubling every error doubles the score
        let px2 = [0.6, 1.0, 1.0, 3.0];
        let pdx2 = [1.8, 1.0, 0.0, 2.0];
        let ned2 = ned_score(&x, &px2, &dx, &pdx2, 2, 1).unwrap();
        assert!((ned2[0] - 2.0 * ned[0]).abs() < 1e-15);
        assert!(ned_score(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], 2, 1).is_err());
    }

    #[test]
    fn ned_is_node_equivariant() {
        let x = [0.0, 1.0, 2.0, 1.5, 0.5, 3.0];
        let p = [0.1, 1.2, 2.0, 1.0, 0.5, 2.0];
        let z = [0.0; 6];
        let ned = ned_score(&x, &p, &z, &z, 3, 1).unwrap();
        let perm = |v: &[f64]| vec![v[2], v[0], v[1], v[5], v[3], v[4]];
        let ned_p = ned_score(&perm(&x), &perm(&p), &z, &z, 3, 1).unwrap();
        assert_eq!(ned_p, vec![ned[2], ned[0], ned[1]]);
    }

    #[test]
    fn state_diameter_matches_brute_force() {
        let pts: Vec<f64> = (0..30)
            .flat_map(|k| {
                [
                    (k as f64 * 0.7).sin(),
                    (k as f64 * 0.3).cos(),
                    k as f64 * 0.01,
                ]
            })
            .collect();
        let mut best: f64 = 0.0;
        for a in pts.chunks(3) {
            for b in pts.chunks(3) {
                best = best.max(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt(),
                );
            }
        }
        assert!((max_state_distance(&pts, 3) - best).abs() < 1e-15);
    }

    #[test]
    fn recall_precision_worked_example() {
        let t = [1.0, 1.0, 0.0, 0.0, 0.0];
        let p = [1.0, 0.0, 1.0, 0.0, 0.0];
        assert_eq!(recall_precision(&t, &p).unwrap(), (0.5, 0.5));
        assert_eq!(recall_precision(&t, &t).unwrap(), (1.0, 1.0));
        let z = [0.0; 5];
        assert_eq!(recall(&t, &z).unwrap(), 0.0);
        assert!(matches!(precision(&t, &z), Err(Error::Undefined(_))));
        let scaled: Vec<f64> = p.iter().map(|v| v * 7.5).collect();
        assert_eq!(recall_precision(&t, &scaled).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2_coeff_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((l2_coeff_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(l2_coeff_error(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        let mut rng = rng::seeded(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let na = nalgebra::DVector::from_column_slice(&a);
            let nb = nalgebra::DVector::from_column_slice(&b);
            let oracle = (&nb - &na).norm() / na.norm();
            assert!((l2_coeff_error(&a, &b).unwrap() - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn mre_mae_cases() {
        let m = mre_mae(&[2.0], &[1.0]).unwrap();
        assert_eq!((m.mre, m.mae), (0.5, 1.0));
        let m = mre_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mre, m.mae), (0.0, 0.0));
        let t = [1.0, -2.0, 0.0, 4.0];
        let p = [1.5, -1.0, 0.2, 3.0];
        let a = mre_mae(&t, &p).unwrap();
        let ts: Vec<f64> = t.iter().map(|v| v * 3.0).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * 3.0).collect();
        let b = mre_mae(&ts, &ps).unwrap();
        assert!((a.mre - b.mre).abs() < 1e-15 && (3.0 * a.mae - b.mae).abs() < 1e-14);
        assert_eq!(a.excluded_zeros, 1);
    }

    #[test]
    fn coefficients_on_reference_library() {
        let vars = vec!["xi".to_string(), "xj".to_string()];
        let lib = FunctionLibrary::from_infix(vars, &["1", "xi", "xi * xj", "xj"]).unwrap();
        let probe = probe_points(2, 40, 0.1, 2.0, 1);
        let e = Expr::parse_infix("3 * (xj * xi) + 0.5 - 2 * (xj - xi * xj)").unwrap();
        let (xi, other) = library_coefficients(&e, &lib, &probe).unwrap();
        assert_eq!(other, 0.0);
        let want = [0.5, 0.0, 5.0, -2.0];
        for (a, b) in xi.iter().zip(want) {
            assert!((a - b).abs() < 1e-10, "{xi:?}");
        }
        let (_, other) =
            library_coefficients(&Expr::parse_infix("sin(xi) + xj").unwrap(), &lib, &probe)
                .unwrap();
        assert_eq!(other, 1.0);
    }
}
