//! Decoupling quality on simulated epidemic dynamics.

use netdyn::decoupler::{query_inter, query_self, train_decoupler, TrainConfig};
use netdyn::dynamics::{simulate_dataset, DynamicsSpec, InitDist, Model, TableRow};
use netdyn::preprocess::{build_training_pairs, IntervalChoice, SmoothConfig};
use netdyn::topology::gen_er;

fn r2(truth: &[f64], pred: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    1.0 - res / ss
}

#[test]
fn epi_decoupler_separates_terms() {
    let topo = gen_er(20, 0.2, 1).unwrap();
    let spec = DynamicsSpec::new(Model::Epi);
    let traj = simulate_dataset(
        &spec,
        &topo,
        InitDist::default_for(Model::Epi),
        TableRow::default_for(Model::Epi),
        3,
    )
    .unwrap();
    let choice = IntervalChoice {
        t_star: 1.0,
        s_steps: 100,
        delta_t: 10.0 * traj.dt,
        stride: 10,
        objective_value: f64::NAN,
    };
    let ts = build_training_pairs(&traj, &topo, &choice, &SmoothConfig::default(), 0).unwrap();
    let (model, log) = train_decoupler(&ts, &TrainConfig::default()).unwrap();
    let scale = ts.target_variance().sqrt();
    assert!(
        log.best_val_loss < 1e-2 * scale,
        "val loss {} vs scale {scale}",
        log.best_val_loss
    );

    let (lo, hi) = ts.state_ranges()[0];
    let at = |k: usize| lo + (hi - lo) * k as f64 / 19.0;
    let grid: Vec<(Vec<f64>, Vec<f64>)> = (0..400)
        .map(|k| (vec![at(k / 20)], vec![at(k % 20)]))
        .collect();
    let inter: Vec<f64> = query_inter(&model, 0, &grid)
        .unwrap()
        .into_iter()
        .map(|v| v[0])
        .collect();
    let truth: Vec<f64> = grid.iter().map(|(a, b)| b[0] * (1.0 - a[0])).collect();
    let fit = r2(&truth, &inter);
    assert!(fit > 0.95, "interaction R² {fit}");

    let xs: Vec<Vec<f64>> = (0..20).map(|k| vec![at(k)]).collect();
    let own: Vec<f64> = query_self(&model, 0, &xs)
        .unwrap()
        .into_iter()
        .map(|v| v[0])
        .collect();
    let neg: Vec<f64> = xs.iter().map(|x| -x[0]).collect();
    assert!(r2(&neg, &own) > 0.95);
}
