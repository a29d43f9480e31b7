//! Window selection, smoothing, differentiation and assembly of
//! (state, neighbour state, derivative) training samples.

mod filters;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::rng;
use crate::topology::Topology;

pub use filters::{five_point_derivative, sg_smooth, Derivative};

/// Annealing schedule for [`select_interval`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaConfig {
    /// Initial temperature; `None` uses the objective spread over 20 random probes.
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default = "default_cooling")]
    pub cooling: f64,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cooling() -> f64 {
    0.95
}

fn default_iters() -> usize {
    200
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            t0: None,
            cooling: default_cooling(),
            iters: default_iters(),
            seed: 0,
        }
    }
}

/// Selected window `[0, t_star]` sampled with `s_steps` steps of `delta_t`.
/// `stride` is the number of trajectory samples per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalChoice {
    pub t_star: f64,
    pub s_steps: usize,
    pub delta_t: f64,
    pub stride: usize,
    pub objective_value: f64,
}

impl IntervalChoice {
    /// Window covering the first `s_steps + 1` samples at full resolution.
    pub fn full_resolution(traj: &Trajectory, s_steps: usize) -> Result<Self> {
        let s = s_steps.min(traj.len().saturating_sub(1));
        if s < 4 {
            return Err(Error::invalid("window must contain at least 5 samples"));
        }
        Ok(Self {
            t_star: s as f64 * traj.dt,
            s_steps: s,
            delta_t: traj.dt,
            stride: 1,
            objective_value: f64::NAN,
        })
    }

    fn sample_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.s_steps).map(move |k| k * self.stride)
    }
}

/// Smoothness-plus-settling objective of the window with the given stride.
fn interval_objective(traj: &Trajectory, s_steps: usize, stride: usize, lambda: f64) -> f64 {
    let dt = traj.dt * stride as f64;
    let tail = 10.min(s_steps);
    let mut total = 0.0;
    let mut buf = Vec::with_capacity(s_steps + 1);
    for i in 0..traj.n {
        for dim in 0..traj.d {
            buf.clear();
            let w = traj.n * traj.d;
            buf.extend((0..=s_steps).map(|k| traj.states[k * stride * w + i * traj.d + dim]));
            let der = five_point_derivative(&buf, dt)
                .expect("window has >= 5 samples")
                .values;
            let rough: f64 = der.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
            let end = der[s_steps];
            let settle: f64 = der[s_steps - tail..=s_steps]
                .iter()
                .map(|v| (v - end).powi(2))
                .sum();
            total += rough + lambda * settle;
        }
    }
    total
}

/// Choose the window end T by simulated annealing over grid-aligned
/// candidates `T = stride · s_steps · δt`, starting from the longest window.
pub fn select_interval(
    traj: &Trajectory,
    s_steps: usize,
    lambda: f64,
    sa: &SaConfig,
) -> Result<IntervalChoice> {
    if traj.len() < 5 {
        return Err(Error::invalid(format!(
            "trajectory has {} samples, need >= 5",
            traj.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    if !(sa.cooling > 0.0 && sa.cooling < 1.0) {
        return Err(Error::invalid("cooling factor must lie in (0, 1)"));
    }
    let s = s_steps.min(traj.len() - 1);
    if s < 4 {
        return Err(Error::invalid("s_steps must be >= 4"));
    }
    let max_stride = (traj.len() - 1) / s;
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut objective = |r: usize| {
        *cache
            .entry(r)
            .or_insert_with(|| interval_objective(traj, s, r, lambda))
    };

    let mut rng = rng::seeded(sa.seed);
    let mut current = max_stride;
    let mut current_val = objective(current);
    let (mut best, mut best_val) = (current, current_val);

    if sa.iters > 0 && max_stride > 1 {
        let mut temp = match sa.t0 {
            Some(t) => t,
            None => {
                let probes: Vec<f64> = (0..20)
                    .map(|_| objective(rng.random_range(1..=max_stride)))
                    .collect();
                let hi = probes.iter().cloned().fold(f64::MIN, f64::max);
                let lo = probes.iter().cloned().fold(f64::MAX, f64::min);
                hi - lo
            }
        };
        let reach = (max_stride / 4).max(1);
        for _ in 0..sa.iters {
            let lo = current.saturating_sub(reach).max(1);
            let hi = (current + reach).min(max_stride);
            let cand = rng.random_range(lo..=hi);
            if cand == current {
                temp *= sa.cooling;
                continue;
            }
            let val = objective(cand);
            let accept = val <= current_val
                || (temp > 0.0 && rng.random::<f64>() < ((current_val - val) / temp).exp());
            if accept {
                current = cand;
                current_val = val;
                if val < best_val {
                    best = cand;
                    best_val = val;
                }
            }
            temp *= sa.cooling;
        }
    }
    let delta_t = best as f64 * traj.dt;
    Ok(IntervalChoice {
        t_star: delta_t * s as f64,
        s_steps: s,
        delta_t,
        stride: best,
        objective_value: best_val,
    })
}

/// Objective values for every admissible stride (test and diagnostics aid).
pub fn interval_scan(traj: &Trajectory, s_steps: usize, lambda: f64) -> Vec<(f64, f64)> {
    let s = s_steps.min(traj.len().saturating_sub(1));
    if s < 4 {
        return Vec::new();
    }
    let max_stride = (traj.len() - 1) / s;
    (1..=max_stride)
        .map(|r| {
            (
                r as f64 * s as f64 * traj.dt,
                interval_objective(traj, s, r, lambda),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothConfig {
    /// Apply Savitzky–Golay smoothing before differentiating.
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_polyorder")]
    pub polyorder: usize,
    /// Drop samples whose derivative came from a one-sided stencil.
    #[serde(default = "default_true")]
    pub interior_only: bool,
    #[serde(default = "default_val_ratio")]
    pub val_ratio: f64,
}

fn default_window() -> usize {
    7
}

fn default_polyorder() -> usize {
    3
}

fn default_true() -> bool {
    true
}

fn default_val_ratio() -> f64 {
    0.2
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            window: default_window(),
            polyorder: default_polyorder(),
            interior_only: true,
            val_ratio: default_val_ratio(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Per-timestamp node states and derivative targets on a fixed topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub n: usize,
    pub d: usize,
    pub topology: Topology,
    pub times: Vec<f64>,
    /// `states[(k * n + i) * d + dim]`
    pub states: Vec<f64>,
    pub targets: Vec<f64>,
    pub split: Vec<Split>,
}

impl TrainingSet {
    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn num_samples(&self) -> usize {
        self.times.len() * self.n
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.states[k * w..(k + 1) * w]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.targets[k * w..(k + 1) * w]
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.times.len())
            .filter(|&k| self.split[k] == which)
            .collect()
    }

    /// Variance of all target entries (used for relative thresholds).
    pub fn target_variance(&self) -> f64 {
        let m = self.targets.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / m;
        self.targets.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m
    }

    /// Per-dimension `(min, max)` of the states.
    pub fn state_ranges(&self) -> Vec<(f64, f64)> {
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); self.d];
        for chunk in self.states.chunks(self.d) {
            for (k, &v) in chunk.iter().enumerate() {
                r[k].0 = r[k].0.min(v);
                r[k].1 = r[k].1.max(v);
            }
        }
        r
    }

    /// CSV `node,t,x...,xdot...,split`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,t");
        for k in 0..self.d {
            let _ = write!(s, ",x{k}");
        }
        for k in 0..self.d {
            let _ = write!(s, ",xdot{k}");
        }
        s.push_str(",split\n");
        for (k, &t) in self.times.iter().enumerate() {
            let tag = match self.split[k] {
                Split::Train => "train",
                Split::Val => "val",
            };
            for i in 0..self.n {
                let _ = write!(s, "{i},{t}");
                let base = (k * self.n + i) * self.d;
                for v in &self.states[base..base + self.d] {
                    let _ = write!(s, ",{v}");
                }
                for v in &self.targets[base..base + self.d] {
                    let _ = write!(s, ",{v}");
                }
                let _ = writeln!(s, ",{tag}");
            }
        }
        s
    }
}

/// Smooth (optionally), differentiate and split the selected window.
pub fn build_training_pairs(
    traj: &Trajectory,
    topology: &Topology,
    choice: &IntervalChoice,
    smooth: &SmoothConfig,
    split_seed: u64,
) -> Result<TrainingSet> {
    let (n, d) = (traj.n, traj.d);
    if topology.n() != n {
        return Err(Error::shape(format!(
            "topology has {} nodes, trajectory {n}",
            topology.n()
        )));
    }
    let last = choice.s_steps * choice.stride;
    if choice.stride == 0 || last >= traj.len() {
        return Err(Error::invalid("interval exceeds trajectory"));
    }
    if !(0.0..1.0).contains(&smooth.val_ratio) {
        return Err(Error::invalid("validation ratio must lie in [0, 1)"));
    }
    let idx: Vec<usize> = choice.sample_indices().collect();
    let m = idx.len();
    let w = n * d;
    let mut xs = vec![0.0; m * w];
    let mut dxs = vec![0.0; m * w];
    let mut boundary = vec![false; m];
    let mut buf = vec![0.0; m];
    for i in 0..n {
        for dim in 0..d {
            for (k, &src) in idx.iter().enumerate() {
                buf[k] = traj.states[src * w + i * d + dim];
            }
            let series = if smooth.enabled {
                sg_smooth(&buf, smooth.window, smooth.polyorder)?
            } else {
                buf.clone()
            };
            let der = five_point_derivative(&series, choice.delta_t)?;
            for k in 0..m {
                xs[k * w + i * d + dim] = series[k];
                dxs[k * w + i * d + dim] = der.values[k];
                boundary[k] |= der.boundary[k];
            }
        }
    }
    let keep: Vec<usize> = (0..m)
        .filter(|&k| !(smooth.interior_only && boundary[k]))
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid(
            "window is empty after excluding boundary samples",
        ));
    }
    let mut states = Vec::with_capacity(keep.len() * w);
    let mut targets = Vec::with_capacity(keep.len() * w);
    let mut times = Vec::with_capacity(keep.len());
    for &k in &keep {
        states.extend_from_slice(&xs[k * w..(k + 1) * w]);
        targets.extend_from_slice(&dxs[k * w..(k + 1) * w]);
        times.push(k as f64 * choice.delta_t);
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite derivative targets"));
    }
    let count = keep.len();
    let n_val = (smooth.val_ratio * count as f64).floor() as usize;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::seeded(split_seed));
    let mut split = vec![Split::Train; count];
    for &k in &order[..n_val] {
        split[k] = Split::Val;
    }
    Ok(TrainingSet {
        n,
        d,
        topology: topology.clone(),
        times,
        states,
        targets,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        builtin_rhs, simulate_dataset, DynamicsSpec, InitDist, Model, TableRow, TrajectoryMeta,
    };
    use crate::topology::{gen_er, parse_edge_list};

    fn single(series: Vec<f64>, dt: f64) -> Trajectory {
        Trajectory::new(1, 1, dt, series, TrajectoryMeta::default())
    }

    #[test]
    fn constant_trajectory_objective_zero() {
        let t = single(vec![3.0; 200], 0.01);
        let c = select_interval(&t, 20, 1.0, &SaConfig::default()).unwrap();
        assert_eq!(c.objective_value, 0.0);
        assert!(c.t_star > 0.0 && c.t_star <= t.duration() + 1e-12);
        assert!((c.delta_t * c.s_steps as f64 - c.t_star).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_keeps_initial() {
        let t = single((0..400).map(|k| (-(k as f64) * 0.01).exp()).collect(), 0.01);
        let cfg = SaConfig {
            iters: 0,
            ..SaConfig::default()
        };
        let c = select_interval(&t, 20, 1.0, &cfg).unwrap();
        assert_eq!(c.stride, 399 / 20);
    }

    #[test]
    fn annealing_matches_grid_scan() {
        let t = single(
            (0..3001).map(|k| (-(k as f64) * 0.01).exp()).collect(),
            0.01,
        );
        let c = select_interval(
            &t,
            50,
            1.0,
            &SaConfig {
                seed: 3,
                ..SaConfig::default()
            },
        )
        .unwrap();
        let scan = interval_scan(&t, 50, 1.0);
        let best = scan.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let full = scan.last().unwrap().1;
        assert!(c.objective_value <= full);
        assert!(
            c.objective_value <= best * 1.05 + 1e-300,
            "{} vs {}",
            c.objective_value,
            best
        );
    }

    #[test]
    fn objective_shift_invariant() {
        let base: Vec<f64> = (0..500).map(|k| (k as f64 * 0.02).sin()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 7.0).collect();
        let a = interval_scan(&single(base, 0.01), 25, 0.5);
        let b = interval_scan(&single(shifted, 0.01), 25, 0.5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.1 - y.1).abs() <= 1e-9 * x.1.abs().max(1.0));
        }
    }

    #[test]
    fn too_short_trajectory() {
        assert!(select_interval(&single(vec![1.0; 4], 0.1), 4, 1.0, &SaConfig::default()).is_err());
    }

    #[test]
    fn pair_counts_and_split() {
        let path = parse_edge_list("0 1\n1 2\n", false, false, false).unwrap();
        let states: Vec<f64> = (0..100)
            .flat_map(|k| {
                let t = k as f64 * 0.01;
                [t.sin(), t.cos(), t * t]
            })
            .collect();
        let traj = Trajectory::new(3, 1, 0.01, states, TrajectoryMeta::default());
        let choice = IntervalChoice::full_resolution(&traj, 99).unwrap();
        let ts = build_training_pairs(&traj, &path, &choice, &SmoothConfig::default(), 1).unwrap();
        assert_eq!(ts.num_samples(), 3 * 96);
        assert_eq!(ts.indices(Split::Train).len(), 77);
        assert_eq!(ts.indices(Split::Val).len(), 19);
        // first kept time is the third sample
        assert!((ts.times[0] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn lv_targets_match_model() {
        let topo = gen_er(10, 0.3, 2).unwrap();
        let spec = DynamicsSpec::new(Model::Lv);
        let row = TableRow::default_for(Model::Lv);
        let traj =
            simulate_dataset(&spec, &topo, InitDist::default_for(Model::Lv), row, 4).unwrap();
        let choice = IntervalChoice::full_resolution(&traj, 1000).unwrap();
        let ts = build_training_pairs(&traj, &topo, &choice, &SmoothConfig::default(), 0).unwrap();
        let mut rel = Vec::new();
        for k in 0..ts.num_times() {
            let exact = builtin_rhs(&spec, &topo, ts.state(k), 0.0).unwrap();
            for (a, b) in exact.iter().zip(ts.target(k)) {
                rel.push((a - b).abs() / a.abs().max(1e-12));
            }
        }
        rel.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            rel[rel.len() / 2] < 1e-3,
            "median rel {}",
            rel[rel.len() / 2]
        );
    }

    #[test]
    fn interior_only_drops_boundary_targets() {
        let traj = single((0..30).map(|k| (k as f64 * 0.1).powi(2)).collect(), 0.1);
        let topo = Topology::empty(1, false);
        let choice = IntervalChoice::full_resolution(&traj, 29).unwrap();
        let with =
            build_training_pairs(&traj, &topo, &choice, &SmoothConfig::default(), 0).unwrap();
        assert_eq!(with.num_times(), 26);
        let cfg = SmoothConfig {
            interior_only: false,
            ..SmoothConfig::default()
        };
        let without = build_training_pairs(&traj, &topo, &choice, &cfg, 0).unwrap();
        assert_eq!(without.num_times(), 30);
    }

    #[test]
    fn csv_header() {
        let traj = single((0..10).map(|k| k as f64).collect(), 1.0);
        let topo = Topology::empty(1, false);
        let choice = IntervalChoice::full_resolution(&traj, 9).unwrap();
        let ts = build_training_pairs(&traj, &topo, &choice, &SmoothConfig::default(), 0).unwrap();
        let csv = ts.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("node,t,x0,xdot0,split"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        assert_eq!(row[2], "2");
        assert!((row[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(csv.lines().count(), 1 + 6);
    }
}
