use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{grid_len, DynamicsSpec, Model, NetworkRhs};
use crate::dynamics::ode::{solve_uniform, Tolerances};
use crate::error::{Error, Result};
use crate::rng;
use crate::topology::Topology;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub spec: Option<DynamicsSpec>,
    pub seed: Option<u64>,
    /// End of the inference window (T).
    pub t_train: Option<f64>,
    /// End of the prediction window (T_end).
    pub t_end: Option<f64>,
    pub topology_file: Option<String>,
    /// Target SNR of injected observation noise; absent for clean data.
    pub snr_db: Option<f64>,
}

/// Uniformly sampled states, `states[(k * n + i) * d + dim]` at `t = k * dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    pub d: usize,
    pub dt: f64,
    pub states: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(n: usize, d: usize, dt: f64, states: Vec<f64>, meta: TrajectoryMeta) -> Self {
        assert_eq!(
            states.len() % (n * d).max(1),
            0,
            "state length not a multiple of n*d"
        );
        Self {
            n,
            d,
            dt,
            states,
            meta,
        }
    }

    /// Number of time samples.
    pub fn len(&self) -> usize {
        self.states.len() / (self.n * self.d).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Flat `n × d` state at sample `k`.
    pub fn state(&self, k: usize) -> &[f64] {
        let w = self.n * self.d;
        &self.states[k * w..(k + 1) * w]
    }

    /// Time series of node `i`, dimension `dim`.
    pub fn series(&self, i: usize, dim: usize) -> Vec<f64> {
        let w = self.n * self.d;
        (0..self.len())
            .map(|k| self.states[k * w + i * self.d + dim])
            .collect()
    }

    pub fn set_series(&mut self, i: usize, dim: usize, values: &[f64]) {
        let w = self.n * self.d;
        for (k, v) in values.iter().enumerate() {
            self.states[k * w + i * self.d + dim] = *v;
        }
    }

    /// First `samples` samples.
    pub fn truncated(&self, samples: usize) -> Trajectory {
        let w = self.n * self.d;
        let samples = samples.min(self.len());
        Trajectory {
            states: self.states[..samples * w].to_vec(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("trajectory spacing must be positive"));
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory contains non-finite states"));
        }
        Ok(())
    }

    /// Long-format CSV with header `t,node,dim,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.states.len() * 24);
        s.push_str("t,node,dim,value\n");
        for k in 0..self.len() {
            let t = k as f64 * self.dt;
            for i in 0..self.n {
                for dim in 0..self.d {
                    let v = self.states[(k * self.n + i) * self.d + dim];
                    let _ = writeln!(s, "{t},{i},{dim},{v}");
                }
            }
        }
        s
    }

    pub fn from_csv(text: &str, meta: TrajectoryMeta) -> Result<Trajectory> {
        let mut rows = Vec::new();
        let (mut n, mut d) = (0usize, 0usize);
        let mut times: Vec<f64> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with('t')) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "expected t,node,dim,value".into(),
                });
            }
            let perr = |what: &str| Error::Parse {
                line: line_no,
                msg: format!("invalid {what}"),
            };
            let t: f64 = f[0].parse().map_err(|_| perr("time"))?;
            let i: usize = f[1].parse().map_err(|_| perr("node"))?;
            let k: usize = f[2].parse().map_err(|_| perr("dim"))?;
            let v: f64 = f[3].parse().map_err(|_| perr("value"))?;
            if times.last().is_none_or(|&last| t > last) {
                times.push(t);
            } else if t < *times.last().unwrap() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "times must be non-decreasing".into(),
                });
            }
            n = n.max(i + 1);
            d = d.max(k + 1);
            rows.push((times.len() - 1, i, k, v));
        }
        if times.len() < 2 {
            return Err(Error::invalid(
                "trajectory CSV needs at least two time samples",
            ));
        }
        let dt = times[1] - times[0];
        for (k, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "non-uniform spacing at sample {}",
                    k + 1
                )));
            }
        }
        if times[0].abs() > 1e-12 {
            return Err(Error::invalid("trajectory must start at t = 0"));
        }
        let mut states = vec![f64::NAN; times.len() * n * d];
        for (k, i, dim, v) in rows {
            states[(k * n + i) * d + dim] = v;
        }
        if states.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(
                "trajectory CSV has missing (time, node, dim) entries",
            ));
        }
        Ok(Trajectory {
            n,
            d,
            dt,
            states,
            meta,
        })
    }

    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        std::fs::write(csv_path, self.to_csv())?;
        std::fs::write(sidecar_path(csv_path), self.sidecar_json()?)?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>) -> Result<Trajectory> {
        let csv_path = csv_path.as_ref();
        let side = sidecar_path(csv_path);
        let meta = if side.exists() {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&side)?)?;
            serde_json::from_value(v["meta"].clone()).unwrap_or_default()
        } else {
            TrajectoryMeta::default()
        };
        Trajectory::from_csv(&std::fs::read_to_string(csv_path)?, meta)
    }

    /// Metadata sidecar: model, params, δt, T, T_end, seed, topology file.
    pub fn sidecar_json(&self) -> Result<String> {
        let spec = self.meta.spec.as_ref();
        let v = serde_json::json!({
            "model": spec.map(|s| s.model),
            "params": spec.map(|s| &s.params),
            "node_params": spec.map(|s| &s.node_params),
            "dt": self.dt,
            "T": self.meta.t_train,
            "T_end": self.meta.t_end,
            "seed": self.meta.seed,
            "topology_file": self.meta.topology_file,
            "n": self.n,
            "d": self.d,
            "meta": self.meta,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDist {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    Constant { value: f64 },
}

impl InitDist {
    pub fn default_for(model: Model) -> Self {
        match model {
            Model::Lv => InitDist::Uniform { lo: 0.0, hi: 5.0 },
            Model::Epi => InitDist::Uniform { lo: 0.0, hi: 1.0 },
            Model::Bio | Model::Gene | Model::Mi | Model::Neur | Model::Custom => {
                InitDist::Uniform { lo: 0.0, hi: 2.0 }
            }
            Model::Kuramoto => InitDist::Uniform {
                lo: 0.0,
                hi: 2.0 * std::f64::consts::PI,
            },
            Model::Fhn | Model::Lorenz | Model::Rossler | Model::PredatorPrey => {
                InitDist::Gaussian {
                    mean: 0.0,
                    std: 1.0,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InitDist::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::invalid(format!("uniform({lo}, {hi}) is empty")))
            }
            InitDist::Gaussian { mean, std }
                if !(mean.is_finite() && std.is_finite() && std >= 0.0) =>
            {
                Err(Error::invalid(
                    "gaussian initial condition needs finite mean and std >= 0",
                ))
            }
            InitDist::Constant { value } if !value.is_finite() => {
                Err(Error::invalid("non-finite constant"))
            }
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut rng::Rng, count: usize) -> Vec<f64> {
        match *self {
            InitDist::Uniform { lo, hi } => (0..count).map(|_| rng.random_range(lo..hi)).collect(),
            InitDist::Gaussian { mean, std } => (0..count)
                .map(|_| {
                    mean + std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                })
                .collect(),
            InitDist::Constant { value } => vec![value; count],
        }
    }
}

/// Sampling interval δt, inference end T and prediction end T_end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dt: f64,
    pub t_train: f64,
    pub t_end: f64,
}

impl TableRow {
    pub fn default_for(model: Model) -> Self {
        let (dt, t_train, t_end) = match model {
            Model::Bio => (1e-4, 0.1, 0.5),
            Model::Gene => (0.01, 5.0, 10.0),
            Model::Mi => (1e-3, 1.0, 5.0),
            Model::Lv => (1e-4, 0.1, 0.5),
            Model::Neur => (0.01, 5.0, 10.0),
            Model::Epi => (1e-3, 1.0, 5.0),
            Model::Kuramoto => (0.01, 5.0, 100.0),
            Model::Fhn | Model::Lorenz | Model::Rossler => (0.01, 3.0, 100.0),
            Model::PredatorPrey | Model::Custom => (0.01, 1.0, 5.0),
        };
        Self { dt, t_train, t_end }
    }
}

/// Draw X(0), integrate to `row.t_end` and record on the `row.dt` grid.
pub fn simulate_dataset(
    spec: &DynamicsSpec,
    topology: &Topology,
    init: InitDist,
    row: TableRow,
    seed: u64,
) -> Result<Trajectory> {
    simulate_dataset_tol(spec, topology, init, row, seed, Tolerances::default())
}

pub fn simulate_dataset_tol(
    spec: &DynamicsSpec,
    topology: &Topology,
    init: InitDist,
    row: TableRow,
    seed: u64,
    tol: Tolerances,
) -> Result<Trajectory> {
    init.validate()?;
    if !(row.t_train > 0.0 && row.t_train <= row.t_end) {
        return Err(Error::invalid("need 0 < T <= T_end"));
    }
    let n = topology.n();
    let mut spec = spec.clone();
    if spec.model == Model::Kuramoto && !spec.node_params.contains_key("omega") {
        let mean = spec.param("omega_mean")?;
        let std = spec.param("omega_std")?;
        let normal = Normal::new(mean, std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = rng::seeded(rng::split(seed, 1));
        let omega = (0..n).map(|_| normal.sample(&mut rng)).collect();
        spec.node_params.insert("omega".into(), omega);
    }
    let mut rng = rng::seeded(rng::split(seed, 0));
    let x0 = init.draw(&mut rng, n * spec.d);
    let rhs = NetworkRhs::new(&spec, topology)?;
    let n_out = grid_len(row.t_end, row.dt)?;
    let states = solve_uniform(&rhs, &x0, row.dt, n_out, tol)?;
    Ok(Trajectory::new(
        n,
        spec.d,
        row.dt,
        states,
        TrajectoryMeta {
            spec: Some(spec),
            seed: Some(seed),
            t_train: Some(row.t_train),
            t_end: Some(row.t_end),
            topology_file: None,
            snr_db: None,
        },
    ))
}

/// Add zero-mean Gaussian noise to every (node, dim) series so that its
/// power ratio to the series' mean-square signal is `snr_db`. An infinite
/// SNR returns the trajectory unchanged.
pub fn add_state_noise(traj: &Trajectory, snr_db: f64, seed: u64) -> Result<Trajectory> {
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR must not be NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(traj.clone());
    }
    let mut out = traj.clone();
    let mut rng = rng::seeded(seed);
    let ratio = 10f64.powf(snr_db / 10.0);
    for i in 0..traj.n {
        for dim in 0..traj.d {
            let s = traj.series(i, dim);
            let power = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
            let sigma = (power / ratio).sqrt();
            let noisy: Vec<f64> = s
                .iter()
                .map(|v| {
                    v + sigma
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            out.set_series(i, dim, &noisy);
        }
    }
    out.meta.snr_db = Some(snr_db);
    Ok(out)
}

/// 10·log10(signal power / noise power) of `noisy` relative to `clean`.
pub fn measured_snr_db(clean: &Trajectory, noisy: &Trajectory) -> f64 {
    let signal: f64 = clean.states.iter().map(|v| v * v).sum();
    let noise: f64 = clean
        .states
        .iter()
        .zip(&noisy.states)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    10.0 * (signal / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{gen_er, Topology};

    #[test]
    fn lv_row_sample_count() {
        let t = gen_er(5, 0.5, 1).unwrap();
        let spec = DynamicsSpec::new(Model::Lv);
        let row = TableRow::default_for(Model::Lv);
        let traj =
            simulate_dataset(&spec, &t, InitDist::Uniform { lo: 0.0, hi: 5.0 }, row, 3).unwrap();
        assert_eq!(traj.len(), 5001);
        assert!((traj.duration() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn epi_invariant_region() {
        let t = gen_er(20, 0.2, 4).unwrap();
        let spec = DynamicsSpec::new(Model::Epi);
        let row = TableRow::default_for(Model::Epi);
        let traj = simulate_dataset(&spec, &t, InitDist::default_for(Model::Epi), row, 5).unwrap();
        assert!(traj.states.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn constant_init_symmetric_graph() {
        // A ring is vertex-transitive.
        let mut adj = vec![0.0; 36];
        for i in 0..6 {
            adj[i * 6 + (i + 1) % 6] = 1.0;
            adj[((i + 1) % 6) * 6 + i] = 1.0;
        }
        let ring = Topology::from_dense(6, adj, false).unwrap();
        let spec = DynamicsSpec::new(Model::Lorenz);
        let row = TableRow {
            dt: 0.01,
            t_train: 1.0,
            t_end: 2.0,
        };
        let traj =
            simulate_dataset(&spec, &ring, InitDist::Constant { value: 0.1 }, row, 0).unwrap();
        for k in 0..traj.len() {
            let s = traj.state(k);
            for i in 1..6 {
                for dim in 0..3 {
                    assert_eq!(s[i * 3 + dim], s[dim]);
                }
            }
        }
    }

    #[test]
    fn simulation_reproducible() {
        let t = gen_er(10, 0.3, 1).unwrap();
        let spec = DynamicsSpec::new(Model::Kuramoto);
        let row = TableRow {
            dt: 0.01,
            t_train: 0.5,
            t_end: 1.0,
        };
        let a =
            simulate_dataset(&spec, &t, InitDist::default_for(Model::Kuramoto), row, 9).unwrap();
        let b =
            simulate_dataset(&spec, &t, InitDist::default_for(Model::Kuramoto), row, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta.spec.as_ref().unwrap().node_params["omega"].len(), 10);
    }

    fn sinusoid() -> Trajectory {
        let states: Vec<f64> = (0..20_000).map(|k| (k as f64 * 0.01).sin() + 0.5).collect();
        Trajectory::new(1, 1, 0.01, states, TrajectoryMeta::default())
    }

    #[test]
    fn noise_clean_sentinel() {
        let s = sinusoid();
        assert_eq!(add_state_noise(&s, f64::INFINITY, 1).unwrap(), s);
    }

    #[test]
    fn noise_hits_target_snr() {
        let s = sinusoid();
        let mut mean = 0.0;
        for seed in 0..20 {
            let noisy = add_state_noise(&s, 30.0, seed).unwrap();
            mean += measured_snr_db(&s, &noisy) / 20.0;
        }
        assert!((mean - 30.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn noise_power_scales_with_db() {
        let s = sinusoid();
        let a = add_state_noise(&s, 30.0, 7).unwrap();
        let b = add_state_noise(&s, 50.0, 7).unwrap();
        let pa: f64 = a
            .states
            .iter()
            .zip(&s.states)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        let pb: f64 = b
            .states
            .iter()
            .zip(&s.states)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        assert!((pa / pb - 100.0).abs() < 1e-6, "{}", pa / pb);
    }

    #[test]
    fn csv_round_trip() {
        let t = gen_er(3, 0.9, 1).unwrap();
        let spec = DynamicsSpec::new(Model::Fhn);
        let row = TableRow {
            dt: 0.1,
            t_train: 0.5,
            t_end: 1.0,
        };
        let traj = simulate_dataset(&spec, &t, InitDist::default_for(Model::Fhn), row, 2).unwrap();
        let back = Trajectory::from_csv(&traj.to_csv(), traj.meta.clone()).unwrap();
        assert_eq!(back.states, traj.states);
        assert_eq!((back.n, back.d), (3, 2));
        assert!(traj.to_csv().starts_with("t,node,dim,value\n"));
    }
}
