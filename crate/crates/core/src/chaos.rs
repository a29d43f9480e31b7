//! Poincaré sections and bifurcation scans of network trajectories.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_ivp, DynamicsSpec, Trajectory};
use crate::error::{Error, Result};
use crate::symreg::search::linear_parts;
use crate::symreg::{linear_combination, Expr};
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Rising,
    Falling,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    /// State dimension whose level crossing defines the section.
    #[serde(default)]
    pub dim: usize,
    #[serde(default = "default_level")]
    pub value: f64,
    #[serde(default)]
    pub direction: Direction,
    /// Time discarded before recording; `None` discards the first half.
    #[serde(default)]
    pub transient: Option<f64>,
}

fn default_level() -> f64 {
    0.1
}

impl Default for SectionConfig {
    fn default() -> Self {
        Self {
            dim: 0,
            value: default_level(),
            direction: Direction::Rising,
            transient: None,
        }
    }
}

impl SectionConfig {
    pub fn transient_time(&self, t_end: f64) -> f64 {
        self.transient.unwrap_or(0.5 * t_end)
    }

    pub fn validate(&self, d: usize, t_end: f64) -> Result<()> {
        if self.dim >= d {
            return Err(Error::invalid(format!(
                "section dimension {} outside state dimension {d}",
                self.dim
            )));
        }
        let tr = self.transient_time(t_end);
        if !(tr >= 0.0 && tr < t_end) || !self.value.is_finite() {
            return Err(Error::invalid(
                "transient must lie in [0, t_end) and the level must be finite",
            ));
        }
        Ok(())
    }
}

/// One directed crossing of a node trajectory through the section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub t: f64,
    pub node: usize,
    /// Linearly interpolated node state at the crossing.
    pub state: Vec<f64>,
}

/// Crossings of every node's trajectory after the transient, in time order
/// per node.
pub fn section_of(traj: &Trajectory, cfg: &SectionConfig) -> Result<Vec<Crossing>> {
    let t_end = traj.duration();
    cfg.validate(traj.d, t_end)?;
    let t0 = cfg.transient_time(t_end);
    let (n, d) = (traj.n, traj.d);
    let mut out = Vec::new();
    for i in 0..n {
        for k in 1..traj.len() {
            let t_prev = (k - 1) as f64 * traj.dt;
            if t_prev < t0 {
                continue;
            }
            let a = &traj.state(k - 1)[i * d..(i + 1) * d];
            let b = &traj.state(k)[i * d..(i + 1) * d];
            let (fa, fb) = (a[cfg.dim] - cfg.value, b[cfg.dim] - cfg.value);
            let rising = fa < 0.0 && fb >= 0.0;
            let falling = fa > 0.0 && fb <= 0.0;
            let hit = match cfg.direction {
                Direction::Rising => rising,
                Direction::Falling => falling,
                Direction::Both => rising || falling,
            };
            if !hit {
                continue;
            }
            let s = fa / (fa - fb);
            out.push(Crossing {
                t: t_prev + s * traj.dt,
                node: i,
                state: a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect(),
            });
        }
    }
    Ok(out)
}

/// Integration settings for sections and scans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionRun {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt_out")]
    pub dt_out: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_t_end() -> f64 {
    1000.0
}

fn default_dt_out() -> f64 {
    0.01
}

fn default_rtol() -> f64 {
    1e-9
}

fn default_atol() -> f64 {
    1e-9
}

impl Default for SectionRun {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            dt_out: default_dt_out(),
            rtol: default_rtol(),
            atol: default_atol(),
        }
    }
}

/// Integrate `spec` from `x0` and collect its section crossings.
pub fn poincare_section(
    spec: &DynamicsSpec,
    topology: &Topology,
    x0: &[f64],
    cfg: &SectionConfig,
    run: &SectionRun,
) -> Result<Vec<Crossing>> {
    cfg.validate(spec.d, run.t_end)?;
    let traj = integrate_ivp(
        spec, topology, x0, run.t_end, run.dt_out, run.rtol, run.atol,
    )?;
    section_of(&traj, cfg)
}

/// Number of groups among sorted values when consecutive values further
/// apart than `rel_gap` times the value range start a new group. A group
/// wider than the gap threshold marks a continuum, and the number of
/// distinct values is returned instead. Values spread by less than 1e-4 of
/// their magnitude form a single group.
pub fn count_clusters(values: &[f64], rel_gap: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let spread = v[v.len() - 1] - v[0];
    let magnitude = v[0].abs().max(v[v.len() - 1].abs());
    // spreads far below the magnitude are integration jitter
    if spread <= 1e-4 * magnitude || spread == 0.0 {
        return 1;
    }
    let range = spread;
    let thr = rel_gap * range;
    let mut clusters = 1;
    let mut start = v[0];
    let mut continuum = false;
    for w in v.windows(2) {
        if w[1] - w[0] > thr {
            clusters += 1;
            start = w[1];
        } else if w[1] - start > thr {
            continuum = true;
        }
    }
    if continuum {
        let tol = 1e-9 * range;
        1 + v.windows(2).filter(|w| w[1] - w[0] > tol).count()
    } else {
        clusters
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BifurcationRow {
    pub c: f64,
    /// Section values of the recorded dimension.
    pub values: Vec<f64>,
    /// Integration failure at this parameter value, if any.
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BifurcationTable {
    pub rows: Vec<BifurcationRow>,
}

impl BifurcationTable {
    /// CSV `c,value`, one line per recorded section value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c,value\n");
        for row in &self.rows {
            for v in &row.values {
                let _ = writeln!(s, "{},{}", row.c, v);
            }
        }
        s
    }

    pub fn cluster_counts(&self, rel_gap: f64) -> Vec<(f64, usize)> {
        self.rows
            .iter()
            .map(|r| (r.c, count_clusters(&r.values, rel_gap)))
            .collect()
    }
}

/// What a bifurcation scan records at each parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub section: SectionConfig,
    #[serde(default)]
    pub run: SectionRun,
    /// Node whose crossings are recorded.
    #[serde(default)]
    pub node: usize,
    /// Dimension recorded at each crossing.
    #[serde(default = "default_record_dim")]
    pub record_dim: usize,
}

fn default_record_dim() -> usize {
    1
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            section: SectionConfig::default(),
            run: SectionRun::default(),
            node: 0,
            record_dim: default_record_dim(),
        }
    }
}

/// `steps` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::invalid("a scan needs at least 2 steps"));
    }
    Ok((0..steps)
        .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
        .collect())
}

/// Section values of one node for each parameter value; failures are
/// recorded per row and the scan continues.
pub fn bifurcation_scan(
    family: &dyn Fn(f64) -> Result<DynamicsSpec>,
    topology: &Topology,
    x0: &[f64],
    cs: &[f64],
    cfg: &ScanConfig,
) -> Result<BifurcationTable> {
    if cs.len() < 2 {
        return Err(Error::invalid("a scan needs at least 2 parameter values"));
    }
    if cfg.node >= topology.n() {
        return Err(Error::invalid(format!(
            "recorded node {} outside the network",
            cfg.node
        )));
    }
    let mut rows = Vec::with_capacity(cs.len());
    for &c in cs {
        let result = family(c).and_then(|spec| {
            if cfg.record_dim >= spec.d {
                return Err(Error::invalid("recorded dimension outside the state"));
            }
            poincare_section(&spec, topology, x0, &cfg.section, &cfg.run)
        });
        rows.push(match result {
            Ok(cross) => BifurcationRow {
                c,
                values: cross
                    .iter()
                    .filter(|x| x.node == cfg.node)
                    .map(|x| x.state[cfg.record_dim])
                    .collect(),
                error: None,
            },
            Err(e) => BifurcationRow {
                c,
                values: Vec::new(),
                error: Some(e.to_string()),
            },
        });
    }
    Ok(BifurcationTable { rows })
}

/// `expr` with the coefficient of the additive `term` set to `value`
/// (the term is added when absent).
pub fn with_term_coefficient(expr: &Expr, term: &Expr, value: f64) -> Expr {
    let (c0, mut parts) = linear_parts(expr);
    let mut found = false;
    for (c, t) in parts.iter_mut() {
        if t == term {
            *c = if found { 0.0 } else { value };
            found = true;
        }
    }
    if !found {
        parts.push((value, term.clone()));
    }
    parts.retain(|(c, _)| *c != 0.0);
    linear_combination(&parts, c0)
}
