//! Built-in network dynamics, the IVP integrator and observation noise.

pub mod ode;
mod trajectory;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symreg::expr::{Expr, Program};
use crate::topology::Topology;

pub use ode::{solve_uniform, Rhs, Tolerances};
pub use trajectory::{
    add_state_noise, measured_snr_db, simulate_dataset, InitDist, TableRow, Trajectory,
    TrajectoryMeta,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    Bio,
    Gene,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "LV")]
    Lv,
    Neur,
    Epi,
    Kuramoto,
    #[serde(rename = "FHN")]
    Fhn,
    PredatorPrey,
    Lorenz,
    Rossler,
    Custom,
}

impl Model {
    pub fn state_dim(self) -> Option<usize> {
        match self {
            Model::Bio
            | Model::Gene
            | Model::Mi
            | Model::Lv
            | Model::Neur
            | Model::Epi
            | Model::Kuramoto => Some(1),
            Model::Fhn | Model::PredatorPrey => Some(2),
            Model::Lorenz | Model::Rossler => Some(3),
            Model::Custom => None,
        }
    }

    pub fn default_params(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            Model::Bio => &[("F", 1.0), ("B", -1.0)],
            Model::Gene => &[("B", 2.0), ("f", 1.0), ("h", 2.0)],
            Model::Mi => &[
                ("b", 1.0),
                ("k", 5.0),
                ("c", 1.0),
                ("d", 5.0),
                ("e", 0.9),
                ("h", 0.1),
            ],
            Model::Lv => &[("alpha", 0.5), ("theta", 1.0)],
            Model::Neur => &[("tau", -1.0), ("mu", 1.0)],
            Model::Epi => &[("delta", 1.0)],
            Model::Kuramoto => &[("epsilon", 0.015), ("omega_mean", 1.0), ("omega_std", 1.0)],
            Model::Fhn => &[("epsilon", 1.0), ("a", 0.28), ("b", 0.5), ("c", -0.04)],
            Model::PredatorPrey => &[("a", 1.0), ("b", 0.2), ("c", 0.7)],
            Model::Lorenz => &[
                ("a", 10.0),
                ("epsilon", 0.05),
                ("r", 28.0),
                ("b", 10.0 / 3.0),
            ],
            Model::Rossler => &[("epsilon", 0.15), ("a", 0.2), ("b", 0.2), ("c", 5.7)],
            Model::Custom => &[],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

/// Custom system: per-dimension self and interaction expressions in the
/// variables of [`self_vars`] / [`pair_vars`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomSystem {
    pub self_exprs: Vec<String>,
    pub inter_exprs: Vec<String>,
    /// Per node type self expressions; when non-empty, replaces `self_exprs`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub self_by_type: Vec<Vec<String>>,
    /// Per edge type interaction expressions; when non-empty, replaces `inter_exprs`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inter_by_type: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub model: Model,
    pub d: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Per-node parameters (e.g. natural frequencies `omega`).
    #[serde(default)]
    pub node_params: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub custom: Option<CustomSystem>,
}

impl DynamicsSpec {
    /// Built-in model with default parameters.
    pub fn new(model: Model) -> Self {
        Self {
            model,
            d: model.state_dim().unwrap_or(1),
            params: model.default_params(),
            node_params: BTreeMap::new(),
            custom: None,
        }
    }

    pub fn custom(self_exprs: Vec<String>, inter_exprs: Vec<String>) -> Result<Self> {
        if self_exprs.is_empty() || self_exprs.len() != inter_exprs.len() {
            return Err(Error::invalid(
                "custom system needs one self and one interaction expression per dimension",
            ));
        }
        Ok(Self {
            model: Model::Custom,
            d: self_exprs.len(),
            params: BTreeMap::new(),
            node_params: BTreeMap::new(),
            custom: Some(CustomSystem {
                self_exprs,
                inter_exprs,
                self_by_type: Vec::new(),
                inter_by_type: Vec::new(),
            }),
        })
    }

    /// Custom system with separate expressions per node type and edge type.
    pub fn custom_typed(
        self_by_type: Vec<Vec<String>>,
        inter_by_type: Vec<Vec<String>>,
    ) -> Result<Self> {
        let d = self_by_type.first().map_or(0, Vec::len);
        let consistent = |v: &Vec<Vec<String>>| !v.is_empty() && v.iter().all(|e| e.len() == d);
        if d == 0 || !consistent(&self_by_type) || !consistent(&inter_by_type) {
            return Err(Error::invalid(
                "typed custom system needs d expressions for every node and edge type",
            ));
        }
        let mut spec = Self::custom(self_by_type[0].clone(), inter_by_type[0].clone())?;
        let sys = spec.custom.as_mut().expect("just built");
        sys.self_by_type = self_by_type;
        sys.inter_by_type = inter_by_type;
        Ok(spec)
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("{:?} requires parameter '{name}'", self.model)))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.model.state_dim() {
            if self.d != d {
                return Err(Error::invalid(format!(
                    "{:?} has state dimension {d}, got {}",
                    self.model, self.d
                )));
            }
        }
        if self.params.values().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model parameter"));
        }
        if self.node_params.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite per-node parameter"));
        }
        if self.model == Model::Custom && self.custom.is_none() {
            return Err(Error::invalid("custom model requires expressions"));
        }
        Ok(())
    }
}

/// Variable names of a node's own state.
pub fn self_vars(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["xi".into()]
    } else {
        (1..=d).map(|k| format!("xi{k}")).collect()
    }
}

/// Variable names of an `(own, neighbour)` state pair.
pub fn pair_vars(d: usize) -> Vec<String> {
    let mut v = self_vars(d);
    if d == 1 {
        v.push("xj".into());
    } else {
        v.extend((1..=d).map(|k| format!("xj{k}")));
    }
    v
}

/// Network right-hand side for a built-in or custom model on a topology.
pub struct NetworkRhs<'a> {
    spec: &'a DynamicsSpec,
    n: usize,
    d: usize,
    neighbors: Vec<Vec<(usize, f64)>>,
    kind: Kind,
}

enum Kind {
    Bio {
        f: f64,
        b: f64,
    },
    Gene {
        b: f64,
        f: f64,
        h: f64,
    },
    Mi {
        b: f64,
        k: f64,
        c: f64,
        d: f64,
        e: f64,
        h: f64,
    },
    Lv {
        alpha: f64,
        theta: f64,
    },
    Neur {
        tau: f64,
        mu: f64,
    },
    Epi {
        delta: f64,
    },
    Kuramoto {
        eps: f64,
        omega: Vec<f64>,
    },
    Fhn {
        eps: f64,
        a: f64,
        b: f64,
        c: f64,
        k_in: Vec<f64>,
    },
    PredatorPrey {
        a: f64,
        b: f64,
        c: f64,
    },
    Lorenz {
        a: f64,
        eps: f64,
        r: f64,
        b: f64,
    },
    Rossler {
        eps: f64,
        a: f64,
        b: f64,
        c: f64,
    },
    Custom {
        selfs: Vec<Vec<Program>>,
        inters: Vec<Vec<Program>>,
        node_type: Vec<usize>,
        edge_type: Vec<Vec<usize>>,
    },
}

impl<'a> NetworkRhs<'a> {
    pub fn new(spec: &'a DynamicsSpec, topology: &Topology) -> Result<Self> {
        spec.validate()?;
        let n = topology.n();
        let p = |k: &str| spec.param(k);
        let kind = match spec.model {
            Model::Bio => Kind::Bio {
                f: p("F")?,
                b: p("B")?,
            },
            Model::Gene => Kind::Gene {
                b: p("B")?,
                f: p("f")?,
                h: p("h")?,
            },
            Model::Mi => Kind::Mi {
                b: p("b")?,
                k: p("k")?,
                c: p("c")?,
                d: p("d")?,
                e: p("e")?,
                h: p("h")?,
            },
            Model::Lv => Kind::Lv {
                alpha: p("alpha")?,
                theta: p("theta")?,
            },
            Model::Neur => Kind::Neur {
                tau: p("tau")?,
                mu: p("mu")?,
            },
            Model::Epi => Kind::Epi { delta: p("delta")? },
            Model::Kuramoto => {
                let omega = spec
                    .node_params
                    .get("omega")
                    .cloned()
                    .ok_or_else(|| Error::invalid("Kuramoto requires per-node 'omega'"))?;
                if omega.len() != n {
                    return Err(Error::shape(format!(
                        "omega has {} entries for {n} nodes",
                        omega.len()
                    )));
                }
                Kind::Kuramoto {
                    eps: p("epsilon")?,
                    omega,
                }
            }
            Model::Fhn => Kind::Fhn {
                eps: p("epsilon")?,
                a: p("a")?,
                b: p("b")?,
                c: p("c")?,
                k_in: (0..n).map(|i| topology.in_degree(i) as f64).collect(),
            },
            Model::PredatorPrey => {
                if n < 2 {
                    return Err(Error::invalid(
                        "predator-prey needs a predator and at least one prey",
                    ));
                }
                Kind::PredatorPrey {
                    a: p("a")?,
                    b: p("b")?,
                    c: p("c")?,
                }
            }
            Model::Lorenz => Kind::Lorenz {
                a: p("a")?,
                eps: p("epsilon")?,
                r: p("r")?,
                b: p("b")?,
            },
            Model::Rossler => Kind::Rossler {
                eps: p("epsilon")?,
                a: p("a")?,
                b: p("b")?,
                c: p("c")?,
            },
            Model::Custom => {
                let sys = spec.custom.as_ref().expect("validated");
                let sv = self_vars(spec.d);
                let pv = pair_vars(spec.d);
                let sv: Vec<&str> = sv.iter().map(String::as_str).collect();
                let pv: Vec<&str> = pv.iter().map(String::as_str).collect();
                let compile = |exprs: &[String], vars: &[&str]| -> Result<Vec<Program>> {
                    if exprs.len() != spec.d {
                        return Err(Error::invalid(format!(
                            "expected {} expressions, got {}",
                            spec.d,
                            exprs.len()
                        )));
                    }
                    exprs
                        .iter()
                        .map(|s| Expr::parse_infix(s)?.compile(vars))
                        .collect()
                };
                let self_sets: Vec<&[String]> = if sys.self_by_type.is_empty() {
                    vec![&sys.self_exprs]
                } else {
                    sys.self_by_type.iter().map(Vec::as_slice).collect()
                };
                let inter_sets: Vec<&[String]> = if sys.inter_by_type.is_empty() {
                    vec![&sys.inter_exprs]
                } else {
                    sys.inter_by_type.iter().map(Vec::as_slice).collect()
                };
                let selfs = self_sets
                    .into_iter()
                    .map(|e| compile(e, &sv))
                    .collect::<Result<Vec<_>>>()?;
                let inters = inter_sets
                    .into_iter()
                    .map(|e| compile(e, &pv))
                    .collect::<Result<Vec<_>>>()?;
                let typed = selfs.len() > 1;
                let node_type: Vec<usize> = (0..n)
                    .map(|i| if typed { topology.node_type(i) } else { 0 })
                    .collect();
                if node_type.iter().any(|&k| k >= selfs.len()) {
                    return Err(Error::invalid(format!(
                        "topology node types exceed the {} self expressions",
                        selfs.len()
                    )));
                }
                let typed = inters.len() > 1;
                let edge_type: Vec<Vec<usize>> = (0..n)
                    .map(|i| {
                        topology
                            .neighbors(i)
                            .map(|(_, _, e)| if typed { e } else { 0 })
                            .collect()
                    })
                    .collect();
                if edge_type.iter().flatten().any(|&e| e >= inters.len()) {
                    return Err(Error::invalid(format!(
                        "topology edge types exceed the {} interaction expressions",
                        inters.len()
                    )));
                }
                Kind::Custom {
                    selfs,
                    inters,
                    node_type,
                    edge_type,
                }
            }
        };
        let neighbors = (0..n)
            .map(|i| topology.neighbors(i).map(|(j, w, _)| (j, w)).collect())
            .collect();
        Ok(Self {
            spec,
            n,
            d: spec.d,
            neighbors,
            kind,
        })
    }

    pub fn spec(&self) -> &DynamicsSpec {
        self.spec
    }

    fn eval_into(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let n = self.n;
        let nb = &self.neighbors;
        match &self.kind {
            Kind::Bio { f, b } => {
                for i in 0..n {
                    let xi = x[i];
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * xi * x[j]).sum();
                    dx[i] = f + b * xi + s;
                }
            }
            Kind::Gene { b, f, h } => {
                for i in 0..n {
                    let s: f64 = nb[i]
                        .iter()
                        .map(|&(j, w)| {
                            let p = x[j].powf(*h);
                            w * p / (p + 1.0)
                        })
                        .sum();
                    dx[i] = -b * x[i].powf(*f) + s;
                }
            }
            Kind::Mi { b, k, c, d, e, h } => {
                for i in 0..n {
                    let xi = x[i];
                    let s: f64 = nb[i]
                        .iter()
                        .map(|&(j, w)| w * xi * x[j] / (d + e * xi + h * x[j]))
                        .sum();
                    dx[i] = b + xi * (1.0 - xi / k) * (xi / c - 1.0) + s;
                }
            }
            Kind::Lv { alpha, theta } => {
                for i in 0..n {
                    let xi = x[i];
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * xi * x[j]).sum();
                    dx[i] = xi * (alpha - theta * xi) - s;
                }
            }
            Kind::Neur { tau, mu } => {
                for i in 0..n {
                    let s: f64 = nb[i]
                        .iter()
                        .map(|&(j, w)| w / (1.0 + (tau * (x[j] - mu)).exp()))
                        .sum();
                    dx[i] = -x[i] + s;
                }
            }
            Kind::Epi { delta } => {
                for i in 0..n {
                    let xi = x[i];
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * (1.0 - xi) * x[j]).sum();
                    dx[i] = -delta * xi + s;
                }
            }
            Kind::Kuramoto { eps, omega } => {
                for i in 0..n {
                    let xi = x[i];
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * (x[j] - xi).sin()).sum();
                    dx[i] = omega[i] + eps * s;
                }
            }
            Kind::Fhn { eps, a, b, c, k_in } => {
                for i in 0..n {
                    let (u, v) = (x[2 * i], x[2 * i + 1]);
                    let coupling = if k_in[i] > 0.0 {
                        nb[i].iter().map(|&(j, w)| w * (u - x[2 * j])).sum::<f64>() / k_in[i]
                    } else {
                        0.0
                    };
                    dx[2 * i] = u - u * u * u - v - eps * coupling;
                    dx[2 * i + 1] = a + b * u + c * v;
                }
            }
            Kind::PredatorPrey { a, b, c } => {
                let preys = (n - 1) as f64;
                let (px, py) = (x[0], x[1]);
                let (mut sx, mut sy) = (0.0, 0.0);
                for &(j, w) in &nb[0] {
                    let (rx, ry) = (x[2 * j] - px, x[2 * j + 1] - py);
                    let r2 = rx * rx + ry * ry;
                    sx += w * rx / r2;
                    sy += w * ry / r2;
                }
                dx[0] = c / preys * sx;
                dx[1] = c / preys * sy;
                for i in 1..n {
                    let (xi, yi) = (x[2 * i], x[2 * i + 1]);
                    let (mut fx, mut fy) = (0.0, 0.0);
                    for &(j, w) in &nb[i] {
                        let (rx, ry) = (xi - x[2 * j], yi - x[2 * j + 1]);
                        let r2 = rx * rx + ry * ry;
                        if j == 0 {
                            fx += w * b * rx / r2;
                            fy += w * b * ry / r2;
                        } else {
                            fx += w * (rx / r2 - a * rx) / preys;
                            fy += w * (ry / r2 - a * ry) / preys;
                        }
                    }
                    dx[2 * i] = fx;
                    dx[2 * i + 1] = fy;
                }
            }
            Kind::Lorenz { a, eps, r, b } => {
                for i in 0..n {
                    let (x1, x2, x3) = (x[3 * i], x[3 * i + 1], x[3 * i + 2]);
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * (x[3 * j] - x1)).sum();
                    dx[3 * i] = a * (x2 - x1) + eps * s;
                    dx[3 * i + 1] = r * x1 - x1 * x3 - x2;
                    dx[3 * i + 2] = x1 * x2 - b * x3;
                }
            }
            Kind::Rossler { eps, a, b, c } => {
                for i in 0..n {
                    let (x1, x2, x3) = (x[3 * i], x[3 * i + 1], x[3 * i + 2]);
                    let s: f64 = nb[i].iter().map(|&(j, w)| w * (x[3 * j] - x1)).sum();
                    dx[3 * i] = -x2 - x3 + eps * s;
                    dx[3 * i + 1] = x1 + a * x2;
                    dx[3 * i + 2] = b + x3 * (x1 - c);
                }
            }
            Kind::Custom {
                selfs,
                inters,
                node_type,
                edge_type,
            } => {
                let d = self.d;
                let mut stack = Vec::with_capacity(16);
                let mut pair = vec![0.0; 2 * d];
                for i in 0..n {
                    let xi = &x[d * i..d * (i + 1)];
                    pair[..d].copy_from_slice(xi);
                    let own = &selfs[node_type[i]];
                    for k in 0..d {
                        let mut v = eval_or_err(&own[k], xi, &mut stack)?;
                        for (&(j, w), &e) in nb[i].iter().zip(&edge_type[i]) {
                            pair[d..].copy_from_slice(&x[d * j..d * (j + 1)]);
                            v += w * eval_or_err(&inters[e][k], &pair, &mut stack)?;
                        }
                        dx[d * i + k] = v;
                    }
                }
            }
        }
        Ok(())
    }
}

fn eval_or_err(p: &Program, x: &[f64], stack: &mut Vec<f64>) -> Result<f64> {
    match p.eval_point(x, stack) {
        Some(v) => Ok(v),
        None => p.eval_rows(x).map(|v| v[0]),
    }
}

impl Rhs for NetworkRhs<'_> {
    fn len(&self) -> usize {
        self.n * self.d
    }

    fn eval(&self, _t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        self.eval_into(x, dx)
    }
}

/// Evaluate Ẋ for an `n × d` state (row-major).
pub fn builtin_rhs(
    spec: &DynamicsSpec,
    topology: &Topology,
    state: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let rhs = NetworkRhs::new(spec, topology)?;
    if state.len() != topology.n() * spec.d {
        return Err(Error::shape(format!(
            "state has {} entries, expected {} x {}",
            state.len(),
            topology.n(),
            spec.d
        )));
    }
    let mut dx = vec![0.0; state.len()];
    rhs.eval(t, state, &mut dx)?;
    Ok(dx)
}

/// Integrate a built-in system on the uniform grid `k * dt_out`, `k = 0..=t_end/dt_out`.
pub fn integrate_ivp(
    spec: &DynamicsSpec,
    topology: &Topology,
    x0: &[f64],
    t_end: f64,
    dt_out: f64,
    rtol: f64,
    atol: f64,
) -> Result<Trajectory> {
    let rhs = NetworkRhs::new(spec, topology)?;
    let n_out = grid_len(t_end, dt_out)?;
    let states = solve_uniform(&rhs, x0, dt_out, n_out, Tolerances::new(rtol, atol))?;
    Ok(Trajectory::new(
        topology.n(),
        spec.d,
        dt_out,
        states,
        TrajectoryMeta {
            spec: Some(spec.clone()),
            ..TrajectoryMeta::default()
        },
    ))
}

/// Number of grid points on `[0, t_end]` with spacing `dt`.
pub fn grid_len(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("output spacing must be positive"));
    }
    if !(t_end >= dt) {
        return Err(Error::invalid(format!(
            "end time {t_end} shorter than spacing {dt}"
        )));
    }
    Ok((t_end / dt).round() as usize + 1)
}
