use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::expr::{BinaryOp, Expr};
use super::kmeans::kmeans_sample;
use super::library::{linear_combination, lstsq_pinv, sparse_regress, FunctionLibrary, Samples};
use super::search::{linear_parts, search_regress, Candidate, SearchConfig};
use crate::decoupler::{query_inter, query_self, DecouplerModel};
use crate::dynamics::{pair_vars, self_vars, DynamicsSpec, NetworkRhs};
use crate::error::{Error, Result};
use crate::preprocess::{Split, TrainingSet};
use crate::rng::{self, Rng};
use crate::topology::Topology;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    /// Thresholded least squares over fixed libraries (infix basis terms).
    Sparse {
        self_library: Vec<String>,
        inter_library: Vec<String>,
        #[serde(default = "default_sparse_threshold")]
        threshold: f64,
    },
    /// Expression-tree search.
    Search(SearchConfig),
}

fn default_sparse_threshold() -> f64 {
    0.05
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Search(SearchConfig::default())
    }
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Sparse { .. } => "sparse",
            Backend::Search(_) => "search",
        }
    }
}

/// Joint refit of the candidate terms against the training derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefitConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Coefficients below this magnitude are dropped.
    #[serde(default = "default_refit_threshold")]
    pub threshold: f64,
    /// Weight of the node count when choosing among candidate pairs.
    #[serde(default = "default_refit_parsimony")]
    pub parsimony: f64,
    /// Candidates per front considered in the pairing.
    #[serde(default = "default_max_candidates")]
    pub max_candidates: usize,
    /// With the sparse backend, offer every library term to the refit in
    /// addition to the candidate terms.
    #[serde(default)]
    pub full_library: bool,
}

fn default_true() -> bool {
    true
}

fn default_refit_threshold() -> f64 {
    1e-2
}

fn default_refit_parsimony() -> f64 {
    1e-6
}

fn default_max_candidates() -> usize {
    12
}

impl Default for RefitConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: default_refit_threshold(),
            parsimony: default_refit_parsimony(),
            max_candidates: default_max_candidates(),
            full_library: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressConfig {
    #[serde(default = "default_n_raw")]
    pub n_raw: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub refit: RefitConfig,
}

fn default_n_raw() -> usize {
    10_000
}

fn default_k() -> usize {
    512
}

impl Default for RegressConfig {
    fn default() -> Self {
        Self {
            n_raw: default_n_raw(),
            k: default_k(),
            seed: 0,
            backend: Backend::default(),
            refit: RefitConfig::default(),
        }
    }
}

impl RegressConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_raw == 0 || self.k == 0 {
            return Err(Error::Config(
                "regress: n_raw and k must be positive".into(),
            ));
        }
        if let Backend::Sparse {
            self_library,
            inter_library,
            threshold,
        } = &self.backend
        {
            if self_library.is_empty() || inter_library.is_empty() || !(*threshold >= 0.0) {
                return Err(Error::Config(
                    "regress: sparse backend needs nonempty libraries and threshold >= 0".into(),
                ));
            }
        }
        if !(self.refit.threshold >= 0.0)
            || !(self.refit.parsimony >= 0.0)
            || self.refit.max_candidates == 0
        {
            return Err(Error::Config("regress: invalid refit settings".into()));
        }
        Ok(())
    }
}

/// One discovered expression with its serializations and fit quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExprRecord {
    pub infix: String,
    pub prefix: Vec<String>,
    /// Mean squared error against the network queries; `None` if undefined there.
    pub fit_error: Option<f64>,
    pub complexity: usize,
}

impl ExprRecord {
    pub fn new(expr: &Expr, fit_error: Option<f64>) -> Self {
        Self {
            infix: expr.to_infix(),
            prefix: expr.to_prefix(),
            fit_error: fit_error.filter(|v| v.is_finite()),
            complexity: expr.size(),
        }
    }

    pub fn expr(&self) -> Result<Expr> {
        Expr::parse_prefix(&self.prefix)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub seed: u64,
    pub n_raw: usize,
    /// Representative points used per node type and per edge type.
    pub k_self: Vec<usize>,
    pub k_inter: Vec<usize>,
    pub refit: bool,
    /// Validation R² of the assembled derivative per dimension.
    pub val_r2: Vec<f64>,
    /// Candidate expressions per dimension as `(self, inter)` counts.
    pub candidates: Vec<(usize, usize)>,
}

/// Closed-form self and interaction expressions indexed `[type][dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredModel {
    pub d: usize,
    pub self_exprs: Vec<Vec<ExprRecord>>,
    pub inter_exprs: Vec<Vec<ExprRecord>>,
    pub provenance: Provenance,
}

impl DiscoveredModel {
    /// Model from explicit infix expressions, one list of `d` per type.
    pub fn from_infix(self_exprs: &[Vec<&str>], inter_exprs: &[Vec<&str>]) -> Result<Self> {
        let d = self_exprs.first().map_or(0, Vec::len);
        let conv = |v: &[Vec<&str>]| -> Result<Vec<Vec<ExprRecord>>> {
            v.iter()
                .map(|dims| {
                    if dims.len() != d {
                        return Err(Error::invalid(
                            "every type needs one expression per dimension",
                        ));
                    }
                    dims.iter()
                        .map(|s| Ok(ExprRecord::new(&Expr::parse_infix(s)?, None)))
                        .collect()
                })
                .collect()
        };
        let dm = Self {
            d,
            self_exprs: conv(self_exprs)?,
            inter_exprs: conv(inter_exprs)?,
            provenance: Provenance::default(),
        };
        dm.validate()?;
        Ok(dm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.self_exprs.is_empty() || self.inter_exprs.is_empty() {
            return Err(Error::invalid(
                "discovered model needs d >= 1 and at least one node and edge type",
            ));
        }
        let sv = self_vars(self.d);
        let pv = pair_vars(self.d);
        for (set, vars) in [(&self.self_exprs, &sv), (&self.inter_exprs, &pv)] {
            for dims in set {
                if dims.len() != self.d {
                    return Err(Error::shape(
                        "expression count differs from state dimension",
                    ));
                }
                for rec in dims {
                    let e = rec.expr()?;
                    if let Some(v) = e.variables().into_iter().find(|v| !vars.contains(v)) {
                        return Err(Error::UnboundVariable(v));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn self_expr(&self, k: usize, r: usize) -> Result<Expr> {
        self.self_exprs[k][r].expr()
    }

    pub fn inter_expr(&self, e: usize, r: usize) -> Result<Expr> {
        self.inter_exprs[e][r].expr()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dm: Self = serde_json::from_str(text)?;
        dm.validate()?;
        Ok(dm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Human-readable equations, one line per type and dimension.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let typed = self.self_exprs.len() > 1 || self.inter_exprs.len() > 1;
        for r in 0..self.d {
            for (k, dims) in self.self_exprs.iter().enumerate() {
                for (e, inter) in self.inter_exprs.iter().enumerate() {
                    let lhs = if self.d == 1 {
                        "dxi/dt".to_string()
                    } else {
                        format!("dxi{}/dt", r + 1)
                    };
                    let tag = if typed {
                        format!(" [node type {k}, edge type {e}]")
                    } else {
                        String::new()
                    };
                    out.push_str(&format!(
                        "{lhs} = {} + sum_j A_ij ({}){tag}\n",
                        dims[r].infix, inter[r].infix
                    ));
                }
            }
        }
        out
    }
}

/// Right-hand side specification for the discovered expressions on `topo`.
pub fn assemble_rhs(dm: &DiscoveredModel, topo: &Topology) -> Result<DynamicsSpec> {
    dm.validate()?;
    let infix = |set: &Vec<Vec<ExprRecord>>| -> Vec<Vec<String>> {
        set.iter()
            .map(|dims| dims.iter().map(|r| r.infix.clone()).collect())
            .collect()
    };
    let selfs = infix(&dm.self_exprs);
    let inters = infix(&dm.inter_exprs);
    let spec = if selfs.len() == 1 && inters.len() == 1 {
        DynamicsSpec::custom(selfs[0].clone(), inters[0].clone())?
    } else {
        DynamicsSpec::custom_typed(selfs, inters)?
    };
    NetworkRhs::new(&spec, topo)?;
    Ok(spec)
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn draw<T: Clone>(pool: &[T], n_raw: usize, rng: &mut Rng) -> Vec<T> {
    if pool.len() <= n_raw {
        return pool.to_vec();
    }
    (0..n_raw)
        .map(|_| pool[rng.random_range(0..pool.len())].clone())
        .collect()
}

fn representatives(points: Vec<Vec<f64>>, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if points.is_empty() {
        return Ok(points);
    }
    let k_eff = k.min(distinct_count(&points));
    kmeans_sample(&points, k_eff, seed)
}

fn train_times(ts: &TrainingSet) -> Vec<usize> {
    let train = ts.indices(Split::Train);
    if train.is_empty() {
        (0..ts.num_times()).collect()
    } else {
        train
    }
}

fn self_points(ts: &TrainingSet, k: usize, n_raw: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let d = ts.d;
    let nodes: Vec<usize> = (0..ts.n)
        .filter(|&i| ts.topology.node_type(i) == k)
        .collect();
    let pool: Vec<(usize, usize)> = train_times(ts)
        .into_iter()
        .flat_map(|t| nodes.iter().map(move |&i| (t, i)))
        .collect();
    draw(&pool, n_raw, rng)
        .into_iter()
        .map(|(t, i)| ts.state(t)[i * d..(i + 1) * d].to_vec())
        .collect()
}

fn pair_points(ts: &TrainingSet, e: usize, n_raw: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let d = ts.d;
    let edges: Vec<(usize, usize)> = ts
        .topology
        .edges()
        .into_iter()
        .filter(|x| x.3 == e)
        .map(|x| (x.0, x.1))
        .collect();
    let pool: Vec<(usize, usize, usize)> = train_times(ts)
        .into_iter()
        .flat_map(|t| edges.iter().map(move |&(i, j)| (t, i, j)))
        .collect();
    draw(&pool, n_raw, rng)
        .into_iter()
        .map(|(t, i, j)| {
            let s = ts.state(t);
            let mut p = s[i * d..(i + 1) * d].to_vec();
            p.extend_from_slice(&s[j * d..(j + 1) * d]);
            p
        })
        .collect()
}

/// Per output dimension: net-query samples and ranked candidate expressions.
struct TypeFits {
    samples: Vec<Samples>,
    candidates: Vec<Vec<Candidate>>,
}

fn column_samples(
    vars: &[String],
    points: &[Vec<f64>],
    outputs: &[Vec<f64>],
    r: usize,
) -> Result<Samples> {
    Samples::from_rows(
        vars.to_vec(),
        points,
        outputs.iter().map(|o| o[r]).collect(),
    )
}

fn run_backend(
    samples: &Samples,
    backend: &Backend,
    inter: bool,
    seed: u64,
) -> Result<Vec<Candidate>> {
    match backend {
        Backend::Sparse {
            self_library,
            inter_library,
            threshold,
        } => {
            let lib_terms = if inter { inter_library } else { self_library };
            let lib = FunctionLibrary::from_infix(samples.vars.clone(), lib_terms)?;
            let xi = sparse_regress(samples, &lib, *threshold, 20)?;
            let expr = lib.expression(&xi);
            let mse = samples.mse(&expr)?;
            let size = expr.size();
            Ok(vec![Candidate {
                score: mse,
                expr,
                mse,
                size,
            }])
        }
        Backend::Search(cfg) => {
            let cfg = SearchConfig {
                seed,
                ..cfg.clone()
            };
            let mut front = search_regress(samples, &cfg)?;
            front.sort_by(|a, b| a.score.total_cmp(&b.score));
            Ok(front)
        }
    }
}

fn fit_type(
    model: &DecouplerModel,
    points: &[Vec<f64>],
    inter: bool,
    index: usize,
    backend: &Backend,
    seed: u64,
) -> Result<TypeFits> {
    let d = model.d;
    let vars = if inter { pair_vars(d) } else { self_vars(d) };
    if points.is_empty() {
        let zero = Candidate {
            expr: Expr::Const(0.0),
            mse: 0.0,
            size: 1,
            score: 0.0,
        };
        let empty = Samples::new(vars, Vec::new(), Vec::new())?;
        return Ok(TypeFits {
            samples: vec![empty; d],
            candidates: vec![vec![zero]; d],
        });
    }
    let outputs = if inter {
        let grid: Vec<(Vec<f64>, Vec<f64>)> = points
            .iter()
            .map(|p| (p[..d].to_vec(), p[d..].to_vec()))
            .collect();
        query_inter(model, index, &grid)?
    } else {
        query_self(model, index, points)?
    };
    let mut samples = Vec::with_capacity(d);
    let mut candidates = Vec::with_capacity(d);
    for r in 0..d {
        let s = column_samples(&vars, points, &outputs, r)?;
        candidates.push(run_backend(&s, backend, inter, rng::split(seed, r as u64))?);
        samples.push(s);
    }
    Ok(TypeFits {
        samples,
        candidates,
    })
}

#[derive(Clone, Debug)]
enum Slot {
    SelfConst(usize),
    SelfTerm(usize, Expr),
    InterConst(usize),
    InterTerm(usize, Expr),
}

/// Training rows for the joint refit of one output dimension.
struct RefitData<'a> {
    ts: &'a TrainingSet,
    r: usize,
    rows: Vec<(usize, usize)>,
    n_train: usize,
    neighbors: Vec<Vec<(usize, f64, usize)>>,
    sv: Vec<String>,
    pv: Vec<String>,
    cache: HashMap<String, Option<Vec<f64>>>,
}

impl<'a> RefitData<'a> {
    fn new(ts: &'a TrainingSet, r: usize) -> Self {
        let train = train_times(ts);
        let val = ts.indices(Split::Val);
        let rows: Vec<(usize, usize)> = train
            .iter()
            .chain(&val)
            .flat_map(|&t| (0..ts.n).map(move |i| (t, i)))
            .collect();
        Self {
            ts,
            r,
            n_train: train.len() * ts.n,
            rows,
            neighbors: (0..ts.n)
                .map(|i| ts.topology.neighbors(i).collect())
                .collect(),
            sv: self_vars(ts.d),
            pv: pair_vars(ts.d),
            cache: HashMap::new(),
        }
    }

    fn target(&self) -> Vec<f64> {
        let d = self.ts.d;
        self.rows
            .iter()
            .map(|&(t, i)| self.ts.target(t)[i * d + self.r])
            .collect()
    }

    fn column(&mut self, slot: &Slot) -> Option<Vec<f64>> {
        let key = slot_key(slot);
        if let Some(c) = self.cache.get(&key) {
            return c.clone();
        }
        let col = self.compute(slot);
        self.cache.insert(key, col.clone());
        col
    }

    fn compute(&self, slot: &Slot) -> Option<Vec<f64>> {
        let ts = self.ts;
        let d = ts.d;
        let one = Expr::Const(1.0);
        let mut stack = Vec::new();
        let mut out = Vec::with_capacity(self.rows.len());
        match slot {
            Slot::SelfConst(k) | Slot::SelfTerm(k, _) => {
                let term = if let Slot::SelfTerm(_, e) = slot {
                    e
                } else {
                    &one
                };
                let refs: Vec<&str> = self.sv.iter().map(String::as_str).collect();
                let prog = term.compile(&refs).ok()?;
                for &(t, i) in &self.rows {
                    if ts.topology.node_type(i) != *k {
                        out.push(0.0);
                        continue;
                    }
                    out.push(prog.eval_point(&ts.state(t)[i * d..(i + 1) * d], &mut stack)?);
                }
            }
            Slot::InterConst(e) | Slot::InterTerm(e, _) => {
                let term = if let Slot::InterTerm(_, x) = slot {
                    x
                } else {
                    &one
                };
                let refs: Vec<&str> = self.pv.iter().map(String::as_str).collect();
                let prog = term.compile(&refs).ok()?;
                let mut point = vec![0.0; 2 * d];
                for &(t, i) in &self.rows {
                    let s = ts.state(t);
                    point[..d].copy_from_slice(&s[i * d..(i + 1) * d]);
                    let mut acc = 0.0;
                    for &(j, w, et) in &self.neighbors[i] {
                        if et != *e {
                            continue;
                        }
                        point[d..].copy_from_slice(&s[j * d..(j + 1) * d]);
                        acc += w * prog.eval_point(&point, &mut stack)?;
                    }
                    out.push(acc);
                }
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    /// Thresholded least squares on the training rows; returns the
    /// coefficients and the validation R².
    fn fit(&mut self, slots: &[Slot], threshold: f64) -> Option<(Vec<f64>, f64)> {
        let cols: Vec<Vec<f64>> = slots
            .iter()
            .map(|s| self.column(s))
            .collect::<Option<_>>()?;
        let y = self.target();
        let nt = self.n_train;
        let a = DMatrix::from_fn(nt, cols.len(), |i, c| cols[c][i]);
        let yt = DVector::from_column_slice(&y[..nt]);
        let mut support: Vec<usize> = (0..cols.len()).collect();
        let mut coef = vec![0.0; cols.len()];
        for _ in 0..20 {
            let sub = a.select_columns(&support);
            let x = lstsq_pinv(&sub, &yt)?;
            coef.iter_mut().for_each(|v| *v = 0.0);
            for (k, &c) in support.iter().enumerate() {
                coef[c] = x[k];
            }
            let next: Vec<usize> = support
                .iter()
                .copied()
                .filter(|&c| coef[c].abs() >= threshold)
                .collect();
            if next.len() == support.len() {
                break;
            }
            for &c in &support {
                if !next.contains(&c) {
                    coef[c] = 0.0;
                }
            }
            support = next;
            if support.is_empty() {
                break;
            }
        }
        let eval_rows = if self.rows.len() > nt {
            nt..self.rows.len()
        } else {
            0..nt
        };
        let pred = |i: usize| cols.iter().zip(&coef).map(|(c, x)| c[i] * x).sum::<f64>();
        let m = eval_rows.len() as f64;
        let mean = eval_rows.clone().map(|i| y[i]).sum::<f64>() / m;
        let ss_tot: f64 = eval_rows.clone().map(|i| (y[i] - mean).powi(2)).sum();
        let ss_res: f64 = eval_rows.map(|i| (y[i] - pred(i)).powi(2)).sum();
        let r2 = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res <= 1e-30 {
            1.0
        } else {
            0.0
        };
        Some((coef, r2))
    }
}

fn slot_key(slot: &Slot) -> String {
    match slot {
        Slot::SelfConst(k) => format!("s{k}:1"),
        Slot::SelfTerm(k, e) => format!("s{k}:{e}"),
        Slot::InterConst(e) => format!("g{e}:1"),
        Slot::InterTerm(e, x) => format!("g{e}:{x}"),
    }
}

/// Append library slots for every node and edge type, skipping duplicates.
fn extend_library(slots: &mut Vec<Slot>, lib: &LibraryTerms, k_types: usize, e_types: usize) {
    let mut seen: HashSet<String> = slots.iter().map(slot_key).collect();
    let mut push = |slot: Slot, slots: &mut Vec<Slot>| {
        if seen.insert(slot_key(&slot)) {
            slots.push(slot);
        }
    };
    for k in 0..k_types {
        for t in &lib.0 {
            let slot = if *t == Expr::Const(1.0) {
                Slot::SelfConst(k)
            } else {
                Slot::SelfTerm(k, t.clone())
            };
            push(slot, slots);
        }
    }
    for e in 0..e_types {
        for t in &lib.1 {
            let slot = if *t == Expr::Const(1.0) {
                Slot::InterConst(e)
            } else {
                Slot::InterTerm(e, t.clone())
            };
            push(slot, slots);
        }
    }
}

/// Parsed self and interaction library terms.
type LibraryTerms = (Vec<Expr>, Vec<Expr>);

fn candidate_slots(c: &Expr, inter: bool, index: usize, prune: f64) -> Vec<Slot> {
    let (c0, parts) = linear_parts(c);
    let mut slots = Vec::new();
    if !inter {
        slots.push(Slot::SelfConst(index));
    } else if c0.abs() >= prune {
        slots.push(Slot::InterConst(index));
    }
    let mut seen = HashSet::new();
    for (_, t) in parts {
        let snapped = [
            snap_exponents(&t, f64::floor),
            snap_exponents(&t, f64::ceil),
        ];
        for t in std::iter::once(t).chain(snapped) {
            if matches!(t, Expr::Const(_)) || !seen.insert(t.to_string()) {
                continue;
            }
            slots.push(if inter {
                Slot::InterTerm(index, t)
            } else {
                Slot::SelfTerm(index, t)
            });
        }
    }
    slots
}

/// Replace every fitted non-integer constant exponent with `round(c)`.
fn snap_exponents(e: &Expr, round: fn(f64) -> f64) -> Expr {
    match e {
        Expr::Binary(BinaryOp::Pow, a, b) => match b.as_ref() {
            Expr::Const(c) if c.fract() != 0.0 && c.abs() < 8.0 => match round(*c) {
                n if n == 0.0 => Expr::Const(1.0),
                n if n == 1.0 => snap_exponents(a, round),
                n => Expr::binary(BinaryOp::Pow, snap_exponents(a, round), Expr::Const(n)),
            },
            _ => Expr::binary(
                BinaryOp::Pow,
                snap_exponents(a, round),
                snap_exponents(b, round),
            ),
        },
        Expr::Binary(op, a, b) => {
            Expr::binary(*op, snap_exponents(a, round), snap_exponents(b, round))
        }
        Expr::Unary(op, a) => Expr::unary(*op, snap_exponents(a, round)),
        _ => e.clone(),
    }
}

/// Rebuild per-type expressions from refit coefficients.
fn rebuild(slots: &[Slot], coef: &[f64], k_types: usize, e_types: usize) -> (Vec<Expr>, Vec<Expr>) {
    let mut self_parts: Vec<(f64, Vec<(f64, Expr)>)> = vec![(0.0, Vec::new()); k_types];
    let mut inter_parts: Vec<(f64, Vec<(f64, Expr)>)> = vec![(0.0, Vec::new()); e_types];
    for (slot, &c) in slots.iter().zip(coef) {
        if c == 0.0 {
            continue;
        }
        match slot {
            Slot::SelfConst(k) => self_parts[*k].0 += c,
            Slot::SelfTerm(k, t) => self_parts[*k].1.push((c, t.clone())),
            Slot::InterConst(e) => inter_parts[*e].0 += c,
            Slot::InterTerm(e, t) => inter_parts[*e].1.push((c, t.clone())),
        }
    }
    let build = |v: Vec<(f64, Vec<(f64, Expr)>)>| {
        v.into_iter()
            .map(|(c0, p)| linear_combination(&p, c0))
            .collect()
    };
    (build(self_parts), build(inter_parts))
}

/// Closed-form expressions for every node type, edge type and output
/// dimension of a trained decoupler. Raw states are drawn from the training
/// split, reduced to representatives by k-means, passed through the
/// networks and regressed by the configured backend. With the refit enabled
/// the candidate terms are then refitted jointly against the training
/// derivatives, and candidate pairs are ranked by validation R² minus a
/// size penalty.
pub fn regress_decoupler(
    model: &DecouplerModel,
    ts: &TrainingSet,
    cfg: &RegressConfig,
) -> Result<DiscoveredModel> {
    cfg.validate()?;
    model.validate()?;
    if model.d != ts.d {
        return Err(Error::shape(format!(
            "model dimension {} differs from data dimension {}",
            model.d, ts.d
        )));
    }
    let d = model.d;
    let k_types = model.num_node_types();
    let e_types = model.num_edge_types();
    if ts.topology.num_node_types() > k_types || ts.topology.num_edge_types() > e_types {
        return Err(Error::invalid(
            "training topology has more types than the decoupler",
        ));
    }
    let mut rng = rng::seeded(rng::split(cfg.seed, 0));
    let mut self_fits = Vec::with_capacity(k_types);
    let mut k_self = Vec::with_capacity(k_types);
    for k in 0..k_types {
        let raw = self_points(ts, k, cfg.n_raw, &mut rng);
        let reps = representatives(raw, cfg.k, rng::split(cfg.seed, 100 + k as u64))?;
        k_self.push(reps.len());
        self_fits.push(fit_type(
            model,
            &reps,
            false,
            k,
            &cfg.backend,
            rng::split(cfg.seed, 1_000 + k as u64),
        )?);
    }
    let mut inter_fits = Vec::with_capacity(e_types);
    let mut k_inter = Vec::with_capacity(e_types);
    for e in 0..e_types {
        let raw = pair_points(ts, e, cfg.n_raw, &mut rng);
        let reps = representatives(raw, cfg.k, rng::split(cfg.seed, 200 + e as u64))?;
        k_inter.push(reps.len());
        inter_fits.push(fit_type(
            model,
            &reps,
            true,
            e,
            &cfg.backend,
            rng::split(cfg.seed, 2_000 + e as u64),
        )?);
    }

    let library: Option<LibraryTerms> = match (&cfg.backend, cfg.refit.full_library) {
        (
            Backend::Sparse {
                self_library,
                inter_library,
                ..
            },
            true,
        ) => {
            let parse = |terms: &[String]| {
                terms
                    .iter()
                    .map(|t| Expr::parse_infix(t))
                    .collect::<Result<Vec<_>>>()
            };
            Some((parse(self_library)?, parse(inter_library)?))
        }
        _ => None,
    };
    let mut self_exprs: Vec<Vec<Expr>> = vec![Vec::with_capacity(d); k_types];
    let mut inter_exprs: Vec<Vec<Expr>> = vec![Vec::with_capacity(d); e_types];
    let mut val_r2 = Vec::with_capacity(d);
    let mut counts = Vec::with_capacity(d);
    for r in 0..d {
        let best_self: Vec<Expr> = self_fits
            .iter()
            .map(|f| f.candidates[r][0].expr.clone())
            .collect();
        let best_inter: Vec<Expr> = inter_fits
            .iter()
            .map(|f| f.candidates[r][0].expr.clone())
            .collect();
        let ns = self_fits.iter().map(|f| f.candidates[r].len()).sum();
        let ni = inter_fits.iter().map(|f| f.candidates[r].len()).sum();
        counts.push((ns, ni));
        let mut chosen = (best_self, best_inter, f64::NAN);
        if cfg.refit.enabled {
            let lib = library.as_ref();
            if let Some(found) = refit_dimension(
                ts,
                r,
                &self_fits,
                &inter_fits,
                &cfg.refit,
                lib,
                k_types,
                e_types,
            ) {
                chosen = found;
            }
        }
        for (k, e) in chosen.0.into_iter().enumerate() {
            self_exprs[k].push(e);
        }
        for (k, e) in chosen.1.into_iter().enumerate() {
            inter_exprs[k].push(e);
        }
        val_r2.push(chosen.2);
    }

    let record = |exprs: &[Vec<Expr>], fits: &[TypeFits]| -> Vec<Vec<ExprRecord>> {
        exprs
            .iter()
            .zip(fits)
            .map(|(dims, f)| {
                dims.iter()
                    .zip(&f.samples)
                    .map(|(e, s)| {
                        ExprRecord::new(e, if s.is_empty() { None } else { s.mse(e).ok() })
                    })
                    .collect()
            })
            .collect()
    };
    let dm = DiscoveredModel {
        d,
        self_exprs: record(&self_exprs, &self_fits),
        inter_exprs: record(&inter_exprs, &inter_fits),
        provenance: Provenance {
            backend: cfg.backend.name().to_string(),
            seed: cfg.seed,
            n_raw: cfg.n_raw,
            k_self,
            k_inter,
            refit: cfg.refit.enabled,
            val_r2: val_r2
                .into_iter()
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect(),
            candidates: counts,
        },
    };
    dm.validate()?;
    Ok(dm)
}

type Chosen = (Vec<Expr>, Vec<Expr>, f64);

fn refit_dimension(
    ts: &TrainingSet,
    r: usize,
    self_fits: &[TypeFits],
    inter_fits: &[TypeFits],
    cfg: &RefitConfig,
    library: Option<&LibraryTerms>,
    k_types: usize,
    e_types: usize,
) -> Option<Chosen> {
    let mut data = RefitData::new(ts, r);
    let prune = 1e-12;
    let evaluate = |data: &mut RefitData<'_>, slots: &[Slot]| -> Option<(Chosen, f64)> {
        let (coef, r2) = data.fit(slots, cfg.threshold)?;
        let (s, g) = rebuild(slots, &coef, k_types, e_types);
        let size: usize = s.iter().chain(&g).map(Expr::size).sum();
        let score = (1.0 - r2) + cfg.parsimony * size as f64;
        Some(((s, g, r2), score))
    };
    if k_types == 1 && e_types == 1 {
        let mut best: Option<(Chosen, f64)> = None;
        for sc in self_fits[0].candidates[r].iter().take(cfg.max_candidates) {
            for gc in inter_fits[0].candidates[r].iter().take(cfg.max_candidates) {
                let mut slots = candidate_slots(&sc.expr, false, 0, prune);
                slots.extend(candidate_slots(&gc.expr, true, 0, prune));
                if let Some(lib) = library {
                    extend_library(&mut slots, lib, k_types, e_types);
                }
                if let Some((c, score)) = evaluate(&mut data, &slots) {
                    if best.as_ref().is_none_or(|b| score < b.1) {
                        best = Some((c, score));
                    }
                }
            }
        }
        return best.map(|b| b.0);
    }
    let mut slots = Vec::new();
    for (k, f) in self_fits.iter().enumerate() {
        slots.extend(candidate_slots(&f.candidates[r][0].expr, false, k, prune));
    }
    for (e, f) in inter_fits.iter().enumerate() {
        slots.extend(candidate_slots(&f.candidates[r][0].expr, true, e, prune));
    }
    if let Some(lib) = library {
        extend_library(&mut slots, lib, k_types, e_types);
    }
    evaluate(&mut data, &slots).map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupler::ArchConfig;
    use crate::dynamics::{builtin_rhs, simulate_dataset, InitDist, Model, TableRow};
    use crate::preprocess::{build_training_pairs, IntervalChoice, SmoothConfig};
    use crate::topology::gen_er;

    #[test]
    fn exact_epi_assembly_matches_builtin() {
        let topo = gen_er(15, 0.3, 3).unwrap();
        let dm = DiscoveredModel::from_infix(&[vec!["-1 * xi"]], &[vec!["xj - xi * xj"]]).unwrap();
        let spec = assemble_rhs(&dm, &topo).unwrap();
        let truth = DynamicsSpec::new(Model::Epi);
        let x: Vec<f64> = (0..15).map(|k| (k as f64 * 0.37).fract()).collect();
        let a = builtin_rhs(&spec, &topo, &x, 0.0).unwrap();
        let b = builtin_rhs(&truth, &topo, &x, 0.0).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_interaction_reduces_to_self() {
        let topo = gen_er(8, 0.5, 1).unwrap();
        let dm = DiscoveredModel::from_infix(&[vec!["xi - xi ^ 2"]], &[vec!["0"]]).unwrap();
        let spec = assemble_rhs(&dm, &topo).unwrap();
        let x: Vec<f64> = (0..8).map(|k| 0.1 * k as f64).collect();
        let v = builtin_rhs(&spec, &topo, &x, 0.0).unwrap();
        for (xi, dv) in x.iter().zip(&v) {
            assert!((dv - (xi - xi * xi)).abs() < 1e-15);
        }
    }

    #[test]
    fn unbound_names_rejected() {
        assert!(DiscoveredModel::from_infix(&[vec!["y"]], &[vec!["xj"]]).is_err());
        assert!(DiscoveredModel::from_infix(&[vec!["xi"]], &[vec!["xk"]]).is_err());
    }

    fn epi_training(seed: u64) -> TrainingSet {
        let topo = gen_er(12, 0.3, seed).unwrap();
        let spec = DynamicsSpec::new(Model::Epi);
        let row = TableRow::default_for(Model::Epi);
        let traj =
            simulate_dataset(&spec, &topo, InitDist::default_for(Model::Epi), row, seed).unwrap();
        let choice = IntervalChoice::full_resolution(&traj, 60.min(traj.len() - 1)).unwrap();
        build_training_pairs(&traj, &topo, &choice, &SmoothConfig::default(), seed).unwrap()
    }

    #[test]
    fn untrained_model_gives_bias_constants() {
        let ts = epi_training(1);
        let mut model = DecouplerModel::zeros(1, 1, 1, &ArchConfig::default()).unwrap();
        model.self_nets[0].set_output_bias(&[0.25]);
        let cfg = RegressConfig {
            n_raw: 200,
            k: 16,
            refit: RefitConfig {
                enabled: false,
                ..RefitConfig::default()
            },
            backend: Backend::Search(SearchConfig {
                generations: 3,
                population: 30,
                ..SearchConfig::default()
            }),
            ..RegressConfig::default()
        };
        let dm = regress_decoupler(&model, &ts, &cfg).unwrap();
        let s = dm.self_expr(0, 0).unwrap();
        let g = dm.inter_expr(0, 0).unwrap();
        assert_eq!(s.size(), 1);
        assert!((s.eval(&HashMap::new()).unwrap() - 0.25 * model.output_scale[0]).abs() < 1e-9);
        assert_eq!(g, Expr::Const(0.0));
    }

    #[test]
    fn refit_recovers_epi_terms_and_is_seed_invariant() {
        let ts = epi_training(2);
        // an untrained decoupler gives generic outputs, so a zero threshold
        // keeps the whole library as support for the joint refit
        let model = DecouplerModel::new(1, 1, 1, &ArchConfig::default(), 4).unwrap();
        let backend = Backend::Sparse {
            self_library: vec!["1".into(), "xi".into()],
            inter_library: vec!["xj".into(), "xi * xj".into()],
            threshold: 0.0,
        };
        let run = |seed| {
            let cfg = RegressConfig {
                n_raw: 300,
                k: 32,
                seed,
                backend: backend.clone(),
                ..RegressConfig::default()
            };
            regress_decoupler(&model, &ts, &cfg).unwrap()
        };
        let a = run(1);
        let b = run(2);
        let probe = |dm: &DiscoveredModel| {
            let s = dm.self_expr(0, 0).unwrap();
            let g = dm.inter_expr(0, 0).unwrap();
            let bind = |xi: f64, xj: f64| -> HashMap<String, f64> {
                [("xi".to_string(), xi), ("xj".to_string(), xj)].into()
            };
            (
                s.eval(&bind(0.5, 0.0)).unwrap(),
                g.eval(&bind(0.5, 0.8)).unwrap(),
            )
        };
        let (sa, ga) = probe(&a);
        let (sb, gb) = probe(&b);
        assert!((sa + 0.5).abs() < 1e-3, "{}", a.summary());
        assert!((ga - 0.4).abs() < 1e-3, "{}", a.summary());
        assert!((sa - sb).abs() < 1e-6 && (ga - gb).abs() < 1e-6);
        assert!(a.provenance.val_r2[0] > 0.999);
        let back = DiscoveredModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn full_library_refit_recovers_terms_missed_by_the_decoupler() {
        let ts = epi_training(3);
        let mut model = DecouplerModel::zeros(1, 1, 1, &ArchConfig::default()).unwrap();
        model.self_nets[0].set_output_bias(&[0.25]);
        let run = |full_library| {
            let cfg = RegressConfig {
                n_raw: 200,
                k: 16,
                refit: RefitConfig {
                    full_library,
                    ..RefitConfig::default()
                },
                backend: Backend::Sparse {
                    self_library: vec!["1".into(), "xi".into()],
                    inter_library: vec!["xj".into(), "xi * xj".into()],
                    threshold: 0.05,
                },
                ..RegressConfig::default()
            };
            regress_decoupler(&model, &ts, &cfg).unwrap()
        };
        let bind = |xi: f64, xj: f64| -> HashMap<String, f64> {
            [("xi".to_string(), xi), ("xj".to_string(), xj)].into()
        };
        let plain = run(false);
        assert_eq!(
            plain
                .inter_expr(0, 0)
                .unwrap()
                .eval(&bind(0.5, 0.8))
                .unwrap(),
            0.0
        );
        let full = run(true);
        let s = full.self_expr(0, 0).unwrap().eval(&bind(0.5, 0.0)).unwrap();
        let g = full
            .inter_expr(0, 0)
            .unwrap()
            .eval(&bind(0.5, 0.8))
            .unwrap();
        assert!((s + 0.5).abs() < 1e-3, "{}", full.summary());
        assert!((g - 0.4).abs() < 1e-3, "{}", full.summary());
    }

    #[test]
    fn snapped_exponents_are_integers() {
        let e = Expr::parse_infix("xi^2.16 * cos(xj^0.4) + xi^1.2").unwrap();
        assert_eq!(
            snap_exponents(&e, f64::floor),
            Expr::parse_infix("xi^2 * cos(1) + xi").unwrap()
        );
        assert_eq!(
            snap_exponents(&e, f64::ceil),
            Expr::parse_infix("xi^3 * cos(xj) + xi^2").unwrap()
        );
        let slots = candidate_slots(
            &Expr::parse_infix("0.1 - 0.7 * xi^2.16").unwrap(),
            false,
            0,
            1e-3,
        );
        let keys: Vec<String> = slots.iter().map(slot_key).collect();
        assert_eq!(keys, ["s0:1", "s0:xi^2.16", "s0:xi^2", "s0:xi^3"]);
    }
}
