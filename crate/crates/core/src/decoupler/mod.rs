//! Neural decoupling of node-wise derivatives into self and pairwise
//! interaction parts.
//!
//! Every node type `k` owns a self network `f_k`, every edge type `e` owns
//! three networks `(g0_e, g1_e, g2_e)`, and
//!
//! `ẋ_i ≈ f_k(i)(x_i) + Σ_e Σ_j A^e_ij [g0_e(x_i, x_j) + g1_e(x_i) ⊙ g2_e(x_j)]`.

mod mlp;

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{Split, TrainingSet};
use crate::rng;
use crate::topology::{ObservationMask, Topology};

pub use mlp::{
    rational_forward, Mlp, MlpSpec, RationalActivation, Tape, INITIAL_DENOMINATOR,
    INITIAL_NUMERATOR,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Hidden layers of the self network.
    #[serde(default = "default_self_layers")]
    pub self_layers: usize,
    /// Hidden layers of each interaction network.
    #[serde(default = "default_inter_layers")]
    pub inter_layers: usize,
}

fn default_hidden() -> usize {
    50
}

fn default_self_layers() -> usize {
    2
}

fn default_inter_layers() -> usize {
    3
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            self_layers: default_self_layers(),
            inter_layers: default_inter_layers(),
        }
    }
}

impl ArchConfig {
    pub fn self_spec(&self, d: usize) -> MlpSpec {
        MlpSpec::new(d, &vec![self.hidden; self.self_layers], d)
    }

    pub fn pair_spec(&self, d: usize) -> MlpSpec {
        MlpSpec::new(2 * d, &vec![self.hidden; self.inter_layers], d)
    }

    pub fn unary_spec(&self, d: usize) -> MlpSpec {
        MlpSpec::new(d, &vec![self.hidden; self.inter_layers], d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionNets {
    pub g0: Mlp,
    pub g1: Mlp,
    pub g2: Mlp,
}

/// Trained (or freshly initialised) decoupler. Inputs are standardised as
/// `(x - input_shift) / input_scale` and network outputs are multiplied by
/// `output_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecouplerModel {
    pub d: usize,
    pub arch: ArchConfig,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_scale: Vec<f64>,
    pub self_nets: Vec<Mlp>,
    pub inter_nets: Vec<InteractionNets>,
}

impl DecouplerModel {
    /// Randomly initialised model with `node_types` self networks and
    /// `edge_types` interaction triples.
    pub fn new(
        d: usize,
        node_types: usize,
        edge_types: usize,
        arch: &ArchConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::build(d, node_types, edge_types, arch, |spec, idx| {
            Mlp::init(spec, &mut rng::seeded(rng::split(seed, idx as u64)))
        })
    }

    /// Model whose networks all output zero.
    pub fn zeros(
        d: usize,
        node_types: usize,
        edge_types: usize,
        arch: &ArchConfig,
    ) -> Result<Self> {
        Self::build(d, node_types, edge_types, arch, |spec, _| Mlp::zeros(spec))
    }

    fn build(
        d: usize,
        node_types: usize,
        edge_types: usize,
        arch: &ArchConfig,
        mut make: impl FnMut(MlpSpec, usize) -> Result<Mlp>,
    ) -> Result<Self> {
        if d == 0 || node_types == 0 || edge_types == 0 {
            return Err(Error::invalid(
                "state dimension and type counts must be positive",
            ));
        }
        let mut idx = 0;
        let mut next = |spec: MlpSpec| {
            idx += 1;
            make(spec, idx - 1)
        };
        let self_nets = (0..node_types)
            .map(|_| next(arch.self_spec(d)))
            .collect::<Result<Vec<_>>>()?;
        let inter_nets = (0..edge_types)
            .map(|_| {
                Ok(InteractionNets {
                    g0: next(arch.pair_spec(d))?,
                    g1: next(arch.unary_spec(d))?,
                    g2: next(arch.unary_spec(d))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            arch: arch.clone(),
            input_shift: vec![0.0; d],
            input_scale: vec![1.0; d],
            output_scale: vec![1.0; d],
            self_nets,
            inter_nets,
        })
    }

    pub fn num_node_types(&self) -> usize {
        self.self_nets.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.inter_nets.len()
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.params.len()).sum()
    }

    fn nets(&self) -> Vec<&Mlp> {
        let mut v: Vec<&Mlp> = self.self_nets.iter().collect();
        for t in &self.inter_nets {
            v.extend([&t.g0, &t.g1, &t.g2]);
        }
        v
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        let mut v: Vec<&mut Mlp> = self.self_nets.iter_mut().collect();
        for t in &mut self.inter_nets {
            v.push(&mut t.g0);
            v.push(&mut t.g1);
            v.push(&mut t.g2);
        }
        v
    }

    fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.d {
            out[k] = (x[k] - self.input_shift[k]) / self.input_scale[k];
        }
    }

    fn check_topology(&self, topology: &Topology) -> Result<()> {
        if topology.num_node_types() > self.num_node_types()
            || topology.num_edge_types() > self.num_edge_types()
        {
            return Err(Error::shape(format!(
                "topology has {} node / {} edge types, model has {} / {}",
                topology.num_node_types(),
                topology.num_edge_types(),
                self.num_node_types(),
                self.num_edge_types()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if self.input_shift.len() != d
            || self.input_scale.len() != d
            || self.output_scale.len() != d
        {
            return Err(Error::shape("normalisation vectors must have length d"));
        }
        if self.self_nets.is_empty() || self.inter_nets.is_empty() {
            return Err(Error::shape(
                "model needs at least one self and one interaction network",
            ));
        }
        let check = |net: &Mlp, input: usize| -> Result<()> {
            net.spec.validate()?;
            if net.params.len() != net.spec.num_params()
                || net.input_dim() != input
                || net.output_dim() != d
            {
                return Err(Error::shape(format!(
                    "network {:?} inconsistent with d={d}",
                    net.spec.sizes
                )));
            }
            Ok(())
        };
        for n in &self.self_nets {
            check(n, d)?;
        }
        for t in &self.inter_nets {
            check(&t.g0, 2 * d)?;
            check(&t.g1, d)?;
            check(&t.g2, d)?;
        }
        Ok(())
    }
}

/// Which nodes and edges take part in a forward pass.
struct Layout {
    n: usize,
    self_rows: Vec<Vec<usize>>,
    pairs: Vec<Vec<(usize, usize, f64)>>,
    active: Vec<usize>,
}

impl Layout {
    fn new(model: &DecouplerModel, topology: &Topology, mask: &ObservationMask) -> Result<Self> {
        let n = topology.n();
        mask.check(n, model.d)?;
        model.check_topology(topology)?;
        let observed: Vec<bool> = (0..n).map(|i| mask.node_observed(i)).collect();
        let mut self_rows = vec![Vec::new(); model.num_node_types()];
        let mut pairs = vec![Vec::new(); model.num_edge_types()];
        let mut active = Vec::new();
        for i in 0..n {
            if !observed[i] {
                continue;
            }
            active.push(i);
            self_rows[topology.node_type(i)].push(i);
            for (j, w, e) in topology.neighbors(i) {
                if observed[j] && mask.edge_observed(i, j) {
                    pairs[e].push((i, j, w));
                }
            }
        }
        Ok(Self {
            n,
            self_rows,
            pairs,
            active,
        })
    }
}

struct Forward {
    /// Normalised-unit prediction, `(B·N) × d`.
    pred: Array2<f64>,
    self_tapes: Vec<Option<(Vec<usize>, Tape)>>,
    inter: Vec<Option<InterTape>>,
}

struct InterTape {
    g0: Tape,
    g1: Tape,
    g2: Tape,
    g1_out: Array2<f64>,
    g2_out: Array2<f64>,
}

fn normalized_rows(model: &DecouplerModel, n: usize, states: &[&[f64]]) -> Array2<f64> {
    let d = model.d;
    let mut x = Array2::zeros((states.len() * n, d));
    for (b, st) in states.iter().enumerate() {
        for i in 0..n {
            let row = x.slice_mut(s![b * n + i, ..]).into_slice().unwrap();
            model.normalize_into(&st[i * d..(i + 1) * d], row);
        }
    }
    x
}

fn gather(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let d = x.ncols();
    let mut out = Array2::zeros((rows.len(), d));
    for (r, &src) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(src));
    }
    out
}

fn forward(
    model: &DecouplerModel,
    layout: &Layout,
    x: &Array2<f64>,
    batch: usize,
    tape: bool,
) -> Forward {
    let n = layout.n;
    let d = model.d;
    let mut pred = Array2::zeros((batch * n, d));
    let mut self_tapes = Vec::with_capacity(layout.self_rows.len());
    for (k, nodes) in layout.self_rows.iter().enumerate() {
        if nodes.is_empty() {
            self_tapes.push(None);
            continue;
        }
        let rows: Vec<usize> = (0..batch)
            .flat_map(|b| nodes.iter().map(move |&i| b * n + i))
            .collect();
        let input = gather(x, &rows);
        let net = &model.self_nets[k];
        let (out, t) = if tape {
            let (o, t) = net.forward_tape(input.view());
            (o, Some(t))
        } else {
            (net.forward(input.view()), None)
        };
        for (r, &dst) in rows.iter().enumerate() {
            let mut row = pred.row_mut(dst);
            row += &out.row(r);
        }
        self_tapes.push(t.map(|t| (rows, t)));
    }
    let mut inter = Vec::with_capacity(layout.pairs.len());
    for (e, pairs) in layout.pairs.iter().enumerate() {
        if pairs.is_empty() {
            inter.push(None);
            continue;
        }
        let nets = &model.inter_nets[e];
        let mut pin = Array2::zeros((batch * pairs.len(), 2 * d));
        for b in 0..batch {
            for (p, &(i, j, _)) in pairs.iter().enumerate() {
                let r = b * pairs.len() + p;
                pin.slice_mut(s![r, ..d]).assign(&x.row(b * n + i));
                pin.slice_mut(s![r, d..]).assign(&x.row(b * n + j));
            }
        }
        let (g0, t0) = run(&nets.g0, pin.view(), tape);
        let (g1, t1) = run(&nets.g1, x.view(), tape);
        let (g2, t2) = run(&nets.g2, x.view(), tape);
        for b in 0..batch {
            for (p, &(i, j, w)) in pairs.iter().enumerate() {
                let r = b * pairs.len() + p;
                let (ri, rj) = (b * n + i, b * n + j);
                for k in 0..d {
                    pred[(ri, k)] += w * (g0[(r, k)] + g1[(ri, k)] * g2[(rj, k)]);
                }
            }
        }
        inter.push(match (t0, t1, t2) {
            (Some(g0), Some(g1t), Some(g2t)) => Some(InterTape {
                g0,
                g1: g1t,
                g2: g2t,
                g1_out: g1,
                g2_out: g2,
            }),
            _ => None,
        });
    }
    Forward {
        pred,
        self_tapes,
        inter,
    }
}

fn run(net: &Mlp, x: ArrayView2<'_, f64>, tape: bool) -> (Array2<f64>, Option<Tape>) {
    if tape {
        let (o, t) = net.forward_tape(x);
        (o, Some(t))
    } else {
        (net.forward(x), None)
    }
}

/// Parameter gradients, one vector per network in `DecouplerModel::nets` order.
fn backward(
    model: &DecouplerModel,
    layout: &Layout,
    fwd: Forward,
    dpred: &Array2<f64>,
    batch: usize,
) -> Vec<Vec<f64>> {
    let n = layout.n;
    let d = model.d;
    let mut grads: Vec<Vec<f64>> = model
        .nets()
        .iter()
        .map(|m| vec![0.0; m.params.len()])
        .collect();
    let k_types = model.num_node_types();
    for (k, entry) in fwd.self_tapes.into_iter().enumerate() {
        if let Some((rows, tape)) = entry {
            let dout = gather(dpred, &rows);
            model.self_nets[k].backward(&tape, dout, &mut grads[k]);
        }
    }
    for (e, entry) in fwd.inter.into_iter().enumerate() {
        let Some(t) = entry else { continue };
        let pairs = &layout.pairs[e];
        let mut d0 = Array2::zeros((batch * pairs.len(), d));
        let mut d1 = Array2::zeros((batch * n, d));
        let mut d2 = Array2::zeros((batch * n, d));
        for b in 0..batch {
            for (p, &(i, j, w)) in pairs.iter().enumerate() {
                let r = b * pairs.len() + p;
                let (ri, rj) = (b * n + i, b * n + j);
                for k in 0..d {
                    let g = w * dpred[(ri, k)];
                    d0[(r, k)] = g;
                    d1[(ri, k)] += g * t.g2_out[(rj, k)];
                    d2[(rj, k)] += g * t.g1_out[(ri, k)];
                }
            }
        }
        let base = k_types + 3 * e;
        let nets = &model.inter_nets[e];
        nets.g0.backward(&t.g0, d0, &mut grads[base]);
        nets.g1.backward(&t.g1, d1, &mut grads[base + 1]);
        nets.g2.backward(&t.g2, d2, &mut grads[base + 2]);
    }
    grads
}

/// Predicted derivatives for one `N × d` state. Unobserved nodes get zero
/// rows and are left out of every neighbour sum; masked edges are skipped.
pub fn predict_derivative(
    model: &DecouplerModel,
    topology: &Topology,
    state: &[f64],
    mask: &ObservationMask,
) -> Result<Vec<f64>> {
    let n = topology.n();
    if state.len() != n * model.d {
        return Err(Error::shape(format!(
            "state has {} entries, expected {}",
            state.len(),
            n * model.d
        )));
    }
    let layout = Layout::new(model, topology, mask)?;
    let x = normalized_rows(model, n, &[state]);
    let fwd = forward(model, &layout, &x, 1, false);
    let mut out = vec![0.0; n * model.d];
    for &i in &layout.active {
        for k in 0..model.d {
            out[i * model.d + k] = fwd.pred[(i, k)] * model.output_scale[k];
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Mean absolute error plus λ times the sample variance of per-node L1 errors.
    #[default]
    Variance,
    /// `(r_i + mean_k e_ik)²` in place of the centred square.
    Literal,
}

/// Per-node L1 residuals `r_i` and signed means `m_i` of `target - pred`.
fn node_residuals(pred: &[f64], target: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    pred.chunks(d)
        .zip(target.chunks(d))
        .map(|(p, t)| {
            let r = p.iter().zip(t).map(|(a, b)| (b - a).abs()).sum::<f64>();
            let m = p.iter().zip(t).map(|(a, b)| b - a).sum::<f64>() / d as f64;
            (r, m)
        })
        .unzip()
}

/// Loss for one timestamp over `N = pred.len() / d` nodes:
/// `(1/(N·d)) [Σ_i r_i + λ/(N-1) Σ_i (r_i - r̄)²]` with `r_i` the L1 error of node `i`.
pub fn loss_eq5(
    pred: &[f64],
    target: &[f64],
    d: usize,
    lambda: f64,
    variant: LossVariant,
) -> Result<f64> {
    loss_and_grad(pred, target, d, lambda, variant, None)
}

fn loss_and_grad(
    pred: &[f64],
    target: &[f64],
    d: usize,
    lambda: f64,
    variant: LossVariant,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if pred.len() != target.len() || d == 0 || pred.len() % d != 0 {
        return Err(Error::shape(format!(
            "pred {} vs target {} (d={d})",
            pred.len(),
            target.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let n = pred.len() / d;
    if n == 0 || (lambda > 0.0 && n < 2) {
        return Err(Error::invalid(format!(
            "need at least 2 nodes for the variance term, got {n}"
        )));
    }
    let (r, m) = node_residuals(pred, target, d);
    let scale = 1.0 / (n * d) as f64;
    let mean = r.iter().sum::<f64>() / n as f64;
    let spread = if n > 1 { lambda / (n - 1) as f64 } else { 0.0 };
    let centred: Vec<f64> = match variant {
        LossVariant::Variance => r.iter().map(|v| v - mean).collect(),
        LossVariant::Literal => r.iter().zip(&m).map(|(a, b)| a + b).collect(),
    };
    let loss =
        scale * (r.iter().sum::<f64>() + spread * centred.iter().map(|c| c * c).sum::<f64>());
    if let Some(g) = grad {
        for i in 0..n {
            for k in 0..d {
                let idx = i * d + k;
                let e = target[idx] - pred[idx];
                let sgn = if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                // d r_i / d pred = -sgn; d m_i / d pred = -1/d
                let dc = match variant {
                    LossVariant::Variance => -sgn,
                    LossVariant::Literal => -sgn - 1.0 / d as f64,
                };
                g[idx] += scale * (-sgn + spread * 2.0 * centred[i] * dc);
            }
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Evaluations without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Epochs between validation evaluations.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub loss: LossVariant,
    /// Timestamps per optimiser step; `None` trains full-batch.
    #[serde(default)]
    pub batch_times: Option<usize>,
    /// Final learning rate as a fraction of `lr` under cosine decay (1 disables decay).
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    /// Stop once validation loss drops below this fraction of the target variance.
    #[serde(default = "default_val_threshold")]
    pub val_threshold: f64,
    #[serde(default)]
    pub arch: ArchConfig,
}

fn default_lr() -> f64 {
    1e-2
}

fn default_weight_decay() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    1000
}

fn default_patience() -> usize {
    50
}

fn default_eval_every() -> usize {
    10
}

fn default_lambda() -> f64 {
    0.1
}

fn default_lr_floor() -> f64 {
    0.01
}

fn default_val_threshold() -> f64 {
    1e-4
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            patience: default_patience(),
            eval_every: default_eval_every(),
            seed: 0,
            lambda: default_lambda(),
            loss: LossVariant::default(),
            batch_times: None,
            lr_floor: default_lr_floor(),
            val_threshold: default_val_threshold(),
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(self.weight_decay >= 0.0)
            || self.epochs == 0
            || self.eval_every == 0
        {
            return Err(Error::invalid(
                "lr must be positive, weight decay non-negative, epochs and eval_every >= 1",
            ));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return Err(Error::invalid("lr_floor must lie in (0, 1]"));
        }
        self.arch.self_spec(1).validate()?;
        self.arch.pair_spec(1).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

/// Mean per-timestamp loss over `times`, optionally with gradients.
fn batch_loss(
    model: &DecouplerModel,
    layout: &Layout,
    ts: &TrainingSet,
    times: &[usize],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let n = ts.n;
    let d = ts.d;
    let states: Vec<&[f64]> = times.iter().map(|&k| ts.state(k)).collect();
    let x = normalized_rows(model, n, &states);
    let batch = times.len();
    let fwd = forward(model, layout, &x, batch, want_grad);
    let na = layout.active.len();
    let mut pred = vec![0.0; na * d];
    let mut target = vec![0.0; na * d];
    let mut gbuf = vec![0.0; na * d];
    let mut dpred = want_grad.then(|| Array2::zeros((batch * n, d)));
    let mut total = 0.0;
    for (b, &k) in times.iter().enumerate() {
        let tgt = ts.target(k);
        for (a, &i) in layout.active.iter().enumerate() {
            for c in 0..d {
                pred[a * d + c] = fwd.pred[(b * n + i, c)] * model.output_scale[c];
                target[a * d + c] = tgt[i * d + c];
            }
        }
        gbuf.iter_mut().for_each(|v| *v = 0.0);
        let g = dpred.as_ref().map(|_| gbuf.as_mut_slice());
        total += loss_and_grad(&pred, &target, d, cfg.lambda, cfg.loss, g)?;
        if let Some(dp) = dpred.as_mut() {
            for (a, &i) in layout.active.iter().enumerate() {
                for c in 0..d {
                    dp[(b * n + i, c)] = gbuf[a * d + c] * model.output_scale[c] / batch as f64;
                }
            }
        }
    }
    let loss = total / batch as f64;
    let grads = dpred.map(|dp| backward(model, layout, fwd, &dp, batch));
    Ok((loss, grads))
}

/// Loss and parameter gradients of `model` on the given timestamps
/// (exposed for gradient checks).
pub fn loss_with_gradient(
    model: &DecouplerModel,
    ts: &TrainingSet,
    times: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let layout = Layout::new(
        model,
        &ts.topology,
        &ObservationMask::all_observed(ts.n, ts.d),
    )?;
    let (l, g) = batch_loss(model, &layout, ts, times, cfg, true)?;
    Ok((l, g.unwrap()))
}

/// Flat parameter vectors of every network, in gradient order.
pub fn parameter_blocks(model: &DecouplerModel) -> Vec<Vec<f64>> {
    model.nets().iter().map(|m| m.params.clone()).collect()
}

pub fn set_parameter_blocks(model: &mut DecouplerModel, blocks: &[Vec<f64>]) {
    for (net, b) in model.nets_mut().into_iter().zip(blocks) {
        net.params.copy_from_slice(b);
    }
}

fn column_stats(values: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (values.len() / d).max(1) as f64;
    let mut mean = vec![0.0; d];
    for row in values.chunks(d) {
        for k in 0..d {
            mean[k] += row[k] / rows;
        }
    }
    let mut var = vec![0.0; d];
    for row in values.chunks(d) {
        for k in 0..d {
            var[k] += (row[k] - mean[k]).powi(2) / rows;
        }
    }
    let std = var
        .into_iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = v.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &DecouplerModel) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .nets()
            .iter()
            .map(|n| vec![0.0; n.params.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DecouplerModel, grads: &[Vec<f64>], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (b, net) in model.nets_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[b], &mut self.v[b], &grads[b]);
            for (p, ((mi, vi), gi)) in net
                .params
                .iter_mut()
                .zip(m.iter_mut().zip(v.iter_mut()).zip(g))
            {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * gi;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * gi * gi;
                *p -= lr * wd * *p;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

pub fn train_decoupler(
    ts: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(DecouplerModel, TrainingLog)> {
    train_decoupler_masked(ts, cfg, &ObservationMask::all_observed(ts.n, ts.d))
}

/// AdamW training with early stopping; the parameters with the best
/// validation loss are returned.
pub fn train_decoupler_masked(
    ts: &TrainingSet,
    cfg: &TrainConfig,
    mask: &ObservationMask,
) -> Result<(DecouplerModel, TrainingLog)> {
    cfg.validate()?;
    let train = ts.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut val = ts.indices(Split::Val);
    if val.is_empty() {
        val = train.clone();
    }
    let topo = &ts.topology;
    let mut model = DecouplerModel::new(
        ts.d,
        topo.num_node_types(),
        topo.num_edge_types(),
        &cfg.arch,
        cfg.seed,
    )?;
    let (shift, scale) = column_stats(&ts.states, ts.d);
    let (_, out_scale) = column_stats(&ts.targets, ts.d);
    model.input_shift = shift;
    model.input_scale = scale;
    model.output_scale = out_scale;
    let layout = Layout::new(&model, topo, mask)?;
    if layout.active.len() < 2 && cfg.lambda > 0.0 {
        return Err(Error::invalid("need at least two observed nodes"));
    }
    let threshold = cfg.val_threshold * ts.target_variance();

    let mut opt = AdamW::new(&model);
    let mut shuffler = rng::seeded(rng::split(cfg.seed, 1_000_003));
    let batch = cfg.batch_times.unwrap_or(train.len()).clamp(1, train.len());
    let mut order = train.clone();
    let mut records = Vec::new();
    let mut best = (f64::INFINITY, 0usize, parameter_blocks(&model));
    let mut stale = 0;
    let mut reason = StopReason::MaxEpochs;
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs.max(2).saturating_sub(1) as f64;
        let lr = cfg.lr
            * (cfg.lr_floor
                + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        if batch < train.len() {
            order.shuffle(&mut shuffler);
        }
        let mut train_loss = 0.0;
        let mut chunks = 0;
        for chunk in order.chunks(batch) {
            let (loss, grads) = batch_loss(&model, &layout, ts, chunk, cfg, true)?;
            let grads = grads.unwrap();
            let finite = loss.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(Error::NonFiniteLoss { epoch });
            }
            opt.step(&mut model, &grads, lr, cfg.weight_decay);
            train_loss += loss;
            chunks += 1;
        }
        train_loss /= chunks as f64;
        if (epoch + 1) % cfg.eval_every != 0 && epoch + 1 != cfg.epochs {
            continue;
        }
        let (val_loss, _) = batch_loss(&model, &layout, ts, &val, cfg, false)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            if val_loss < best.0 * (1.0 - 1e-6) {
                stale = 0;
            }
            best = (val_loss, epoch, parameter_blocks(&model));
        } else {
            stale += 1;
        }
        if val_loss < threshold {
            reason = StopReason::Threshold;
            break;
        }
        if stale >= cfg.patience {
            reason = StopReason::Patience;
            break;
        }
    }
    set_parameter_blocks(&mut model, &best.2);
    Ok((
        model,
        TrainingLog {
            records,
            best_epoch: best.1,
            best_val_loss: best.0,
            stop_reason: reason,
        },
    ))
}

/// Self-network outputs (scaled to derivative units) for node type `k`.
pub fn query_self(model: &DecouplerModel, k: usize, grid: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let net = model
        .self_nets
        .get(k)
        .ok_or_else(|| Error::invalid(format!("node type {k} out of range")))?;
    let d = model.d;
    let mut x = Array2::zeros((grid.len(), d));
    for (r, p) in grid.iter().enumerate() {
        if p.len() != d {
            return Err(Error::shape(format!(
                "grid point {r} has {} entries, expected {d}",
                p.len()
            )));
        }
        model.normalize_into(p, x.slice_mut(s![r, ..]).into_slice().unwrap());
    }
    let out = net.forward(x.view());
    Ok(scale_rows(model, &out))
}

/// Interaction outputs `g0(x_i, x_j) + g1(x_i) ⊙ g2(x_j)` for edge type `e`.
pub fn query_inter(
    model: &DecouplerModel,
    e: usize,
    grid: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<Vec<f64>>> {
    let nets = model
        .inter_nets
        .get(e)
        .ok_or_else(|| Error::invalid(format!("edge type {e} out of range")))?;
    let d = model.d;
    let mut xi = Array2::zeros((grid.len(), d));
    let mut xj = Array2::zeros((grid.len(), d));
    let mut pair = Array2::zeros((grid.len(), 2 * d));
    for (r, (a, b)) in grid.iter().enumerate() {
        if a.len() != d || b.len() != d {
            return Err(Error::shape(format!("grid pair {r} has wrong dimension")));
        }
        model.normalize_into(a, xi.slice_mut(s![r, ..]).into_slice().unwrap());
        model.normalize_into(b, xj.slice_mut(s![r, ..]).into_slice().unwrap());
        pair.slice_mut(s![r, ..d]).assign(&xi.row(r));
        pair.slice_mut(s![r, d..]).assign(&xj.row(r));
    }
    let mut out = nets.g0.forward(pair.view());
    out += &(nets.g1.forward(xi.view()) * nets.g2.forward(xj.view()));
    Ok(scale_rows(model, &out))
}

fn scale_rows(model: &DecouplerModel, out: &Array2<f64>) -> Vec<Vec<f64>> {
    out.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(&model.output_scale)
                .map(|(v, s)| v * s)
                .collect()
        })
        .collect()
}
