use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chaos::ScanConfig;
use crate::decoupler::TrainConfig;
use crate::dynamics::{pair_vars, self_vars};
use crate::dynamics::{CustomSystem, DynamicsSpec, InitDist, Model, TableRow};
use crate::error::{Error, Result};
use crate::preprocess::{SaConfig, SmoothConfig};
use crate::symreg::{Backend, Expr, FunctionLibrary, RegressConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    Er {
        n: usize,
        p: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Ba {
        n: usize,
        m: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        weighted: bool,
        #[serde(default)]
        directed: bool,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTyping {
    /// One node type shared by every node.
    #[default]
    Homogeneous,
    /// Every node is its own type.
    PerNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    pub source: TopologySource,
    #[serde(default)]
    pub node_types: NodeTyping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBlock {
    pub model: Model,
    /// Overrides of the model's default parameters.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub node_params: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub custom: Option<CustomSystem>,
    /// State dimension of a custom model.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t_train: Option<f64>,
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub init: Option<InitDist>,
}

impl DynamicsBlock {
    pub fn spec(&self) -> Result<DynamicsSpec> {
        let mut spec = match (&self.custom, self.model) {
            (Some(c), Model::Custom) => {
                let mut s = if c.self_by_type.is_empty() && c.inter_by_type.is_empty() {
                    DynamicsSpec::custom(c.self_exprs.clone(), c.inter_exprs.clone())?
                } else {
                    DynamicsSpec::custom_typed(c.self_by_type.clone(), c.inter_by_type.clone())?
                };
                if let Some(d) = self.d {
                    if d != s.d {
                        return Err(Error::Config(format!(
                            "dynamics.d = {d} but the custom system has {} dimensions",
                            s.d
                        )));
                    }
                }
                s.params = BTreeMap::new();
                s
            }
            (None, Model::Custom) => {
                return Err(Error::Config("custom model needs a 'custom' block".into()))
            }
            (Some(_), _) => {
                return Err(Error::Config(
                    "'custom' is only valid with model Custom".into(),
                ))
            }
            (None, m) => DynamicsSpec::new(m),
        };
        for (k, v) in &self.params {
            if spec.model != Model::Custom && !spec.params.contains_key(k) {
                return Err(Error::Config(format!(
                    "unknown parameter '{k}' for model {:?}",
                    spec.model
                )));
            }
            spec.params.insert(k.clone(), *v);
        }
        spec.node_params = self.node_params.clone();
        spec.validate()?;
        Ok(spec)
    }

    pub fn row(&self) -> TableRow {
        let base = TableRow::default_for(self.model);
        TableRow {
            dt: self.dt.unwrap_or(base.dt),
            t_train: self.t_train.unwrap_or(base.t_train),
            t_end: self.t_end.unwrap_or(base.t_end),
        }
    }

    pub fn init(&self) -> InitDist {
        self.init
            .unwrap_or_else(|| InitDist::default_for(self.model))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionBlock {
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Spurious-link probability applied to the observed topology.
    #[serde(default)]
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// Simulated-annealing choice of the sampling interval.
    #[default]
    Anneal,
    /// Every sample of the trajectory from the start.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessBlock {
    #[serde(default)]
    pub interval: IntervalMode,
    #[serde(default = "default_s_steps")]
    pub s_steps: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub sa: SaConfig,
    #[serde(default)]
    pub smooth: SmoothConfig,
}

fn default_s_steps() -> usize {
    100
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for PreprocessBlock {
    fn default() -> Self {
        Self {
            interval: IntervalMode::Anneal,
            s_steps: default_s_steps(),
            lambda: default_lambda(),
            sa: SaConfig::default(),
            smooth: SmoothConfig::default(),
        }
    }
}

/// Known coefficients for scoring recall, precision and L2 error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    pub self_library: Vec<String>,
    pub inter_library: Vec<String>,
    /// True coefficients per output dimension.
    pub self_true: Vec<Vec<f64>>,
    pub inter_true: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationBlock {
    /// Prediction horizon; defaults to the dynamics `t_end`.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// Clean states of the inference window at which the discovered and
    /// true derivatives are compared.
    #[serde(default = "default_derivative_samples")]
    pub derivative_samples: usize,
    #[serde(default)]
    pub reference: Option<ReferenceBlock>,
}

fn default_rtol() -> f64 {
    1e-8
}

fn default_atol() -> f64 {
    1e-10
}

fn default_derivative_samples() -> usize {
    200
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        Self {
            t_end: None,
            rtol: default_rtol(),
            atol: default_atol(),
            derivative_samples: default_derivative_samples(),
            reference: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationBlock {
    /// Validation loss bound relative to the target variance.
    #[serde(default = "default_val_loss_max")]
    pub val_loss_max: f64,
    #[serde(default = "default_r2_min")]
    pub r2_min: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
}

fn default_val_loss_max() -> f64 {
    1e-4
}

fn default_r2_min() -> f64 {
    0.99
}

fn default_max_rounds() -> usize {
    3
}

impl Default for TerminationBlock {
    fn default() -> Self {
        Self {
            val_loss_max: default_val_loss_max(),
            r2_min: default_r2_min(),
            max_rounds: default_max_rounds(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationSource {
    /// The simulated model with `param` set to each value.
    #[default]
    True,
    /// The accepted discovered model with the coefficient of `term` in the
    /// self expression of `dim` set to `scale * c`.
    Discovered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcationBlock {
    #[serde(default)]
    pub source: BifurcationSource,
    pub param: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub dim: usize,
    #[serde(default)]
    pub term: Option<String>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Relative gap separating clusters of section values.
    #[serde(default = "default_rel_gap")]
    pub rel_gap: f64,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn default_scale() -> f64 {
    1.0
}

fn default_rel_gap() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub topology: TopologyBlock,
    pub dynamics: DynamicsBlock,
    #[serde(default)]
    pub corruption: CorruptionBlock,
    #[serde(default)]
    pub preprocess: PreprocessBlock,
    #[serde(default)]
    pub decoupler: TrainConfig,
    #[serde(default)]
    pub symreg: RegressConfig,
    #[serde(default)]
    pub evaluation: EvaluationBlock,
    #[serde(default)]
    pub termination: TerminationBlock,
    #[serde(default)]
    pub bifurcation: Option<BifurcationBlock>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn cfg_err(block: &str, e: Error) -> Error {
    Error::Config(format!("{block}: {e}"))
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse and validate; relative topology and output paths resolve
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            if let TopologySource::File { path: p, .. } = &mut cfg.topology.source {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = dir.join(&cfg.out_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Check every block before any work starts.
    pub fn validate(&self) -> Result<()> {
        match &self.topology.source {
            TopologySource::Er { n, p, .. } => {
                if *n < 2 || !(0.0..=1.0).contains(p) {
                    return Err(Error::Config(
                        "topology: ER needs n >= 2 and p in [0, 1]".into(),
                    ));
                }
            }
            TopologySource::Ba { n, m, .. } => {
                if *m == 0 || *n <= *m {
                    return Err(Error::Config("topology: BA needs 1 <= m < n".into()));
                }
            }
            TopologySource::File { path, .. } => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "topology: file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        let spec = self.dynamics.spec().map_err(|e| cfg_err("dynamics", e))?;
        let row = self.dynamics.row();
        if !(row.dt > 0.0 && row.t_train > 0.0 && row.t_train <= row.t_end) {
            return Err(Error::Config(
                "dynamics: need dt > 0 and 0 < t_train <= t_end".into(),
            ));
        }
        self.dynamics
            .init()
            .validate()
            .map_err(|e| cfg_err("dynamics.init", e))?;
        if let Some(snr) = self.corruption.snr_db {
            if snr.is_nan() {
                return Err(Error::Config("corruption: snr_db must be a number".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.corruption.eta) {
            return Err(Error::Config("corruption: eta must lie in [0, 1]".into()));
        }
        if self.preprocess.s_steps < 4 || !(self.preprocess.lambda >= 0.0) {
            return Err(Error::Config(
                "preprocess: s_steps >= 4 and lambda >= 0 required".into(),
            ));
        }
        let sm = &self.preprocess.smooth;
        if sm.enabled && (sm.window % 2 == 0 || sm.polyorder >= sm.window) {
            return Err(Error::Config(
                "preprocess.smooth: odd window larger than polyorder required".into(),
            ));
        }
        if !(0.0..1.0).contains(&sm.val_ratio) {
            return Err(Error::Config(
                "preprocess.smooth: val_ratio must lie in [0, 1)".into(),
            ));
        }
        self.decoupler
            .validate()
            .map_err(|e| cfg_err("decoupler", e))?;
        self.symreg.validate().map_err(|e| cfg_err("symreg", e))?;
        let d = spec.d;
        if let Backend::Sparse {
            self_library,
            inter_library,
            ..
        } = &self.symreg.backend
        {
            FunctionLibrary::from_infix(self_vars(d), self_library)
                .map_err(|e| cfg_err("symreg.self_library", e))?;
            FunctionLibrary::from_infix(pair_vars(d), inter_library)
                .map_err(|e| cfg_err("symreg.inter_library", e))?;
        }
        let ev = &self.evaluation;
        if !(ev.rtol > 0.0 && ev.atol > 0.0) || ev.derivative_samples == 0 {
            return Err(Error::Config(
                "evaluation: positive tolerances and derivative_samples required".into(),
            ));
        }
        if let Some(t) = ev.t_end {
            if !(t > row.dt && t <= row.t_end) {
                return Err(Error::Config(
                    "evaluation: t_end must lie in (dt, dynamics t_end]".into(),
                ));
            }
        }
        if let Some(r) = &ev.reference {
            let slib = FunctionLibrary::from_infix(self_vars(d), &r.self_library)
                .map_err(|e| cfg_err("evaluation.reference", e))?;
            let ilib = FunctionLibrary::from_infix(pair_vars(d), &r.inter_library)
                .map_err(|e| cfg_err("evaluation.reference", e))?;
            let ok = r.self_true.len() == d
                && r.inter_true.len() == d
                && r.self_true.iter().all(|v| v.len() == slib.len())
                && r.inter_true.iter().all(|v| v.len() == ilib.len());
            if !ok {
                return Err(Error::Config("evaluation.reference: one coefficient vector per dimension matching each library".into()));
            }
        }
        if let Some(b) = &self.bifurcation {
            if b.values.len() < 2 || b.values.iter().any(|v| !v.is_finite()) || !(b.rel_gap > 0.0) {
                return Err(Error::Config(
                    "bifurcation: at least 2 finite values and rel_gap > 0 required".into(),
                ));
            }
            match b.source {
                BifurcationSource::True
                    if spec.model != Model::Custom && !spec.params.contains_key(&b.param) =>
                {
                    return Err(Error::Config(format!(
                        "bifurcation: unknown parameter '{}'",
                        b.param
                    )));
                }
                BifurcationSource::Discovered => {
                    let term = b.term.as_deref().ok_or_else(|| {
                        Error::Config("bifurcation: discovered source needs 'term'".into())
                    })?;
                    Expr::parse_infix(term).map_err(|e| cfg_err("bifurcation.term", e))?;
                    if b.dim >= d {
                        return Err(Error::Config("bifurcation: dim outside the state".into()));
                    }
                }
                _ => {}
            }
            b.scan
                .section
                .validate(d, b.scan.run.t_end)
                .map_err(|e| cfg_err("bifurcation.scan", e))?;
            if b.scan.record_dim >= d {
                return Err(Error::Config(
                    "bifurcation: record_dim outside the state".into(),
                ));
            }
        }
        let t = &self.termination;
        if !(t.val_loss_max >= 0.0) || !t.r2_min.is_finite() {
            return Err(Error::Config(
                "termination: val_loss_max >= 0 and finite r2_min required".into(),
            ));
        }
        Ok(())
    }
}
