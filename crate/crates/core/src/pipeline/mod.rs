//! End-to-end runs driven by a JSON config, with per-stage artifacts in a
//! run directory.

mod config;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    BifurcationBlock, BifurcationSource, CorruptionBlock, DynamicsBlock, EvaluationBlock,
    IntervalMode, NodeTyping, PipelineConfig, PreprocessBlock, ReferenceBlock, TerminationBlock,
    TopologyBlock, TopologySource,
};
pub use report::{emit_report, Report, ReportRound};

use crate::chaos::{bifurcation_scan, with_term_coefficient, BifurcationTable};
use crate::decoupler::{train_decoupler, DecouplerModel, TrainingLog};
use crate::dynamics::{
    add_state_noise, integrate_ivp, pair_vars, self_vars, simulate_dataset, DynamicsSpec,
    NetworkRhs, Rhs, Trajectory,
};
use crate::error::{Error, Result};
use crate::metrics::{
    l2_coeff_error, library_coefficients, mre_mae, mse, ned_csv, ned_score, precision,
    probe_points, r2_score, recall, MetricsReport,
};
use crate::preprocess::{build_training_pairs, select_interval, IntervalChoice, TrainingSet};
use crate::rng::split;
use crate::symreg::{
    assemble_rhs, regress_decoupler, DiscoveredModel, Expr, ExprRecord, FunctionLibrary,
};
use crate::topology::{gen_ba, gen_er, load_edge_list, perturb_topology, Topology};

const SEED_TOPOLOGY: u64 = 1;
const SEED_SIMULATE: u64 = 2;
const SEED_NOISE: u64 = 3;
const SEED_PERTURB: u64 = 4;
const SEED_ANNEAL: u64 = 5;
const SEED_SPLIT: u64 = 6;
const SEED_PROBE: u64 = 7;
const SEED_TRAIN: u64 = 100;
const SEED_REGRESS: u64 = 200;

/// Last stage a run executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Preprocess,
    Train,
    Regress,
    Evaluate,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub best_val_loss: f64,
    /// Validation loss over the target variance.
    pub relative_val_loss: f64,
    pub equations: Vec<String>,
    pub metrics: Option<MetricsReport>,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stages: Vec<String>,
    pub interval: Option<IntervalChoice>,
    pub rounds: Vec<RoundSummary>,
    pub accepted_round: Option<usize>,
    pub converged: bool,
    pub bifurcation_counts: Option<Vec<(f64, usize)>>,
}

impl RunSummary {
    pub fn accepted(&self) -> Option<&RoundSummary> {
        self.accepted_round
            .and_then(|r| self.rounds.iter().find(|s| s.round == r))
    }
}

/// Run directory layout.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn round(&self, r: usize) -> PathBuf {
        self.root.join(format!("round{r}"))
    }

    pub fn round_file(&self, r: usize, name: &str) -> PathBuf {
        self.round(r).join(name)
    }
}

pub const TOP_ARTIFACTS: &[&str] = &[
    "config.json",
    "topology.json",
    "topology.edges",
    "trajectory.csv",
    "trajectory_observed.csv",
    "topology_observed.json",
    "interval.json",
    "training_pairs.csv",
    "summary.json",
];

pub const ROUND_ARTIFACTS: &[&str] = &[
    "decoupler.json",
    "training_log.json",
    "discovered.json",
    "metrics.json",
    "prediction.csv",
    "ned.csv",
    "comparison.csv",
];

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        e => e.in_stage(name),
    })
}

/// Ground-truth topology with node types applied.
pub fn build_topology(cfg: &PipelineConfig) -> Result<Topology> {
    let seed = |s: Option<u64>| s.unwrap_or_else(|| split(cfg.seed, SEED_TOPOLOGY));
    let topo = match &cfg.topology.source {
        TopologySource::Er { n, p, seed: s } => gen_er(*n, *p, seed(*s))?,
        TopologySource::Ba { n, m, seed: s } => gen_ba(*n, *m, seed(*s))?,
        TopologySource::File {
            path,
            weighted,
            directed,
        } => {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "topology file {} does not exist",
                    path.display()
                )));
            }
            load_edge_list(path, *weighted, *directed)?
        }
    };
    match cfg.topology.node_types {
        NodeTyping::Homogeneous => Ok(topo),
        NodeTyping::PerNode => {
            let n = topo.n();
            topo.with_node_types((0..n).collect())
        }
    }
}

pub fn simulate(cfg: &PipelineConfig, topo: &Topology) -> Result<Trajectory> {
    let spec = cfg.dynamics.spec()?;
    simulate_dataset(
        &spec,
        topo,
        cfg.dynamics.init(),
        cfg.dynamics.row(),
        split(cfg.seed, SEED_SIMULATE),
    )
}

/// Noisy states and the topology with spurious links, as seen by inference.
pub fn observe(
    cfg: &PipelineConfig,
    clean: &Trajectory,
    topo: &Topology,
) -> Result<(Trajectory, Topology)> {
    let traj = match cfg.corruption.snr_db {
        Some(snr) => add_state_noise(clean, snr, split(cfg.seed, SEED_NOISE))?,
        None => clean.clone(),
    };
    let observed = if cfg.corruption.eta > 0.0 {
        perturb_topology(topo, cfg.corruption.eta, split(cfg.seed, SEED_PERTURB))?
    } else {
        topo.clone()
    };
    Ok((traj, observed))
}

/// Interval choice and derivative targets on the inference window.
pub fn preprocess(
    cfg: &PipelineConfig,
    observed: &Trajectory,
    topo: &Topology,
) -> Result<(IntervalChoice, TrainingSet)> {
    let row = cfg.dynamics.row();
    let window = ((row.t_train / observed.dt).round() as usize + 1).min(observed.len());
    let inference = observed.truncated(window);
    let p = &cfg.preprocess;
    let choice = match p.interval {
        IntervalMode::Anneal => {
            let mut sa = p.sa.clone();
            sa.seed = split(cfg.seed, SEED_ANNEAL);
            select_interval(&inference, p.s_steps, p.lambda, &sa)?
        }
        IntervalMode::Full => IntervalChoice::full_resolution(&inference, p.s_steps)?,
    };
    let ts = build_training_pairs(
        &inference,
        topo,
        &choice,
        &p.smooth,
        split(cfg.seed, SEED_SPLIT),
    )?;
    Ok((choice, ts))
}

/// Decoupler training for round `r` (1-based); later rounds reseed and
/// train proportionally longer.
pub fn train_round(
    cfg: &PipelineConfig,
    ts: &TrainingSet,
    r: usize,
) -> Result<(DecouplerModel, TrainingLog)> {
    let mut tc = cfg.decoupler.clone();
    tc.seed = split(cfg.seed, SEED_TRAIN + r as u64);
    tc.epochs *= r.max(1);
    train_decoupler(ts, &tc)
}

pub fn regress_round(
    cfg: &PipelineConfig,
    model: &DecouplerModel,
    ts: &TrainingSet,
    r: usize,
) -> Result<DiscoveredModel> {
    let mut rc = cfg.symreg.clone();
    rc.seed = split(cfg.seed, SEED_REGRESS + r as u64);
    regress_decoupler(model, ts, &rc)
}

/// Metrics of a discovered model plus the artifacts they were computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub prediction: Option<Trajectory>,
    pub comparison_csv: String,
    pub ned_csv: String,
}

fn rhs_samples(rhs: &NetworkRhs<'_>, traj: &Trajectory, idx: &[usize]) -> Result<Vec<f64>> {
    let m = traj.n * traj.d;
    let mut out = vec![0.0; idx.len() * m];
    for (slot, &k) in idx.iter().enumerate() {
        rhs.eval(
            k as f64 * traj.dt,
            traj.state(k),
            &mut out[slot * m..(slot + 1) * m],
        )?;
    }
    Ok(out)
}

fn concat_coefficients(
    dm: &DiscoveredModel,
    lib: &FunctionLibrary,
    probe: &[Vec<f64>],
    inter: bool,
) -> Result<(Vec<f64>, f64)> {
    let mut xi = Vec::new();
    let mut other = 0.0;
    for r in 0..dm.d {
        let e = if inter {
            dm.inter_expr(0, r)?
        } else {
            dm.self_expr(0, r)?
        };
        let (c, o) = library_coefficients(&e, lib, probe)?;
        xi.extend(c);
        other += o;
    }
    Ok((xi, other))
}

/// Compare a discovered model against the clean trajectory and the true
/// dynamics. `observed` is the topology inference saw.
pub fn evaluate(
    cfg: &PipelineConfig,
    dm: &DiscoveredModel,
    clean: &Trajectory,
    truth_topo: &Topology,
    observed: &Topology,
) -> Result<Evaluation> {
    let (n, d) = (clean.n, clean.d);
    let true_spec = clean
        .meta
        .spec
        .clone()
        .map_or_else(|| cfg.dynamics.spec(), Ok)?;
    let disc_spec = assemble_rhs(dm, observed)?;
    let true_rhs = NetworkRhs::new(&true_spec, truth_topo)?;
    let disc_rhs = NetworkRhs::new(&disc_spec, observed)?;
    let ev = &cfg.evaluation;
    let t_end = ev
        .t_end
        .unwrap_or(cfg.dynamics.row().t_end)
        .min(clean.duration());
    let len = ((t_end / clean.dt).round() as usize + 1).min(clean.len());
    let truth = clean.truncated(len);
    let mut report = MetricsReport::default();

    let window = ((cfg.dynamics.row().t_train / clean.dt).round() as usize + 1).min(len);
    let count = ev.derivative_samples.min(window);
    let idx: Vec<usize> = (0..count)
        .map(|s| s * (window - 1) / (count - 1).max(1))
        .collect();
    let dt_true = rhs_samples(&true_rhs, &truth, &idx)?;
    let dt_disc = rhs_samples(&disc_rhs, &truth, &idx)?;
    report.derivative_mse = Some(mse(&dt_true, &dt_disc)?);

    if let Some(reference) = &ev.reference {
        let slib = FunctionLibrary::from_infix(self_vars(d), &reference.self_library)?;
        let ilib = FunctionLibrary::from_infix(pair_vars(d), &reference.inter_library)?;
        let seed = split(cfg.seed, SEED_PROBE);
        let sp = probe_points(d, 40, 0.1, 2.0, seed);
        let ip = probe_points(2 * d, 40, 0.1, 2.0, split(seed, 1));
        let (mut xi, s_other) = concat_coefficients(dm, &slib, &sp, false)?;
        let (xi_i, i_other) = concat_coefficients(dm, &ilib, &ip, true)?;
        xi.extend(xi_i);
        let mut truth_xi: Vec<f64> = reference.self_true.iter().flatten().copied().collect();
        truth_xi.extend(reference.inter_true.iter().flatten());
        if s_other + i_other > 0.0 {
            xi.push(s_other + i_other);
            truth_xi.push(0.0);
        }
        report.recall = recall(&truth_xi, &xi).ok();
        report.precision = precision(&truth_xi, &xi).ok();
        report.l2_error = l2_coeff_error(&truth_xi, &xi).ok();
    }

    let x0 = truth.state(0).to_vec();
    let prediction = integrate_ivp(
        &disc_spec,
        observed,
        &x0,
        (len - 1) as f64 * clean.dt,
        clean.dt,
        ev.rtol,
        ev.atol,
    )
    .ok()
    .filter(|p| p.len() == len && p.states.iter().all(|v| v.is_finite()));
    let mut comparison = String::from("t,node,dim,truth,pred\n");
    let mut ned_text = String::from("node,ned\n");
    if let Some(pred) = &prediction {
        report.r2 = Some(r2_score(&truth.states, &pred.states, n, d)?);
        report.trajectory_mse = Some(mse(&truth.states, &pred.states)?);
        if let Ok(m) = mre_mae(&truth.states, &pred.states) {
            report.mre = Some(m.mre);
            report.mae = Some(m.mae);
            report.excluded_zeros = m.excluded_zeros;
        }
        let all: Vec<usize> = (0..len).collect();
        let truth_dot = rhs_samples(&true_rhs, &truth, &all)?;
        let pred_dot = rhs_samples(&disc_rhs, pred, &all)?;
        if let Ok(ned) = ned_score(&truth.states, &pred.states, &truth_dot, &pred_dot, n, d) {
            ned_text = ned_csv(&ned);
            report.ned = ned;
        }
        for k in 0..len {
            let t = k as f64 * clean.dt;
            for i in 0..n {
                for c in 0..d {
                    let at = (k * n + i) * d + c;
                    comparison.push_str(&format!(
                        "{t},{i},{c},{},{}\n",
                        truth.states[at], pred.states[at]
                    ));
                }
            }
        }
    }
    Ok(Evaluation {
        report,
        prediction,
        comparison_csv: comparison,
        ned_csv: ned_text,
    })
}

/// Bifurcation table of the true model, or of a discovered model when given.
pub fn bifurcate(
    block: &BifurcationBlock,
    true_spec: &DynamicsSpec,
    discovered: Option<&DiscoveredModel>,
    topo: &Topology,
    x0: &[f64],
) -> Result<BifurcationTable> {
    match block.source {
        BifurcationSource::True => {
            let family = |c: f64| -> Result<DynamicsSpec> {
                Ok(true_spec.clone().with_param(&block.param, c))
            };
            bifurcation_scan(&family, topo, x0, &block.values, &block.scan)
        }
        BifurcationSource::Discovered => {
            let dm = discovered.ok_or_else(|| Error::invalid("no discovered model to scan"))?;
            let term = Expr::parse_infix(block.term.as_deref().unwrap_or("0"))?;
            let family = |c: f64| -> Result<DynamicsSpec> {
                let mut m = dm.clone();
                for row in m.self_exprs.iter_mut() {
                    let e = row[block.dim].expr()?;
                    row[block.dim] =
                        ExprRecord::new(&with_term_coefficient(&e, &term, block.scale * c), None);
                }
                assemble_rhs(&m, topo)
            };
            bifurcation_scan(&family, topo, x0, &block.values, &block.scan)
        }
    }
}

fn load_topology(path: &Path) -> Result<Topology> {
    let t: Topology = read_json(path)?;
    t.validate()?;
    Ok(t)
}

fn load_trajectory(path: &Path, dt: f64) -> Result<Trajectory> {
    let mut t = Trajectory::load(path)?;
    t.dt = dt;
    Ok(t)
}

/// Execute the pipeline up to `stop`, writing artifacts under
/// `cfg.out_dir`. With `resume`, stages whose artifacts exist are loaded
/// instead of recomputed.
pub fn run_pipeline(cfg: &PipelineConfig, resume: bool, stop: Stage) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = RunDir::new(&cfg.out_dir);
    std::fs::create_dir_all(dir.root())?;
    let cfg_text = cfg.to_json()?;
    let cfg_path = dir.file("config.json");
    if resume && cfg_path.is_file() {
        let prev = PipelineConfig::from_json(&std::fs::read_to_string(&cfg_path)?)?;
        if prev != *cfg {
            return Err(Error::Config(
                "resume with a config that differs from the run's config.json".into(),
            ));
        }
    }
    write(&cfg_path, &cfg_text)?;
    let mut summary = RunSummary {
        seed: cfg.seed,
        ..RunSummary::default()
    };
    let have = |name: &str| resume && dir.file(name).is_file();
    let dt = cfg.dynamics.row().dt;

    let topo = if have("topology.json") {
        stage("topology", load_topology(&dir.file("topology.json")))?
    } else {
        let t = stage("topology", build_topology(cfg))?;
        write(&dir.file("topology.json"), &serde_json::to_string(&t)?)?;
        t.save_edge_list(dir.file("topology.edges"), true)?;
        t
    };
    summary.stages.push("topology".into());

    let clean = if have("trajectory.csv") {
        stage("simulate", load_trajectory(&dir.file("trajectory.csv"), dt))?
    } else {
        let t = stage("simulate", simulate(cfg, &topo))?;
        t.save(dir.file("trajectory.csv"))?;
        t
    };
    let (observed, obs_topo) = if have("trajectory_observed.csv") && have("topology_observed.json")
    {
        let t = stage(
            "observe",
            load_trajectory(&dir.file("trajectory_observed.csv"), dt),
        )?;
        (
            t,
            stage(
                "observe",
                load_topology(&dir.file("topology_observed.json")),
            )?,
        )
    } else {
        let (t, o) = stage("observe", observe(cfg, &clean, &topo))?;
        t.save(dir.file("trajectory_observed.csv"))?;
        write(
            &dir.file("topology_observed.json"),
            &serde_json::to_string(&o)?,
        )?;
        (t, o)
    };
    summary.stages.push("simulate".into());
    let finish = |summary: &RunSummary| -> Result<()> {
        write(
            &dir.file("summary.json"),
            &serde_json::to_string_pretty(summary)?,
        )
    };
    if stop == Stage::Simulate || cfg.termination.max_rounds == 0 {
        finish(&summary)?;
        return Ok(summary);
    }

    let (choice, ts) = stage("preprocess", preprocess(cfg, &observed, &obs_topo))?;
    write(
        &dir.file("interval.json"),
        &serde_json::to_string_pretty(&choice)?,
    )?;
    write(&dir.file("training_pairs.csv"), &ts.to_csv())?;
    summary.interval = Some(choice);
    summary.stages.push("preprocess".into());
    if stop == Stage::Preprocess {
        finish(&summary)?;
        return Ok(summary);
    }

    let rounds = if stop < Stage::Full {
        1
    } else {
        cfg.termination.max_rounds
    };
    let var = ts.target_variance().max(f64::MIN_POSITIVE);
    let mut discovered: Vec<DiscoveredModel> = Vec::new();
    for r in 1..=rounds {
        let have_round = |name: &str| resume && dir.round_file(r, name).is_file();
        let (model, log) = if have_round("decoupler.json") && have_round("training_log.json") {
            let m = stage(
                "train",
                DecouplerModel::load(dir.round_file(r, "decoupler.json")),
            )?;
            (
                m,
                stage(
                    "train",
                    read_json::<TrainingLog>(&dir.round_file(r, "training_log.json")),
                )?,
            )
        } else {
            let (m, log) = stage("train", train_round(cfg, &ts, r))?;
            std::fs::create_dir_all(dir.round(r))?;
            m.save(dir.round_file(r, "decoupler.json"))?;
            write(
                &dir.round_file(r, "training_log.json"),
                &serde_json::to_string_pretty(&log)?,
            )?;
            (m, log)
        };
        let mut round = RoundSummary {
            round: r,
            best_val_loss: log.best_val_loss,
            relative_val_loss: log.best_val_loss / var,
            equations: Vec::new(),
            metrics: None,
            passed: false,
        };
        if stop == Stage::Train {
            summary.rounds.push(round);
            summary.stages.push("train".into());
            finish(&summary)?;
            return Ok(summary);
        }
        let dm = if have_round("discovered.json") {
            stage(
                "regress",
                DiscoveredModel::load(dir.round_file(r, "discovered.json")),
            )?
        } else {
            let dm = stage("regress", regress_round(cfg, &model, &ts, r))?;
            dm.save(dir.round_file(r, "discovered.json"))?;
            dm
        };
        round.equations = dm.summary().lines().map(str::to_string).collect();
        if stop == Stage::Regress {
            summary.rounds.push(round);
            summary.stages.push("train".into());
            summary.stages.push("regress".into());
            finish(&summary)?;
            return Ok(summary);
        }
        let metrics = if have_round("metrics.json") {
            stage(
                "evaluate",
                read_json::<MetricsReport>(&dir.round_file(r, "metrics.json")),
            )?
        } else {
            let ev = stage("evaluate", evaluate(cfg, &dm, &clean, &topo, &obs_topo))?;
            write(&dir.round_file(r, "metrics.json"), &ev.report.to_json()?)?;
            write(&dir.round_file(r, "ned.csv"), &ev.ned_csv)?;
            write(&dir.round_file(r, "comparison.csv"), &ev.comparison_csv)?;
            if let Some(p) = &ev.prediction {
                write(&dir.round_file(r, "prediction.csv"), &p.to_csv())?;
            }
            ev.report
        };
        round.passed = round.relative_val_loss <= cfg.termination.val_loss_max
            && metrics.r2.is_some_and(|v| v >= cfg.termination.r2_min);
        round.metrics = Some(metrics);
        let passed = round.passed;
        summary.rounds.push(round);
        discovered.push(dm);
        if passed {
            break;
        }
    }
    for s in ["train", "regress", "evaluate"] {
        summary.stages.push(s.into());
    }
    summary.converged = summary.rounds.iter().any(|r| r.passed);
    summary.accepted_round = summary
        .rounds
        .iter()
        .find(|r| r.passed)
        .map(|r| r.round)
        .or_else(|| {
            summary
                .rounds
                .iter()
                .filter_map(|r| r.metrics.as_ref().and_then(|m| m.r2).map(|v| (r.round, v)))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(r, _)| r)
                .or(summary.rounds.last().map(|r| r.round))
        });

    if let (Some(block), Stage::Full) = (&cfg.bifurcation, stop) {
        let true_spec = clean
            .meta
            .spec
            .clone()
            .map_or_else(|| cfg.dynamics.spec(), Ok)?;
        let accepted = summary.accepted_round.map(|r| &discovered[r - 1]);
        let scan_topo = if block.source == BifurcationSource::True {
            &topo
        } else {
            &obs_topo
        };
        let table = stage(
            "bifurcate",
            bifurcate(block, &true_spec, accepted, scan_topo, clean.state(0)),
        )?;
        write(&dir.file("bifurcation.csv"), &table.to_csv())?;
        summary.bifurcation_counts = Some(table.cluster_counts(block.rel_gap));
        summary.stages.push("bifurcate".into());
    }
    finish(&summary)?;
    Ok(summary)
}

/// Bifurcation scan from the config's `bifurcation` block. A scan of the
/// true model needs only the simulation stage; a scan of the discovered
/// model runs the full pipeline.
pub fn run_bifurcation(cfg: &PipelineConfig, resume: bool) -> Result<Vec<(f64, usize)>> {
    let block = cfg
        .bifurcation
        .as_ref()
        .ok_or_else(|| Error::Config("config has no 'bifurcation' block".into()))?;
    if block.source == BifurcationSource::Discovered {
        let summary = run_pipeline(cfg, resume, Stage::Full)?;
        return summary
            .bifurcation_counts
            .ok_or_else(|| Error::invalid("no discovered model").in_stage("bifurcate"));
    }
    let mut summary = run_pipeline(cfg, resume, Stage::Simulate)?;
    let dir = RunDir::new(&cfg.out_dir);
    let topo = stage("bifurcate", load_topology(&dir.file("topology.json")))?;
    let clean = stage(
        "bifurcate",
        load_trajectory(&dir.file("trajectory.csv"), cfg.dynamics.row().dt),
    )?;
    let true_spec = clean
        .meta
        .spec
        .clone()
        .map_or_else(|| cfg.dynamics.spec(), Ok)?;
    let table = stage(
        "bifurcate",
        bifurcate(block, &true_spec, None, &topo, clean.state(0)),
    )?;
    write(&dir.file("bifurcation.csv"), &table.to_csv())?;
    let counts = table.cluster_counts(block.rel_gap);
    summary.bifurcation_counts = Some(counts.clone());
    summary.stages.push("bifurcate".into());
    write(
        &dir.file("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(counts)
}
