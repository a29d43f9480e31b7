use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunDir, RunSummary, ROUND_ARTIFACTS, TOP_ARTIFACTS};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::symreg::DiscoveredModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRound {
    pub round: usize,
    pub equations: Vec<String>,
    pub metrics: Option<MetricsReport>,
    pub passed: Option<bool>,
}

/// Run overview assembled from the artifacts on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub complete: bool,
    /// Expected artifacts that are absent, relative to the run directory.
    pub missing: Vec<String>,
    pub seed: Option<u64>,
    pub accepted_round: Option<usize>,
    pub converged: Option<bool>,
    pub rounds: Vec<ReportRound>,
    pub bifurcation_counts: Option<Vec<(f64, usize)>>,
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

fn round_dirs(dir: &RunDir) -> Vec<usize> {
    let mut rounds: Vec<usize> = std::fs::read_dir(dir.root())
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("round")?.parse().ok())
        .collect();
    rounds.sort_unstable();
    rounds
}

fn fmt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map_or("n/a".into(), |x| format!("{x:.4e}"))
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Run report\n\n");
        let _ = writeln!(
            s,
            "- seed: {}",
            self.seed.map_or("n/a".into(), |v| v.to_string())
        );
        let _ = writeln!(s, "- complete: {}", self.complete);
        let _ = writeln!(
            s,
            "- converged: {}",
            self.converged.map_or("n/a".into(), |v| v.to_string())
        );
        let _ = writeln!(
            s,
            "- accepted round: {}",
            self.accepted_round.map_or("n/a".into(), |v| v.to_string())
        );
        if !self.missing.is_empty() {
            s.push_str("\n## Missing artifacts\n\n");
            for m in &self.missing {
                let _ = writeln!(s, "- {m}");
            }
        }
        for r in &self.rounds {
            let _ = writeln!(s, "\n## Round {}\n", r.round);
            if !r.equations.is_empty() {
                s.push_str("```text\n");
                for e in &r.equations {
                    let _ = writeln!(s, "{e}");
                }
                s.push_str("```\n");
            }
            if let Some(m) = &r.metrics {
                s.push_str("\n| metric | value |\n|---|---|\n");
                for (name, v) in [
                    ("R2", m.r2),
                    ("MRE", m.mre),
                    ("MAE", m.mae),
                    ("L2 error", m.l2_error),
                    ("recall", m.recall),
                    ("precision", m.precision),
                    ("derivative MSE", m.derivative_mse),
                    ("trajectory MSE", m.trajectory_mse),
                ] {
                    let _ = writeln!(s, "| {name} | {} |", fmt(v));
                }
            }
        }
        if let Some(counts) = &self.bifurcation_counts {
            s.push_str("\n## Bifurcation\n\n| c | clusters |\n|---|---|\n");
            for (c, k) in counts {
                let _ = writeln!(s, "| {c} | {k} |");
            }
        }
        s
    }
}

/// Summarise a run directory into `report.json` and `report.md`. Missing
/// artifacts are listed rather than treated as errors; the output depends
/// only on the directory contents.
pub fn emit_report(run_dir: impl AsRef<Path>) -> Result<Report> {
    let dir = RunDir::new(run_dir.as_ref());
    std::fs::create_dir_all(dir.root())?;
    let summary: Option<RunSummary> = read(&dir.file("summary.json"));
    let mut missing: Vec<String> = TOP_ARTIFACTS
        .iter()
        .filter(|f| !dir.file(f).is_file())
        .map(|f| f.to_string())
        .collect();
    let mut rounds_seen = round_dirs(&dir);
    if let Some(s) = &summary {
        rounds_seen.extend(s.rounds.iter().map(|r| r.round));
    }
    rounds_seen.sort_unstable();
    rounds_seen.dedup();
    let mut rounds = Vec::new();
    for r in rounds_seen {
        for f in ROUND_ARTIFACTS {
            if !dir.round_file(r, f).is_file() {
                missing.push(format!("round{r}/{f}"));
            }
        }
        let equations = DiscoveredModel::load(dir.round_file(r, "discovered.json"))
            .map(|m| m.summary().lines().map(str::to_string).collect())
            .unwrap_or_default();
        let passed = summary
            .as_ref()
            .and_then(|s| s.rounds.iter().find(|x| x.round == r))
            .map(|x| x.passed);
        rounds.push(ReportRound {
            round: r,
            equations,
            metrics: read(&dir.round_file(r, "metrics.json")),
            passed,
        });
    }
    let report = Report {
        complete: missing.is_empty(),
        missing,
        seed: summary.as_ref().map(|s| s.seed),
        accepted_round: summary.as_ref().and_then(|s| s.accepted_round),
        converged: summary.as_ref().map(|s| s.converged),
        rounds,
        bifurcation_counts: summary.and_then(|s| s.bifurcation_counts),
    };
    std::fs::write(
        dir.file("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(dir.file("report.md"), report.to_markdown())?;
    Ok(report)
}
