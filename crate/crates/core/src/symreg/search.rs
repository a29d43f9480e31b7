use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::expr::{BinaryOp, Expr, UnaryOp};
use super::fit::fit_constants;
use super::library::{linear_combination, lstsq_pinv, Samples};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_binary")]
    pub binary: Vec<BinaryOp>,
    #[serde(default = "default_unary")]
    pub unary: Vec<UnaryOp>,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_tournament")]
    pub tournament: usize,
    /// Weight of the node count in the selection score.
    #[serde(default = "default_parsimony")]
    pub parsimony: f64,
    /// Additive terms whose coefficient is below this magnitude are dropped.
    #[serde(default = "default_prune")]
    pub prune: f64,
    #[serde(default = "default_max_terms")]
    pub max_terms: usize,
    #[serde(default = "default_max_front")]
    pub max_front: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_binary() -> Vec<BinaryOp> {
    vec![
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ]
}

fn default_unary() -> Vec<UnaryOp> {
    vec![UnaryOp::Exp, UnaryOp::Sin, UnaryOp::Cos]
}

fn default_max_depth() -> usize {
    4
}

fn default_population() -> usize {
    300
}

fn default_generations() -> usize {
    60
}

fn default_tournament() -> usize {
    4
}

fn default_parsimony() -> f64 {
    1e-3
}

fn default_prune() -> f64 {
    1e-3
}

fn default_max_terms() -> usize {
    8
}

fn default_max_front() -> usize {
    12
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            binary: default_binary(),
            unary: default_unary(),
            max_depth: default_max_depth(),
            population: default_population(),
            generations: default_generations(),
            tournament: default_tournament(),
            parsimony: default_parsimony(),
            prune: default_prune(),
            max_terms: default_max_terms(),
            max_front: default_max_front(),
            seed: 0,
        }
    }
}

/// A scored expression; `mse` is recomputed from the final expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub expr: Expr,
    pub mse: f64,
    pub size: usize,
    pub score: f64,
}

/// Top-level additive pieces of `e` with scalar factors and constants removed.
pub fn additive_terms(e: &Expr) -> Vec<Expr> {
    let mut out = Vec::new();
    collect_terms(e, &mut out);
    let mut seen = std::collections::HashSet::new();
    out.retain(|t| seen.insert(t.to_string()));
    out
}

fn collect_terms(e: &Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::Const(_) => {}
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, a, b) => {
            collect_terms(a, out);
            collect_terms(b, out);
        }
        Expr::Binary(BinaryOp::Mul, a, b) if matches!(**a, Expr::Const(_)) => collect_terms(b, out),
        Expr::Binary(BinaryOp::Mul, a, b) if matches!(**b, Expr::Const(_)) => collect_terms(a, out),
        Expr::Binary(BinaryOp::Div, a, b) if matches!(**b, Expr::Const(_)) => collect_terms(a, out),
        _ => {
            if e.num_constants() == e.size() {
                return;
            }
            out.push(e.clone());
        }
    }
}

/// Inverse of [`linear_combination`]: intercept and `(coefficient, term)` pairs.
pub fn linear_parts(e: &Expr) -> (f64, Vec<(f64, Expr)>) {
    let mut intercept = 0.0;
    let mut terms = Vec::new();
    split_linear(e, 1.0, &mut intercept, &mut terms);
    (intercept, terms)
}

fn split_linear(e: &Expr, sign: f64, intercept: &mut f64, terms: &mut Vec<(f64, Expr)>) {
    match e {
        Expr::Const(c) => *intercept += sign * c,
        Expr::Binary(BinaryOp::Add, a, b) => {
            split_linear(a, sign, intercept, terms);
            split_linear(b, sign, intercept, terms);
        }
        Expr::Binary(BinaryOp::Sub, a, b) => {
            split_linear(a, sign, intercept, terms);
            split_linear(b, -sign, intercept, terms);
        }
        Expr::Binary(BinaryOp::Mul, a, b) => match (&**a, &**b) {
            (Expr::Const(c), t) | (t, Expr::Const(c)) => terms.push((sign * c, t.clone())),
            _ => terms.push((sign, e.clone())),
        },
        _ => terms.push((sign, e.clone())),
    }
}

/// Columns of the given terms; `None` if any term leaves its domain.
fn term_columns(terms: &[Expr], samples: &Samples) -> Option<Vec<Vec<f64>>> {
    let vars = samples.var_refs();
    let n = samples.len();
    let mut cols = Vec::with_capacity(terms.len());
    for t in terms {
        let prog = t.compile(&vars).ok()?;
        let mut out = Vec::with_capacity(n);
        prog.try_eval_rows(&samples.inputs, n, &mut out)?;
        if out.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return None;
        }
        cols.push(out);
    }
    Some(cols)
}

/// Linear scaling: least-squares intercept and coefficients of `terms`.
fn scale_terms(terms: &[Expr], samples: &Samples) -> Option<(f64, Vec<f64>, f64)> {
    let cols = term_columns(terms, samples)?;
    let n = samples.len();
    let mut a = DMatrix::from_element(n, terms.len() + 1, 1.0);
    for (c, col) in cols.iter().enumerate() {
        a.column_mut(c + 1).copy_from_slice(col);
    }
    let y = DVector::from_column_slice(&samples.outputs);
    let coef = lstsq_pinv(&a, &y)?;
    if coef.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let resid = &a * &coef - &y;
    let mse = resid.norm_squared() / n as f64;
    Some((coef[0], coef.iter().skip(1).copied().collect(), mse))
}

struct Scorer<'a> {
    samples: &'a Samples,
    cfg: &'a SearchConfig,
    norm: f64,
    cache: HashMap<String, f64>,
    /// Best linear-scaled expression per term structure.
    archive: BTreeMap<String, Candidate>,
}

impl<'a> Scorer<'a> {
    fn new(samples: &'a Samples, cfg: &'a SearchConfig) -> Self {
        let var = samples.output_variance();
        let norm = if var > 1e-300 { var } else { 1.0 };
        Self {
            samples,
            cfg,
            norm,
            cache: HashMap::new(),
            archive: BTreeMap::new(),
        }
    }

    fn score(&self, mse: f64, size: usize) -> f64 {
        mse / self.norm + self.cfg.parsimony * size as f64
    }

    fn evaluate(&mut self, tree: &Expr) -> f64 {
        let key = tree.to_string();
        if let Some(&s) = self.cache.get(&key) {
            return s;
        }
        let s = self.evaluate_terms(&additive_terms(tree));
        self.cache.insert(key, s);
        s
    }

    fn evaluate_terms(&mut self, terms: &[Expr]) -> f64 {
        if terms.len() > self.cfg.max_terms {
            return f64::INFINITY;
        }
        let Some((c0, coef, mse)) = scale_terms(terms, self.samples) else {
            return f64::INFINITY;
        };
        let pairs: Vec<(f64, Expr)> = coef.into_iter().zip(terms.iter().cloned()).collect();
        let expr = linear_combination(&pairs, c0);
        let size = expr.size();
        let score = self.score(mse, size);
        if !score.is_finite() {
            return f64::INFINITY;
        }
        let mut names: Vec<String> = terms.iter().map(|t| t.to_string()).collect();
        names.sort();
        let key = names.join(" | ");
        let better = self.archive.get(&key).is_none_or(|c| score < c.score);
        if better {
            self.archive.insert(
                key,
                Candidate {
                    expr,
                    mse,
                    size,
                    score,
                },
            );
        }
        score
    }
}

struct Generator<'a> {
    cfg: &'a SearchConfig,
    vars: &'a [String],
}

impl Generator<'_> {
    fn terminal(&self, rng: &mut Rng) -> Expr {
        if self.vars.is_empty() || rng.random::<f64>() < 0.25 {
            let pool = [1.0, 2.0, 0.5, -1.0, 3.0];
            if rng.random::<f64>() < 0.6 {
                Expr::Const(*pool.choose(rng).unwrap())
            } else {
                Expr::Const((rng.random_range(-3.0..3.0) * 10.0f64).round() / 10.0)
            }
        } else {
            Expr::var(self.vars.choose(rng).unwrap())
        }
    }

    fn tree(&self, depth: usize, full: bool, rng: &mut Rng) -> Expr {
        let leaf = depth <= 1 || (!full && rng.random::<f64>() < 0.3);
        if leaf || (self.cfg.binary.is_empty() && self.cfg.unary.is_empty()) {
            return self.terminal(rng);
        }
        let n_ops = self.cfg.binary.len() + self.cfg.unary.len();
        let pick = rng.random_range(0..n_ops);
        if pick < self.cfg.binary.len() {
            let op = self.cfg.binary[pick];
            if op == BinaryOp::Pow {
                let base = self.tree(depth - 1, full, rng);
                let exp = *[2.0, 3.0, 0.5, -1.0].choose(rng).unwrap();
                return Expr::binary(op, base, Expr::Const(exp));
            }
            Expr::binary(
                op,
                self.tree(depth - 1, full, rng),
                self.tree(depth - 1, full, rng),
            )
        } else {
            let op = self.cfg.unary[pick - self.cfg.binary.len()];
            Expr::unary(op, self.tree(depth - 1, full, rng))
        }
    }

    fn mutate(&self, e: &Expr, rng: &mut Rng) -> Expr {
        let idx = rng.random_range(0..e.size());
        let node = subtree(e, idx);
        let replacement = match rng.random_range(0..4) {
            0 => self.tree(rng.random_range(1..=3), false, rng),
            1 => match node {
                Expr::Const(c) => Expr::Const(c * (1.0 + 0.3 * rng.random_range(-1.0..1.0))),
                Expr::Var(_) => self.terminal(rng),
                Expr::Unary(_, a) if !self.cfg.unary.is_empty() => {
                    Expr::unary(*self.cfg.unary.choose(rng).unwrap(), (**a).clone())
                }
                Expr::Binary(op, a, b) if *op != BinaryOp::Pow => {
                    let ops: Vec<BinaryOp> = self
                        .cfg
                        .binary
                        .iter()
                        .copied()
                        .filter(|o| *o != BinaryOp::Pow)
                        .collect();
                    let op = ops.choose(rng).copied().unwrap_or(*op);
                    Expr::binary(op, (**a).clone(), (**b).clone())
                }
                other => other.clone(),
            },
            2 => match node {
                Expr::Unary(_, a) => (**a).clone(),
                Expr::Binary(_, a, b) => {
                    if rng.random::<bool>() {
                        (**a).clone()
                    } else {
                        (**b).clone()
                    }
                }
                other => other.clone(),
            },
            _ => {
                // grow: combine the node with a fresh term
                let ops: Vec<BinaryOp> = self
                    .cfg
                    .binary
                    .iter()
                    .copied()
                    .filter(|o| *o != BinaryOp::Pow)
                    .collect();
                match ops.choose(rng) {
                    Some(&op) => Expr::binary(op, node.clone(), self.tree(2, false, rng)),
                    None => node.clone(),
                }
            }
        };
        replace(e, idx, replacement)
    }
}

/// Subtree at prefix position `idx`.
pub fn subtree(e: &Expr, idx: usize) -> &Expr {
    if idx == 0 {
        return e;
    }
    match e {
        Expr::Unary(_, a) => subtree(a, idx - 1),
        Expr::Binary(_, a, b) => {
            let la = a.size();
            if idx <= la {
                subtree(a, idx - 1)
            } else {
                subtree(b, idx - 1 - la)
            }
        }
        _ => e,
    }
}

/// Copy of `e` with the subtree at prefix position `idx` replaced.
pub fn replace(e: &Expr, idx: usize, new: Expr) -> Expr {
    if idx == 0 {
        return new;
    }
    match e {
        Expr::Unary(op, a) => Expr::unary(*op, replace(a, idx - 1, new)),
        Expr::Binary(op, a, b) => {
            let la = a.size();
            if idx <= la {
                Expr::binary(*op, replace(a, idx - 1, new), (**b).clone())
            } else {
                Expr::binary(*op, (**a).clone(), replace(b, idx - 1 - la, new))
            }
        }
        _ => e.clone(),
    }
}

fn pareto_front(mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by(|a, b| {
        a.size
            .cmp(&b.size)
            .then(a.mse.total_cmp(&b.mse))
            .then_with(|| a.expr.to_string().cmp(&b.expr.to_string()))
    });
    let mut front: Vec<Candidate> = Vec::new();
    for c in cands {
        if !c.mse.is_finite() {
            continue;
        }
        if front.last().is_none_or(|last| c.mse < last.mse) {
            front.push(c);
        }
    }
    front
}

/// Genetic-programming search over expression trees with linear scaling
/// of additive terms. Returns the Pareto front by (mse, size), smallest
/// expression first; every reported error is recomputed from the returned
/// expression.
pub fn search_regress(samples: &Samples, cfg: &SearchConfig) -> Result<Vec<Candidate>> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to regress"));
    }
    if samples.outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite regression targets"));
    }
    if cfg.population < 2 || cfg.max_depth == 0 {
        return Err(Error::invalid(
            "population >= 2 and max_depth >= 1 required",
        ));
    }
    let mut rng = rng::seeded(cfg.seed);
    let gen = Generator {
        cfg,
        vars: &samples.vars,
    };
    let mut scorer = Scorer::new(samples, cfg);
    scorer.evaluate_terms(&[]);

    let mut pop: Vec<Expr> = Vec::with_capacity(cfg.population);
    for v in &samples.vars {
        pop.push(Expr::var(v));
    }
    if cfg.binary.contains(&BinaryOp::Mul) {
        for (a, va) in samples.vars.iter().enumerate() {
            for vb in &samples.vars[a..] {
                pop.push(Expr::mul(Expr::var(va), Expr::var(vb)));
            }
        }
    }
    pop.truncate(cfg.population / 2);
    let mut k = 0;
    while pop.len() < cfg.population {
        let depth = 2 + k % cfg.max_depth.max(2).saturating_sub(1);
        pop.push(gen.tree(depth.min(cfg.max_depth), k % 2 == 0, &mut rng));
        k += 1;
    }
    let mut scores: Vec<f64> = pop.iter().map(|t| scorer.evaluate(t)).collect();

    for _ in 0..cfg.generations {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut next: Vec<Expr> = order.iter().take(2).map(|&i| pop[i].clone()).collect();
        let pick = |rng: &mut Rng| -> usize {
            (0..cfg.tournament.max(1))
                .map(|_| rng.random_range(0..pop.len()))
                .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap()
        };
        while next.len() < cfg.population {
            let r = rng.random::<f64>();
            let child = if r < 0.6 {
                let (a, b) = (pick(&mut rng), pick(&mut rng));
                let ia = rng.random_range(0..pop[a].size());
                let ib = rng.random_range(0..pop[b].size());
                replace(&pop[a], ia, subtree(&pop[b], ib).clone())
            } else if r < 0.95 {
                gen.mutate(&pop[pick(&mut rng)], &mut rng)
            } else {
                pop[pick(&mut rng)].clone()
            };
            if child.depth() <= cfg.max_depth + 1 {
                next.push(child);
            }
        }
        pop = next;
        scores = pop.iter().map(|t| scorer.evaluate(t)).collect();
    }

    let Scorer { archive, .. } = scorer;
    let mut pool: Vec<Candidate> = archive.into_values().collect();
    pool.sort_by(|a, b| a.score.total_cmp(&b.score));
    let front = pareto_front(pool.clone());
    let mut chosen: Vec<Candidate> = front.into_iter().take(cfg.max_front).collect();
    for c in pool.into_iter().take(cfg.max_front) {
        if !chosen.iter().any(|x| x.expr == c.expr) {
            chosen.push(c);
        }
    }
    let norm = {
        let v = samples.output_variance();
        if v > 1e-300 {
            v
        } else {
            1.0
        }
    };
    let mut finals = Vec::with_capacity(chosen.len());
    for (k, c) in chosen.into_iter().enumerate() {
        let refined = refine(
            &c.expr,
            samples,
            cfg,
            rng::split(cfg.seed, 7_000 + k as u64),
        )?;
        let mse = samples.mse(&refined)?;
        let size = refined.size();
        finals.push(Candidate {
            score: mse / norm + cfg.parsimony * size as f64,
            expr: refined,
            mse,
            size,
        });
    }
    Ok(pareto_front(finals))
}

/// Polish nested constants, drop tiny coefficients, refit the linear ones.
fn refine(expr: &Expr, samples: &Samples, cfg: &SearchConfig, seed: u64) -> Result<Expr> {
    let (_, parts) = linear_parts(expr);
    let nested = parts.iter().any(|(_, t)| t.num_constants() > 0);
    let polished = if nested {
        fit_constants(expr, samples, seed)?.expr
    } else {
        expr.clone()
    };
    let (c0, parts) = linear_parts(&polished);
    let kept: Vec<Expr> = parts
        .iter()
        .filter(|(c, _)| c.abs() >= cfg.prune)
        .map(|(_, t)| t.clone())
        .collect();
    let refit = match scale_terms(&kept, samples) {
        Some((b0, coef, _)) => {
            let b0 = if b0.abs() < cfg.prune { 0.0 } else { b0 };
            let pairs: Vec<(f64, Expr)> = coef
                .into_iter()
                .zip(kept)
                .filter(|(c, _)| c.abs() >= cfg.prune)
                .collect();
            // refit once more without the intercept if it was dropped
            refit_linear(&pairs, b0 != 0.0, samples)
                .unwrap_or_else(|| linear_combination(&pairs, b0))
        }
        None => {
            let pairs: Vec<(f64, Expr)> = parts
                .into_iter()
                .filter(|(c, _)| c.abs() >= cfg.prune)
                .collect();
            linear_combination(&pairs, if c0.abs() < cfg.prune { 0.0 } else { c0 })
        }
    };
    let before = samples.mse(&polished).unwrap_or(f64::INFINITY);
    let after = samples.mse(&refit).unwrap_or(f64::INFINITY);
    // pruning may only trade a negligible amount of accuracy
    if after.is_finite() && after <= before + 1e-6 * samples.output_variance().max(1e-300) {
        Ok(refit)
    } else if before.is_finite() {
        Ok(polished)
    } else {
        Ok(expr.clone())
    }
}

fn refit_linear(pairs: &[(f64, Expr)], intercept: bool, samples: &Samples) -> Option<Expr> {
    let terms: Vec<Expr> = pairs.iter().map(|(_, t)| t.clone()).collect();
    let cols = term_columns(&terms, samples)?;
    let n = samples.len();
    let off = usize::from(intercept);
    let mut a = DMatrix::from_element(n, terms.len() + off, 1.0);
    for (c, col) in cols.iter().enumerate() {
        a.column_mut(c + off).copy_from_slice(col);
    }
    let coef = lstsq_pinv(&a, &DVector::from_column_slice(&samples.outputs))?;
    let b0 = if intercept { coef[0] } else { 0.0 };
    let pairs: Vec<(f64, Expr)> = coef.iter().skip(off).copied().zip(terms).collect();
    Some(linear_combination(&pairs, b0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_samples(vars: &[&str], points: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Samples {
        let outs = points.iter().map(|p| f(p)).collect();
        Samples::from_rows(vars.iter().map(|s| s.to_string()).collect(), points, outs).unwrap()
    }

    fn enumerate(depth: usize, leaves: &[Expr], ops: &[BinaryOp]) -> Vec<Expr> {
        if depth == 1 {
            return leaves.to_vec();
        }
        let sub = enumerate(depth - 1, leaves, ops);
        let mut out = sub.clone();
        for op in ops {
            for a in &sub {
                for b in &sub {
                    out.push(Expr::binary(*op, a.clone(), b.clone()));
                }
            }
        }
        out
    }

    #[test]
    fn finds_square() {
        let pts: Vec<Vec<f64>> = (0..40).map(|k| vec![-2.0 + k as f64 * 0.1]).collect();
        let s = grid_samples(&["x"], &pts, |p| p[0] * p[0]);
        let ops = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul];
        // oracle: best raw mse over all trees of depth <= 3
        let leaves = [Expr::var("x"), Expr::Const(1.0)];
        let oracle = enumerate(3, &leaves, &ops)
            .iter()
            .map(|e| s.mse(e).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(oracle < 1e-12);
        let cfg = SearchConfig {
            binary: ops.to_vec(),
            unary: vec![],
            max_depth: 3,
            ..SearchConfig::default()
        };
        let front = search_regress(&s, &cfg).unwrap();
        assert!(front.iter().any(|c| c.mse < 1e-10), "{front:?}");
        for c in &front {
            assert!((s.mse(&c.expr).unwrap() - c.mse).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_targets_head_with_zero() {
        let pts: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64]).collect();
        let s = grid_samples(&["x"], &pts, |_| 0.0);
        let front = search_regress(
            &s,
            &SearchConfig {
                generations: 5,
                ..SearchConfig::default()
            },
        )
        .unwrap();
        assert_eq!(front[0].expr, Expr::Const(0.0));
        assert_eq!(front[0].mse, 0.0);
    }

    #[test]
    fn finds_epidemic_interaction() {
        let mut pts = Vec::new();
        for a in 0..=10 {
            for b in 0..=10 {
                pts.push(vec![a as f64 / 10.0, b as f64 / 10.0]);
            }
        }
        let s = grid_samples(&["xi", "xj"], &pts, |p| p[1] * (1.0 - p[0]));
        let front = search_regress(
            &s,
            &SearchConfig {
                seed: 2,
                ..SearchConfig::default()
            },
        )
        .unwrap();
        let probe = [(0.3, 2.0), (-1.5, 0.7), (4.0, -2.5)];
        let found = front.iter().any(|c| {
            c.mse < 1e-8
                && probe.iter().all(|&(xi, xj)| {
                    let v = c
                        .expr
                        .eval(&[("xi".to_string(), xi), ("xj".to_string(), xj)].into())
                        .unwrap();
                    (v - (xj - xi * xj)).abs() < 1e-6
                })
        });
        assert!(
            found,
            "{:?}",
            front
                .iter()
                .map(|c| (c.expr.to_string(), c.mse))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let pts: Vec<Vec<f64>> = (0..30).map(|k| vec![k as f64 * 0.1]).collect();
        let s = grid_samples(&["x"], &pts, |p| (p[0]).sin() + p[0]);
        let cfg = SearchConfig {
            generations: 10,
            seed: 5,
            ..SearchConfig::default()
        };
        assert_eq!(
            search_regress(&s, &cfg).unwrap(),
            search_regress(&s, &cfg).unwrap()
        );
    }

    #[test]
    fn subtree_indexing() {
        let e = Expr::parse_prefix(&["+", "cos", "*", "2", "x1", "*", "3", "x2"]).unwrap();
        assert_eq!(subtree(&e, 3), &Expr::Const(2.0));
        assert_eq!(subtree(&e, 6), &Expr::Const(3.0));
        let r = replace(&e, 6, Expr::var("x1"));
        assert_eq!(
            r.to_prefix(),
            vec!["+", "cos", "*", "2", "x1", "*", "x1", "x2"]
        );
        for k in 0..e.size() {
            assert_eq!(&replace(&e, k, subtree(&e, k).clone()), &e);
        }
    }

    #[test]
    fn linear_parts_round_trip() {
        let e = linear_combination(
            &[
                (2.0, Expr::var("x")),
                (-0.5, Expr::parse_infix("x * y").unwrap()),
            ],
            1.5,
        );
        let (c0, parts) = linear_parts(&e);
        assert_eq!(c0, 1.5);
        assert_eq!(parts[0], (2.0, Expr::var("x")));
        assert_eq!(parts[1].0, -0.5);
        assert_eq!(
            additive_terms(&Expr::parse_infix("3 * (x + x * y) - 2").unwrap()).len(),
            2
        );
    }
}
