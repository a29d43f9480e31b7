use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::expr::{BinaryOp, Expr};
use crate::error::{Error, Result};

/// Input/output samples for regression; `inputs` is row-major with one
/// column per entry of `vars`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub vars: Vec<String>,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl Samples {
    pub fn new(vars: Vec<String>, inputs: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        let m = vars.len();
        if (m == 0 && !inputs.is_empty()) || (m > 0 && inputs.len() != m * outputs.len()) {
            return Err(Error::shape(format!(
                "{} input values for {} outputs and {m} variables",
                inputs.len(),
                outputs.len()
            )));
        }
        Ok(Self {
            vars,
            inputs,
            outputs,
        })
    }

    pub fn from_rows(vars: Vec<String>, rows: &[Vec<f64>], outputs: Vec<f64>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != vars.len()) {
            return Err(Error::shape("row length differs from variable count"));
        }
        Self::new(vars, rows.concat(), outputs)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn var_refs(&self) -> Vec<&str> {
        self.vars.iter().map(String::as_str).collect()
    }

    /// Values of `expr` at every sample.
    pub fn evaluate(&self, expr: &Expr) -> Result<Vec<f64>> {
        let prog = expr.compile(&self.var_refs())?;
        if self.vars.is_empty() {
            let v = prog.eval_rows(&[])?[0];
            return Ok(vec![v; self.len()]);
        }
        prog.eval_rows(&self.inputs)
    }

    /// Mean squared error of `expr`, evaluated with [`Expr::eval`] semantics.
    pub fn mse(&self, expr: &Expr) -> Result<f64> {
        let pred = self.evaluate(expr)?;
        Ok(mean_sq_diff(&pred, &self.outputs))
    }

    pub fn output_variance(&self) -> f64 {
        variance(&self.outputs)
    }
}

pub(crate) fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

pub(crate) fn variance(v: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Least squares with column equilibration; errors if the design is rank deficient.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let cols = a.ncols();
    if cols == 0 {
        return Ok(DVector::zeros(0));
    }
    let norms: Vec<f64> = (0..cols).map(|c| a.column(c).norm()).collect();
    let mut scaled = a.clone();
    for (c, &nrm) in norms.iter().enumerate() {
        if nrm > 0.0 {
            scaled.column_mut(c).scale_mut(1.0 / nrm);
        }
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * (a.nrows().max(cols) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < cols || norms.iter().any(|&n| n == 0.0) || !smax.is_finite() {
        return Err(Error::RankDeficient { rank, cols });
    }
    let x = svd
        .solve(b, tol)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(DVector::from_iterator(
        cols,
        x.iter().zip(&norms).map(|(v, n)| v / n),
    ))
}

/// Minimum-norm least squares that tolerates collinear columns.
pub(crate) fn lstsq_pinv(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let cols = a.ncols();
    if cols == 0 {
        return Some(DVector::zeros(0));
    }
    let norms: Vec<f64> = (0..cols).map(|c| a.column(c).norm().max(1e-300)).collect();
    let mut scaled = a.clone();
    for (c, &nrm) in norms.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / nrm);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return None;
    }
    let x = svd.solve(b, smax * 1e-12).ok()?;
    Some(DVector::from_iterator(
        cols,
        x.iter().zip(&norms).map(|(v, n)| v / n),
    ))
}

/// Ordered basis of candidate terms over a fixed variable list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionLibrary {
    pub vars: Vec<String>,
    pub terms: Vec<Expr>,
    pub names: Vec<String>,
}

impl FunctionLibrary {
    pub fn new(vars: Vec<String>, terms: Vec<Expr>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::invalid("function library is empty"));
        }
        for t in &terms {
            for v in t.variables() {
                if !vars.contains(&v) {
                    return Err(Error::UnboundVariable(v));
                }
            }
        }
        let names = terms.iter().map(|t| t.to_string()).collect();
        Ok(Self { vars, terms, names })
    }

    pub fn from_infix<S: AsRef<str>>(vars: Vec<String>, terms: &[S]) -> Result<Self> {
        let parsed = terms
            .iter()
            .map(|t| Expr::parse_infix(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vars, parsed)
    }

    /// One infix expression per line; blank lines and `#` comments skipped.
    pub fn parse(vars: Vec<String>, text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            terms.push(Expr::parse_infix(line).map_err(|e| Error::Parse {
                line: no + 1,
                msg: e.to_string(),
            })?);
        }
        Self::new(vars, terms)
    }

    pub fn load(vars: Vec<String>, path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(vars, &std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.terms.iter().map(|t| format!("{t}\n")).collect()
    }

    /// All monomials of total degree `0..=degree` in `vars`, constant first.
    pub fn polynomial(vars: Vec<String>, degree: usize) -> Result<Self> {
        let mut exps: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..vars.len() {
            exps = exps
                .into_iter()
                .flat_map(|e| (0..=degree).map(move |p| [e.clone(), vec![p]].concat()))
                .collect();
        }
        exps.retain(|e| e.iter().sum::<usize>() <= degree);
        exps.sort_by_key(|e| (e.iter().sum::<usize>(), std::cmp::Reverse(e.clone())));
        let terms = exps.iter().map(|e| monomial(&vars, e)).collect();
        Self::new(vars, terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Design matrix `Θ` with one row per sample and one column per term.
    pub fn design_matrix(&self, samples: &Samples) -> Result<DMatrix<f64>> {
        if samples.vars != self.vars {
            return Err(Error::invalid(format!(
                "library variables {:?} differ from sample variables {:?}",
                self.vars, samples.vars
            )));
        }
        let mut theta = DMatrix::zeros(samples.len(), self.len());
        for (c, t) in self.terms.iter().enumerate() {
            let col = samples.evaluate(t)?;
            theta.column_mut(c).copy_from_slice(&col);
        }
        Ok(theta)
    }

    /// `Σ ξ_k θ_k` over the non-zero coefficients (0 when all vanish).
    pub fn expression(&self, xi: &[f64]) -> Expr {
        let terms: Vec<(f64, Expr)> = xi
            .iter()
            .zip(&self.terms)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, t)| (*c, t.clone()))
            .collect();
        linear_combination(&terms, 0.0)
    }
}

fn monomial(vars: &[String], exps: &[usize]) -> Expr {
    let mut factors = Vec::new();
    for (v, &p) in vars.iter().zip(exps) {
        for _ in 0..p {
            factors.push(Expr::var(v));
        }
    }
    factors
        .into_iter()
        .reduce(Expr::mul)
        .unwrap_or(Expr::Const(1.0))
}

/// `c0 + Σ c_k t_k`, written with subtraction for negative coefficients and
/// bare terms for unit coefficients omitted only when `c_k == 1` is exact.
pub fn linear_combination(terms: &[(f64, Expr)], intercept: f64) -> Expr {
    let scaled = |c: f64, t: &Expr| -> Expr {
        if matches!(t, Expr::Const(v) if *v == 1.0) {
            Expr::Const(c)
        } else {
            Expr::mul(Expr::Const(c), t.clone())
        }
    };
    let mut acc: Option<Expr> = (intercept != 0.0).then_some(Expr::Const(intercept));
    for (c, t) in terms {
        acc = Some(match acc {
            None => scaled(*c, t),
            Some(a) if *c < 0.0 => Expr::binary(BinaryOp::Sub, a, scaled(-c, t)),
            Some(a) => Expr::add(a, scaled(*c, t)),
        });
    }
    acc.unwrap_or(Expr::Const(0.0))
}

/// Sequentially thresholded least squares.
pub fn sparse_regress(
    samples: &Samples,
    library: &FunctionLibrary,
    threshold: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    if samples.len() < library.len() {
        return Err(Error::invalid(format!(
            "{} samples for {} library terms",
            samples.len(),
            library.len()
        )));
    }
    if !(threshold >= 0.0) {
        return Err(Error::invalid("threshold must be non-negative"));
    }
    let theta = library.design_matrix(samples)?;
    let y = DVector::from_column_slice(&samples.outputs);
    stlsq(&theta, &y, threshold, max_iters)
}

pub(crate) fn stlsq(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    threshold: f64,
    max_iters: usize,
) -> Result<Vec<f64>> {
    let cols = theta.ncols();
    let mut xi = vec![0.0; cols];
    if y.iter().all(|v| *v == 0.0) {
        return Ok(xi);
    }
    let mut support: Vec<usize> = (0..cols).collect();
    for _ in 0..max_iters.max(1) {
        let sub = theta.select_columns(&support);
        let coef = lstsq(&sub, y)?;
        xi.iter_mut().for_each(|v| *v = 0.0);
        for (k, &c) in support.iter().enumerate() {
            xi[c] = coef[k];
        }
        let next: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&c| xi[c].abs() >= threshold)
            .collect();
        if next.len() == support.len() {
            break;
        }
        for &c in &support {
            if !next.contains(&c) {
                xi[c] = 0.0;
            }
        }
        support = next;
        if support.is_empty() {
            break;
        }
    }
    Ok(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn one_var(xs: &[f64], f: impl Fn(f64) -> f64) -> Samples {
        Samples::new(
            vec!["x".into()],
            xs.to_vec(),
            xs.iter().map(|&x| f(x)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_linear_recovery() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let lib = FunctionLibrary::from_infix(vec!["x".into()], &["1", "x", "x^2"]).unwrap();
        let xi = sparse_regress(&one_var(&xs, |x| 2.0 * x), &lib, 0.05, 10).unwrap();
        assert_eq!(xi[0], 0.0);
        assert!((xi[1] - 2.0).abs() < 1e-8);
        assert_eq!(xi[2], 0.0);
    }

    #[test]
    fn lv_self_dynamics_coefficients() {
        let xs: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let lib = FunctionLibrary::polynomial(vec!["x".into()], 3).unwrap();
        let xi = sparse_regress(&one_var(&xs, |x| 0.5 * x - x * x), &lib, 0.05, 10).unwrap();
        let expect = [0.0, 0.5, -1.0, 0.0];
        for (a, b) in xi.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_outputs_give_zero_vector() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let lib = FunctionLibrary::polynomial(vec!["x".into()], 2).unwrap();
        assert_eq!(
            sparse_regress(&one_var(&xs, |_| 0.0), &lib, 0.1, 5).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn collinear_library_is_reported() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let lib = FunctionLibrary::from_infix(vec!["x".into()], &["x", "2 * x"]).unwrap();
        let err = sparse_regress(&one_var(&xs, |x| x), &lib, 0.0, 5).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 1, cols: 2 }));
        assert!(sparse_regress(&one_var(&xs[..1], |x| x), &lib, 0.0, 5).is_err());
    }

    #[test]
    fn threshold_zero_is_least_squares() {
        let mut r = rng::seeded(17);
        for _ in 0..20 {
            let rows = 5;
            let a = DMatrix::from_fn(rows, 5, |_, _| r.random_range(-1.0..1.0));
            let y = DVector::from_fn(rows, |_, _| r.random_range(-1.0..1.0));
            let xi = stlsq(&a, &y, 0.0, 10).unwrap();
            // oracle: normal equations
            let ata = a.transpose() * &a;
            let aty = a.transpose() * &y;
            let oracle = ata.lu().solve(&aty).unwrap();
            for k in 0..5 {
                assert!(
                    (xi[k] - oracle[k]).abs() < 1e-8 * oracle[k].abs().max(1.0),
                    "{} vs {}",
                    xi[k],
                    oracle[k]
                );
            }
        }
    }

    #[test]
    fn polynomial_library_layout() {
        let lib = FunctionLibrary::polynomial(vec!["a".into(), "b".into()], 2).unwrap();
        assert_eq!(lib.names, vec!["1", "a", "b", "a * a", "a * b", "b * b"]);
        let text = lib.to_text();
        let back =
            FunctionLibrary::parse(lib.vars.clone(), &format!("# header\n\n{text}")).unwrap();
        assert_eq!(back.len(), 6);
        assert!(FunctionLibrary::parse(vec!["a".into()], "a\nb\n").is_err());
        assert!(FunctionLibrary::parse(vec!["a".into()], "a +\n").is_err());
    }

    #[test]
    fn expression_from_coefficients() {
        let lib = FunctionLibrary::polynomial(vec!["x".into()], 2).unwrap();
        let e = lib.expression(&[0.0, 0.5, -1.0]);
        let s = one_var(&[0.0, 1.0, 2.0], |x| 0.5 * x - x * x);
        assert!(s.mse(&e).unwrap() < 1e-30);
        assert_eq!(lib.expression(&[0.0; 3]), Expr::Const(0.0));
    }
}
