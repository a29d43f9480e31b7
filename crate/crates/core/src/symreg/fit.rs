use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::library::Samples;
use crate::error::Result;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantFit {
    pub expr: Expr,
    pub mse: f64,
    /// False when no restart produced a finite error.
    pub converged: bool,
}

/// Sum of squared errors for the constant vector `c`; `+∞` off the domain.
struct Objective<'a> {
    expr: &'a Expr,
    samples: &'a Samples,
    vars: Vec<&'a str>,
    buf: Vec<f64>,
}

impl<'a> Objective<'a> {
    fn new(expr: &'a Expr, samples: &'a Samples) -> Self {
        Self {
            expr,
            samples,
            vars: samples.var_refs(),
            buf: Vec::with_capacity(samples.len()),
        }
    }

    fn value(&mut self, c: &[f64]) -> f64 {
        let e = self.expr.with_constants(c);
        let Ok(prog) = e.compile(&self.vars) else {
            return f64::INFINITY;
        };
        let n = self.samples.len();
        let ok = if self.vars.is_empty() {
            let v = prog.try_eval_rows(&[], 1, &mut self.buf);
            if v.is_some() {
                let y = self.buf[0];
                self.buf.clear();
                self.buf.resize(n, y);
            }
            v
        } else {
            prog.try_eval_rows(&self.samples.inputs, n, &mut self.buf)
        };
        if ok.is_none() {
            return f64::INFINITY;
        }
        let sse: f64 = self
            .buf
            .iter()
            .zip(&self.samples.outputs)
            .map(|(p, y)| (p - y).powi(2))
            .sum();
        if sse.is_finite() {
            sse
        } else {
            f64::INFINITY
        }
    }

    fn gradient(&mut self, c: &[f64], g: &mut [f64]) -> bool {
        let mut x = c.to_vec();
        for k in 0..c.len() {
            let h = 1e-6 * c[k].abs().max(1.0);
            x[k] = c[k] + h;
            let fp = self.value(&x);
            x[k] = c[k] - h;
            let fm = self.value(&x);
            x[k] = c[k];
            g[k] = (fp - fm) / (2.0 * h);
            if !g[k].is_finite() {
                return false;
            }
        }
        true
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with Armijo backtracking from `x0`; returns the final point and value.
fn bfgs(obj: &mut Objective<'_>, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return (x, f);
    }
    let mut g = vec![0.0; n];
    if !obj.gradient(&x, &mut g) {
        return (x, f);
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    for _ in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < 1e-12 * f.max(1e-300).sqrt().max(1e-12) || f == 0.0 {
            break;
        }
        let mut p: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&p, &g);
        if slope >= 0.0 {
            // reset to steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            p = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
            let fnew = obj.value(&xn);
            if fnew.is_finite() && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let mut gn = vec![0.0; n];
        if !obj.gradient(&xn, &mut gn) {
            x = xn;
            f = fnew;
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let done = (f - fnew).abs() <= 1e-15 * f.abs().max(1e-300);
        x = xn;
        f = fnew;
        g = gn;
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] +=
                        rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if done {
            break;
        }
    }
    (x, f)
}

/// Quasi-Newton refinement of every numeric constant in `expr` against the
/// samples: the current constants plus 7 perturbed restarts, best kept.
/// The result never has a larger squared error than the input.
pub fn fit_constants(expr: &Expr, samples: &Samples, seed: u64) -> Result<ConstantFit> {
    let start = expr.constants();
    let mut obj = Objective::new(expr, samples);
    let base = obj.value(&start);
    let n = samples.len().max(1) as f64;
    if start.is_empty() {
        return Ok(ConstantFit {
            expr: expr.clone(),
            mse: base / n,
            converged: base.is_finite(),
        });
    }
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut best = (start.clone(), base);
    for restart in 0..8 {
        let x0: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            start
                .iter()
                .map(|c| c + normal.sample(&mut rng) * c.abs().max(1.0))
                .collect()
        };
        let (x, f) = bfgs(&mut obj, &x0, 200);
        if f.is_finite() && f < best.1 {
            best = (x, f);
        }
    }
    Ok(ConstantFit {
        expr: expr.with_constants(&best.0),
        mse: best.1 / n,
        converged: best.1.is_finite(),
    })
}
