//! Dormand–Prince 5(4) with dense output sampled on a uniform grid.

use crate::error::{Error, Result};

/// Right-hand side of an autonomous-or-not ODE system over a flat state.
pub trait Rhs: Sync {
    fn len(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn len(&self) -> usize {
        self.0
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        (self.1)(t, x, dx);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 50_000_000,
        }
    }
}

impl Tolerances {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrate from `t = 0` and record the state at `k * dt_out` for
/// `k = 0..n_out`. Returns the flat states, `n_out * rhs.len()` values.
pub fn solve_uniform(
    rhs: &dyn Rhs,
    x0: &[f64],
    dt_out: f64,
    n_out: usize,
    tol: Tolerances,
) -> Result<Vec<f64>> {
    let m = rhs.len();
    if x0.len() != m {
        return Err(Error::shape(format!(
            "initial state has {} entries, expected {m}",
            x0.len()
        )));
    }
    if !(dt_out > 0.0) {
        return Err(Error::invalid("output spacing must be positive"));
    }
    if !(tol.rtol > 0.0 && tol.atol > 0.0) {
        return Err(Error::invalid("tolerances must be positive"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state is not finite"));
    }
    let mut out = Vec::with_capacity(n_out * m);
    if n_out == 0 {
        return Ok(out);
    }
    out.extend_from_slice(x0);
    if n_out == 1 {
        return Ok(out);
    }
    let t_end = (n_out - 1) as f64 * dt_out;

    let mut y = x0.to_vec();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut k5 = vec![0.0; m];
    let mut k6 = vec![0.0; m];
    let mut k7 = vec![0.0; m];
    let mut ytmp = vec![0.0; m];
    let mut ynew = vec![0.0; m];
    let mut cont = vec![0.0; 5 * m];

    let mut t = 0.0;
    rhs.eval(t, &y, &mut k1)?;
    let mut h = initial_step(rhs, t, &y, &k1, tol, t_end, &mut ytmp, &mut k2)?;
    let mut next_out = 1usize;
    let mut facold = 1e-4_f64;
    let mut last_rejected = false;
    let mut steps = 0usize;

    while next_out < n_out {
        steps += 1;
        if steps > tol.max_steps {
            return Err(Error::Integration {
                t,
                msg: format!("exceeded {} steps", tol.max_steps),
            });
        }
        if h < 16.0 * f64::EPSILON * t.abs().max(1e-300) || h < 1e-300 {
            return Err(Error::StepUnderflow { t });
        }
        if t + h > t_end {
            h = t_end - t;
        }

        for i in 0..m {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs.eval(t + C2 * h, &ytmp, &mut k2)?;
        for i in 0..m {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs.eval(t + C3 * h, &ytmp, &mut k3)?;
        for i in 0..m {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs.eval(t + C4 * h, &ytmp, &mut k4)?;
        for i in 0..m {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs.eval(t + C5 * h, &ytmp, &mut k5)?;
        for i in 0..m {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs.eval(t + h, &ytmp, &mut k6)?;
        for i in 0..m {
            ynew[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs.eval(t + h, &ynew, &mut k7)?;

        let mut err = 0.0;
        for i in 0..m {
            let sk = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (e / sk) * (e / sk);
        }
        err = (err / m.max(1) as f64).sqrt();
        if !err.is_finite() {
            // Non-finite stage values: shrink hard and retry.
            h *= 0.1;
            last_rejected = true;
            continue;
        }

        // PI step-size control (Hairer's dopri5 defaults).
        let fac11 = err.powf(0.2 - 0.04 * 0.75);
        let mut fac = fac11 / facold.powf(0.04);
        fac = (1.0 / 10.0_f64).max((1.0 / 0.2_f64).min(fac / 0.9));
        let mut h_new = h / fac;

        if err <= 1.0 {
            facold = err.max(1e-4);
            for i in 0..m {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                cont[i] = y[i];
                cont[m + i] = ydiff;
                cont[2 * m + i] = bspl;
                cont[3 * m + i] = ydiff - h * k7[i] - bspl;
                cont[4 * m + i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let t_new = t + h;
            while next_out < n_out {
                let t_out = next_out as f64 * dt_out;
                let last = next_out == n_out - 1;
                if t_out > t_new && !(last && t_new >= t_end) {
                    break;
                }
                let s = if last && t_new >= t_end {
                    1.0
                } else {
                    (t_out - t) / h
                };
                let s1 = 1.0 - s;
                for i in 0..m {
                    let v = cont[i]
                        + s * (cont[m + i]
                            + s1 * (cont[2 * m + i]
                                + s * (cont[3 * m + i] + s1 * cont[4 * m + i])));
                    out.push(v);
                }
                next_out += 1;
            }
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration {
                    t,
                    msg: "state became non-finite".into(),
                });
            }
            if last_rejected {
                h_new = h_new.min(h);
            }
            last_rejected = false;
        } else {
            h_new = h / (1.0 / 0.2_f64).min(fac11 / 0.9);
            last_rejected = true;
        }
        h = h_new;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn initial_step(
    rhs: &dyn Rhs,
    t: f64,
    y: &[f64],
    f0: &[f64],
    tol: Tolerances,
    span: f64,
    ytmp: &mut [f64],
    f1: &mut [f64],
) -> Result<f64> {
    let m = y.len().max(1) as f64;
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..y.len() {
        let sk = tol.atol + tol.rtol * y[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(span);
    for i in 0..y.len() {
        ytmp[i] = y[i] + h * f0[i];
    }
    rhs.eval(t + h, ytmp, f1)?;
    let mut der2 = 0.0;
    for i in 0..y.len() {
        let sk = tol.atol + tol.rtol * y[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = (der2 / m).sqrt() / h;
    let der12 = der2.max((dnf / m).sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(span).max(1e-12 * span))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> (usize, impl Fn(f64, &[f64], &mut [f64]) + Sync) {
        (1, |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = -x[0])
    }

    fn oscillator() -> (usize, impl Fn(f64, &[f64], &mut [f64]) + Sync) {
        (2, |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -x[0];
        })
    }

    #[test]
    fn exponential_decay_accuracy() {
        let out = solve_uniform(&decay(), &[1.0], 0.01, 101, Tolerances::default()).unwrap();
        assert!((out[100] - (-1.0f64).exp()).abs() < 1e-9, "{}", out[100]);
        for (k, v) in out.iter().enumerate() {
            assert!((v - (-(k as f64) * 0.01).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_constant() {
        let rhs = (3, |_t: f64, _x: &[f64], dx: &mut [f64]| dx.fill(0.0));
        let out = solve_uniform(&rhs, &[1.0, -2.0, 0.5], 0.1, 11, Tolerances::default()).unwrap();
        for k in 0..11 {
            assert_eq!(&out[3 * k..3 * k + 3], &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn oscillator_energy() {
        let out =
            solve_uniform(&oscillator(), &[1.0, 0.0], 0.1, 101, Tolerances::default()).unwrap();
        for k in 0..101 {
            let e = out[2 * k].powi(2) + out[2 * k + 1].powi(2);
            assert!((e - 1.0).abs() < 1e-8, "k={k}, e={e}");
        }
    }

    #[test]
    fn tighter_tolerance_not_worse() {
        let exact = (-1.0f64).exp();
        let mut prev = f64::INFINITY;
        for tol in [1e-6, 5e-7, 1e-8, 5e-9, 1e-10] {
            let out = solve_uniform(&decay(), &[1.0], 1.0, 2, Tolerances::new(tol, tol)).unwrap();
            let err = (out[1] - exact).abs();
            assert!(err <= prev * 1.0001 + 1e-15, "tol {tol}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn blow_up_reports_time() {
        // x' = x^2 with x(0)=1 blows up at t = 1.
        let rhs = (1, |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0]);
        match solve_uniform(&rhs, &[1.0], 0.1, 21, Tolerances::new(1e-10, 1e-10)) {
            Err(Error::StepUnderflow { t }) | Err(Error::Integration { t, .. }) => {
                assert!(t > 0.9 && t <= 1.0, "t = {t}")
            }
            other => panic!("expected failure, got {:?}", other.map(|v| v.len())),
        }
    }
}
