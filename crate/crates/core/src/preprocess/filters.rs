use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Savitzky–Golay smoothing: each sample is replaced by the value of the
/// least-squares polynomial of degree `polyorder` fitted to the `window`
/// samples centred on it. Within `window / 2` of either end the polynomial
/// fitted to the first (last) `window` samples is evaluated instead.
pub fn sg_smooth(series: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    if window % 2 == 0 {
        return Err(Error::invalid(format!("window {window} must be odd")));
    }
    if window <= polyorder {
        return Err(Error::invalid(format!(
            "window {window} must exceed polyorder {polyorder}"
        )));
    }
    if window > series.len() {
        return Err(Error::invalid(format!(
            "window {window} larger than series of length {}",
            series.len()
        )));
    }
    if window == 1 {
        return Ok(series.to_vec());
    }
    let hat = projection(window, polyorder);
    let half = window / 2;
    let len = series.len();
    let mut out = vec![0.0; len];
    let apply = |row: usize, start: usize| -> f64 {
        (0..window).map(|k| hat[(row, k)] * series[start + k]).sum()
    };
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i < half {
            apply(i, 0)
        } else if i + half >= len {
            apply(i + window - len, len - window)
        } else {
            apply(half, i - half)
        };
    }
    Ok(out)
}

/// Hat matrix V (VᵀV)⁻¹ Vᵀ of the polynomial design over `window` points
/// scaled to [-1, 1].
fn projection(window: usize, polyorder: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let v = DMatrix::from_fn(window, polyorder + 1, |r, c| {
        ((r as f64 - half) / half).powi(c as i32)
    });
    let vt = v.transpose();
    let gram = &vt * &v;
    let chol = gram
        .cholesky()
        .expect("polynomial design has full column rank");
    let solved = chol.solve(&vt);
    v * solved
}

/// Derivative estimates and a per-sample flag marking one-sided boundary stencils.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    pub values: Vec<f64>,
    pub boundary: Vec<bool>,
}

/// Fourth-order finite differences on a uniform grid: the centred five-point
/// stencil in the interior and one-sided five-point stencils on the two
/// samples at each end (flagged as boundary).
pub fn five_point_derivative(series: &[f64], delta_t: f64) -> Result<Derivative> {
    let n = series.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "five-point stencil needs >= 5 samples, got {n}"
        )));
    }
    if !(delta_t > 0.0) {
        return Err(Error::invalid("sample spacing must be positive"));
    }
    let f = series;
    let c = 1.0 / (12.0 * delta_t);
    let mut values = vec![0.0; n];
    values[0] = c * (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]);
    values[1] = c * (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]);
    for i in 2..n - 2 {
        values[i] = c * (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]);
    }
    values[n - 2] =
        c * (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]);
    values[n - 1] = c
        * (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]);
    let mut boundary = vec![false; n];
    for b in [0, 1, n - 2, n - 1] {
        boundary[b] = true;
    }
    Ok(Derivative { values, boundary })
}
