use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INITIAL_NUMERATOR: [f64; 4] = [1.1915, 1.5957, 0.5, 0.0218];
pub const INITIAL_DENOMINATOR: [f64; 3] = [2.3830, 0.0, 1.0];

/// `R(x) = (a0 + a1 x + a2 x² + a3 x³) / (1 + |b0 + b1 x + b2 x²|)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalActivation {
    pub a: [f64; 4],
    pub b: [f64; 3],
}

impl Default for RationalActivation {
    fn default() -> Self {
        Self {
            a: INITIAL_NUMERATOR,
            b: INITIAL_DENOMINATOR,
        }
    }
}

impl RationalActivation {
    const LEN: usize = 7;

    fn from_slice(c: &[f64]) -> Self {
        Self {
            a: [c[0], c[1], c[2], c[3]],
            b: [c[4], c[5], c[6]],
        }
    }

    fn write(&self, out: &mut [f64]) {
        out[..4].copy_from_slice(&self.a);
        out[4..7].copy_from_slice(&self.b);
    }
}

pub fn rational_forward(act: &RationalActivation, x: f64) -> f64 {
    let a = &act.a;
    let b = &act.b;
    let p = a[0] + x * (a[1] + x * (a[2] + x * a[3]));
    let q = b[0] + x * (b[1] + x * b[2]);
    p / (1.0 + q.abs())
}

/// Value, derivative in `x`, and partials in the seven coefficients.
#[inline]
fn rational_grad(c: &[f64], x: f64) -> (f64, f64, [f64; 7]) {
    let p = c[0] + x * (c[1] + x * (c[2] + x * c[3]));
    let dp = c[1] + x * (2.0 * c[2] + x * 3.0 * c[3]);
    let q = c[4] + x * (c[5] + x * c[6]);
    let dq = c[5] + 2.0 * x * c[6];
    let sq = if q > 0.0 {
        1.0
    } else if q < 0.0 {
        -1.0
    } else {
        0.0
    };
    let den = 1.0 + q.abs();
    let inv = 1.0 / den;
    let r = p * inv;
    let dr = (dp - r * sq * dq) * inv;
    let x2 = x * x;
    let gq = -r * sq * inv;
    (
        r,
        dr,
        [inv, x * inv, x2 * inv, x2 * x * inv, gq, gq * x, gq * x2],
    )
}

/// Layer widths, input first and output last; every hidden layer is
/// followed by a rational activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self { sizes }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        let l = self.num_layers();
        (0..l)
            .map(|k| {
                let lin = self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1];
                if k + 1 < l {
                    lin + RationalActivation::LEN
                } else {
                    lin
                }
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "invalid layer sizes {:?}",
                self.sizes
            )));
        }
        Ok(())
    }
}

/// Feed-forward network with all parameters in one flat vector.
/// Per layer: weights (`in × out`, row-major), biases, then activation
/// coefficients for hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations recorded by a forward pass.
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

struct Offsets {
    w: usize,
    b: usize,
    act: Option<usize>,
    end: usize,
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` weights and biases, initial activation coefficients.
    pub fn init(spec: MlpSpec, rng: &mut impl rand::Rng) -> Result<Self> {
        spec.validate()?;
        let mut net = Self {
            params: vec![0.0; spec.num_params()],
            spec,
        };
        for l in 0..net.spec.num_layers() {
            let o = net.offsets(l);
            let bound = 1.0 / (net.spec.sizes[l] as f64).sqrt();
            for p in &mut net.params[o.w..o.act.unwrap_or(o.end)] {
                *p = rng.random_range(-bound..bound);
            }
            if let Some(a) = o.act {
                RationalActivation::default()
                    .write(&mut net.params[a..a + RationalActivation::LEN]);
            }
        }
        Ok(net)
    }

    /// Network with every weight and bias zero (outputs are identically zero).
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut net = Self {
            params: vec![0.0; spec.num_params()],
            spec,
        };
        for l in 0..net.spec.num_layers() {
            if let Some(a) = net.offsets(l).act {
                RationalActivation::default()
                    .write(&mut net.params[a..a + RationalActivation::LEN]);
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.sizes.last().unwrap()
    }

    fn offsets(&self, layer: usize) -> Offsets {
        let sizes = &self.spec.sizes;
        let last = self.spec.num_layers() - 1;
        let mut off = 0;
        for k in 0..layer {
            off += sizes[k] * sizes[k + 1] + sizes[k + 1];
            if k < last {
                off += RationalActivation::LEN;
            }
        }
        let b = off + sizes[layer] * sizes[layer + 1];
        let after_b = b + sizes[layer + 1];
        let act = (layer < last).then_some(after_b);
        let end = after_b
            + if layer < last {
                RationalActivation::LEN
            } else {
                0
            };
        Offsets {
            w: off,
            b,
            act,
            end,
        }
    }

    pub fn activation(&self, layer: usize) -> Option<RationalActivation> {
        self.offsets(layer)
            .act
            .map(|a| RationalActivation::from_slice(&self.params[a..a + RationalActivation::LEN]))
    }

    pub fn set_activation(&mut self, layer: usize, act: RationalActivation) {
        if let Some(a) = self.offsets(layer).act {
            act.write(&mut self.params[a..a + RationalActivation::LEN]);
        }
    }

    fn weights(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let o = self.offsets(layer);
        let (fan_in, fan_out) = (self.spec.sizes[layer], self.spec.sizes[layer + 1]);
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.params[o.w..o.b]).unwrap();
        let b = ArrayView1::from(&self.params[o.b..o.b + fan_out]);
        (w, b)
    }

    /// Set the output layer's bias; the remaining parameters are untouched.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let l = self.spec.num_layers() - 1;
        let o = self.offsets(l);
        self.params[o.b..o.end].copy_from_slice(bias);
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let l = self.spec.num_layers();
        let mut h = x.to_owned();
        for k in 0..l {
            let (w, b) = self.weights(k);
            let mut z = h.dot(&w);
            z += &b;
            if let Some(a) = self.offsets(k).act {
                let c = &self.params[a..a + RationalActivation::LEN];
                let act = RationalActivation::from_slice(c);
                z.mapv_inplace(|v| rational_forward(&act, v));
            }
            h = z;
        }
        h
    }

    pub fn forward_tape(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Tape) {
        let l = self.spec.num_layers();
        let mut tape = Tape {
            inputs: Vec::with_capacity(l),
            pre: Vec::with_capacity(l),
        };
        let mut h = x.to_owned();
        for k in 0..l {
            let (w, b) = self.weights(k);
            let mut z = h.dot(&w);
            z += &b;
            tape.inputs.push(h);
            if let Some(a) = self.offsets(k).act {
                let act =
                    RationalActivation::from_slice(&self.params[a..a + RationalActivation::LEN]);
                let out = z.mapv(|v| rational_forward(&act, v));
                tape.pre.push(z);
                h = out;
            } else {
                tape.pre.push(Array2::zeros((0, 0)));
                h = z;
            }
        }
        (h, tape)
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the input, given `dout` = dL/d(output).
    pub fn backward(&self, tape: &Tape, dout: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let l = self.spec.num_layers();
        let mut dh = dout;
        for k in (0..l).rev() {
            let o = self.offsets(k);
            let dz = if let Some(a) = o.act {
                let c: [f64; 7] = self.params[a..a + 7].try_into().unwrap();
                let mut gc = [0.0; 7];
                let z = &tape.pre[k];
                let mut dz = dh;
                ndarray::Zip::from(&mut dz).and(z).for_each(|g, &zv| {
                    let (_, dr, dc) = rational_grad(&c, zv);
                    for (acc, v) in gc.iter_mut().zip(dc) {
                        *acc += *g * v;
                    }
                    *g *= dr;
                });
                for (dst, v) in grad[a..a + 7].iter_mut().zip(gc) {
                    *dst += v;
                }
                dz
            } else {
                dh
            };
            let input = &tape.inputs[k];
            let dw = input.t().dot(&dz);
            for (dst, v) in grad[o.w..o.b].iter_mut().zip(dw.iter()) {
                *dst += v;
            }
            let db = dz.sum_axis(Axis(0));
            for (dst, v) in grad[o.b..o.b + db.len()].iter_mut().zip(db.iter()) {
                *dst += v;
            }
            let (w, _) = self.weights(k);
            dh = dz.dot(&w.t());
        }
        dh
    }

    /// Forward pass for a single input vector.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        self.forward(view).slice(s![0, ..]).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn rational_at_zero() {
        let v = rational_forward(&RationalActivation::default(), 0.0);
        assert!((v - 1.1915 / (1.0 + 2.3830)).abs() < 1e-15);
        assert!((v - 0.35220).abs() < 1e-5);
        let zero = RationalActivation {
            a: [0.0; 4],
            b: [3.0, -1.0, 2.0],
        };
        for x in [-5.0, 0.0, 0.7, 1e3] {
            assert_eq!(rational_forward(&zero, x), 0.0);
        }
    }

    #[test]
    fn rational_finite_on_wide_grid() {
        let act = RationalActivation::default();
        for k in 0..=20_000 {
            let x = -1e6 + k as f64 * 100.0;
            assert!(rational_forward(&act, x).is_finite());
        }
        let odd = RationalActivation {
            a: [1.0, -2.0, 3.0, 4.0],
            b: [0.0, 0.0, 0.0],
        };
        assert!(rational_forward(&odd, 1e6).is_finite());
    }

    #[test]
    fn rational_partials_match_differences() {
        let c = [0.3, -1.2, 0.5, 0.1, -0.4, 0.9, 0.6];
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.4, 1.7] {
            let (_, dr, dc) = rational_grad(&c, x);
            let f = |c: &[f64], x: f64| rational_grad(c, x).0;
            let num = (f(&c, x + h) - f(&c, x - h)) / (2.0 * h);
            assert!((num - dr).abs() < 1e-7, "x={x}");
            for k in 0..7 {
                let mut cp = c;
                let mut cm = c;
                cp[k] += h;
                cm[k] -= h;
                let num = (f(&cp, x) - f(&cm, x)) / (2.0 * h);
                assert!((num - dc[k]).abs() < 1e-7, "x={x} k={k}");
            }
        }
    }

    #[test]
    fn parameter_count_and_shapes() {
        let spec = MlpSpec::new(1, &[50, 50], 1);
        assert_eq!(
            spec.num_params(),
            (50 + 50) + 7 + (2500 + 50) + 7 + (50 + 1)
        );
        let net = Mlp::init(spec, &mut rng::seeded(0)).unwrap();
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(net.forward(x.view()).dim(), (4, 1));
        assert!(MlpSpec::new(0, &[3], 1).validate().is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(MlpSpec::new(2, &[5, 5], 2)).unwrap();
        assert_eq!(net.eval(&[0.3, -4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = Mlp::init(MlpSpec::new(2, &[3, 2], 1), &mut rng::seeded(5)).unwrap();
        net.set_activation(
            0,
            RationalActivation {
                a: [0.2, 1.1, 0.3, 0.05],
                b: [0.5, 0.2, 0.8],
            },
        );
        let x = Array2::from_shape_vec((3, 2), vec![0.1, -0.4, 0.9, 0.2, -1.3, 0.7]).unwrap();
        let loss = |net: &Mlp| net.forward(x.view()).iter().map(|v| v * v).sum::<f64>() * 0.5;
        let (out, tape) = net.forward_tape(x.view());
        let mut grad = vec![0.0; net.params.len()];
        net.backward(&tape, out.clone(), &mut grad);
        let h = 1e-6;
        for k in 0..net.params.len() {
            let mut p = net.clone();
            p.params[k] += h;
            let mut m = net.clone();
            m.params[k] -= h;
            let num = (loss(&p) - loss(&m)) / (2.0 * h);
            let denom = num.abs().max(grad[k].abs()).max(1e-8);
            assert!(
                (num - grad[k]).abs() / denom < 1e-5,
                "param {k}: {num} vs {}",
                grad[k]
            );
        }
    }
}
