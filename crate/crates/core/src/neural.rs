//! Fully connected ReLU network with a linear output layer, mean-squared
//! loss with backpropagation, and ADAM with a staircase learning rate.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::CandidatePair;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, so a batch maps as `A·W + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Hidden layers use ReLU; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Parameter gradients, one entry per layer.
pub type Gradients = Vec<Layer>;

impl Mlp {
    /// He-uniform hidden weights, Glorot-uniform output weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut R) -> Self {
        let sizes: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([output_dim]).collect();
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let limit = if l + 1 < n_layers {
                    (6.0 / fan_in as f64).sqrt()
                } else {
                    (6.0 / (fan_in + fan_out) as f64).sqrt()
                };
                Layer {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let sizes: Vec<usize> = std::iter::once(input_dim).chain(hidden.iter().copied()).chain([output_dim]).collect();
        Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Layer { w: Array2::zeros((w[0], w[1])), b: Array1::zeros(w[1]) })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").w.ncols()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.w.ncols())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Batched forward pass, rows are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Single-point forward pass without heap allocation for small widths.
    pub fn forward_one(&self, x: &[f64], out: &mut [f64]) {
        let mut cur: smallvec::SmallVec<[f64; 64]> = x.iter().copied().collect();
        let mut next: smallvec::SmallVec<[f64; 64]> = smallvec::SmallVec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            next.clear();
            next.extend(layer.b.iter().copied());
            for (i, &ai) in cur.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(layer.w.row(i)) {
                    *n += ai * w;
                }
            }
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(&cur);
    }

    /// `(1/n) Σ ‖net(xᵢ) − tᵢ‖²` and its gradient.
    pub fn mse_grad(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let last = self.layers.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.w);
            z += &layer.b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let mut delta = &acts[last + 1] - &targets;
        let loss = delta.iter().map(|v| v * v).sum::<f64>() / n;
        delta *= 2.0 / n;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let gw = acts[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].w.t());
                // ReLU mask: post-activation values are zero exactly where inactive.
                ndarray::Zip::from(&mut prev).and(&acts[l]).for_each(|p, &a| {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    /// MSE without gradients.
    pub fn mse(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        let y = self.forward(x);
        (&y - &targets).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().expect("parameter count"));
        }
    }

    /// Text checkpoint; floats use shortest round-trip formatting so reading
    /// it back is bit-exact.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("infbsde-mlp 1\n");
        let sizes: Vec<String> = self.sizes().iter().map(|v| v.to_string()).collect();
        writeln!(s, "sizes {}", sizes.join(" ")).expect("write to string");
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(s, "layer {i}").expect("write to string");
            for row in l.w.rows() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", vals.join(" ")).expect("write to string");
            }
            let vals: Vec<String> = l.b.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", vals.join(" ")).expect("write to string");
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Parse(format!("checkpoint: {m}"));
        if lines.next() != Some("infbsde-mlp 1") {
            return Err(bad("missing or unsupported header"));
        }
        let sizes: Vec<usize> = lines
            .next()
            .and_then(|l| l.strip_prefix("sizes "))
            .ok_or_else(|| bad("missing sizes"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad size")))
            .collect::<Result<_>>()?;
        if sizes.len() < 2 {
            return Err(bad("need at least two sizes"));
        }
        let parse_row = |line: Option<&str>, len: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = line
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad("bad float")))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(bad("row length mismatch"));
            }
            Ok(vals)
        };
        let mut layers = Vec::new();
        for (i, w) in sizes.windows(2).enumerate() {
            if lines.next() != Some(format!("layer {i}").as_str()) {
                return Err(bad("missing layer marker"));
            }
            let mut flat = Vec::with_capacity(w[0] * w[1]);
            for _ in 0..w[0] {
                flat.extend(parse_row(lines.next(), w[1])?);
            }
            let b = parse_row(lines.next(), w[1])?;
            layers.push(Layer {
                w: Array2::from_shape_vec((w[0], w[1]), flat).map_err(|e| bad(&e.to_string()))?,
                b: Array1::from(b),
            });
        }
        Ok(Mlp { layers })
    }
}

impl CandidatePair for Mlp {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.forward_one(x, out)
    }
}

/// `base · factor^{⌊step/period⌋}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub period: usize,
}

impl LrSchedule {
    pub fn rate(&self, step: usize) -> f64 {
        self.base * self.factor.powi((step / self.period.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    /// Completed update count.
    pub step: usize,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, schedule: LrSchedule) -> Self {
        let zeros = |net: &Mlp| -> Vec<Layer> {
            net.layers.iter().map(|l| Layer { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.len()) }).collect()
        };
        AdamState { m: zeros(net), v: zeros(net), step: 0, schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Learning rate used by the next update.
    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }
}

/// One bias-corrected ADAM update.
pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grads: &Gradients) {
    let lr = state.current_rate();
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        ndarray::Zip::from(&mut layer.w)
            .and(&g.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut layer.b)
            .and(&g.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
}

/// Rows `start..end` of a batch.
pub fn rows(x: &Array2<f64>, start: usize, end: usize) -> ArrayView2<'_, f64> {
    x.slice(s![start..end, ..])
}
