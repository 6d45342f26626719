//! The single-sample estimator `R^x(w)`, Monte Carlo estimates of `Φ(w)(x)`
//! and the growth-truncation operator.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Problem, SchemeParams};
use crate::simulate::{sample_horizons, Coords, FkSample};

/// A candidate `w = (w¹, w²)` evaluated into a flat `d' + d'·d` buffer.
pub trait CandidatePair: Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// `w ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPair;

impl CandidatePair for ZeroPair {
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `w ≡ value`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPair(pub Vec<f64>);

impl CandidatePair for ConstantPair {
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// The analytic `(u, ū)` of a problem.
#[derive(Clone, Copy)]
pub struct AnalyticPair<'a>(pub &'a Problem);

impl CandidatePair for AnalyticPair<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.0.analytic_value(x, out).expect("AnalyticPair built from a problem without analytic solution");
    }
}

impl<T: CandidatePair + ?Sized> CandidatePair for &T {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (**self).eval(x, out)
    }
}

/// One realization of `R^x(w)` written into `out` (`d'` then `d'×d`).
pub fn r_sample<W: CandidatePair + ?Sized>(
    problem: &Problem,
    params: &SchemeParams,
    w: &W,
    fk: &FkSample,
    out: &mut [f64],
) -> Result<()> {
    let len = problem.value_len();
    let mut w_e = Coords::from_elem(0.0, len);
    let mut w_g = Coords::from_elem(0.0, len);
    w.eval(&fk.x_at_e, &mut w_e);
    w.eval(&fk.x_at_g, &mut w_g);
    r_sample_from_values(problem, params, fk, &w_e, &w_g, out)
}

/// `R^x(w)` given `w` already evaluated at `X_E` and `X_Ẽ`.
pub fn r_sample_from_values(
    problem: &Problem,
    params: &SchemeParams,
    fk: &FkSample,
    w_e: &[f64],
    w_g: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let d = problem.dim();
    let dp = problem.d_prime();
    let mut f = Coords::from_elem(0.0, dp);

    problem.gen.eval(&fk.x_at_e, &w_e[..dp], &w_e[dp..], &mut f);
    let first = (-(params.a - params.theta) * fk.e_time).exp() / params.theta;
    for i in 0..dp {
        out[i] = first * (f[i] + params.a * w_e[i]);
    }

    problem.gen.eval(&fk.x_at_g, &w_g[..dp], &w_g[dp..], &mut f);
    let second = (PI / params.theta_tilde).sqrt()
        * fk.g_time.sqrt()
        * (-(params.a_tilde - params.theta_tilde) * fk.g_time).exp();
    for i in 0..dp {
        let g = second * (f[i] + params.a_tilde * w_g[i]);
        for j in 0..d {
            out[dp + i * d + j] = g * fk.malliavin_at_g[j];
        }
    }

    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue { node: None })
    }
}

/// Sample mean and standard error of `Φ(w)(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEstimate {
    pub value: Vec<f64>,
    pub std_err: Vec<f64>,
    pub m: usize,
}

impl PhiEstimate {
    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Streaming mean/variance per component.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    n: usize,
    mean: Coords,
    m2: Coords,
}

impl Moments {
    pub(crate) fn new(len: usize) -> Self {
        Moments { n: 0, mean: Coords::from_elem(0.0, len), m2: Coords::from_elem(0.0, len) }
    }

    #[inline]
    pub(crate) fn push(&mut self, v: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(v) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
    }

    pub(crate) fn finish(self) -> PhiEstimate {
        let n = self.n as f64;
        let std_err =
            self.m2.iter().map(|m2| if self.n > 1 { (m2 / (n - 1.0) / n).sqrt() } else { f64::INFINITY }).collect();
        PhiEstimate { value: self.mean.to_vec(), std_err, m: self.n }
    }
}

/// Mean and standard error over the given samples.
pub fn phi_from_samples<W: CandidatePair + ?Sized>(
    problem: &Problem,
    params: &SchemeParams,
    w: &W,
    samples: &[FkSample],
) -> Result<PhiEstimate> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let mut moments = Moments::new(problem.value_len());
    let mut buf = Coords::from_elem(0.0, problem.value_len());
    for fk in samples {
        r_sample(problem, params, w, fk, &mut buf)?;
        moments.push(&buf);
    }
    Ok(moments.finish())
}

/// Monte Carlo estimate of `Φ(w)(x)` from `m` fresh samples.
pub fn estimate_phi<W: CandidatePair + ?Sized, R: Rng + ?Sized>(
    problem: &Problem,
    params: &SchemeParams,
    w: &W,
    x: &[f64],
    m: usize,
    dt: f64,
    rng: &mut R,
) -> Result<PhiEstimate> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples for a standard error, got {m}")));
    }
    let mut moments = Moments::new(problem.value_len());
    let mut buf = Coords::from_elem(0.0, problem.value_len());
    for _ in 0..m {
        let fk = sample_horizons(&problem.sde, params, x, dt, rng)?;
        r_sample(problem, params, w, &fk, &mut buf)?;
        moments.push(&buf);
    }
    Ok(moments.finish())
}

/// `ρ_r(x) = 1 + |x|^r`; note `ρ_0 ≡ 2`.
#[inline]
pub fn rho(x: &[f64], r: f64) -> f64 {
    1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(r)
}

/// `T_{B,ρ_r}`: projects `value/ρ_r(x)` onto the Euclidean ball of radius `b`
/// in the joint `(u, ū)` space and rescales by `ρ_r(x)`.
pub fn truncate_growth(value: &mut [f64], x: &[f64], b: f64, r: f64) {
    let radius = b * rho(x, r);
    let norm = value.iter().map(|v| v * v).sum::<f64>().sqrt();
    // The slack keeps a second application from rescaling by rounding error.
    if norm > radius * (1.0 + 4.0 * f64::EPSILON) {
        let scale = radius / norm;
        value.iter_mut().for_each(|v| *v *= scale);
    }
}
