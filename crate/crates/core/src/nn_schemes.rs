//! Neural-network schemes: Picard iterations where each iterate is a trained
//! network (one Feynman-Kac sample per starting point), and a direct scheme
//! that regresses onto inner Monte Carlo averages with targets frozen at the
//! start of every epoch.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{r_sample_from_values, CandidatePair};
use crate::model::{Problem, SchemeParams};
use crate::neural::{adam_step, AdamState, LrSchedule, Mlp};
use crate::simulate::{sample_horizons, FkSample, RngStream};

const PICARD_TAG: u64 = 0x6e6e_7069;
const DIRECT_TAG: u64 = 0x6e6e_6469;
const ERROR_TAG: u64 = 0x6e6e_6572;

/// Hidden widths, defaulting to two layers of `20 + d`.
pub fn hidden_widths(hidden: &Option<Vec<usize>>, dim: usize) -> Vec<usize> {
    hidden.clone().unwrap_or_else(|| vec![20 + dim, 20 + dim])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnPicardConfig {
    pub params: SchemeParams,
    pub iterations: usize,
    /// Starting points (and Feynman-Kac samples) per iteration.
    pub samples: usize,
    /// ADAM steps per iteration.
    pub steps: usize,
    pub hidden: Option<Vec<usize>>,
    pub lr: LrSchedule,
    /// Overrides the problem's `μ0` standard deviation.
    pub mu0_std: Option<f64>,
    pub seed: u64,
    pub warm_start: bool,
    /// Minibatch size; `None` means full-batch gradients.
    pub batch_size: Option<usize>,
    pub dt: f64,
    pub err_samples: usize,
    pub err_std: Option<f64>,
}

impl Default for NnPicardConfig {
    fn default() -> Self {
        NnPicardConfig {
            params: SchemeParams::default(),
            iterations: 5,
            samples: 30_000,
            steps: 3000,
            hidden: None,
            lr: LrSchedule { base: 5e-4, factor: 0.9, period: 1000 },
            mu0_std: None,
            seed: 0,
            warm_start: true,
            batch_size: None,
            dt: 0.003,
            err_samples: 1000,
            err_std: None,
        }
    }
}

impl NnPicardConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.ensure_usable()?;
        if self.iterations < 1 || self.samples < 1 {
            return Err(Error::InvalidConfig("iterations and samples must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        check_common(self.dt, &self.hidden, self.mu0_std, self.err_std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectConfig {
    pub params: SchemeParams,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Starting points per epoch.
    pub points: usize,
    /// Inner Feynman-Kac samples per starting point.
    pub inner_samples: usize,
    pub hidden: Option<Vec<usize>>,
    pub lr: LrSchedule,
    pub mu0_std: Option<f64>,
    pub seed: u64,
    pub dt: f64,
    pub err_samples: usize,
    pub err_std: Option<f64>,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            params: SchemeParams::default(),
            epochs: 10,
            steps_per_epoch: 300,
            points: 512,
            inner_samples: 5000,
            hidden: None,
            lr: LrSchedule { base: 5e-4, factor: 0.6, period: 500 },
            mu0_std: None,
            seed: 0,
            dt: 0.003,
            err_samples: 1000,
            err_std: None,
        }
    }
}

impl DirectConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.ensure_usable()?;
        if self.epochs < 1 || self.points < 1 || self.inner_samples < 1 {
            return Err(Error::InvalidConfig("epochs, points and inner_samples must be at least 1".into()));
        }
        check_common(self.dt, &self.hidden, self.mu0_std, self.err_std)
    }
}

fn check_common(dt: f64, hidden: &Option<Vec<usize>>, mu0_std: Option<f64>, err_std: Option<f64>) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if hidden.as_ref().is_some_and(|h| h.contains(&0)) {
        return Err(Error::InvalidConfig("hidden widths must be positive".into()));
    }
    for s in [mu0_std, err_std].into_iter().flatten() {
        if !(s > 0.0) {
            return Err(Error::InvalidConfig(format!("standard deviations must be positive, got {s}")));
        }
    }
    Ok(())
}

/// One row of `nn_trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnTraceRow {
    /// Picard iteration or epoch, starting at 1.
    pub index: usize,
    /// Training loss on the final parameters.
    pub loss: f64,
    pub rel_err_u: Option<f64>,
    pub rel_err_ubar: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct NnSolveOutput {
    /// Network after each iteration (scheme 2) or only the final one (scheme 3).
    pub nets: Vec<Mlp>,
    pub trace: Vec<NnTraceRow>,
}

impl NnSolveOutput {
    pub fn final_net(&self) -> &Mlp {
        self.nets.last().expect("at least one iteration")
    }
}

/// Monte Carlo relative `L²(μ0)` errors of `u` and `ū`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub u: f64,
    pub ubar: f64,
}

/// Relative errors over `m` points drawn from `N(0, std² I)` with a stream
/// fixed by `seed`, so repeated calls share the same test points.
pub fn relative_l2_errors<W: CandidatePair + ?Sized>(
    candidate: &W,
    problem: &Problem,
    m: usize,
    std: f64,
    seed: u64,
) -> Result<RelativeErrors> {
    if problem.analytic.is_none() {
        return Err(Error::MissingAnalyticSolution);
    }
    if m == 0 {
        return Err(Error::InvalidConfig("need at least one test point".into()));
    }
    let dp = problem.d_prime();
    let len = problem.value_len();
    let xs = gaussian_points(m, problem.dim(), std, &mut RngStream::keyed(seed, &[ERROR_TAG]));
    let (mut num_u, mut den_u, mut num_b, mut den_b) = (0.0, 0.0, 0.0, 0.0);
    let mut exact = vec![0.0; len];
    let mut approx = vec![0.0; len];
    for x in xs.rows() {
        let x = x.as_slice().expect("standard layout");
        problem.analytic_value(x, &mut exact)?;
        candidate.eval(x, &mut approx);
        for i in 0..len {
            let diff = (approx[i] - exact[i]).powi(2);
            let norm = exact[i].powi(2);
            if i < dp {
                num_u += diff;
                den_u += norm;
            } else {
                num_b += diff;
                den_b += norm;
            }
        }
    }
    let ratio = |n: f64, d: f64| {
        if d > 0.0 {
            (n / d).sqrt()
        } else if n == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    Ok(RelativeErrors { u: ratio(num_u, den_u), ubar: ratio(num_b, den_b) })
}

fn gaussian_points(m: usize, dim: usize, std: f64, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, dim), || {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}

fn positions(samples: &[FkSample], dim: usize, at_e: bool) -> Array2<f64> {
    let mut out = Array2::zeros((samples.len(), dim));
    for (mut row, s) in out.rows_mut().into_iter().zip(samples) {
        let x = if at_e { &s.x_at_e } else { &s.x_at_g };
        row.iter_mut().zip(x.iter()).for_each(|(r, v)| *r = *v);
    }
    out
}

/// One `R^x` row per sample, with the previous iterate evaluated in batch.
fn sample_targets(
    problem: &Problem,
    params: &SchemeParams,
    prev: Option<&Mlp>,
    samples: &[FkSample],
) -> Result<Array2<f64>> {
    let len = problem.value_len();
    let (w_e, w_g) = match prev {
        Some(net) => (
            net.forward(positions(samples, problem.dim(), true).view()),
            net.forward(positions(samples, problem.dim(), false).view()),
        ),
        None => (Array2::zeros((samples.len(), len)), Array2::zeros((samples.len(), len))),
    };
    let mut out = Array2::zeros((samples.len(), len));
    for (k, fk) in samples.iter().enumerate() {
        let row = out.row_mut(k).into_slice().expect("standard layout");
        r_sample_from_values(
            problem,
            params,
            fk,
            w_e.row(k).as_slice().expect("standard layout"),
            w_g.row(k).as_slice().expect("standard layout"),
            row,
        )?;
    }
    Ok(out)
}

fn record_errors(problem: &Problem, net: &Mlp, m: usize, std: f64, seed: u64) -> Result<(Option<f64>, Option<f64>)> {
    if problem.analytic.is_none() || m == 0 {
        return Ok((None, None));
    }
    let e = relative_l2_errors(net, problem, m, std, seed)?;
    Ok((Some(e.u), Some(e.ubar)))
}

pub fn contraction_nn_solve(problem: &Problem, cfg: &NnPicardConfig) -> Result<NnSolveOutput> {
    contraction_nn_solve_with(problem, cfg, |_, _| {})
}

/// Scheme 2. `on_iter` sees each trace row with the network it describes.
pub fn contraction_nn_solve_with<F: FnMut(&NnTraceRow, &Mlp)>(
    problem: &Problem,
    cfg: &NnPicardConfig,
    mut on_iter: F,
) -> Result<NnSolveOutput> {
    cfg.validate()?;
    let d = problem.dim();
    let len = problem.value_len();
    let hidden = hidden_widths(&cfg.hidden, d);
    let std = cfg.mu0_std.unwrap_or(problem.mu0_std);
    let err_std = cfg.err_std.unwrap_or(std);
    let mut nets: Vec<Mlp> = Vec::with_capacity(cfg.iterations);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for n in 0..cfg.iterations {
        let started = Instant::now();
        let it = n as u64;
        let x0 = gaussian_points(cfg.samples, d, std, &mut RngStream::keyed(cfg.seed, &[PICARD_TAG, it, 0]));
        let samples: Vec<FkSample> = (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let mut rng = RngStream::keyed(cfg.seed, &[PICARD_TAG, it, 1, k as u64]);
                sample_horizons(
                    &problem.sde,
                    &cfg.params,
                    x0.row(k).as_slice().expect("standard layout"),
                    cfg.dt,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let targets = sample_targets(problem, &cfg.params, nets.last(), &samples)?;

        let mut net = match nets.last() {
            Some(prev) if cfg.warm_start => prev.clone(),
            _ => Mlp::new(d, &hidden, len, &mut RngStream::keyed(cfg.seed, &[PICARD_TAG, it, 2])),
        };
        let mut adam = AdamState::new(&net, cfg.lr);
        let mut shuffle_rng = RngStream::keyed(cfg.seed, &[PICARD_TAG, it, 3]);
        let batch = cfg.batch_size.unwrap_or(cfg.samples).min(cfg.samples);
        let mut order: Vec<usize> = (0..cfg.samples).collect();
        let mut cursor = cfg.samples;
        for step in 0..cfg.steps {
            let (loss, grads) = if batch == cfg.samples {
                net.mse_grad(x0.view(), targets.view())
            } else {
                if cursor + batch > cfg.samples {
                    order.shuffle(&mut shuffle_rng);
                    cursor = 0;
                }
                let idx = &order[cursor..cursor + batch];
                cursor += batch;
                net.mse_grad(x0.select(Axis(0), idx).view(), targets.select(Axis(0), idx).view())
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_step(&mut net, &mut adam, &grads);
        }
        let loss = net.mse(x0.view(), targets.view());
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: cfg.steps });
        }
        let (rel_err_u, rel_err_ubar) = record_errors(problem, &net, cfg.err_samples, err_std, cfg.seed)?;
        let row = NnTraceRow { index: n + 1, loss, rel_err_u, rel_err_ubar, seconds: started.elapsed().as_secs_f64() };
        on_iter(&row, &net);
        trace.push(row);
        nets.push(net);
    }
    Ok(NnSolveOutput { nets, trace })
}

pub fn direct_nn_solve(problem: &Problem, cfg: &DirectConfig) -> Result<NnSolveOutput> {
    direct_nn_solve_with(problem, cfg, |_, _| {})
}

/// Scheme 3. The regression targets of epoch `i` are inner averages computed
/// with the parameters the network has at the start of that epoch.
pub fn direct_nn_solve_with<F: FnMut(&NnTraceRow, &Mlp)>(
    problem: &Problem,
    cfg: &DirectConfig,
    mut on_epoch: F,
) -> Result<NnSolveOutput> {
    cfg.validate()?;
    let d = problem.dim();
    let len = problem.value_len();
    let hidden = hidden_widths(&cfg.hidden, d);
    let std = cfg.mu0_std.unwrap_or(problem.mu0_std);
    let err_std = cfg.err_std.unwrap_or(std);
    let mut net = Mlp::new(d, &hidden, len, &mut RngStream::keyed(cfg.seed, &[DIRECT_TAG, u64::MAX]));
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let ep = epoch as u64;
        let x0 = gaussian_points(cfg.points, d, std, &mut RngStream::keyed(cfg.seed, &[DIRECT_TAG, ep, 0]));
        let frozen = &net;
        let rows: Vec<Vec<f64>> = (0..cfg.points)
            .into_par_iter()
            .map(|k| {
                let mut rng = RngStream::keyed(cfg.seed, &[DIRECT_TAG, ep, 1, k as u64]);
                let x = x0.row(k);
                let x = x.as_slice().expect("standard layout");
                let samples: Vec<FkSample> = (0..cfg.inner_samples)
                    .map(|_| sample_horizons(&problem.sde, &cfg.params, x, cfg.dt, &mut rng))
                    .collect::<Result<_>>()?;
                let t = sample_targets(problem, &cfg.params, Some(frozen), &samples)?;
                Ok(t.mean_axis(Axis(0)).expect("non-empty").to_vec())
            })
            .collect::<Result<_>>()?;
        let targets = Array2::from_shape_vec((cfg.points, len), rows.concat()).expect("row lengths");

        for step in 0..cfg.steps_per_epoch {
            let (loss, grads) = net.mse_grad(x0.view(), targets.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: adam.step.max(step) });
            }
            adam_step(&mut net, &mut adam, &grads);
        }
        let loss = net.mse(x0.view(), targets.view());
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: adam.step });
        }
        let (rel_err_u, rel_err_ubar) = record_errors(problem, &net, cfg.err_samples, err_std, cfg.seed)?;
        let row =
            NnTraceRow { index: epoch + 1, loss, rel_err_u, rel_err_ubar, seconds: started.elapsed().as_secs_f64() };
        on_epoch(&row, &net);
        trace.push(row);
    }
    Ok(NnSolveOutput { nets: vec![net], trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::AnalyticPair;
    use crate::model::{linear_constant, problem_by_name};
    use std::collections::BTreeMap;

    fn small_picard() -> NnPicardConfig {
        NnPicardConfig {
            samples: 2000,
            steps: 400,
            hidden: Some(vec![8, 8]),
            lr: LrSchedule { base: 5e-3, factor: 0.9, period: 1000 },
            ..NnPicardConfig::default()
        }
    }

    fn mean_abs_u_error(net: &Mlp, target: f64) -> f64 {
        let xs = gaussian_points(1000, 1, 2.0, &mut RngStream::new(99, 0));
        let mut out = [0.0; 2];
        xs.rows()
            .into_iter()
            .map(|x| {
                net.forward_one(x.as_slice().unwrap(), &mut out);
                (out[0] - target).abs()
            })
            .sum::<f64>()
            / 1000.0
    }

    #[test]
    fn picard_on_linear_constant() {
        let p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        let cfg = NnPicardConfig { iterations: 3, ..small_picard() };
        let out = contraction_nn_solve(&p, &cfg).unwrap();
        assert_eq!(out.trace.len(), 3);
        assert!(mean_abs_u_error(out.final_net(), 1.5) < 0.05);
    }

    #[test]
    fn picard_zero_target() {
        let p = linear_constant(1, 2.0, 0.0, 2.0).unwrap();
        let cfg = NnPicardConfig { iterations: 1, ..small_picard() };
        let out = contraction_nn_solve(&p, &cfg).unwrap();
        assert!(mean_abs_u_error(out.final_net(), 0.0) < 0.02);
    }

    #[test]
    fn picard_error_tracks_training_residual() {
        // With a = μ and ã = μ the conditional mean of the target is exactly
        // (c0/μ, 0) whatever the previous iterate, so κ₂ = 0 and the error of
        // each iterate is bounded by its own fitting residual.
        let p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        let cfg = NnPicardConfig { iterations: 3, ..small_picard() };
        let out = contraction_nn_solve(&p, &cfg).unwrap();
        let kappa = 0.0;
        let mut prev = relative_l2_errors(&crate::fixedpoint::ZeroPair, &p, 1000, 2.0, 5).unwrap().u * 1.5;
        for net in &out.nets {
            let e = relative_l2_errors(net, &p, 1000, 2.0, 5).unwrap().u * 1.5;
            let residual = e;
            assert!(e <= 2.0 * (kappa * prev + residual) + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn direct_on_linear_constant() {
        let p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        let cfg = DirectConfig {
            epochs: 4,
            steps_per_epoch: 300,
            points: 256,
            inner_samples: 200,
            hidden: Some(vec![8, 8]),
            lr: LrSchedule { base: 5e-3, factor: 0.6, period: 500 },
            ..DirectConfig::default()
        };
        let out = direct_nn_solve(&p, &cfg).unwrap();
        assert!(mean_abs_u_error(out.final_net(), 1.5) < 0.05);
    }

    #[test]
    fn direct_without_steps_keeps_initial_net() {
        let p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        let cfg =
            DirectConfig { epochs: 1, steps_per_epoch: 0, points: 8, inner_samples: 4, ..DirectConfig::default() };
        let out = direct_nn_solve(&p, &cfg).unwrap();
        let init = Mlp::new(1, &[21, 21], 2, &mut RngStream::keyed(0, &[DIRECT_TAG, u64::MAX]));
        assert_eq!(out.final_net(), &init);
    }

    #[test]
    fn schemes_are_deterministic() {
        let p = problem_by_name("arctan-const-sigma", 1, &BTreeMap::new()).unwrap();
        let cfg = NnPicardConfig { iterations: 2, samples: 300, steps: 20, ..NnPicardConfig::default() };
        let a = contraction_nn_solve(&p, &cfg).unwrap();
        let b = contraction_nn_solve(&p, &cfg).unwrap();
        let losses = |o: &NnSolveOutput| o.trace.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        let mini = NnPicardConfig { batch_size: Some(64), ..cfg };
        assert_eq!(
            losses(&contraction_nn_solve(&p, &mini).unwrap()),
            losses(&contraction_nn_solve(&p, &mini).unwrap())
        );

        let dcfg =
            DirectConfig { epochs: 2, steps_per_epoch: 10, points: 16, inner_samples: 20, ..DirectConfig::default() };
        assert_eq!(losses(&direct_nn_solve(&p, &dcfg).unwrap()), losses(&direct_nn_solve(&p, &dcfg).unwrap()));
    }

    #[test]
    fn relative_errors_of_analytic_are_zero() {
        let p = problem_by_name("arctan-const-sigma", 2, &BTreeMap::new()).unwrap();
        let e = relative_l2_errors(&AnalyticPair(&p), &p, 500, 2.0, 1).unwrap();
        assert_eq!((e.u, e.ubar), (0.0, 0.0));
    }

    #[test]
    fn relative_error_of_offset_on_constant_solution() {
        let p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        let c = 0.3;
        let e = relative_l2_errors(&crate::fixedpoint::ConstantPair(vec![1.5 + c, 0.0]), &p, 1000, 2.0, 2).unwrap();
        assert!((e.u - c / 1.5).abs() < 1e-12);
    }

    #[test]
    fn missing_analytic_solution_is_an_error() {
        let mut p = linear_constant(1, 2.0, 3.0, 2.0).unwrap();
        p.analytic = None;
        assert_eq!(
            relative_l2_errors(&crate::fixedpoint::ZeroPair, &p, 10, 2.0, 0),
            Err(Error::MissingAnalyticSolution)
        );
    }

    #[test]
    fn arctan_norm_scales_like_inverse_sqrt_dim() {
        // ‖u‖ for u(x) = (1/d)Σ arctan(x_i) under N(0, 4I).
        let norm = |d: usize| {
            let p = problem_by_name("arctan-const-sigma", d, &BTreeMap::new()).unwrap();
            let xs = gaussian_points(20_000, d, 2.0, &mut RngStream::new(3, d as u64));
            let mut out = vec![0.0; p.value_len()];
            let s: f64 = xs
                .rows()
                .into_iter()
                .map(|x| {
                    p.analytic_value(x.as_slice().unwrap(), &mut out).unwrap();
                    out[0] * out[0]
                })
                .sum();
            (s / 20_000.0).sqrt()
        };
        let ratio = norm(4) / norm(1);
        assert!((ratio - 0.5).abs() < 0.05, "{ratio}");
    }
}
