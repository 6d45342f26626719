//! Grid-based Monte Carlo Picard iteration.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{estimate_phi, truncate_growth, AnalyticPair};
use crate::grid::{Grid, GridFunction};
use crate::model::{Problem, SchemeParams};
use crate::simulate::RngStream;

const STREAM_TAG: u64 = 0x6772_6964;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub bound: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSolveConfig {
    pub params: SchemeParams,
    /// Nodes per half-axis in the reporting region.
    pub n_half: usize,
    /// Boundary layers added around the reporting region and discarded
    /// when reporting errors.
    pub pad: usize,
    /// Half-width of the reporting region; `δ = radius / n_half`.
    pub radius: f64,
    /// Samples per node per iteration.
    pub samples: usize,
    pub iterations: usize,
    pub truncation: Option<Truncation>,
    /// Euler step, used only for non-Brownian SDEs.
    pub dt: f64,
    pub seed: u64,
}

impl Default for GridSolveConfig {
    fn default() -> Self {
        GridSolveConfig {
            params: SchemeParams::default(),
            n_half: 10,
            pad: 2,
            radius: 3.0,
            samples: 40_000,
            iterations: 10,
            truncation: None,
            dt: 0.003,
            seed: 0,
        }
    }
}

impl GridSolveConfig {
    pub fn grid(&self, dim: usize) -> Result<Grid> {
        Grid::with_radius(dim, self.n_half, self.pad, self.radius)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.ensure_usable()?;
        if self.samples < 2 {
            return Err(Error::InvalidConfig(format!("samples must be at least 2, got {}", self.samples)));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::InvalidConfig(format!("radius must be positive, got {}", self.radius)));
        }
        if let Some(t) = self.truncation {
            if !(t.bound > 0.0) || !(t.r >= 0.0) {
                return Err(Error::InvalidConfig(format!("truncation needs B > 0 and r >= 0, got {t:?}")));
            }
        }
        Ok(())
    }
}

/// Result of one Picard step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub next: GridFunction,
    /// Largest componentwise standard error at each node.
    pub std_err: Vec<f64>,
}

/// `v_{n+1}(z) = T(mean of M samples of R^z(P v_n))` at every node.
pub fn picard_step(problem: &Problem, v: &GridFunction, cfg: &GridSolveConfig, iteration: usize) -> Result<StepOutput> {
    let grid = v.grid;
    let results: Vec<(Vec<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let z = grid.node(k);
            let mut rng = RngStream::keyed(cfg.seed, &[STREAM_TAG, iteration as u64, k as u64]);
            let est =
                estimate_phi(problem, &cfg.params, v, &z, cfg.samples, cfg.dt, &mut rng).map_err(|e| match e {
                    Error::NonFiniteValue { .. } => Error::NonFiniteValue { node: Some(k) },
                    other => other,
                })?;
            let mut value = est.value;
            if let Some(t) = cfg.truncation {
                truncate_growth(&mut value, &z, t.bound, t.r);
            }
            let se = est.std_err.iter().copied().fold(0.0, f64::max);
            Ok((value, se))
        })
        .collect::<Result<_>>()?;
    let mut std_err = Vec::with_capacity(results.len());
    let mut values = Vec::with_capacity(results.len() * v.value_len());
    for (value, se) in results {
        values.extend(value);
        std_err.push(se);
    }
    Ok(StepOutput { next: GridFunction::from_values(grid, v.d_prime, values)?, std_err })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub n: usize,
    /// Sup errors over the inner nodes, when an analytic solution is known.
    pub sup_err_u: Option<f64>,
    pub sup_err_ubar: Option<f64>,
    /// Sup over all nodes of `|v_n − v_{n−1}|`.
    pub sup_change: f64,
    pub max_std_err: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GridSolveOutput {
    pub solution: GridFunction,
    pub reports: Vec<IterationReport>,
}

impl GridSolveOutput {
    pub fn final_errors(&self) -> Option<(f64, f64)> {
        let last = self.reports.last()?;
        Some((last.sup_err_u?, last.sup_err_ubar?))
    }
}

/// Runs `cfg.iterations` Picard steps from `v⁰ = 0`, calling `on_iter` after
/// each one.
pub fn solve_with<F: FnMut(&IterationReport)>(
    problem: &Problem,
    cfg: &GridSolveConfig,
    mut on_iter: F,
) -> Result<GridSolveOutput> {
    cfg.validate()?;
    let grid = cfg.grid(problem.dim())?;
    let inner = grid.truncated_nodes();
    let mut v = GridFunction::zeros(grid, problem.d_prime());
    let mut reports = Vec::with_capacity(cfg.iterations);
    for n in 1..=cfg.iterations {
        let start = Instant::now();
        let step = picard_step(problem, &v, cfg, n - 1)?;
        let seconds = start.elapsed().as_secs_f64();
        let errors = problem.analytic.as_ref().map(|_| step.next.sup_errors(&AnalyticPair(problem), &inner));
        let report = IterationReport {
            n,
            sup_err_u: errors.map(|e| e.0),
            sup_err_ubar: errors.map(|e| e.1),
            sup_change: step.next.sup_diff(&v)?,
            max_std_err: step.std_err.iter().copied().fold(0.0, f64::max),
            seconds,
        };
        on_iter(&report);
        reports.push(report);
        v = step.next;
    }
    Ok(GridSolveOutput { solution: v, reports })
}

pub fn solve(problem: &Problem, cfg: &GridSolveConfig) -> Result<GridSolveOutput> {
    solve_with(problem, cfg, |_| {})
}

/// Columns `u_exact_*`, `ubar_exact_*`, `err_u`, `err_ubar` for the solution
/// CSV; empty without an analytic solution.
pub fn node_error_columns(problem: &Problem, f: &GridFunction) -> Vec<(String, Vec<f64>)> {
    if problem.analytic.is_none() {
        return Vec::new();
    }
    let grid = f.grid;
    let d = grid.dim;
    let dp = f.d_prime;
    let vlen = f.value_len();
    let mut exact = vec![0.0; vlen];
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); vlen + 2];
    for k in 0..grid.len() {
        problem.analytic_value(&grid.node(k), &mut exact).expect("checked above");
        let v = f.node_value(k);
        for j in 0..vlen {
            cols[j].push(exact[j]);
        }
        let err = |r: std::ops::Range<usize>| r.map(|j| (v[j] - exact[j]).powi(2)).sum::<f64>().sqrt();
        cols[vlen].push(err(0..dp));
        cols[vlen + 1].push(err(dp..vlen));
    }
    let mut names: Vec<String> = (1..=dp).map(|i| format!("u_exact_{i}")).collect();
    for i in 1..=dp {
        names.extend((1..=d).map(|j| format!("ubar_exact_{i}{j}")));
    }
    names.push("err_u".into());
    names.push("err_ubar".into());
    names.into_iter().zip(cols).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || x.len() != y.len() {
        return Err(Error::FitUnderdetermined(distinct.len()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NonFiniteValue { node: None });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub n_half: usize,
    pub samples: usize,
    pub sup_err_u: f64,
    pub sup_err_ubar: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub points: Vec<RatePoint>,
    /// Slope of `log err_u` against `log(2 + Ñ)`.
    pub slope_u: f64,
    pub slope_ubar: f64,
}

/// `M = round(k·Ñ⁴/R⁴)`, at least 2.
pub fn rate_samples(k: f64, n_half: usize, radius: f64) -> usize {
    ((k * (n_half as f64).powi(4) / radius.powi(4)).round() as usize).max(2)
}

/// Solves once per `Ñ` with `M` scaled as `k·Ñ⁴/R⁴` and fits the error decay.
pub fn rate_study(problem: &Problem, template: &GridSolveConfig, n_halves: &[usize], k: f64) -> Result<RateStudy> {
    rate_study_with(problem, template, n_halves, k, |_| {})
}

pub fn rate_study_with<F: FnMut(&RatePoint)>(
    problem: &Problem,
    template: &GridSolveConfig,
    n_halves: &[usize],
    k: f64,
    mut on_point: F,
) -> Result<RateStudy> {
    let mut distinct = n_halves.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::FitUnderdetermined(distinct.len()));
    }
    if problem.analytic.is_none() {
        return Err(Error::MissingAnalyticSolution);
    }
    let mut points = Vec::with_capacity(n_halves.len());
    for &n_half in n_halves {
        let cfg = GridSolveConfig { n_half, samples: rate_samples(k, n_half, template.radius), ..template.clone() };
        let start = Instant::now();
        let out = solve(problem, &cfg)?;
        let (eu, eub) = out.final_errors().ok_or(Error::MissingAnalyticSolution)?;
        let point = RatePoint {
            n_half,
            samples: cfg.samples,
            sup_err_u: eu,
            sup_err_ubar: eub,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_point(&point);
        points.push(point);
    }
    let xs: Vec<f64> = points.iter().map(|p| 2.0 + p.n_half as f64).collect();
    let eu: Vec<f64> = points.iter().map(|p| p.sup_err_u).collect();
    let eub: Vec<f64> = points.iter().map(|p| p.sup_err_ubar).collect();
    Ok(RateStudy { slope_u: fit_loglog_slope(&xs, &eu)?, slope_ubar: fit_loglog_slope(&xs, &eub)?, points })
}
