use std::collections::BTreeMap;

use infbsde::fixedpoint::{rho, truncate_growth, AnalyticPair, ConstantPair};
use infbsde::grid::{Grid, GridFunction};
use infbsde::model::{problem_by_name, SchemeParams, SdeSpec};
use infbsde::neural::Mlp;
use infbsde::picard_grid::{solve, GridSolveConfig};
use infbsde::simulate::{sample_exponential, sample_gamma_half, simulate_batch, simulate_path, RngStream};
use proptest::prelude::*;

struct Affine {
    c: Vec<f64>,
    slopes: Vec<f64>,
    dim: usize,
}

impl infbsde::fixedpoint::CandidatePair for Affine {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.c[k] + (0..self.dim).map(|j| self.slopes[k * self.dim + j] * x[j]).sum::<f64>();
        }
    }
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn interpolation_reproduces_affine_functions(
        dim in 1usize..=3,
        c in prop::collection::vec(-3.0f64..3.0, 4),
        slopes in prop::collection::vec(-2.0f64..2.0, 12),
        x in prop::collection::vec(-2.5f64..2.5, 3),
    ) {
        let grid = Grid::with_radius(dim, 3, 1, 2.0).unwrap();
        let f = Affine { c: c.clone(), slopes: slopes.clone(), dim };
        let g = GridFunction::from_fn(grid, 1, &f);
        let mut got = vec![0.0; 1 + dim];
        let mut want = vec![0.0; 1 + dim];
        g.interpolate(&x[..dim], &mut got);
        infbsde::fixedpoint::CandidatePair::eval(&f, &x[..dim], &mut want);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn interpolation_stays_within_node_range(
        values in prop::collection::vec(-5.0f64..5.0, 81),
        x in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        // d = 2, Ñ = 3, p = 1 gives 9 × 9 nodes with scalar values (d' = 1, ū has 2 entries).
        let grid = Grid::with_radius(2, 3, 1, 1.5).unwrap();
        let mut all = Vec::with_capacity(81 * 3);
        for v in &values {
            all.extend([*v, 0.0, 0.0]);
        }
        let g = GridFunction::from_values(grid, 1, all).unwrap();
        let mut out = [0.0; 3];
        g.interpolate(&x, &mut out);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out[0] >= lo - 1e-12 && out[0] <= hi + 1e-12);
    }

    #[test]
    fn interpolation_is_exact_on_nodes(dim in 1usize..=2, seed in 0u64..1000) {
        let grid = Grid::with_radius(dim, 2, 1, 1.0).unwrap();
        let p = problem_by_name("arctan-const-sigma", dim, &BTreeMap::new()).unwrap();
        let g = GridFunction::from_fn(grid, 1, &AnalyticPair(&p));
        let k = (seed as usize) % grid.len();
        let mut out = vec![0.0; 1 + dim];
        g.interpolate(&grid.node(k), &mut out);
        prop_assert_eq!(out.as_slice(), g.node_value(k));
    }

    #[test]
    fn truncation_is_idempotent_and_bounded(
        v in prop::collection::vec(-50.0f64..50.0, 3),
        x in prop::collection::vec(-4.0f64..4.0, 2),
        b in 0.1f64..5.0,
        r in 0.0f64..3.0,
    ) {
        let mut once = v.clone();
        truncate_growth(&mut once, &x, b, r);
        let mut twice = once.clone();
        truncate_growth(&mut twice, &x, b, r);
        prop_assert_eq!(&once, &twice);
        let norm = once.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= b * rho(&x, r) * (1.0 + 1e-12));
        // the direction is preserved
        let dot: f64 = once.iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(dot >= 0.0);
    }

    #[test]
    fn tangent_matches_finite_differences(x0 in -2.0f64..2.0, seed in 0u64..10_000) {
        let sde = SdeSpec::tanh_diagonal(1, 0.9).unwrap();
        let h = 1e-6;
        let path = |x: f64| simulate_path(&sde, &[x], 200, 0.005, &mut RngStream::new(seed, 3)).unwrap();
        let fd = (path(x0 + h).x[0] - path(x0 - h).x[0]) / (2.0 * h);
        let tangent = path(x0).tangent[0];
        prop_assert!((fd - tangent).abs() < 1e-5 * tangent.abs().max(1.0), "fd {} tangent {}", fd, tangent);
    }
}

/// Kolmogorov-Smirnov distance between samples and a CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn horizon_samplers_pass_ks_tests() {
    let n = 50_000;
    // Critical value at the 0.1% level is about 1.95/√n.
    let crit = 1.95 / (n as f64).sqrt();
    let mut rng = RngStream::new(1, 0);
    let theta = 1.5;
    let e: Vec<f64> = (0..n).map(|_| sample_exponential(&mut rng, theta)).collect();
    assert!(ks_distance(e, |x| 1.0 - (-theta * x).exp()) < crit);
    // Gamma(1/2, θ̃): P(Ẽ ≤ x) = erf(√(θ̃ x)).
    let g: Vec<f64> = (0..n).map(|_| sample_gamma_half(&mut rng, theta)).collect();
    assert!(ks_distance(g, |x| libm::erf((theta * x).sqrt())) < crit);
}

#[test]
fn brownian_malliavin_weight_has_variance_one_over_t() {
    let sde = SdeSpec::brownian(1);
    for (steps, dt) in [(50usize, 0.005), (100, 0.01), (200, 0.02)] {
        let t = steps as f64 * dt;
        let n = 20_000;
        let mut rng = RngStream::new(2, steps as u64);
        let us: Vec<f64> = (0..n)
            .map(|_| simulate_path(&sde, &[0.3], steps, dt, &mut rng).unwrap().malliavin_integral[0] / t)
            .collect();
        let mean = us.iter().sum::<f64>() / n as f64;
        let var = us.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard error of a sample variance of Gaussians is var·√(2/(n−1))
        let se = (1.0 / t) * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0 / t).abs() < 4.0 * se, "t = {t}: var {var}");
        assert!(mean.abs() < 4.0 * (1.0 / t / n as f64).sqrt());
    }
}

#[test]
fn simulation_and_network_init_are_deterministic() {
    let p = problem_by_name("arctan-tanh-sigma", 2, &BTreeMap::new()).unwrap();
    let xs = vec![vec![0.1, -0.4], vec![1.0, 2.0]];
    let a = simulate_batch(&p, &SchemeParams::default(), &xs, 20, 0.01, 9, 1).unwrap();
    let b = simulate_batch(&p, &SchemeParams::default(), &xs, 20, 0.01, 9, 1).unwrap();
    assert_eq!(a, b);
    let n1 = Mlp::new(2, &[22, 22], 3, &mut RngStream::new(4, 0));
    let n2 = Mlp::new(2, &[22, 22], 3, &mut RngStream::new(4, 0));
    assert_eq!(n1, n2);
}

#[test]
fn grid_solver_recovers_constant_solution() {
    let p = problem_by_name("linear-constant", 1, &BTreeMap::new()).unwrap();
    let cfg = GridSolveConfig { n_half: 6, samples: 20_000, iterations: 4, seed: 3, ..GridSolveConfig::default() };
    let out = solve(&p, &cfg).unwrap();
    let (eu, eb) = out.final_errors().unwrap();
    // ū carries the Monte Carlo noise of the Malliavin weight: SE ≈ 0.027 per node here.
    assert!(eu < 0.02 && eb < 0.15, "{eu} {eb}");
    let exact = GridFunction::from_fn(out.solution.grid, 1, &ConstantPair(vec![1.5, 0.0]));
    assert!(out.solution.sup_diff(&exact).unwrap() < 0.2);
}

#[test]
fn grid_solver_is_reproducible() {
    let p = problem_by_name("arctan-const-sigma", 1, &BTreeMap::new()).unwrap();
    let cfg = GridSolveConfig { n_half: 4, samples: 500, iterations: 3, seed: 8, ..GridSolveConfig::default() };
    let a = solve(&p, &cfg).unwrap();
    let b = solve(&p, &cfg).unwrap();
    assert_eq!(a.solution, b.solution);
    let c = solve(&p, &GridSolveConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.solution, c.solution);
}
