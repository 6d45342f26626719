//! Randomized horizons, forward paths with their tangent process, and the
//! Malliavin weight.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::model::{Problem, SchemeParams, SdeSpec};

/// Small inline vector used for points, weights and path state.
pub type Coords = SmallVec<[f64; 8]>;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a tuple of counters into one stream identifier.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stream identifier derived from the bit pattern of a point.
pub fn point_key(x: &[f64]) -> u64 {
    let bits: SmallVec<[u64; 8]> = x.iter().map(|v| v.to_bits()).collect();
    stream_id(&bits)
}

/// Derives a child seed, used for independent replications.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

/// Counter-based random stream: ChaCha8 keyed by the master seed with the
/// stream identifier selecting an independent keystream.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream { master_seed, stream_id, rng }
    }

    pub fn keyed(master_seed: u64, parts: &[u64]) -> Self {
        Self::new(master_seed, stream_id(parts))
    }

    /// Position in the keystream, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[inline]
pub fn sample_exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// `Γ(1/2, rate)` as `Z²/(2·rate)`.
#[inline]
pub fn sample_gamma_half<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * z / (2.0 * rate)
}

#[inline]
fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// One draw of the randomized horizons and the quantities evaluated there.
#[derive(Debug, Clone, PartialEq)]
pub struct FkSample {
    pub e_time: f64,
    pub g_time: f64,
    pub x_at_e: Coords,
    pub x_at_g: Coords,
    /// Row vector `U_Ẽ`.
    pub malliavin_at_g: Coords,
}

/// State of an Euler path together with its tangent process.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub x: Coords,
    /// `∇X_t`, row-major `d×d`.
    pub tangent: Coords,
    /// `∫ dWᵀ σ⁻¹(X) ∇X`, row vector.
    pub malliavin_integral: Coords,
    pub t: f64,
}

impl PathState {
    pub fn start(x: &[f64]) -> Self {
        let d = x.len();
        let mut tangent = Coords::from_elem(0.0, d * d);
        for i in 0..d {
            tangent[i * d + i] = 1.0;
        }
        PathState { x: x.into(), tangent, malliavin_integral: Coords::from_elem(0.0, d), t: 0.0 }
    }
}

const MAX_CONDITION: f64 = 1e12;

/// Euler–Maruyama stepper for `(X, ∇X)` and the Malliavin integral.
struct EulerStepper<'a> {
    sde: &'a SdeSpec,
    dt: f64,
    sqrt_dt: f64,
    b: Coords,
    sigma: Coords,
    sigma_inv: Coords,
    db: Coords,
    dsigma: Coords,
    dw: Coords,
    next: Coords,
}

impl<'a> EulerStepper<'a> {
    fn new(sde: &'a SdeSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        if sde.drift_jacobian.is_none() || sde.diffusion_jacobian.is_none() {
            return Err(Error::InvalidProblem("Euler simulation needs drift and diffusion Jacobians".into()));
        }
        let d = sde.dim;
        let z = |n: usize| Coords::from_elem(0.0, n);
        Ok(EulerStepper {
            sde,
            dt,
            sqrt_dt: dt.sqrt(),
            b: z(d),
            sigma: z(d * d),
            sigma_inv: z(d * d),
            db: z(d * d),
            dsigma: z(d * d * d),
            dw: z(d),
            next: z(d * d),
        })
    }

    /// Advances one step; the Malliavin integral is only accumulated when
    /// `accumulate` is set.
    fn step<R: Rng + ?Sized>(&mut self, s: &mut PathState, accumulate: bool, rng: &mut R) -> Result<()> {
        let d = self.sde.dim;
        let x = &s.x;
        (self.sde.drift)(x, &mut self.b);
        (self.sde.diffusion)(x, &mut self.sigma);
        (self.sde.drift_jacobian.as_ref().expect("checked in new"))(x, &mut self.db);
        (self.sde.diffusion_jacobian.as_ref().expect("checked in new"))(x, &mut self.dsigma);
        for w in self.dw.iter_mut() {
            *w = self.sqrt_dt * normal(rng);
        }

        if accumulate {
            (self.sde.inverse_diffusion)(x, &mut self.sigma_inv);
            let norm = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
            let condition = norm(&self.sigma) * norm(&self.sigma_inv);
            if !(condition <= MAX_CONDITION) {
                return Err(Error::DegenerateDiffusion { t: s.t, condition });
            }
            // dWᵀ σ⁻¹ ∇X at the left point.
            for m in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    let row: f64 = (0..d).map(|j| self.dw[j] * self.sigma_inv[j * d + i]).sum();
                    acc += row * s.tangent[i * d + m];
                }
                s.malliavin_integral[m] += acc;
            }
        }

        // ∇X ← ∇X + ∇b ∇X dt + Σ_j ∂σ_{·j}[∇X] dW_j
        for i in 0..d {
            for m in 0..d {
                let mut drift = 0.0;
                let mut noise = 0.0;
                for k in 0..d {
                    let t_km = s.tangent[k * d + m];
                    drift += self.db[i * d + k] * t_km;
                    for j in 0..d {
                        noise += self.dsigma[(i * d + j) * d + k] * t_km * self.dw[j];
                    }
                }
                self.next[i * d + m] = s.tangent[i * d + m] + drift * self.dt + noise;
            }
        }
        s.tangent.copy_from_slice(&self.next);

        for i in 0..d {
            let diff: f64 = (0..d).map(|j| self.sigma[i * d + j] * self.dw[j]).sum();
            s.x[i] += self.b[i] * self.dt + diff;
        }
        s.t += self.dt;
        Ok(())
    }
}

/// Number of Euler steps that reaches `t` rounded up to the grid (at least one).
#[inline]
pub fn steps_to(t: f64, dt: f64) -> usize {
    ((t / dt).ceil() as usize).max(1)
}

/// Runs the Euler scheme from `x` for `steps` steps of size `dt`.
pub fn simulate_path<R: Rng + ?Sized>(
    sde: &SdeSpec,
    x: &[f64],
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<PathState> {
    let mut stepper = EulerStepper::new(sde, dt)?;
    let mut state = PathState::start(x);
    for _ in 0..steps {
        stepper.step(&mut state, true, rng)?;
    }
    Ok(state)
}

/// Draws `(E, Ẽ, X_E, X_Ẽ, U_Ẽ)` from `x`.
///
/// Brownian SDEs are sampled exactly with independent Gaussians for the two
/// horizons. Otherwise one Euler path is run to `max(E, Ẽ)` with both
/// horizons rounded up to multiples of `dt`; the returned times are the
/// rounded ones.
pub fn simulate_fk_sample<R: Rng + ?Sized>(
    problem: &Problem,
    params: &SchemeParams,
    x: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<FkSample> {
    sample_horizons(&problem.sde, params, x, dt, rng)
}

pub(crate) fn sample_horizons<R: Rng + ?Sized>(
    sde: &SdeSpec,
    params: &SchemeParams,
    x: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<FkSample> {
    let d = sde.dim;
    let e = sample_exponential(rng, params.theta);
    let g = sample_gamma_half(rng, params.theta_tilde);
    if sde.is_brownian {
        let se = e.sqrt();
        let sg = g.sqrt();
        let mut x_at_e = Coords::with_capacity(d);
        let mut x_at_g = Coords::with_capacity(d);
        let mut weight = Coords::with_capacity(d);
        for &xi in x {
            x_at_e.push(xi + se * normal(rng));
        }
        for &xi in x {
            let z = normal(rng);
            x_at_g.push(xi + sg * z);
            weight.push(z / sg);
        }
        return Ok(FkSample { e_time: e, g_time: g, x_at_e, x_at_g, malliavin_at_g: weight });
    }

    let n_e = steps_to(e, dt);
    let n_g = steps_to(g, dt);
    let mut stepper = EulerStepper::new(sde, dt)?;
    let mut state = PathState::start(x);
    let mut x_at_e = Coords::new();
    let mut x_at_g = Coords::new();
    let mut weight_row = Coords::new();
    for k in 1..=n_e.max(n_g) {
        stepper.step(&mut state, k <= n_g, rng)?;
        if k == n_e {
            x_at_e = state.x.clone();
        }
        if k == n_g {
            x_at_g = state.x.clone();
            weight_row = state.malliavin_integral.clone();
        }
    }
    let g_time = n_g as f64 * dt;
    let mut sigma0 = Coords::from_elem(0.0, d * d);
    (sde.diffusion)(x, &mut sigma0);
    let weight: Coords =
        (0..d).map(|j| (0..d).map(|i| weight_row[i] * sigma0[i * d + j]).sum::<f64>() / g_time).collect();
    Ok(FkSample { e_time: n_e as f64 * dt, g_time, x_at_e, x_at_g, malliavin_at_g: weight })
}

/// `m` samples per starting point. Each point draws from its own stream keyed
/// by `tag` and the bit pattern of its coordinates, so results do not depend
/// on the order of `xs` or on thread scheduling.
pub fn simulate_batch(
    problem: &Problem,
    params: &SchemeParams,
    xs: &[Vec<f64>],
    m: usize,
    dt: f64,
    seed: u64,
    tag: u64,
) -> Result<Vec<Vec<FkSample>>> {
    if m == 0 {
        return Err(Error::InvalidConfig("samples per point must be at least 1".into()));
    }
    xs.par_iter()
        .map(|x| {
            let mut rng = RngStream::keyed(seed, &[tag, point_key(x)]);
            (0..m).map(|_| simulate_fk_sample(problem, params, x, dt, &mut rng)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problem_by_name;
    use std::collections::BTreeMap;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    fn ks_statistic(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn exponential_moments() {
        let mut rng = RngStream::new(1, 0);
        let v: Vec<f64> = (0..1_000_000).map(|_| sample_exponential(&mut rng, 1.5)).collect();
        let (m, var) = mean_var(&v);
        assert!((m - 2.0 / 3.0).abs() < 0.003, "{m}");
        assert!((var - 4.0 / 9.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn gamma_half_moments_and_cdf() {
        let mut rng = RngStream::new(2, 0);
        let v: Vec<f64> = (0..1_000_000).map(|_| sample_gamma_half(&mut rng, 1.5)).collect();
        let (m, var) = mean_var(&v);
        assert!((m - 1.0 / 3.0).abs() < 0.003, "{m}");
        assert!((var - 2.0 / 9.0).abs() < 0.01, "{var}");
        let ks = ks_statistic(v, |t| libm::erf((1.5 * t).sqrt()));
        assert!(ks < 0.002, "{ks}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_exponential(&mut RngStream::new(7, 3), 1.5);
        let b = sample_exponential(&mut RngStream::new(7, 3), 1.5);
        let c = sample_exponential(&mut RngStream::new(7, 4), 1.5);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, c);
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
    }

    #[test]
    fn brownian_weight_times_time_is_chi_square() {
        let p = problem_by_name("linear-constant", 1, &BTreeMap::new()).unwrap();
        let params = SchemeParams::default();
        let mut rng = RngStream::new(3, 0);
        let v: Vec<f64> = (0..100_000)
            .map(|_| {
                let s = simulate_fk_sample(&p, &params, &[0.0], 0.01, &mut rng).unwrap();
                s.g_time * s.malliavin_at_g[0].powi(2)
            })
            .collect();
        let (m, _) = mean_var(&v);
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn brownian_mean_of_x_at_e() {
        let p = problem_by_name("linear-constant", 3, &BTreeMap::new()).unwrap();
        let params = SchemeParams::default();
        let mut rng = RngStream::new(4, 0);
        let n = 50_000;
        let samples: Vec<FkSample> =
            (0..n).map(|_| simulate_fk_sample(&p, &params, &[1.0, 1.0, 1.0], 0.01, &mut rng).unwrap()).collect();
        for i in 0..3 {
            let v: Vec<f64> = samples.iter().map(|s| s.x_at_e[i]).collect();
            let (m, var) = mean_var(&v);
            assert!((m - 1.0).abs() < 3.0 * (var / n as f64).sqrt(), "{m}");
        }
    }

    #[test]
    fn brownian_weight_at_fixed_times() {
        // U_t = W_t/t has mean 0 and variance 1/t.
        let sde = SdeSpec::brownian(1);
        let mut rng = RngStream::new(5, 0);
        for t in [0.25, 1.0, 4.0] {
            let dt = t / 50.0;
            let mut sde_euler = sde.clone();
            sde_euler.is_brownian = false;
            let n = 100_000;
            let v: Vec<f64> = (0..n)
                .map(|_| simulate_path(&sde_euler, &[0.0], 50, dt, &mut rng).unwrap().malliavin_integral[0] / t)
                .collect();
            let (m, var) = mean_var(&v);
            let se = (var / n as f64).sqrt();
            assert!(m.abs() < 3.0 * se, "t={t} mean {m}");
            // Var of the sample variance of a Gaussian is 2σ⁴/(n−1).
            let var_se = (2.0 / (n as f64 - 1.0)).sqrt() / t;
            assert!((var - 1.0 / t).abs() < 3.0 * var_se, "t={t} var {var}");
        }
    }

    #[test]
    fn euler_path_matches_exact_brownian() {
        let mut sde = SdeSpec::brownian(1);
        sde.is_brownian = false;
        let mut rng = RngStream::new(6, 0);
        let v: Vec<f64> =
            (0..100_000).map(|_| simulate_path(&sde, &[0.0], 100, 0.01, &mut rng).unwrap().x[0]).collect();
        let ks = ks_statistic(v, |x| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2));
        assert!(ks < 0.01, "{ks}");
    }

    #[test]
    fn tanh_tangent_starts_at_one_and_stays_positive() {
        let sde = SdeSpec::tanh_diagonal(1, 0.9).unwrap();
        assert_eq!(PathState::start(&[0.3]).tangent[0], 1.0);
        let mut rng = RngStream::new(8, 0);
        let dt = 0.003;
        let mut stepper = EulerStepper::new(&sde, dt).unwrap();
        for _ in 0..1000 {
            let mut s = PathState::start(&[0.0]);
            for _ in 0..steps_to(1.0, dt) {
                stepper.step(&mut s, true, &mut rng).unwrap();
                assert!(s.tangent[0] > 0.0);
            }
        }
    }

    #[test]
    fn tanh_tangent_matches_finite_difference() {
        let sde = SdeSpec::tanh_diagonal(1, 0.9).unwrap();
        let dt = 0.005;
        let steps = 100;
        let h = 1e-4;
        for key in 0..20 {
            let run = |x: f64| simulate_path(&sde, &[x], steps, dt, &mut RngStream::new(9, key)).unwrap();
            let centre = run(0.4);
            let fd = (run(0.4 + h).x[0] - run(0.4 - h).x[0]) / (2.0 * h);
            let rel = (centre.tangent[0] - fd).abs() / fd.abs();
            assert!(rel < 1e-2, "tangent {} vs finite difference {fd}", centre.tangent[0]);
        }
    }

    #[test]
    fn rounded_horizons_are_grid_multiples() {
        let p = problem_by_name("arctan-tanh-sigma", 1, &BTreeMap::new()).unwrap();
        let mut rng = RngStream::new(10, 0);
        for _ in 0..200 {
            let s = simulate_fk_sample(&p, &SchemeParams::default(), &[0.5], 0.01, &mut rng).unwrap();
            for t in [s.e_time, s.g_time] {
                assert!(t > 0.0);
                assert!(((t / 0.01) - (t / 0.01).round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn batch_is_deterministic_and_order_free() {
        let p = problem_by_name("arctan-const-sigma", 1, &BTreeMap::new()).unwrap();
        let params = SchemeParams::default();
        let xs = vec![vec![0.0], vec![1.0]];
        let a = simulate_batch(&p, &params, &xs, 3, 0.01, 42, 0).unwrap();
        let b = simulate_batch(&p, &params, &xs, 3, 0.01, 42, 0).unwrap();
        assert_eq!(a, b);
        let swapped = simulate_batch(&p, &params, &[xs[1].clone(), xs[0].clone()], 3, 0.01, 42, 0).unwrap();
        assert_eq!(a[0], swapped[1]);
        assert_eq!(a[1], swapped[0]);
        let mut times: Vec<f64> = a.iter().flatten().map(|s| s.e_time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        assert_eq!(times.len(), 6);
    }

    #[test]
    fn batch_horizon_means() {
        let p = problem_by_name("linear-constant", 1, &BTreeMap::new()).unwrap();
        let params = SchemeParams::default();
        let out = simulate_batch(&p, &params, &[vec![0.0], vec![2.0]], 100_000, 0.01, 1, 0).unwrap();
        for samples in out {
            let v: Vec<f64> = samples.iter().map(|s| s.e_time).collect();
            let (m, var) = mean_var(&v);
            assert!((m - 1.0 / 1.5).abs() < 3.0 * (var / v.len() as f64).sqrt());
        }
    }

    #[test]
    fn degenerate_diffusion_is_reported() {
        let mut sde = SdeSpec::tanh_diagonal(1, 0.5).unwrap();
        sde.inverse_diffusion = std::sync::Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 1e14);
        let err = simulate_path(&sde, &[0.0], 3, 0.01, &mut RngStream::new(0, 0));
        assert!(matches!(err, Err(Error::DegenerateDiffusion { .. })));
    }
}
