//! Problem definitions: the forward SDE, the BSDE generator, optional
//! analytic solutions, scheme parameters, and manufactured test problems.
//!
//! Matrices are stored flat and row-major. A value of the candidate pair
//! `(u, ū) ∈ ℝ^{d'} × ℝ^{d'×d}` is laid out as `d'` entries of `u` followed by
//! the `d'·d` entries of `ū`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// `x ↦ out`, writing into a caller-provided buffer.
pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `(x, y, z) ↦ f(x, y, z)` with `z` flattened row-major.
pub type GeneratorFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

type Scratch = SmallVec<[f64; 32]>;

fn scratch(len: usize) -> Scratch {
    SmallVec::from_elem(0.0, len)
}

/// Lipschitz and bound constants of the SDE coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConstants {
    pub k_b: f64,
    pub k_sigma: f64,
    pub m_sigma: f64,
    pub m_sigma_inv: f64,
    /// Linear growth constant of the drift, `|b(x)| ≤ M_b + L_b |x|`.
    pub l_b: f64,
}

/// Forward SDE `dX = b(X) dt + σ(X) dW`.
#[derive(Clone)]
pub struct SdeSpec {
    pub dim: usize,
    pub drift: VecFn,
    pub diffusion: VecFn,
    pub inverse_diffusion: VecFn,
    /// `∂b_i/∂x_k` at index `i*d + k`.
    pub drift_jacobian: Option<VecFn>,
    /// `∂σ_ij/∂x_k` at index `(i*d + j)*d + k`.
    pub diffusion_jacobian: Option<VecFn>,
    pub constants: SdeConstants,
    /// `b ≡ 0`, `σ ≡ I`: enables exact sampling.
    pub is_brownian: bool,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .field("is_brownian", &self.is_brownian)
            .finish_non_exhaustive()
    }
}

impl SdeSpec {
    /// `X = x + W`.
    pub fn brownian(dim: usize) -> Self {
        let identity: VecFn = Arc::new(move |_x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = 1.0;
            }
        });
        let zero: VecFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
        SdeSpec {
            dim,
            drift: zero.clone(),
            diffusion: identity.clone(),
            inverse_diffusion: identity,
            drift_jacobian: Some(zero.clone()),
            diffusion_jacobian: Some(zero),
            constants: SdeConstants { k_b: 0.0, k_sigma: 0.0, m_sigma: 1.0, m_sigma_inv: 1.0, l_b: 0.0 },
            is_brownian: true,
        }
    }

    /// Driftless SDE with diagonal diffusion `σ_ii(x) = 1 + ε tanh(x_i)`.
    pub fn tanh_diagonal(dim: usize, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidProblem(format!(
                "tanh diffusion needs 0 <= eps < 1 to stay invertible, got {eps}"
            )));
        }
        let diffusion: VecFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = 1.0 + eps * x[i].tanh();
            }
        });
        let inverse: VecFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..dim {
                out[i * dim + i] = 1.0 / (1.0 + eps * x[i].tanh());
            }
        });
        let jacobian: VecFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..dim {
                let th = x[i].tanh();
                out[(i * dim + i) * dim + i] = eps * (1.0 - th * th);
            }
        });
        let zero: VecFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
        Ok(SdeSpec {
            dim,
            drift: zero.clone(),
            diffusion,
            inverse_diffusion: inverse,
            drift_jacobian: Some(zero),
            diffusion_jacobian: Some(jacobian),
            constants: SdeConstants {
                k_b: 0.0,
                k_sigma: eps,
                m_sigma: 1.0 + eps,
                m_sigma_inv: 1.0 / (1.0 - eps),
                l_b: 0.0,
            },
            is_brownian: false,
        })
    }
}

/// Structural constants of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConstants {
    pub k_fy: f64,
    pub k_fz: f64,
    /// Monotonicity constant: `⟨f(x,y,z) − f(x,y',z), y − y'⟩ ≤ −μ|y − y'|²`.
    pub mu: f64,
    pub m_f: f64,
    /// Polynomial growth degree in `x`.
    pub r: f64,
}

/// BSDE generator `f : ℝ^d × ℝ^{d'} × ℝ^{d'×d} → ℝ^{d'}`.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub dim: usize,
    pub d_prime: usize,
    pub f: GeneratorFn,
    pub constants: GeneratorConstants,
    /// The generator ignores `z`.
    pub y_only: bool,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("dim", &self.dim)
            .field("d_prime", &self.d_prime)
            .field("constants", &self.constants)
            .field("y_only", &self.y_only)
            .finish_non_exhaustive()
    }
}

impl GeneratorSpec {
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        (self.f)(x, y, z, out)
    }
}

/// Closed-form solution `(u, ū)` with `ū = ∇u σ`, plus the derivatives used
/// to build it when available.
#[derive(Clone)]
pub struct AnalyticSolution {
    pub u: VecFn,
    pub ubar: VecFn,
    /// `∂u_i/∂x_k` at `i*d + k`.
    pub grad: Option<VecFn>,
    /// `∂²u_i/∂x_j∂x_k` at `(i*d + j)*d + k`.
    pub hess: Option<VecFn>,
}

/// Free parameters of the randomized-time representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeParams {
    pub a: f64,
    pub a_tilde: f64,
    pub theta: f64,
    pub theta_tilde: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams { a: 2.0, a_tilde: 2.0, theta: 1.5, theta_tilde: 1.5 }
    }
}

impl SchemeParams {
    /// Hard requirements of the randomized representation: positive rates,
    /// `a > θ` and `ã > θ̃`.
    pub fn ensure_usable(&self) -> Result<()> {
        for (name, value) in self.named() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveRate { name, value });
            }
        }
        if self.a <= self.theta {
            return Err(Error::InvalidParams(format!("need a > theta, got a = {}, theta = {}", self.a, self.theta)));
        }
        if self.a_tilde <= self.theta_tilde {
            return Err(Error::InvalidParams(format!(
                "need a_tilde > theta_tilde, got a_tilde = {}, theta_tilde = {}",
                self.a_tilde, self.theta_tilde
            )));
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [("a", self.a), ("a_tilde", self.a_tilde), ("theta", self.theta), ("theta_tilde", self.theta_tilde)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
    /// `2μ − K_{f,z}²`; a non-positive margin is reported as a warning.
    pub monotonicity_margin: f64,
}

impl ValidationReport {
    /// True when all hard constraints hold (the margin is advisory).
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn margin_warning(&self) -> Option<String> {
        (self.monotonicity_margin <= 0.0)
            .then(|| format!("monotonicity margin 2*mu - K_fz^2 = {} is not positive", self.monotonicity_margin))
    }

    pub fn failed(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn validate_params(params: &SchemeParams, gen: &GeneratorSpec) -> Result<ValidationReport> {
    for (name, value) in params.named() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveRate { name, value });
        }
    }
    let c = &gen.constants;
    let mut checks = vec![ConstraintCheck {
        name: "positive rates".into(),
        passed: true,
        detail: format!(
            "a = {}, a_tilde = {}, theta = {}, theta_tilde = {}",
            params.a, params.a_tilde, params.theta, params.theta_tilde
        ),
    }];
    checks.push(ConstraintCheck {
        name: "a > theta".into(),
        passed: params.a > params.theta,
        detail: format!("{} > {}", params.a, params.theta),
    });
    checks.push(ConstraintCheck {
        name: "a_tilde > theta_tilde".into(),
        passed: params.a_tilde > params.theta_tilde,
        detail: format!("{} > {}", params.a_tilde, params.theta_tilde),
    });
    checks.push(ConstraintCheck {
        name: "0 <= mu <= K_fy".into(),
        passed: c.mu >= 0.0 && c.mu <= c.k_fy,
        detail: format!("mu = {}, K_fy = {}", c.mu, c.k_fy),
    });
    let indicator = if gen.d_prime > 1 || c.r > 0.0 { 1.0 } else { 0.0 };
    let a_floor = c.mu - 0.5 * c.k_fz * c.k_fz * indicator;
    checks.push(ConstraintCheck {
        name: "a > mu - K_fz^2/2 (d'>1 or r>0)".into(),
        passed: params.a > a_floor,
        detail: format!("{} > {}", params.a, a_floor),
    });
    Ok(ValidationReport { checks, monotonicity_margin: 2.0 * c.mu - c.k_fz * c.k_fz })
}

/// A fully specified problem.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub sde: SdeSpec,
    pub gen: GeneratorSpec,
    pub analytic: Option<AnalyticSolution>,
    /// Standard deviation of the isotropic Gaussian starting law `μ0`.
    pub mu0_std: f64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("sde", &self.sde)
            .field("gen", &self.gen)
            .field("analytic", &self.analytic.is_some())
            .field("mu0_std", &self.mu0_std)
            .finish()
    }
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.sde.dim
    }

    pub fn d_prime(&self) -> usize {
        self.gen.d_prime
    }

    /// Length of a flattened `(u, ū)` value.
    pub fn value_len(&self) -> usize {
        self.gen.d_prime * (1 + self.sde.dim)
    }

    /// Flattened `(u(x), ū(x))`.
    pub fn analytic_value(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let sol = self.analytic.as_ref().ok_or(Error::MissingAnalyticSolution)?;
        let dp = self.d_prime();
        let (u, ubar) = out.split_at_mut(dp);
        (sol.u)(x, u);
        (sol.ubar)(x, ubar);
        Ok(())
    }

    /// `f(x,u,ū) + b·∇u + ½Tr(∇²u σσᵀ)` for each component; zero for an exact
    /// analytic solution. Requires the stored derivatives.
    pub fn pde_residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let sol = self.analytic.as_ref().ok_or(Error::MissingAnalyticSolution)?;
        let (grad, hess) = match (&sol.grad, &sol.hess) {
            (Some(g), Some(h)) => (g, h),
            _ => return Err(Error::MissingAnalyticSolution),
        };
        let d = self.dim();
        let dp = self.d_prime();
        let mut u = vec![0.0; dp];
        let mut ubar = vec![0.0; dp * d];
        let mut g = vec![0.0; dp * d];
        let mut h = vec![0.0; dp * d * d];
        (sol.u)(x, &mut u);
        (sol.ubar)(x, &mut ubar);
        grad(x, &mut g);
        hess(x, &mut h);
        let mut f = vec![0.0; dp];
        self.gen.eval(x, &u, &ubar, &mut f);
        let mut sigma = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        (self.sde.diffusion)(x, &mut sigma);
        (self.sde.drift)(x, &mut b);
        let a_mat = sigma_sigma_t(&sigma, d);
        Ok((0..dp)
            .map(|i| {
                let drift: f64 = (0..d).map(|k| g[i * d + k] * b[k]).sum();
                let trace: f64 = (0..d * d).map(|jk| h[i * d * d + jk] * a_mat[jk]).sum();
                f[i] + drift + 0.5 * trace
            })
            .collect())
    }
}

fn sigma_sigma_t(sigma: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            out[j * d + k] = (0..d).map(|l| sigma[j * d + l] * sigma[k * d + l]).sum();
        }
    }
    out
}

/// Analytic ingredients of a manufactured solution.
#[derive(Clone)]
pub struct ManufacturedSolution {
    pub u: VecFn,
    pub grad_u: VecFn,
    pub hess_u: VecFn,
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

fn check_derivatives(sol: &ManufacturedSolution, d: usize, dp: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let mut u_plus = vec![0.0; dp];
    let mut u_minus = vec![0.0; dp];
    let mut g = vec![0.0; dp * d];
    let mut g_plus = vec![0.0; dp * d];
    let mut g_minus = vec![0.0; dp * d];
    let mut h = vec![0.0; dp * d * d];
    for _ in 0..8 {
        let x: Vec<f64> = (0..d).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        (sol.grad_u)(&x, &mut g);
        (sol.hess_u)(&x, &mut h);
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += FD_STEP;
            xm[k] -= FD_STEP;
            (sol.u)(&xp, &mut u_plus);
            (sol.u)(&xm, &mut u_minus);
            (sol.grad_u)(&xp, &mut g_plus);
            (sol.grad_u)(&xm, &mut g_minus);
            for i in 0..dp {
                let fd = (u_plus[i] - u_minus[i]) / (2.0 * FD_STEP);
                let exact = g[i * d + k];
                if (fd - exact).abs() > FD_TOL * (1.0 + exact.abs()) {
                    return Err(Error::InconsistentDerivatives(format!(
                        "du_{i}/dx_{k} at {x:?}: analytic {exact}, finite difference {fd}"
                    )));
                }
                for j in 0..d {
                    let fd = (g_plus[i * d + j] - g_minus[i * d + j]) / (2.0 * FD_STEP);
                    let exact = h[(i * d + j) * d + k];
                    if (fd - exact).abs() > FD_TOL * (1.0 + exact.abs()) {
                        return Err(Error::InconsistentDerivatives(format!(
                            "d2u_{i}/dx_{j}dx_{k} at {x:?}: analytic {exact}, finite difference {fd}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Builds `f = f0 − ½Tr(∇²u σσᵀ) − b·∇u − f0(x, u, ∇u σ)` so that `u` solves
/// the elliptic equation `𝓛u + f(x, u, ∇u σ) = 0`.
pub fn manufacture_problem(
    name: &str,
    solution: ManufacturedSolution,
    f0: GeneratorSpec,
    sde: SdeSpec,
    mu0_std: f64,
) -> Result<Problem> {
    let d = sde.dim;
    let dp = f0.d_prime;
    if f0.dim != d {
        return Err(Error::InvalidProblem(format!("generator dimension {} != SDE dimension {}", f0.dim, d)));
    }
    check_derivatives(&solution, d, dp)?;

    let brownian = sde.is_brownian;
    let ManufacturedSolution { u, grad_u, hess_u } = solution;

    let ubar: VecFn = {
        let grad_u = grad_u.clone();
        let diffusion = sde.diffusion.clone();
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            if brownian {
                grad_u(x, out);
                return;
            }
            let mut g = scratch(dp * d);
            let mut s = scratch(d * d);
            grad_u(x, &mut g);
            diffusion(x, &mut s);
            for i in 0..dp {
                for j in 0..d {
                    out[i * d + j] = (0..d).map(|k| g[i * d + k] * s[k * d + j]).sum();
                }
            }
        })
    };

    let f: GeneratorFn = {
        let u = u.clone();
        let grad_u = grad_u.clone();
        let hess_u = hess_u.clone();
        let ubar = ubar.clone();
        let diffusion = sde.diffusion.clone();
        let drift = sde.drift.clone();
        let f0 = f0.f.clone();
        Arc::new(move |x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]| {
            let mut ux = scratch(dp);
            let mut g = scratch(dp * d);
            let mut h = scratch(dp * d * d);
            let mut zx = scratch(dp * d);
            let mut f_at_u = scratch(dp);
            let mut b = scratch(d);
            u(x, &mut ux);
            grad_u(x, &mut g);
            hess_u(x, &mut h);
            ubar(x, &mut zx);
            drift(x, &mut b);
            f0(x, &ux, &zx, &mut f_at_u);
            f0(x, y, z, out);
            let aa: Option<Scratch> = (!brownian).then(|| {
                let mut s = scratch(d * d);
                diffusion(x, &mut s);
                let mut aa = scratch(d * d);
                for j in 0..d {
                    for k in 0..d {
                        aa[j * d + k] = (0..d).map(|l| s[j * d + l] * s[k * d + l]).sum();
                    }
                }
                aa
            });
            for i in 0..dp {
                let hi = &h[i * d * d..(i + 1) * d * d];
                let trace: f64 = match &aa {
                    None => (0..d).map(|j| hi[j * d + j]).sum(),
                    Some(aa) => hi.iter().zip(aa.iter()).map(|(p, q)| p * q).sum(),
                };
                let drift_term: f64 = (0..d).map(|k| g[i * d + k] * b[k]).sum();
                out[i] += -0.5 * trace - drift_term - f_at_u[i];
            }
        })
    };

    let gen = GeneratorSpec { dim: d, d_prime: dp, f, constants: f0.constants, y_only: f0.y_only };
    Ok(Problem {
        name: name.to_string(),
        sde,
        gen,
        analytic: Some(AnalyticSolution { u, ubar, grad: Some(grad_u), hess: Some(hess_u) }),
        mu0_std,
    })
}

/// Names accepted by [`problem_by_name`].
pub const PROBLEM_NAMES: [&str; 3] = ["arctan-const-sigma", "arctan-tanh-sigma", "linear-constant"];

/// Default starting-law standard deviation.
pub const DEFAULT_MU0_STD: f64 = 2.0;

fn take(overrides: &BTreeMap<String, f64>, allowed: &[&str], key: &str, default: f64) -> Result<f64> {
    debug_assert!(allowed.contains(&key));
    let _ = allowed;
    Ok(overrides.get(key).copied().unwrap_or(default))
}

fn reject_unknown(overrides: &BTreeMap<String, f64>, allowed: &[&str], problem: &str) -> Result<()> {
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::InvalidProblem(format!(
                "unknown override `{key}` for `{problem}` (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

/// `f0(x, y, z) = −c y + cos(y + |x|) + K_z sin(|z|)`, scalar `y`.
pub fn arctan_f0(dim: usize, c: f64, kz: f64) -> GeneratorSpec {
    let f: GeneratorFn = Arc::new(move |x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]| {
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        out[0] = -c * y[0] + (y[0] + xn).cos() + kz * zn.sin();
    });
    GeneratorSpec {
        dim,
        d_prime: 1,
        f,
        constants: GeneratorConstants { k_fy: c + 1.0, k_fz: kz, mu: c - 1.0, m_f: c.max(kz).max(1.0), r: 0.0 },
        y_only: kz == 0.0,
    }
}

/// `u(x) = (1/d) Σ arctan(x_i)` with its gradient and Hessian.
pub fn arctan_solution(dim: usize) -> ManufacturedSolution {
    let inv_d = 1.0 / dim as f64;
    ManufacturedSolution {
        u: Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = inv_d * x.iter().map(|v| v.atan()).sum::<f64>();
        }),
        grad_u: Arc::new(move |x: &[f64], out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = inv_d / (1.0 + v * v);
            }
        }),
        hess_u: Arc::new(move |x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for (k, v) in x.iter().enumerate() {
                let q = 1.0 + v * v;
                out[k * dim + k] = -2.0 * inv_d * v / (q * q);
            }
        }),
    }
}

/// `f(x, y, z) = −μ y + c0` with the constant solution `u ≡ c0/μ`, `ū ≡ 0`.
pub fn linear_constant(dim: usize, mu: f64, c0: f64, mu0_std: f64) -> Result<Problem> {
    if !(mu > 0.0) {
        return Err(Error::InvalidProblem(format!("linear-constant needs mu > 0, got {mu}")));
    }
    let level = c0 / mu;
    let f: GeneratorFn = Arc::new(move |_x: &[f64], y: &[f64], _z: &[f64], out: &mut [f64]| {
        out[0] = -mu * y[0] + c0;
    });
    let zero: VecFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
    Ok(Problem {
        name: "linear-constant".into(),
        sde: SdeSpec::brownian(dim),
        gen: GeneratorSpec {
            dim,
            d_prime: 1,
            f,
            constants: GeneratorConstants { k_fy: mu, k_fz: 0.0, mu, m_f: mu.max(c0.abs() / 2.0), r: 0.0 },
            y_only: true,
        },
        analytic: Some(AnalyticSolution {
            u: Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = level),
            ubar: zero.clone(),
            grad: Some(zero.clone()),
            hess: Some(zero),
        }),
        mu0_std,
    })
}

/// Looks up a registered problem and applies numeric overrides.
///
/// | name | overrides (defaults) |
/// |------|----------------------|
/// | `arctan-const-sigma` | `c` (2), `kz` (0.5), `mu0_std` (2) |
/// | `arctan-tanh-sigma` | `c` (2), `kz` (0.1), `eps` (0.9), `mu0_std` (2) |
/// | `linear-constant` | `mu` (2), `c0` (3), `mu0_std` (2) |
pub fn problem_by_name(name: &str, dim: usize, overrides: &BTreeMap<String, f64>) -> Result<Problem> {
    if dim == 0 {
        return Err(Error::InvalidProblem("dimension must be at least 1".into()));
    }
    match name {
        "arctan-const-sigma" => {
            const KEYS: &[&str] = &["c", "kz", "mu0_std"];
            reject_unknown(overrides, KEYS, name)?;
            let c = take(overrides, KEYS, "c", 2.0)?;
            let kz = take(overrides, KEYS, "kz", 0.5)?;
            let std = take(overrides, KEYS, "mu0_std", DEFAULT_MU0_STD)?;
            manufacture_problem(name, arctan_solution(dim), arctan_f0(dim, c, kz), SdeSpec::brownian(dim), std)
        }
        "arctan-tanh-sigma" => {
            const KEYS: &[&str] = &["c", "kz", "eps", "mu0_std"];
            reject_unknown(overrides, KEYS, name)?;
            let c = take(overrides, KEYS, "c", 2.0)?;
            let kz = take(overrides, KEYS, "kz", 0.1)?;
            let eps = take(overrides, KEYS, "eps", 0.9)?;
            let std = take(overrides, KEYS, "mu0_std", DEFAULT_MU0_STD)?;
            let sde = SdeSpec::tanh_diagonal(dim, eps)?;
            manufacture_problem(name, arctan_solution(dim), arctan_f0(dim, c, kz), sde, std)
        }
        "linear-constant" => {
            const KEYS: &[&str] = &["mu", "c0", "mu0_std"];
            reject_unknown(overrides, KEYS, name)?;
            let mu = take(overrides, KEYS, "mu", 2.0)?;
            let c0 = take(overrides, KEYS, "c0", 3.0)?;
            let std = take(overrides, KEYS, "mu0_std", DEFAULT_MU0_STD)?;
            linear_constant(dim, mu, c0, std)
        }
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}
