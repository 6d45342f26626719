//! Contraction constants of the fixed-point map and the bounds that control
//! them.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedpoint::rho;
use crate::model::{GeneratorSpec, Problem, SchemeParams};
use crate::simulate::{point_key, sample_horizons, RngStream};

/// `√(K² − 2μa + a²)`, the Lipschitz constant of `y ↦ f(y) + a y`.
pub fn lipschitz_shift(k: f64, mu: f64, a: f64) -> f64 {
    (k * k - 2.0 * mu * a + a * a).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionInputs {
    pub k_fy: f64,
    pub k_fz: f64,
    pub mu: f64,
    pub y_only: bool,
    pub params: SchemeParams,
    pub c_inf: f64,
    pub c_tilde_inf: f64,
}

impl ContractionInputs {
    pub fn from_generator(gen: &GeneratorSpec, params: &SchemeParams, c_inf: f64, c_tilde_inf: f64) -> Self {
        let c = gen.constants;
        ContractionInputs {
            k_fy: c.k_fy,
            k_fz: c.k_fz,
            mu: c.mu,
            y_only: gen.y_only,
            params: *params,
            c_inf,
            c_tilde_inf,
        }
    }

    fn shifts(&self) -> (f64, f64) {
        (lipschitz_shift(self.k_fy, self.mu, self.params.a), lipschitz_shift(self.k_fy, self.mu, self.params.a_tilde))
    }
}

/// Contraction constant in the weighted sup norm.
pub fn kappa_infinity(inputs: &ContractionInputs) -> f64 {
    let (sa, sat) = inputs.shifts();
    if inputs.y_only {
        return inputs.c_inf * sa;
    }
    let first = inputs.c_inf * sa.max(inputs.k_fz);
    let second = inputs.c_tilde_inf * sat.max(inputs.k_fz);
    first.hypot(second)
}

/// Integrability constants entering the `L_p(μ0)` contraction constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpConstants {
    pub c_p: f64,
    pub c_tilde_p: f64,
    pub c_tilde_p_bis: f64,
}

/// Contraction constant in `L_p(μ0)`.
pub fn kappa_p(inputs: &ContractionInputs, p: f64, lp: &LpConstants) -> Result<f64> {
    let a = inputs.params.a;
    let theta = inputs.params.theta;
    if !(p > 1.0) || a * p <= theta {
        return Err(Error::InvalidP { p });
    }
    let (sa, sat) = inputs.shifts();
    let time = ((p - 1.0) / (a * p - theta)).powf(p - 1.0) / theta;
    if inputs.y_only {
        return Ok((time * (lp.c_p * sa).powf(p)).powf(1.0 / p));
    }
    let first = time * lp.c_p.powf(p) * sa.max(inputs.k_fz).powf(p);
    let second = lp.c_tilde_p_bis * lp.c_tilde_p.powf(p) * sat.max(inputs.k_fz).powf(p);
    Ok((first + second).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CConstantEstimate {
    pub c_inf: f64,
    pub c_inf_se: f64,
    pub c_tilde_inf: f64,
    pub c_tilde_inf_se: f64,
    /// Number of probe points; the estimates are maxima over the probes and
    /// thus lower estimates of the supremum over `ℝ^d`.
    pub probes: usize,
}

const C_STREAM_TAG: u64 = 0x6363_6f6e;

fn mean_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Monte Carlo estimates of `c∞` and `c̃∞` as maxima over `probes`.
pub fn estimate_c_constants(
    problem: &Problem,
    params: &SchemeParams,
    r_prime: f64,
    probes: &[Vec<f64>],
    m: usize,
    dt: f64,
    seed: u64,
) -> Result<CConstantEstimate> {
    params.ensure_usable()?;
    if probes.is_empty() {
        return Err(Error::InvalidConfig("need at least one probe point".into()));
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {m}")));
    }
    let weight = (PI / params.theta_tilde).sqrt();
    let mut best: Option<CConstantEstimate> = None;
    for x in probes {
        let mut rng = RngStream::keyed(seed, &[C_STREAM_TAG, point_key(x)]);
        let rho_x = rho(x, r_prime);
        let (mut s1, mut q1, mut s2, mut q2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let fk = sample_horizons(&problem.sde, params, x, dt, &mut rng)?;
            let a = (-(params.a - params.theta) * fk.e_time).exp() / params.theta * rho(&fk.x_at_e, r_prime) / rho_x;
            let u_norm = fk.malliavin_at_g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let b = weight
                * fk.g_time.sqrt()
                * (-(params.a_tilde - params.theta_tilde) * fk.g_time).exp()
                * u_norm
                * rho(&fk.x_at_g, r_prime)
                / rho_x;
            s1 += a;
            q1 += a * a;
            s2 += b;
            q2 += b * b;
        }
        let (c1, se1) = mean_se(s1, q1, m);
        let (c2, se2) = mean_se(s2, q2, m);
        let e = best.get_or_insert(CConstantEstimate {
            c_inf: c1,
            c_inf_se: se1,
            c_tilde_inf: c2,
            c_tilde_inf_se: se2,
            probes: probes.len(),
        });
        if c1 > e.c_inf {
            e.c_inf = c1;
            e.c_inf_se = se1;
        }
        if c2 > e.c_tilde_inf {
            e.c_tilde_inf = c2;
            e.c_tilde_inf_se = se2;
        }
    }
    Ok(best.expect("probes is non-empty"))
}

/// Closed forms for Brownian motion with `r' = 0`: `c∞ = 1/a` and
/// `c̃∞ = √(2/ã)·E|Z|/√(2/π)` with `Z` standard normal in `ℝ^d`.
pub fn brownian_c_constants(params: &SchemeParams, dim: usize) -> (f64, f64) {
    let mean_norm = chi_mean(dim);
    (1.0 / params.a, (PI / params.a_tilde).sqrt() * mean_norm)
}

/// `E|Z|` for `Z ~ N(0, I_d)`.
fn chi_mean(dim: usize) -> f64 {
    // Ratio Γ((d+1)/2)/Γ(d/2) via the recurrence r(d+1) = (d/2)/r(d).
    let mut r = (1.0 / PI).sqrt(); // d = 1: Γ(1)/Γ(1/2)
    for k in 1..dim {
        r = (k as f64 / 2.0) / r;
    }
    std::f64::consts::SQRT_2 * r
}

/// Growth constants of `X` and `∇X`: `E|X_t|^{2r'}^{1/2} ≤ (c1 + c2|x|^{r'})e^{c3 t}`
/// and `E‖∇X_t‖²^{1/2} ≤ c4 e^{c5 t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

/// Upper bounds on `(c∞, c̃∞)` from the growth constants.
pub fn bound_c_general(
    g: &GrowthConstants,
    a: f64,
    a_tilde: f64,
    m_sigma: f64,
    m_sigma_inv: f64,
) -> Result<(f64, f64)> {
    if a <= g.c3 {
        return Err(Error::ConstraintViolated(format!("need a > c3, got a = {a}, c3 = {}", g.c3)));
    }
    if a_tilde <= g.c3 + g.c5 {
        return Err(Error::ConstraintViolated(format!(
            "need a_tilde > c3 + c5, got a_tilde = {a_tilde}, c3 + c5 = {}",
            g.c3 + g.c5
        )));
    }
    let c_inf = (1.0 / a + g.c1 / (a - g.c3)).max(g.c2 / (a - g.c3));
    let s5 = (a_tilde - g.c5).sqrt();
    let s35 = (a_tilde - g.c5 - g.c3).sqrt();
    let c_tilde = m_sigma * m_sigma_inv * g.c4 * PI.sqrt() * (1.0 / s5 + g.c1 / s35).max(g.c2 / s35);
    Ok((c_inf, c_tilde))
}

const QUAD_REL_TOL: f64 = 1e-8;

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, what: &str) -> Result<f64> {
    // First pass fixes the scale for the absolute target.
    let rough = quadrature::integrate(&f, a, b, 1e-6).integral.abs().max(1e-300);
    let out = quadrature::integrate(&f, a, b, 1e-3 * QUAD_REL_TOL * rough);
    if !out.integral.is_finite() || out.error_estimate > QUAD_REL_TOL * out.integral.abs() {
        return Err(Error::QuadratureFailure(format!(
            "{what}: estimate {} with error {}",
            out.integral, out.error_estimate
        )));
    }
    Ok(out.integral)
}

/// `∫_1^∞ g(t) dt` through `t = 1 + s/(1 − s)`.
fn integrate_tail(g: impl Fn(f64) -> f64, what: &str) -> Result<f64> {
    integrate(
        |s| {
            let one_minus = 1.0 - s;
            let t = 1.0 + s / one_minus;
            g(t) / (one_minus * one_minus)
        },
        0.0,
        1.0,
        what,
    )
}

/// `E(1 + |Y|)^k` for `Y ~ N(0, I_d)` by radial quadrature.
pub fn gaussian_radial_moment(k: f64, dim: usize) -> Result<f64> {
    let half_d = dim as f64 / 2.0;
    let log_norm = (half_d - 1.0) * std::f64::consts::LN_2 + ln_gamma_half_integer(dim);
    integrate(
        |r| {
            if r <= 0.0 {
                return if dim == 1 { (-log_norm).exp() } else { 0.0 };
            }
            ((1.0 + r).ln() * k + (dim as f64 - 1.0) * r.ln() - 0.5 * r * r - log_norm).exp()
        },
        0.0,
        40.0 + k.max(0.0).sqrt() * 4.0,
        "radial Gaussian moment",
    )
}

/// `ln Γ(d/2)` for a positive integer `d`.
fn ln_gamma_half_integer(dim: usize) -> f64 {
    // Γ(1/2) = √π, Γ(1) = 1, Γ(x+1) = xΓ(x).
    let (mut x, mut acc) = if dim % 2 == 1 { (0.5, 0.5 * PI.ln()) } else { (1.0, 0.0) };
    while x < dim as f64 / 2.0 - 1e-12 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Time integrals `∫(t∨1)^{k/2} θe^{−θt}dt` and
/// `∫(t∨1)^{k/2} t^{−1/2} √(θ̃/π) e^{−θ̃t} dt`.
pub fn brownian_time_integrals(k: f64, theta: f64, theta_tilde: f64) -> Result<(f64, f64)> {
    let head = integrate(|t| theta * (-theta * t).exp(), 0.0, 1.0, "exponential head")?;
    let tail = integrate_tail(|t| (0.5 * k * t.ln() - theta * t).exp() * theta, "exponential tail")?;
    let norm = (theta_tilde / PI).sqrt();
    // t = s² removes the t^{-1/2} singularity at the origin.
    let head_tilde = integrate(|s| 2.0 * norm * (-theta_tilde * s * s).exp(), 0.0, 1.0, "gamma head")?;
    let tail_tilde = integrate_tail(|t| norm * ((0.5 * k - 0.5) * t.ln() - theta_tilde * t).exp(), "gamma tail")?;
    Ok((head + tail, head_tilde + tail_tilde))
}

/// `(c_p, c̃_p)` for `X = x + W` with `k = p·r + d + 1`.
pub fn brownian_cp_constants(p: f64, r: f64, dim: usize, theta: f64, theta_tilde: f64) -> Result<(f64, f64)> {
    if !(p > 1.0) {
        return Err(Error::InvalidP { p });
    }
    let k = p * r + dim as f64 + 1.0;
    let (t1, t2) = brownian_time_integrals(k, theta, theta_tilde)?;
    let y = gaussian_radial_moment(k, dim)?;
    Ok(((t1 * y).powf(1.0 / p), (t2 * y).powf(1.0 / p)))
}

/// Upper bound on `c̃_{p,bis}` from the tangent-process growth constants.
pub fn tilde_cp_bis_bound(
    p: f64,
    a_tilde: f64,
    theta_tilde: f64,
    c4: f64,
    c5: f64,
    m_sigma: f64,
    m_sigma_inv: f64,
) -> Result<f64> {
    if !(p >= 2.0) {
        return Err(Error::InvalidP { p });
    }
    let gap = a_tilde * p - theta_tilde - c5 * p;
    if !(gap > 0.0) {
        return Err(Error::ConstraintViolated(format!("need a_tilde*p - theta_tilde - c5*p > 0, got {gap}")));
    }
    let half = (p - 1.0) / 2.0;
    Ok((PI.sqrt() * m_sigma * m_sigma_inv * c4).powf(p) * (p - 1.0).powf(half) / (theta_tilde.sqrt() * gap.powf(half)))
}

/// Sufficient contraction bound for `a = ã = K_{f,y}`:
/// `√(c∞² + c̃∞²)(√(2δK_{f,y}) + K_{f,z})` with `δ = K_{f,y} − μ`.
pub fn equal_rate_contraction_check(k_fy: f64, mu: f64, k_fz: f64, c_inf: f64, c_tilde_inf: f64) -> (f64, bool) {
    let delta = (k_fy - mu).max(0.0);
    let bound = c_inf.hypot(c_tilde_inf) * ((2.0 * delta * k_fy).sqrt() + k_fz);
    (bound, bound < 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::problem_by_name;
    use std::collections::BTreeMap;

    fn inputs(k_fy: f64, k_fz: f64, mu: f64, a: f64, c_inf: f64, c_tilde_inf: f64) -> ContractionInputs {
        ContractionInputs {
            k_fy,
            k_fz,
            mu,
            y_only: false,
            params: SchemeParams { a, a_tilde: a, theta: 1.5, theta_tilde: 1.5 },
            c_inf,
            c_tilde_inf,
        }
    }

    #[test]
    fn shift_examples() {
        assert_eq!(lipschitz_shift(1.0, 1.0, 1.0), 0.0);
        assert_eq!(lipschitz_shift(3.0, 1.0, 2.0), 3.0);
        assert_eq!(lipschitz_shift(2.5, 1.0, 0.0), 2.5);
    }

    #[test]
    fn kappa_infinity_examples() {
        assert_eq!(kappa_infinity(&inputs(2.0, 0.0, 2.0, 2.0, 0.5, 1.0)), 0.0);
        // Default experiment: √(0.25·9 + 1·9).
        let k = kappa_infinity(&inputs(3.0, 0.5, 1.0, 2.0, 0.5, 1.0));
        assert_eq!(k, 11.25f64.sqrt());
        let y_only = ContractionInputs { y_only: true, ..inputs(3.0, 0.0, 1.0, 2.0, 0.5, 1.0) };
        assert_eq!(kappa_infinity(&y_only), 3.0 / 2.0);
    }

    #[test]
    fn kappa_p_examples() {
        let zero = LpConstants { c_p: 0.0, c_tilde_p: 1.0, c_tilde_p_bis: 0.0 };
        assert_eq!(kappa_p(&inputs(0.0, 0.0, 0.0, 2.0, 1.0, 1.0), 2.0, &zero).unwrap(), 0.0);

        let a = 1.5;
        let inp = ContractionInputs {
            params: SchemeParams { a, a_tilde: 2.5, theta: a, theta_tilde: 1.5 },
            ..inputs(3.0, 0.0, 1.0, a, 1.0, 1.0)
        };
        let lp = LpConstants { c_p: 1.0, c_tilde_p: 1.0, c_tilde_p_bis: 1.0 };
        let sa = lipschitz_shift(3.0, 1.0, a);
        let sat = lipschitz_shift(3.0, 1.0, 2.5);
        let expected = (sa * sa / (a * a) + sat * sat).sqrt();
        assert!((kappa_p(&inp, 2.0, &lp).unwrap() - expected).abs() < 1e-14);

        let y_only = ContractionInputs { y_only: true, ..inputs(3.0, 0.7, 1.0, 2.0, 1.0, 1.0) };
        let lp = LpConstants { c_p: 1.3, c_tilde_p: 5.0, c_tilde_p_bis: 5.0 };
        let p: f64 = 3.0;
        let expected = (1.0 / 1.5f64).powf(1.0 / p) * ((p - 1.0) / (2.0 * p - 1.5)).powf((p - 1.0) / p) * 1.3 * 3.0;
        assert!((kappa_p(&y_only, p, &lp).unwrap() - expected).abs() < 1e-13);

        assert_eq!(kappa_p(&inputs(3.0, 0.0, 1.0, 0.5, 1.0, 1.0), 2.0, &lp), Err(Error::InvalidP { p: 2.0 }));
    }

    #[test]
    fn c_constants_match_brownian_closed_forms() {
        let p = problem_by_name("arctan-const-sigma", 1, &BTreeMap::new()).unwrap();
        let params = SchemeParams::default();
        let est = estimate_c_constants(&p, &params, 0.0, &[vec![0.0]], 100_000, 0.01, 1).unwrap();
        let (c, ct) = brownian_c_constants(&params, 1);
        assert_eq!(c, 0.5);
        assert!((ct - 1.0).abs() < 1e-14);
        assert!((est.c_inf - c).abs() < 3.0 * est.c_inf_se, "{est:?}");
        assert!((est.c_tilde_inf - ct).abs() < 3.0 * est.c_tilde_inf_se, "{est:?}");
        let single = estimate_c_constants(&p, &params, 0.0, &[vec![0.0], vec![0.0]], 1000, 0.01, 1).unwrap();
        let one = estimate_c_constants(&p, &params, 0.0, &[vec![0.0]], 1000, 0.01, 1).unwrap();
        assert_eq!(single.c_inf, one.c_inf);
    }

    #[test]
    fn chi_mean_values() {
        assert!((chi_mean(1) - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!((chi_mean(2) - (PI / 2.0).sqrt()).abs() < 1e-15);
        assert!((chi_mean(3) - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn general_bounds() {
        let g = GrowthConstants { c1: 0.0, c2: 1.0, c3: 1.0, c4: 0.0, c5: 0.0 };
        let (c, ct) = bound_c_general(&g, 3.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(c, 0.5);
        assert_eq!(ct, 0.0);
        assert!(matches!(bound_c_general(&g, 1.0, 3.0, 1.0, 1.0), Err(Error::ConstraintViolated(_))));
    }

    #[test]
    fn cp_quadrature_matches_gaussian_moments() {
        // k = 2 (r = 0, d = 1, p = 2): ∫(t∨1)θe^{−θt} = 1 + e^{−θ}/θ and E(1+|Z|)² = 2 + 2√(2/π).
        let (c2, _) = brownian_cp_constants(2.0, 0.0, 1, 1.0, 1.5).unwrap();
        let exact = ((1.0 + (-1.0f64).exp()) * (2.0 + 2.0 * (2.0 / PI).sqrt())).sqrt();
        assert!((c2 / exact - 1.0).abs() < 1e-6, "{c2} vs {exact}");
        // k = 3: E(1+|Z|)³ = 1 + 3√(2/π) + 3 + 2√(2/π).
        let m3 = gaussian_radial_moment(3.0, 1).unwrap();
        let exact = 4.0 + 5.0 * (2.0 / PI).sqrt();
        assert!((m3 / exact - 1.0).abs() < 1e-6);
        // d = 3, k = 2: E(1+|Y|)² = 1 + 2E|Y| + 3.
        let m = gaussian_radial_moment(2.0, 3).unwrap();
        assert!((m / (4.0 + 2.0 * chi_mean(3)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn large_theta_limit() {
        let (t1, _) = brownian_time_integrals(3.0, 1e3, 1.5).unwrap();
        assert!((t1 - 1.0).abs() < 0.01);
    }

    #[test]
    fn cp_integrands_are_finite() {
        for k in 2..=20 {
            let (c, ct) = brownian_cp_constants(2.0, (k as f64 - 2.0) / 2.0, 1, 1.5, 1.5).unwrap();
            assert!(c.is_finite() && ct.is_finite(), "k = {k}");
        }
    }

    #[test]
    fn tilde_cp_bis_examples() {
        assert_eq!(tilde_cp_bis_bound(2.0, 2.0, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap(), 0.0);
        let v = tilde_cp_bis_bound(2.0, 2.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((v - PI / 3f64.sqrt()).abs() < 1e-14);
        assert!(matches!(tilde_cp_bis_bound(2.0, 0.5, 1.0, 1.0, 0.0, 1.0, 1.0), Err(Error::ConstraintViolated(_))));
    }

    #[test]
    fn equal_rate_bound() {
        assert_eq!(equal_rate_contraction_check(2.0, 2.0, 0.0, 0.5, 1.0), (0.0, true));
        let (b, ok) = equal_rate_contraction_check(3.0, 1.0, 0.5, 0.5, 1.0);
        assert!((b - 1.25f64.sqrt() * (12f64.sqrt() + 0.5)).abs() < 1e-14);
        assert!((b - 4.43).abs() < 0.01 && !ok);
        let (b2, _) = equal_rate_contraction_check(3.0, 1.0, 0.5, 1.0, 2.0);
        assert!((b2 - 2.0 * b).abs() < 1e-14);
    }
}
