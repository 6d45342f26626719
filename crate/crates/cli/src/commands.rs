use std::collections::BTreeMap;

use infbsde::analysis::{
    brownian_c_constants, brownian_cp_constants, equal_rate_contraction_check, estimate_c_constants, kappa_infinity,
    kappa_p, tilde_cp_bis_bound, ContractionInputs, LpConstants,
};
use infbsde::grid::GridFunction;
use infbsde::model::{validate_params, Problem, SchemeParams};
use infbsde::nn_schemes::{contraction_nn_solve_with, direct_nn_solve_with, DirectConfig, NnPicardConfig, NnTraceRow};
use infbsde::picard_grid::{
    node_error_columns, rate_samples, rate_study_with, solve_with, GridSolveConfig, IterationReport,
};
use infbsde::simulate::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::ProblemSelection;
use crate::output::{num, opt, OutDir};
use crate::svg::{Axis, BoxGlyph, Chart, Style};
use crate::CliError;

fn warn_on_params(problem: &Problem, params: &SchemeParams) {
    if let Ok(report) = validate_params(params, &problem.gen) {
        for c in report.failed() {
            eprintln!("warning: constraint {} fails: {}", c.name, c.detail);
        }
        if let Some(w) = report.margin_warning() {
            eprintln!("warning: {w}");
        }
    }
}

pub fn grid_solve(problem: &Problem, cfg: &GridSolveConfig, out: &OutDir) -> Result<(), CliError> {
    warn_on_params(problem, &cfg.params);
    let result = solve_with(problem, cfg, |r| {
        eprintln!(
            "iteration {:>3}: sup_err_u {} sup_err_ubar {} ({:.2}s)",
            r.n,
            opt(r.sup_err_u),
            opt(r.sup_err_ubar),
            r.seconds
        )
    })?;
    write_iterations(out, &result.reports)?;
    write_solution(out, problem, &result.solution)?;
    if problem.analytic.is_some() {
        let chart =
            Chart::new("Grid Picard iterations", Axis::linear("iteration"), Axis::log("sup error (inner nodes)"))
                .with_series(
                    "u",
                    result.reports.iter().filter_map(|r| Some((r.n as f64, r.sup_err_u?))).collect(),
                    Style::Line,
                )
                .with_series(
                    "ubar",
                    result.reports.iter().filter_map(|r| Some((r.n as f64, r.sup_err_ubar?))).collect(),
                    Style::Line,
                );
        out.write("errors_vs_iteration.svg", &chart.render())?;
    }
    Ok(())
}

fn write_iterations(out: &OutDir, reports: &[IterationReport]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> =
        reports.iter().map(|r| vec![r.n.to_string(), opt(r.sup_err_u), opt(r.sup_err_ubar), num(r.seconds)]).collect();
    out.csv("iterations.csv", &["n", "sup_err_u", "sup_err_ubar", "seconds"], &rows)
}

fn write_solution(out: &OutDir, problem: &Problem, f: &GridFunction) -> Result<(), CliError> {
    let cols = node_error_columns(problem, f);
    let extra: Vec<(&str, Vec<f64>)> = cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
    let path = out.path("grid_solution.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    f.write_csv(std::io::BufWriter::new(file), &extra)?;
    Ok(())
}

fn write_trace(out: &OutDir, trace: &[NnTraceRow], title: &str, index_name: &str) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| vec![r.index.to_string(), num(r.loss), opt(r.rel_err_u), opt(r.rel_err_ubar), num(r.seconds)])
        .collect();
    out.csv("nn_trace.csv", &[index_name, "loss", "du", "dubar", "seconds"], &rows)?;
    if trace.iter().any(|r| r.rel_err_u.is_some()) {
        let chart = Chart::new(title, Axis::linear(index_name), Axis::log("relative L2 error"))
            .with_series("u", trace.iter().filter_map(|r| Some((r.index as f64, r.rel_err_u?))).collect(), Style::Line)
            .with_series(
                "ubar",
                trace.iter().filter_map(|r| Some((r.index as f64, r.rel_err_ubar?))).collect(),
                Style::Line,
            );
        out.write("errors_vs_iteration.svg", &chart.render())?;
    }
    Ok(())
}

fn log_row(label: &str, r: &NnTraceRow) {
    eprintln!(
        "{label} {:>3}: loss {:.5} du {} dubar {} ({:.2}s)",
        r.index,
        r.loss,
        opt(r.rel_err_u),
        opt(r.rel_err_ubar),
        r.seconds
    );
}

pub fn nn_picard(problem: &Problem, cfg: &NnPicardConfig, out: &OutDir) -> Result<(), CliError> {
    warn_on_params(problem, &cfg.params);
    let mut io_err = None;
    let result = contraction_nn_solve_with(problem, cfg, |r, net| {
        log_row("iteration", r);
        if let Err(e) = out.write(&format!("net_iter_{}.txt", r.index), &net.to_checkpoint()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write_trace(out, &result.trace, "NN Picard iterations", "iteration")
}

pub fn nn_direct(problem: &Problem, cfg: &DirectConfig, out: &OutDir) -> Result<(), CliError> {
    warn_on_params(problem, &cfg.params);
    let mut io_err = None;
    let result = direct_nn_solve_with(problem, cfg, |r, net| {
        log_row("epoch", r);
        if let Err(e) = out.write(&format!("net_epoch_{}.txt", r.index), &net.to_checkpoint()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write_trace(out, &result.trace, "NN direct scheme", "epoch")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateStudyRun {
    /// Copied into `grid.seed`.
    pub seed: u64,
    /// `M = k·Ñ⁴/R⁴`.
    pub k: f64,
    pub ntildes: Vec<usize>,
    pub grid: GridSolveConfig,
}

impl Default for RateStudyRun {
    fn default() -> Self {
        RateStudyRun { seed: 0, k: 200.0, ntildes: vec![5, 8, 12, 16, 20], grid: GridSolveConfig::default() }
    }
}

impl RateStudyRun {
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.grid.seed = self.seed;
        self.grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.k > 0.0) || self.ntildes.is_empty() || self.ntildes.contains(&0) {
            return Err(CliError::Config("rate study needs k > 0 and a non-empty list of positive ntildes".into()));
        }
        Ok(self)
    }
}

pub fn rate_study(problem: &Problem, run: &RateStudyRun, out: &OutDir) -> Result<(), CliError> {
    warn_on_params(problem, &run.grid.params);
    for &n in &run.ntildes {
        eprintln!("ntilde {n}: M = {}", rate_samples(run.k, n, run.grid.radius));
    }
    let study = rate_study_with(problem, &run.grid, &run.ntildes, run.k, |p| {
        eprintln!(
            "ntilde {:>3}: sup_err_u {} sup_err_ubar {} ({:.1}s)",
            p.n_half,
            num(p.sup_err_u),
            num(p.sup_err_ubar),
            p.seconds
        )
    })?;
    let rows: Vec<Vec<String>> = study
        .points
        .iter()
        .map(|p| vec![p.n_half.to_string(), p.samples.to_string(), num(p.sup_err_u), num(p.sup_err_ubar)])
        .collect();
    out.csv("rate_study.csv", &["ntilde", "M", "sup_err_u", "sup_err_ubar"], &rows)?;
    out.csv(
        "rate_fit.csv",
        &["quantity", "slope"],
        &[vec!["u".into(), num(study.slope_u)], vec!["ubar".into(), num(study.slope_ubar)]],
    )?;
    eprintln!("fitted slopes against log(2 + ntilde): u {:.3}, ubar {:.3}", study.slope_u, study.slope_ubar);

    let xs: Vec<f64> = study.points.iter().map(|p| 2.0 + p.n_half as f64).collect();
    let fit_line = |ys: Vec<f64>, slope: f64| -> Vec<(f64, f64)> {
        let n = xs.len() as f64;
        let mx = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
        let my = ys.iter().map(|y| y.ln()).sum::<f64>() / n;
        [xs[0], xs[xs.len() - 1]].iter().map(|x| (*x, (my + slope * (x.ln() - mx)).exp())).collect()
    };
    let eu: Vec<f64> = study.points.iter().map(|p| p.sup_err_u).collect();
    let eb: Vec<f64> = study.points.iter().map(|p| p.sup_err_ubar).collect();
    let chart = Chart::new("Error against grid size", Axis::log("2 + ntilde"), Axis::log("sup error"))
        .with_series("u", xs.iter().copied().zip(eu.iter().copied()).collect(), Style::Markers)
        .with_series("ubar", xs.iter().copied().zip(eb.iter().copied()).collect(), Style::Markers)
        .with_series(&format!("fit u {:.2}", study.slope_u), fit_line(eu, study.slope_u), Style::Dashed)
        .with_series(&format!("fit ubar {:.2}", study.slope_ubar), fit_line(eb, study.slope_ubar), Style::Dashed);
    out.write("rate_study.svg", &chart.render())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionRun {
    pub seed: u64,
    pub params: SchemeParams,
    /// Monte Carlo samples per probe point for `c∞` and `c̃∞`.
    pub samples: usize,
    /// Probe points; empty means `{0, ±1, ±2}` along the first axis.
    pub probes: Vec<Vec<f64>>,
    pub r_prime: f64,
    pub dt: f64,
    /// Exponent of the `L_p(μ0)` contraction constant.
    pub p: f64,
    /// Growth exponent entering `c_p`.
    pub r: f64,
}

impl Default for ContractionRun {
    fn default() -> Self {
        ContractionRun {
            seed: 0,
            params: SchemeParams::default(),
            samples: 100_000,
            probes: Vec::new(),
            r_prime: 0.0,
            dt: 0.003,
            p: 2.0,
            r: 0.0,
        }
    }
}

impl ContractionRun {
    pub fn resolve(mut self, dim: usize) -> Result<Self, CliError> {
        self.params.ensure_usable().map_err(|e| CliError::Config(e.to_string()))?;
        if self.probes.is_empty() {
            self.probes = [0.0, 1.0, -1.0, 2.0, -2.0]
                .iter()
                .map(|v| {
                    let mut x = vec![0.0; dim];
                    x[0] = *v;
                    x
                })
                .collect();
        }
        if self.probes.iter().any(|x| x.len() != dim) {
            return Err(CliError::Config(format!("probe points must have dimension {dim}")));
        }
        if self.samples < 2 || !(self.dt > 0.0) {
            return Err(CliError::Config("contraction needs samples >= 2 and dt > 0".into()));
        }
        Ok(self)
    }
}

pub fn contraction(problem: &Problem, run: &ContractionRun, out: &OutDir) -> Result<(), CliError> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |name: &str, value: Option<f64>, passed: Option<bool>, detail: &str| {
        rows.push(vec![
            name.to_string(),
            opt(value),
            passed.map(|b| if b { "true" } else { "false" }.to_string()).unwrap_or_default(),
            detail.to_string(),
        ]);
    };
    let g = problem.gen.constants;
    let p = &run.params;
    for (name, v) in [
        ("k_fy", g.k_fy),
        ("k_fz", g.k_fz),
        ("mu", g.mu),
        ("m_f", g.m_f),
        ("a", p.a),
        ("a_tilde", p.a_tilde),
        ("theta", p.theta),
        ("theta_tilde", p.theta_tilde),
    ] {
        push(name, Some(v), None, "");
    }
    let report = validate_params(p, &problem.gen)?;
    for c in &report.checks {
        push(&format!("constraint: {}", c.name), None, Some(c.passed), &c.detail);
    }
    push("monotonicity_margin", Some(report.monotonicity_margin), None, "");

    let est = estimate_c_constants(problem, p, run.r_prime, &run.probes, run.samples, run.dt, run.seed)?;
    let detail = format!("max over {} probe points", est.probes);
    push("c_inf_mc", Some(est.c_inf), None, &detail);
    push("c_inf_mc_se", Some(est.c_inf_se), None, "");
    push("c_tilde_inf_mc", Some(est.c_tilde_inf), None, &detail);
    push("c_tilde_inf_mc_se", Some(est.c_tilde_inf_se), None, "");

    let (c_inf, c_tilde_inf, source) = if problem.sde.is_brownian && run.r_prime == 0.0 {
        let (c, ct) = brownian_c_constants(p, problem.dim());
        push("c_inf_closed_form", Some(c), None, "Brownian motion");
        push("c_tilde_inf_closed_form", Some(ct), None, "Brownian motion");
        (c, ct, "closed form")
    } else {
        (est.c_inf, est.c_tilde_inf, "Monte Carlo")
    };
    let inputs = ContractionInputs::from_generator(&problem.gen, p, c_inf, c_tilde_inf);
    let k_inf = kappa_infinity(&inputs);
    push("kappa_inf", Some(k_inf), Some(k_inf < 1.0), &format!("from {source} c constants"));
    let (bound, ok) = equal_rate_contraction_check(g.k_fy, g.mu, g.k_fz, c_inf, c_tilde_inf);
    push("kappa_bound_a_eq_kfy", Some(bound), Some(ok), "sufficient bound when a = a_tilde = k_fy");

    if problem.sde.is_brownian {
        match brownian_cp_constants(run.p, run.r, problem.dim(), p.theta, p.theta_tilde) {
            Ok((c_p, c_tilde_p)) => {
                push("c_p", Some(c_p), None, &format!("p = {}, r = {}", run.p, run.r));
                push("c_tilde_p", Some(c_tilde_p), None, "");
                let s = problem.sde.constants;
                match tilde_cp_bis_bound(run.p, p.a_tilde, p.theta_tilde, 1.0, 0.0, s.m_sigma, s.m_sigma_inv) {
                    Ok(bis) => {
                        push("c_tilde_p_bis", Some(bis), None, "tangent growth constants c4 = 1, c5 = 0");
                        let lp = LpConstants { c_p, c_tilde_p, c_tilde_p_bis: bis };
                        match kappa_p(&inputs, run.p, &lp) {
                            Ok(k) => push("kappa_p", Some(k), Some(k < 1.0), ""),
                            Err(e) => push("kappa_p", None, None, &e.to_string()),
                        }
                    }
                    Err(e) => push("c_tilde_p_bis", None, None, &e.to_string()),
                }
            }
            Err(e) => push("c_p", None, None, &e.to_string()),
        }
    }
    for r in &rows {
        eprintln!("{:<40} {:>24} {:>6} {}", r[0], r[1], r[2], r[3]);
    }
    out.csv("contraction_report.csv", &["name", "value", "passed", "detail"], &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepScheme {
    NnPicard,
    NnDirect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KzSweepRun {
    pub seed: u64,
    pub scheme: SweepScheme,
    pub kz: Vec<f64>,
    pub replications: usize,
    pub picard: NnPicardConfig,
    pub direct: DirectConfig,
}

impl Default for KzSweepRun {
    fn default() -> Self {
        KzSweepRun {
            seed: 0,
            scheme: SweepScheme::NnPicard,
            kz: (0..=13).map(|i| (i as f64 * 0.4 * 10.0).round() / 10.0).collect(),
            replications: 5,
            picard: NnPicardConfig::default(),
            direct: DirectConfig { inner_samples: 3000, ..DirectConfig::default() },
        }
    }
}

impl KzSweepRun {
    pub fn resolve(self) -> Result<Self, CliError> {
        if self.kz.is_empty() || self.replications == 0 {
            return Err(CliError::Config("kz sweep needs a non-empty kz list and at least one replication".into()));
        }
        if self.kz.iter().any(|k| !(*k >= 0.0)) {
            return Err(CliError::Config("kz values must be non-negative".into()));
        }
        match self.scheme {
            SweepScheme::NnPicard => self.picard.validate(),
            SweepScheme::NnDirect => self.direct.validate(),
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self)
    }

    /// Solver seed of replication `rep`; shared across `K_z` values.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kz: f64,
    pub rep: usize,
    pub du: f64,
    pub dubar: f64,
}

/// Runs every `(K_z, replication)` pair sequentially.
pub fn run_kz_sweep(selection: &ProblemSelection, run: &KzSweepRun) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::with_capacity(run.kz.len() * run.replications);
    for &kz in &run.kz {
        let mut sel = selection.clone();
        sel.params.insert("kz".into(), kz);
        let problem = sel.build()?;
        for rep in 0..run.replications {
            let seed = run.replication_seed(rep);
            let result = match run.scheme {
                SweepScheme::NnPicard => {
                    let cfg = NnPicardConfig { seed, ..run.picard.clone() };
                    contraction_nn_solve_with(&problem, &cfg, |_, _| {})
                }
                SweepScheme::NnDirect => {
                    let cfg = DirectConfig { seed, ..run.direct.clone() };
                    direct_nn_solve_with(&problem, &cfg, |_, _| {})
                }
            };
            // A diverged run is a data point of the sweep, not a failure of it.
            let (du, dubar) = match result {
                Err(infbsde::Error::NonFiniteLoss { step }) => {
                    eprintln!("kz {kz}: replication {rep}: loss diverged at step {step}");
                    (f64::INFINITY, f64::INFINITY)
                }
                Err(e) => return Err(e.into()),
                Ok(out) => {
                    let last = out.trace.last().expect("at least one iteration");
                    match (last.rel_err_u, last.rel_err_ubar) {
                        (Some(u), Some(b)) => (u, b),
                        _ => return Err(CliError::Numerical(infbsde::Error::MissingAnalyticSolution)),
                    }
                }
            };
            eprintln!("kz {kz}: replication {rep}: du {du:.5} dubar {dubar:.5}");
            rows.push(SweepRow { kz, rep, du, dubar });
        }
    }
    Ok(rows)
}

/// Min, quartiles and max by linear interpolation between order statistics.
pub fn quantiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if v[lo] == v[hi] {
            v[lo]
        } else {
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        }
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

pub fn kz_sweep(selection: &ProblemSelection, run: &KzSweepRun, out: &OutDir) -> Result<(), CliError> {
    let rows = run_kz_sweep(selection, run)?;
    let csv_rows: Vec<Vec<String>> =
        rows.iter().map(|r| vec![num(r.kz), r.rep.to_string(), num(r.du), num(r.dubar)]).collect();
    out.csv("kz_sweep.csv", &["kz", "rep", "du", "dubar"], &csv_rows)?;

    let mut by_kz: BTreeMap<u64, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &rows {
        let e = by_kz.entry(r.kz.to_bits()).or_insert((r.kz, Vec::new(), Vec::new()));
        e.1.push(r.du);
        e.2.push(r.dubar);
    }
    let mut groups: Vec<_> = by_kz.into_values().collect();
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut summary = Vec::new();
    let mut chart = Chart::new("Relative errors against K_z", Axis::linear("K_z"), Axis::log("relative L2 error"));
    chart.box_labels = vec!["u".into(), "ubar".into()];
    for (kz, du, dubar) in &groups {
        let qu = quantiles(du);
        let qb = quantiles(dubar);
        let mut row = vec![num(*kz)];
        row.extend(qu.iter().chain(&qb).map(|v| num(*v)));
        summary.push(row);
        chart.boxes.push(BoxGlyph { x: *kz, quantiles: qu, series: 0 });
        chart.boxes.push(BoxGlyph { x: *kz, quantiles: qb, series: 1 });
    }
    out.csv(
        "kz_summary.csv",
        &[
            "kz",
            "du_min",
            "du_q25",
            "du_median",
            "du_q75",
            "du_max",
            "dubar_min",
            "dubar_q25",
            "dubar_median",
            "dubar_q75",
            "dubar_max",
        ],
        &summary,
    )?;
    out.write("kz_sweep.svg", &chart.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_small_sets() {
        assert_eq!(quantiles(&[3.0, 1.0, 2.0]), [1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(quantiles(&[4.0]), [4.0; 5]);
    }

    #[test]
    fn default_sweep_grid() {
        let kz = KzSweepRun::default().kz;
        assert_eq!(kz.len(), 14);
        assert_eq!(kz[1], 0.4);
        assert_eq!(kz[13], 5.2);
    }
}
