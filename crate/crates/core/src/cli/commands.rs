//! One handler per subcommand. Each returns its report and, when it has one, a plot.

use num_complex::Complex64;
use serde_json::json;

use super::output::{to_value, Cell, Report, Table};
use super::plot::{Plot, Series};
use super::*;
use crate::checks::{self, FedererReport};
use crate::dynamics::{skew_step, wrap, SkewPoint};
use crate::limits::{self, RunConfig};
use crate::minkowski::{mu_y_nodes, question_mark, Y_MASS};
use crate::observable::Observable;
use crate::rational::{farey_level, Rational};
use crate::renewal::{self, PerturbedFamily, RenewalSequence};
use crate::transfer::{self, PerturbedAssembly, TransferConfig};

type Outcome = Result<(Report, Option<Plot>), CliError>;

pub(super) fn dispatch(command: &Command, workers: usize) -> Outcome {
    match command {
        Command::Farey(a) => farey(a),
        Command::Minkowski(a) => minkowski(a),
        Command::Orbit(a) => orbit(a),
        Command::Spectrum(a) => spectrum(a),
        Command::LambdaCurve(a) => lambda_curve(a),
        Command::Renewal(a) => renewal(a),
        Command::Mixing(a) => mixing(a),
        Command::Clt(a) => clt(a, workers),
        Command::Llt(a) => llt(a, workers),
        Command::Charfn(a) => charfn(a, workers),
        Command::Check(a) => check(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn modulus_of(r: f64) -> Result<f64, CliError> {
    if r > 1.0 && r.is_finite() {
        Ok(r.ln())
    } else {
        Err(usage(format!("--r must exceed 1, got {r}")))
    }
}

fn farey(a: &FareyArgs) -> Outcome {
    let level = farey_level(a.level)?;
    let modulus = a.lift.map(modulus_of).transpose()?;
    let mut table = Table::new(if modulus.is_some() { &["num", "den", "logq_mod"] } else { &["num", "den"] });
    let mut points = Vec::with_capacity(level.len());
    for f in level.fractions() {
        let mut row = vec![Cell::Text(f.num().to_string()), Cell::Text(f.den().to_string())];
        let y = match modulus {
            Some(m) => {
                let w = wrap(f.log_den(), m);
                row.push(Cell::Float(w));
                w
            }
            None => f.log_den(),
        };
        points.push((f.to_f64(), y));
        table.push(row);
    }
    let mut report = Report::new("farey", to_value(a));
    report.value = Some(level.len() as f64);
    report.summary.push(format!("level {} has {} fractions", a.level, level.len()));
    report.details = json!({ "count": level.len() });
    report.table = Some(table);
    let y_label = if modulus.is_some() { "log q mod log r" } else { "log q" };
    let plot = Plot::new(format!("Farey level {}", a.level), "p/q", y_label).with(Series::markers("fractions", points));
    Ok((report, Some(plot)))
}

fn minkowski(a: &MinkowskiArgs) -> Outcome {
    let mut report = Report::new("minkowski", to_value(a));
    if let Some(text) = &a.eval {
        let x: Rational = text.parse().map_err(|e: crate::rational::FareyError| usage(e.to_string()))?;
        let q = question_mark(&x)?;
        report.value = Some(q.to_f64());
        report.summary.push(format!("?({x}) = {q}"));
        report.details = json!({ "x": x.to_string(), "exact": q.to_string() });
        return Ok((report, None));
    }
    let count = a.nodes.unwrap_or(0);
    let nodes = mu_y_nodes(count)?;
    let mut table = Table::new(&["index", "x", "mass", "weight"]);
    let width = Y_MASS.1 - Y_MASS.0;
    let mut points = Vec::with_capacity(count);
    for (m, (&x, &w)) in nodes.nodes.iter().zip(&nodes.weights).enumerate() {
        let u = Y_MASS.0 + (m as f64 + 0.5) / count as f64 * width;
        table.push(vec![m.into(), x.into(), u.into(), w.into()]);
        points.push((x, u));
    }
    report.summary.push(format!("{count} equal-mass nodes on ({}, {})", nodes.interval.0, nodes.interval.1));
    report.table = Some(table);
    let plot = Plot::new("Quadrature nodes on Y", "x", "?(x)").with(Series::markers("nodes", points));
    Ok((report, Some(plot)))
}

fn orbit(a: &OrbitArgs) -> Outcome {
    let mut p = SkewPoint::new(a.x, a.omega, a.r)?;
    let mut table = Table::new(&["n", "x", "omega"]);
    let mut points = Vec::with_capacity(a.steps + 1);
    for n in 0..=a.steps {
        table.push(vec![n.into(), p.x.into(), p.omega.into()]);
        points.push((p.x, p.omega));
        p = skew_step(p);
    }
    let mut report = Report::new("orbit", to_value(a));
    report.summary.push(format!("{} steps from ({}, {})", a.steps, a.x, a.omega));
    report.table = Some(table);
    let plot = Plot::new("Skew product orbit", "x", "omega").with(Series::markers("orbit", points));
    Ok((report, Some(plot)))
}

fn parse_complex(text: &str) -> Result<Complex64, CliError> {
    let bad = || usage(format!("expected RE,IM for --z, got {text:?}"));
    let (re, im) = text.split_once(',').ok_or_else(bad)?;
    let re: f64 = re.trim().parse().map_err(|_| bad())?;
    let im: f64 = im.trim().parse().map_err(|_| bad())?;
    Ok(Complex64::new(re, im))
}

fn spectrum(a: &SpectrumArgs) -> Outcome {
    let z = parse_complex(&a.z)?;
    let cfg = TransferConfig { grid: a.grid, rmax: a.rmax, fiber_r: a.r };
    let op = transfer::build_matrix(a.k, z, &cfg)?;
    let spec = transfer::spectral_radius(&op)?;
    let mut table = Table::new(&["index", "re", "im", "abs"]);
    for (i, e) in spec.eigenvalues.iter().enumerate() {
        table.push(vec![i.into(), e.re.into(), e.im.into(), e.norm().into()]);
    }
    let mut report = Report::new("spectrum", to_value(a));
    report.estimate = Some(spec.radius);
    report.details = json!({
        "spectral_radius": spec.radius,
        "dominant": [spec.dominant.re, spec.dominant.im],
        "residual": spec.residual,
    });
    report.summary.push(format!("spectral radius {} at k = {}, z = {}", spec.radius, a.k, z));
    report.table = Some(table);
    let points = spec.eigenvalues.iter().map(|e| (e.re, e.im)).collect();
    let plot = Plot::new(format!("Eigenvalues, k = {}", a.k), "Re", "Im").with(Series::markers("eigenvalues", points));
    Ok((report, Some(plot)))
}

fn lambda_curve(a: &LambdaArgs) -> Outcome {
    if a.steps == 0 || a.steps > transfer::MAX_T_STEPS {
        return Err(usage(format!("--steps must be in 1..={}", transfer::MAX_T_STEPS)));
    }
    let dt = a.tmax / a.steps as f64;
    if !(dt.abs() <= 0.05) {
        return Err(usage(format!("step tmax/steps = {dt} exceeds 0.05")));
    }
    let psi = Observable::by_name(&a.psi, a.r)?;
    let cfg = TransferConfig { grid: a.grid, rmax: a.rmax, fiber_r: a.r };
    let ts: Vec<f64> = (0..=a.steps).map(|i| i as f64 * dt).collect();
    let path = transfer::lambda_path(&psi, &ts, a.band, &cfg)?;
    let curvature = transfer::lambda_curvature(&psi, a.h, a.band, &cfg)?;
    let mut table = Table::new(&["t", "re", "im"]);
    for (t, l) in &path {
        table.push(vec![(*t).into(), l.re.into(), l.im.into()]);
    }
    let l0 = path[0].1.re;
    let mut report = Report::new("lambda-curve", to_value(a));
    report.estimate = Some(curvature.alpha);
    report.details = json!({
        "alpha": curvature.alpha,
        "lambda0": [path[0].1.re, path[0].1.im],
        "quotients": [curvature.quotients.0, curvature.quotients.1],
        "conjugate_error": curvature.conjugate_error,
        "min_gap": curvature.min_gap,
        "mean_removed": curvature.mean_removed,
    });
    report.summary.push(format!("curvature alpha = {}", curvature.alpha));
    report.table = Some(table);
    let quadratic = ts.iter().map(|&t| (t, l0 - curvature.alpha * t * t)).collect();
    let plot = Plot::new(format!("Leading eigenvalue, psi = {}", a.psi), "t", "Re lambda(t)")
        .with(Series::line("Re lambda", path.iter().map(|(t, l)| (*t, l.re)).collect()))
        .with(Series::line("lambda(0) - alpha t^2", quadratic));
    Ok((report, Some(plot)))
}

fn renewal(a: &RenewalArgs) -> Outcome {
    let mut report = Report::new("renewal", to_value(a));
    let deviations = match (a.demo, a.t == 0.0) {
        (RenewalDemo::Geometric, true) => {
            if !(a.p > 0.0 && a.p <= 1.0) {
                return Err(usage(format!("--p must be in (0, 1], got {}", a.p)));
            }
            let fit = renewal::limit_check(&renewal::geometric_sequence(a.p, 400)?, a.nmax)?;
            report.details = json!({ "theta": fit.theta, "r_squared": fit.r_squared });
            fit.errors
        }
        (RenewalDemo::Geometric, false) => return Err(usage("the geometric demo has no perturbation; drop --t")),
        (RenewalDemo::Lattice, true) => {
            let fit = renewal::limit_check(&renewal::lattice_sequence(0.0)?, a.nmax)?;
            report.details = json!({ "theta": fit.theta, "r_squared": fit.r_squared });
            fit.errors
        }
        (RenewalDemo::Lattice, false) => {
            let family = PerturbedFamily::new(renewal::lattice_sequence)?;
            perturbed(&mut report, &family, a.t, a.nmax)?
        }
        (RenewalDemo::Farey, true) => {
            let cfg = TransferConfig { grid: a.grid, rmax: a.rmax, ..Default::default() };
            let fit = renewal::limit_check(&renewal::farey_sequence(0, &cfg)?, a.nmax)?;
            let data = renewal::limit_data(&renewal::farey_sequence(0, &cfg)?)?;
            report.details = json!({ "theta": fit.theta, "r_squared": fit.r_squared, "kac": data.mu });
            fit.errors
        }
        (RenewalDemo::Farey, false) => {
            let cfg = TransferConfig { grid: a.grid, rmax: a.rmax, ..Default::default() };
            let (psi, _) = Observable::by_name(&a.psi, cfg.fiber_r)?.centered()?;
            let asm = PerturbedAssembly::new(&psi, a.band, &cfg)?;
            let family = PerturbedFamily::new(renewal::farey_perturbed_builder(&asm))?;
            perturbed(&mut report, &family, a.t, a.nmax)?
        }
    };
    let mut table = Table::new(&["n", "deviation"]);
    for (n, d) in deviations.iter().enumerate() {
        table.push(vec![n.into(), (*d).into()]);
    }
    report.estimate = deviations.last().copied();
    report.summary.push(format!("deviation at n = {}: {}", a.nmax, deviations.last().copied().unwrap_or(f64::NAN)));
    report.table = Some(table);
    let points = deviations.iter().enumerate().map(|(n, d)| (n as f64, *d)).collect();
    let plot = Plot::new("Renewal partial sums", "n", "deviation from limit").with(Series::line("deviation", points));
    Ok((report, Some(plot)))
}

fn perturbed<F>(report: &mut Report, family: &PerturbedFamily<F>, t: f64, n_max: usize) -> Result<Vec<f64>, CliError>
where
    F: Fn(f64) -> Result<RenewalSequence, renewal::RenewalError> + Sync,
{
    let fit = renewal::perturbed_limit_check(family, t, n_max)?;
    report.details = json!({
        "mu": family.mu(),
        "alpha": family.alpha(),
        "regime": format!("{:?}", fit.regime),
        "dominated": fit.dominated,
    });
    report.pass = Some(fit.dominated);
    Ok(fit.deviations)
}

const MIXING_R2: f64 = 0.95;
const MIXING_THETA: f64 = 0.9;

fn mixing(a: &MixingArgs) -> Outcome {
    if a.from + 2 > a.n {
        return Err(usage(format!("fit window {}..={} needs at least three levels", a.from, a.n)));
    }
    modulus_of(a.r)?;
    let f = Observable::by_name(&a.psi, a.r)?;
    let rep = limits::exact_mixing_error_window(&f, a.n, (a.from, a.n))?;
    let mut table = Table::new(&["n", "error"]);
    for &(n, e) in &rep.errors {
        table.push(vec![n.into(), e.into()]);
    }
    let pass = rep.fit.r_squared > MIXING_R2 && rep.theta <= MIXING_THETA;
    let mut report = Report::new("mixing", to_value(a));
    report.estimate = Some(rep.theta);
    report.value = Some(rep.fit.r_squared);
    report.pass = Some(pass);
    report.details = json!({
        "reference": rep.reference,
        "theta": rep.theta,
        "r_squared": rep.fit.r_squared,
        "window": [rep.window.0, rep.window.1],
        "envelope_theta": rep.envelope_fit.slope.exp(),
        "envelope_r_squared": rep.envelope_fit.r_squared,
        "required": { "r_squared_above": MIXING_R2, "theta_at_most": MIXING_THETA },
    });
    report.summary.push(format!("theta = {}, R^2 = {}, pass = {pass}", rep.theta, rep.fit.r_squared));
    report.table = Some(table);
    let errors = rep.errors.iter().map(|&(n, e)| (n as f64, e.abs())).collect();
    let fitted = (a.from..=a.n).map(|n| (n as f64, (rep.fit.intercept + rep.fit.slope * n as f64).exp())).collect();
    let plot = Plot::new(format!("Mixing error, psi = {}", a.psi), "level n", "|error|")
        .with(Series::markers("exact error", errors))
        .with(Series::line("geometric fit", fitted))
        .log_y(true);
    Ok((report, Some(plot)))
}

fn run_config(s: &SamplingArgs, n_steps: usize, default_trials: usize, workers: usize) -> Result<RunConfig, CliError> {
    modulus_of(s.r)?;
    Ok(RunConfig { seed: s.seed, trials: s.trials.unwrap_or(default_trials), n_steps, r_modulus: s.r, worker_count: workers })
}

fn clt(a: &CltArgs, workers: usize) -> Outcome {
    let cfg = run_config(&a.sampling, a.n, 100_000, workers)?;
    let psi = Observable::by_name(&a.sampling.psi, a.sampling.r)?;
    let rep = limits::clt_test(&psi, a.n, &cfg)?;
    let mut report = Report::new("clt", to_value(a));
    report.seed = Some(a.sampling.seed);
    report.estimate = Some(rep.variance_ratio);
    report.prediction = Some(rep.sigma2);
    report.stderr = Some(rep.sigma2_stderr);
    report.value = rep.ks;
    report.pass = Some(rep.pass);
    report.details = json!({
        "ks": rep.ks,
        "threshold": rep.threshold,
        "degenerate": rep.degenerate,
        "sigma2": rep.sigma2,
        "variance_ratio": rep.variance_ratio,
        "n": rep.n,
        "trials": rep.trials,
    });
    report.summary.push(match rep.ks {
        Some(ks) => format!("KS = {ks} (threshold {}), sigma^2 = {}, pass = {}", rep.threshold, rep.sigma2, rep.pass),
        None => format!("degenerate: Var(S_n)/n = {}, pass = {}", rep.variance_ratio, rep.pass),
    });
    let mut table = Table::new(&["x", "empirical", "normal"]);
    for &(x, e, g) in &rep.density {
        table.push(vec![x.into(), e.into(), g.into()]);
    }
    report.table = Some(table);
    let plot = (!rep.density.is_empty()).then(|| {
        Plot::new(format!("S_n / sqrt n, n = {}", a.n), "x", "density")
            .with(Series::markers("empirical", rep.density.iter().map(|d| (d.0, d.1)).collect()))
            .with(Series::line("normal", rep.density.iter().map(|d| (d.0, d.2)).collect()))
    });
    Ok((report, plot))
}

fn llt(a: &LltArgs, workers: usize) -> Outcome {
    let cfg = run_config(&a.sampling, a.n, 1_000_000, workers)?;
    let psi = Observable::by_name(&a.sampling.psi, a.sampling.r)?;
    let rep = limits::llt_test(&psi, (a.a, a.b), a.kappa, a.n, &cfg)?;
    let mut report = Report::new("llt", to_value(a));
    report.seed = Some(a.sampling.seed);
    report.estimate = Some(rep.estimate);
    report.stderr = Some(rep.stderr);
    report.prediction = Some(rep.prediction);
    report.value = Some(rep.relative_error);
    report.pass = Some(rep.pass);
    report.details = json!({
        "hits": rep.hits,
        "relative_error": rep.relative_error,
        "prediction_stderr": rep.prediction_stderr,
        "covered": rep.covered,
        "aperiodicity_probe": rep.aperiodicity_probe,
        "warning": rep.warning,
    });
    report.summary.push(format!(
        "sqrt(n) P = {} +- {}, prediction {}, relative error {}, pass = {}",
        rep.estimate, rep.stderr, rep.prediction, rep.relative_error, rep.pass
    ));
    if let Some(w) = &rep.warning {
        report.summary.push(format!("warning: {w}"));
    }
    Ok((report, None))
}

fn charfn(a: &CharfnArgs, workers: usize) -> Outcome {
    if a.n.is_empty() {
        return Err(usage("--n needs at least one length"));
    }
    let n_max = a.n.iter().copied().max().unwrap_or(0);
    let cfg = run_config(&a.sampling, n_max, 100_000, workers)?;
    let r = a.sampling.r;
    let psi = Observable::by_name(&a.sampling.psi, r)?;
    let (f, g) = (Observable::by_name(&a.f, r)?, Observable::by_name(&a.g, r)?);
    let rep = limits::char_function_scan(&psi, a.t, &a.n, &f, &g, &cfg)?;
    let mut table = Table::new(&["n", "re", "im", "stderr", "prediction", "deviation"]);
    for row in &rep.rows {
        table.push(vec![
            row.n.into(),
            row.estimate.re.into(),
            row.estimate.im.into(),
            row.stderr.into(),
            row.prediction.into(),
            row.deviation.into(),
        ]);
    }
    let last = rep.rows.last().expect("at least one length");
    let mut report = Report::new("charfn", to_value(a));
    report.seed = Some(a.sampling.seed);
    report.estimate = Some(last.estimate.re);
    report.stderr = Some(last.stderr);
    report.prediction = Some(last.prediction);
    report.value = Some(last.deviation);
    report.pass = Some(rep.decreasing);
    report.details = json!({ "t": rep.t, "sigma2": rep.sigma2, "decreasing": rep.decreasing });
    report.summary.push(format!("deviations decreasing within error: {}", rep.decreasing));
    report.table = Some(table);
    let plot = Plot::new(format!("Characteristic function, t = {}", a.t), "n", "value")
        .with(Series::line("|deviation|", rep.rows.iter().map(|r| (r.n as f64, r.deviation)).collect()))
        .with(Series::markers("stderr", rep.rows.iter().map(|r| (r.n as f64, r.stderr)).collect()));
    Ok((report, Some(plot)))
}

/// Expected witness value and half-width.
const COHOMOLOGY_VALUE: (f64, f64) = (-0.013, 0.001);

fn check(a: &CheckArgs) -> Outcome {
    let mut report = Report::new("check", to_value(a));
    match a.kind {
        CheckKind::Federer => {
            if a.eta_from > a.eta_to {
                return Err(usage(format!("--eta-from {} exceeds --eta-to {}", a.eta_from, a.eta_to)));
            }
            let c: Rational = a.c.parse().map_err(|e: crate::rational::FareyError| usage(e.to_string()))?;
            let rep = checks::federer_probe(&c, &checks::dyadic_scales(a.eta_from..=a.eta_to))?;
            federer_report(&mut report, &rep);
            let points = rep.scales.iter().map(|s| (s.eta.log2(), s.d_achieved)).collect();
            let plot = Plot::new(format!("Federer constant, C = {}", a.c), "log2 eta", "D achieved").with(Series::markers("D", points));
            return Ok((report, Some(plot)));
        }
        CheckKind::Cohomology => {
            let w = checks::cohomology_witness()?;
            let pass = (w.value - COHOMOLOGY_VALUE.0).abs() <= COHOMOLOGY_VALUE.1;
            report.value = Some(w.value);
            report.estimate = Some(w.value);
            report.prediction = Some(COHOMOLOGY_VALUE.0);
            report.pass = Some(pass);
            report.details = json!({ "x": w.x, "x_prime": w.x_prime, "y": w.y, "period_error": w.period_error });
            report.summary.push(format!("witness value {} (period error {:e}), pass = {pass}", w.value, w.period_error));
        }
        CheckKind::Tower => {
            let t = checks::tower_audit()?;
            let pass = t.passes();
            report.estimate = Some(t.kappa);
            report.pass = Some(pass);
            report.details = json!({
                "rmax": t.rmax,
                "kappa": t.kappa,
                "kappa_fixed_point": t.kappa_fixed_point,
                "log_jacobian_variation": t.log_jacobian_variation,
                "composition_sup": t.composition_sup,
                "moment": { "sigma": t.moment.sigma, "closed_form": t.moment.closed_form, "converged": t.moment.converged },
                "branch_moment": t.branch_moment,
                "divergent_probe": { "sigma": t.divergent_probe.sigma, "converged": t.divergent_probe.converged },
            });
            report.summary.push(format!(
                "kappa {} (fixed point {}), log-Jacobian variation {:e}, sup |(T^k h)'| {}, moment {:?}, pass = {pass}",
                t.kappa, t.kappa_fixed_point, t.log_jacobian_variation, t.composition_sup, t.moment.closed_form
            ));
        }
    }
    Ok((report, None))
}

fn federer_report(report: &mut Report, rep: &FedererReport) {
    let mut table = Table::new(&["eta", "pieces", "mass_ratio", "containment", "d_achieved", "cover_defect"]);
    for s in &rep.scales {
        table.push(vec![s.eta.into(), s.pieces.into(), s.mass_ratio.into(), s.containment.into(), s.d_achieved.into(), s.cover_defect.into()]);
    }
    report.estimate = Some(rep.max_over_median());
    report.value = Some(rep.d_max);
    report.pass = Some(rep.passes());
    report.details = json!({
        "c": rep.c,
        "d_max": rep.d_max,
        "d_median": rep.d_median,
        "max_over_median": rep.max_over_median(),
        "max_cover_defect": rep.max_cover_defect(),
        "note": rep.note,
    });
    report.summary.push(format!(
        "D max {} median {} ratio {} cover defect {:e}, pass = {}",
        rep.d_max,
        rep.d_median,
        rep.max_over_median(),
        rep.max_cover_defect(),
        rep.passes()
    ));
    report.table = Some(table);
}
