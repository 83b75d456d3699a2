use std::fmt;
use std::path::PathBuf;

use nsfold::certificates::{
    filippov_certificate, filippov_report, hybrid_certificate, hybrid_report, map_certificate,
    map_fixed_points, ode_certificate, ode_equilibria, BebClass, CertError, Certificate,
    EquilibriumReport, SolutionKind,
};
use nsfold::flow::{
    fmt_f64, integrate_filippov, integrate_hybrid, integrate_pws_ode, limit_cycle, FlowOptions,
};
use nsfold::map_dynamics::{iterate, ClassifyConfig, OrbitOutcome, DEFAULT_DIVERGENCE_RADIUS};
use nsfold::models::{run_tipping, TippingRun};
use nsfold::scan::{branch_rows_to_csv, scan1d_map, scan1d_stommel, scan2d, Execution, GridSpec};
use nsfold::Vector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{initial_state, map_family, ConfigError, Experiment, System};
use crate::output::{sibling, write_atomic, Provenance};

pub const EXIT_OK: u8 = 0;
pub const EXIT_NO_CERTIFICATE: u8 = 1;
pub const EXIT_DEGENERATE: u8 = 2;
pub const EXIT_CONFIG: u8 = 64;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// Numerical or I/O failure while running.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn run_err(e: impl fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError(msg.into()))
}

pub struct Context {
    pub command: &'static str,
    pub experiment: Experiment,
    pub config_bytes: Vec<u8>,
    pub out: Option<PathBuf>,
    pub exec: Execution,
    pub budget: Option<usize>,
    pub seed: u64,
}

impl Context {
    fn provenance(&self) -> Provenance {
        let mut p = Provenance::new(self.command, &self.config_bytes);
        p.option("system", &self.experiment.system);
        p
    }

    fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.out {
            Some(path) => write_atomic(path, text.as_bytes())
                .map_err(|e| CliError::Run(format!("{}: {e}", path.display()))),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn system(&self) -> Result<System, CliError> {
        Ok(self.experiment.system.build()?)
    }

    fn flow_options(&self) -> FlowOptions {
        let mut f = self.experiment.run.flow.unwrap_or_default();
        if let Some(b) = self.budget {
            f.max_steps = b;
        }
        f
    }

    fn classify(&self, base: ClassifyConfig) -> ClassifyConfig {
        let mut c = self.experiment.run.classify.unwrap_or(base);
        if let Some(b) = self.budget {
            let window = c.budget - c.transient;
            c.budget = b;
            c.transient = b.saturating_sub(window);
        }
        c
    }
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    provenance: Vec<String>,
    system: &'a crate::config::SystemConfig,
    report: Option<&'a EquilibriumReport>,
    certificate: Option<&'a Certificate>,
    verdict: &'a str,
    detail: String,
}

fn describe(report: &EquilibriumReport) -> String {
    let mut s = String::new();
    for sol in &report.solutions {
        let name = match sol.kind {
            SolutionKind::RegularLeft => "x^L",
            SolutionKind::RegularRight => "x^R",
            SolutionKind::Pseudo => "pseudo",
        };
        s.push_str(&format!(
            "{name} = {} {:?} (deciding value {})\n",
            sol.location,
            sol.admissibility,
            fmt_f64(sol.deciding_value)
        ));
    }
    s.push_str(&format!(
        "adjugate row = {}, s = {}, det_left = {}, det_right_or_qc = {}\n",
        report.adjugate_row,
        fmt_f64(report.s),
        fmt_f64(report.det_left),
        fmt_f64(report.det_right_or_qc)
    ));
    s
}

/// Smallest margin `w . (increment or field) - rate` over random states in
/// the ball of radius `1e3`, restricted to the region where each piece
/// applies.
fn sampled_margin(system: &System, cert: &Certificate, seed: u64, samples: usize) -> f64 {
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let n = system.dim();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let x: Vec<f64> = loop {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect();
            if nsfold::linalg::norm(&x) <= 1e3 {
                break x;
            }
        };
        let gain = match system {
            System::Map(m) => cert.value(&m.apply(&x)) - cert.value(&x),
            System::Ode(o) => cert.value(&o.field(&x)),
            System::Filippov(f) if x[0] <= 0.0 => cert.value(&f.field_left(&x)),
            System::Filippov(f) => cert.value(&f.field_right(&x)),
            System::Hybrid(h) => {
                let mut y = x.clone();
                y[0] = -y[0].abs();
                cert.value(&h.field(&y))
            }
            _ => continue,
        };
        worst = worst.min(gain - cert.rate);
    }
    worst
}

/// Prints the classification and returns the exit code.
pub fn certify(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    let (report, cert) = match &system {
        System::Map(m) => (map_fixed_points(m), map_certificate(m)),
        System::Ode(o) => (ode_equilibria(o), ode_certificate(o)),
        System::Filippov(f) => (filippov_report(f), filippov_certificate(f)),
        System::Hybrid(h) => (hybrid_report(h), hybrid_certificate(h)),
        _ => {
            return Err(usage(format!(
                "certify needs a truncated form, not {}",
                ctx.experiment.system.kind()
            )))
        }
    };
    let mut text = format!(
        "kind: {}, mu = {}\n",
        ctx.experiment.system.kind(),
        fmt_f64(ctx.experiment.system.mu())
    );
    let (verdict, code, detail) = match (&report, &cert) {
        (Err(CertError::Degenerate(d)), _) => ("DEGENERATE", EXIT_DEGENERATE, d.to_string()),
        (Err(e), _) => ("NO CERTIFICATE", EXIT_NO_CERTIFICATE, e.to_string()),
        (Ok(r), Ok(c)) => {
            text.push_str(&describe(r));
            let margin = sampled_margin(&system, c, ctx.seed, 10_000);
            (
                "NONSMOOTH FOLD",
                EXIT_OK,
                format!(
                    "certificate w={}, rate={}; sampled min margin {} over 10^4 states with |x| <= 1e3 (seed {})",
                    c.direction,
                    fmt_f64(c.rate),
                    fmt_f64(margin),
                    ctx.seed
                ),
            )
        }
        (Ok(r), Err(e)) => {
            text.push_str(&describe(r));
            match (r.beb_class, e) {
                (BebClass::Degenerate, _) | (_, CertError::Degenerate(_)) => {
                    ("DEGENERATE", EXIT_DEGENERATE, e.to_string())
                }
                (BebClass::NonsmoothFold, _) => (
                    "NONSMOOTH FOLD",
                    EXIT_NO_CERTIFICATE,
                    "both solutions admissible at this mu; no certificate on this side".into(),
                ),
                _ => ("PERSISTENCE", EXIT_NO_CERTIFICATE, "no certificate".into()),
            }
        }
    };
    text.push_str(&format!("{verdict}; {detail}\n"));
    print!("{text}");
    if let Some(path) = &ctx.out {
        let json = CertifyReport {
            provenance: ctx.provenance().as_json(),
            system: &ctx.experiment.system,
            report: report.as_ref().ok(),
            certificate: cert.as_ref().ok(),
            verdict,
            detail,
        };
        let body = serde_json::to_string_pretty(&json).expect("reports serialize");
        write_atomic(path, body.as_bytes())
            .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    }
    Ok(code)
}

pub fn orbit(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    let map = system.as_map().ok_or_else(|| {
        usage(format!(
            "orbit needs a map, not {}",
            ctx.experiment.system.kind()
        ))
    })?;
    let steps = ctx.budget.or(ctx.experiment.run.steps).unwrap_or(100);
    let x0 = initial_state(&ctx.experiment.run, map.dim());
    let result = iterate(map, &x0, steps).map_err(run_err)?;
    let cert = match &system {
        System::Map(m) => map_certificate(m).ok(),
        _ => None,
    };

    let mut prov = ctx.provenance();
    prov.option("steps", &steps)
        .option("x0", &x0)
        .option("divergence_radius", &DEFAULT_DIVERGENCE_RADIUS);
    match &cert {
        Some(c) => prov.note(format!(
            "certificate: w = {}, rate = {}",
            c.direction,
            fmt_f64(c.rate)
        )),
        None => prov.note("certificate: none"),
    };
    prov.note(match result.outcome {
        OrbitOutcome::Escaped { step } => format!("outcome: escaped at step {step}"),
        OrbitOutcome::BudgetExhausted => "outcome: budget exhausted".into(),
    });
    let mut text = prov.header();
    text.push('k');
    for i in 1..=map.dim() {
        text.push_str(&format!(",x{i}"));
    }
    if cert.is_some() {
        text.push_str(",w.x");
    }
    text.push('\n');
    for (k, x) in result.iterates.iter().enumerate() {
        text.push_str(&k.to_string());
        for v in x.iter() {
            text.push(',');
            text.push_str(&fmt_f64(*v));
        }
        if let Some(c) = &cert {
            text.push(',');
            text.push_str(&fmt_f64(c.value(x)));
        }
        text.push('\n');
    }
    ctx.emit(&text)?;
    Ok(EXIT_OK)
}

pub fn flow(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    let run = &ctx.experiment.run;
    let opts = ctx.flow_options();
    let t_end = run.t_end.unwrap_or(20.0);
    let x0 = initial_state(run, system.dim());
    let traj = match &system {
        System::Ode(o) => integrate_pws_ode(o, &x0, t_end, &opts),
        System::Hybrid(h) => integrate_hybrid(h, &x0, t_end, &opts),
        other => match other.as_filippov() {
            Some((sys, mu)) => integrate_filippov(&sys, &x0, mu, t_end, &opts),
            None => {
                return Err(usage(format!(
                    "flow needs a flow system, not {}",
                    ctx.experiment.system.kind()
                )))
            }
        },
    }
    .map_err(run_err)?;
    let mut prov = ctx.provenance();
    prov.option("t_end", &t_end)
        .option("x0", &x0)
        .option("flow", &opts)
        .option("termination", &traj.termination);
    ctx.emit(&(prov.header() + &traj.to_csv()))?;
    Ok(EXIT_OK)
}

pub fn limit_cycle_cmd(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    let run = &ctx.experiment.run;
    let (sys, mu) = system.as_filippov().ok_or_else(|| {
        usage(format!(
            "limit-cycle needs a Filippov-type system, not {}",
            ctx.experiment.system.kind()
        ))
    })?;
    let start = match (&system, run.section_t, &run.x0) {
        (System::Welander(w), Some(t), _) => w.manifold_point(t),
        (_, None, Some(x)) => Vector::from(x.clone()),
        (System::Welander(w), None, None) => w.manifold_point(0.4),
        _ => {
            return Err(usage(
                "limit-cycle needs run.x0 (or run.section_t for welander)",
            ))
        }
    };
    let mut opts = run.cycle.unwrap_or_default();
    if let Some(f) = run.flow {
        opts.flow = f;
    }
    let max_returns = ctx.budget.or(run.max_returns).unwrap_or(100);
    let cycle = limit_cycle(&sys, &start, mu, max_returns, &opts).map_err(run_err)?;
    let mut prov = ctx.provenance();
    prov.option("section_point", &start)
        .option("max_returns", &max_returns)
        .option("cycle", &opts);
    let Some(cycle) = cycle else {
        prov.note("outcome: no cycle (orbit escaped, came to rest or did not converge)");
        ctx.emit(&prov.header())?;
        return Ok(1);
    };
    prov.note(format!("period: {}", fmt_f64(cycle.period)));
    prov.note(format!("fixed point: {}", cycle.fixed_point()));
    prov.option("contraction_ratios", &cycle.contraction_ratios());
    let mut text = prov.header();
    text.push_str("return,t_return");
    for i in 1..=start.dim() {
        text.push_str(&format!(",x{i}"));
    }
    text.push_str(",gap\n");
    for (k, p) in cycle.points.iter().enumerate() {
        let t = if k == 0 {
            0.0
        } else {
            cycle.return_times[k - 1]
        };
        text.push_str(&format!("{k},{}", fmt_f64(t)));
        for v in p.iter() {
            text.push_str(&format!(",{}", fmt_f64(*v)));
        }
        let gap = if k == 0 {
            String::new()
        } else {
            fmt_f64(cycle.gaps[k - 1])
        };
        text.push_str(&format!(",{gap}\n"));
    }
    ctx.emit(&text)?;
    Ok(EXIT_OK)
}

pub fn tip(ctx: &Context) -> Result<u8, CliError> {
    let System::Stommel(model) = ctx.system()? else {
        return Err(usage("tip needs a stommel system"));
    };
    let run = &ctx.experiment.run;
    let mu_rate = run.mu_rate.unwrap_or(-0.01);
    let mu_start = run.mu_start.unwrap_or(model.mu);
    let tipping = TippingRun {
        mu_start,
        mu_rate,
        t_end: run.t_end.unwrap_or(((mu_start - 0.8) / mu_rate).abs()),
        x0: run.x0.clone().map(Vector::from),
    };
    let opts = ctx.flow_options();
    let traj = run_tipping(&model, &tipping, &opts).map_err(run_err)?;
    let mut prov = ctx.provenance();
    prov.option("mu_start", &mu_start)
        .option("mu_rate", &mu_rate)
        .option("t_end", &tipping.t_end)
        .option("flow", &opts);
    let mut text = prov.header();
    text.push_str("t,mu,T,S,mode\n");
    for s in &traj.samples {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(s.t),
            fmt_f64(s.x[2]),
            fmt_f64(s.x[0]),
            fmt_f64(s.x[1]),
            s.mode
        ));
    }
    ctx.emit(&text)?;
    Ok(EXIT_OK)
}

pub fn scan1d(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    let run = &ctx.experiment.run;
    let sweep = run
        .sweep
        .as_ref()
        .ok_or_else(|| usage("scan1d needs run.sweep"))?;
    let range = (sweep.min, sweep.max);
    let mut prov = ctx.provenance();
    prov.option("sweep", sweep)
        .option("threads", &format!("{:?}", ctx.exec));
    let rows = match &system {
        System::Stommel(m) => {
            if sweep.name != "mu" {
                return Err(usage("stommel scans sweep mu"));
            }
            let x0 = initial_state(run, 2);
            let t_end = run.t_end.unwrap_or(200.0);
            let opts = ctx.flow_options();
            prov.option("x0", &x0)
                .option("t_end", &t_end)
                .option("flow", &opts);
            scan1d_stommel(m, range, sweep.samples, &x0, t_end, &opts, ctx.exec)
        }
        System::Map(m) => {
            let x0 = initial_state(run, m.dim());
            let classify = ctx.classify(ClassifyConfig::default());
            prov.option("x0", &x0).option("classify", &classify);
            let base = &ctx.experiment.system;
            let name = sweep.name.as_str();
            scan1d_map(
                |p| map_family(base, &[(name, p)]),
                range,
                sweep.samples,
                &x0,
                &classify,
                ctx.exec,
            )
        }
        _ => {
            return Err(usage(format!(
                "scan1d needs a piecewise-linear map or stommel, not {}",
                ctx.experiment.system.kind()
            )))
        }
    }
    .map_err(run_err)?;
    ctx.emit(&(prov.header() + &branch_rows_to_csv(&sweep.name, &rows)))?;
    Ok(EXIT_OK)
}

pub fn scan2d_cmd(ctx: &Context) -> Result<u8, CliError> {
    let system = ctx.system()?;
    if !matches!(system, System::Map(_)) {
        return Err(usage(format!(
            "scan2d needs a piecewise-linear map, not {}",
            ctx.experiment.system.kind()
        )));
    }
    let run = &ctx.experiment.run;
    let (Some(x), Some(y)) = (&run.x_axis, &run.y_axis) else {
        return Err(usage("scan2d needs run.x_axis and run.y_axis"));
    };
    let mut spec = GridSpec::desk_scale(x.to_param_axis(), y.to_param_axis());
    spec.classify = ctx.classify(spec.classify);
    spec.initial = run.x0.clone().unwrap_or_default();
    let base = &ctx.experiment.system;
    let (xn, yn) = (x.name.as_str(), y.name.as_str());
    let result = scan2d(
        |a, b| map_family(base, &[(xn, a), (yn, b)]),
        &spec,
        ctx.exec,
    )
    .map_err(run_err)?;

    let mut prov = ctx.provenance();
    prov.option("grid", &spec);
    let failed = result.cells.iter().filter(|c| c.failed).count();
    prov.note(format!("cells flagged as failed: {failed}"));
    let csv = prov.header() + &result.to_csv();
    let svg = result.to_svg(run.cell_px.unwrap_or(4));
    let ppm = result.to_ppm();
    match &ctx.out {
        Some(path) => {
            for (p, bytes) in [
                (sibling(path, "svg"), svg.as_bytes()),
                (sibling(path, "ppm"), ppm.as_slice()),
            ] {
                write_atomic(&p, bytes)
                    .map_err(|e| CliError::Run(format!("{}: {e}", p.display())))?;
            }
            ctx.emit(&csv)?;
        }
        None => ctx.emit(&csv)?,
    }
    Ok(EXIT_OK)
}
