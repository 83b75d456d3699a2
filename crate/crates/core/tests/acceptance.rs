//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nsfold::certificates::{map_certificate, Admissibility, CertError};
use nsfold::flow::{
    integrate_filippov, integrate_hybrid, integrate_pws_ode, limit_cycle, sliding_field,
    CycleOptions, EventKind, FlowOptions, GeneralFilippovSystem, Mode, Trajectory,
};
use nsfold::linalg::{dot, norm};
use nsfold::map_dynamics::{
    classify_attractor, escape_time, iterate, phi_increment_check, quadratic_example_eta,
    Attractor, ClassifyConfig, PhiMonitor,
};
use nsfold::models::{
    bcnf3d, example_map, example_map_quadratic, run_tipping, welander_system, Bcnf3dParams,
    ExampleMapParams, ModelError, StommelModel, StommelSide, TippingRun, WelanderModel,
};
use nsfold::scan::{scan2d, Execution, GridSpec, ParamAxis, ScanResult};
use nsfold::{HybridForm, PwlMap};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

const EXAMPLE: ExampleMapParams = ExampleMapParams {
    delta_l: 1.2,
    delta_r: -2.4,
    alpha: 0.1,
};

fn adjugate_identities() -> Outcome {
    let started = Instant::now();
    let mut rng = common::rng(1);
    let (mut worst_identity, mut worst_invariance) = (0.0f64, 0.0f64);
    for k in 0..200 {
        let n = 1 + k % 6;
        let a = common::uniform_matrix(&mut rng, n, 3.0);
        let adj = a.adjugate();
        let prod = a.matmul(&adj);
        let det = a.determinant();
        let scale = a.max_abs().powi(n as i32).max(1.0);
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { det } else { 0.0 };
                err = err.max((prod[(i, j)] - target).abs());
            }
        }
        worst_identity = worst_identity.max(err / (1e-9 * scale));
        let edited = a.with_first_column_shifted(&common::uniform_vec(&mut rng, n, 3.0));
        let (r0, r1) = (a.first_row_of_adjugate(), edited.first_row_of_adjugate());
        let diff = r0
            .iter()
            .zip(r1.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst_invariance = worst_invariance.max(diff);
    }
    let elapsed = started.elapsed();
    outcome(
        worst_identity <= 1.0 && worst_invariance <= 1e-12 && within(elapsed, 1),
        format!(
            "identity error {:.2e} of bound, first-row drift {worst_invariance:.1e}, {elapsed:.2?}",
            worst_identity
        ),
    )
}

fn map_certificate_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = common::rng(2);
    let mut worst = f64::INFINITY;
    let mut not_diverged = 0;
    for k in 0..500 {
        let n = 2 + k % 3;
        let (m, cert) = common::fold_map(&mut rng, n, 1e-3);
        for _ in 0..1000 {
            let x = common::uniform_vec(&mut rng, n, 10.0);
            let gain = cert.value(&m.apply(&x)) - cert.value(&x);
            worst = worst.min(gain - cert.rate);
        }
        let x0 = vec![0.0; n];
        if classify_attractor(&m, &x0, &ClassifyConfig::default()).unwrap() != Attractor::Diverged {
            not_diverged += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        worst >= -1e-9 && not_diverged == 0 && within(elapsed, 30),
        format!(
            "min(w.g(x) - w.x - rate) = {worst:.2e}, {not_diverged} maps not classified Diverged, {elapsed:.2?}"
        ),
    )
}

fn example_map_drift() -> Outcome {
    let started = Instant::now();
    let m = example_map(&EXAMPLE, 1.0).unwrap();
    let cert = map_certificate(&m).unwrap();
    let exact = cert.direction.as_slice() == [1.0, 1.0] && cert.rate == 1.0;
    let orbit = iterate(&m, &[0.0, 0.0], 50).unwrap();
    let min_inc = orbit
        .iterates
        .windows(2)
        .map(|p| cert.value(&p[1]) - cert.value(&p[0]))
        .fold(f64::INFINITY, f64::min);
    let elapsed = started.elapsed();
    outcome(
        exact && orbit.iterates.len() == 51 && min_inc >= 1.0 - 1e-12 && within(elapsed, 1),
        format!(
            "w = {}, rate = {}, min increment over 50 steps {min_inc}, {elapsed:.2?}",
            cert.direction, cert.rate
        ),
    )
}

fn quadratic_escape() -> Outcome {
    let started = Instant::now();
    let eta = quadratic_example_eta(EXAMPLE.delta_l, EXAMPLE.delta_r, EXAMPLE.alpha);
    let monitor =
        PhiMonitor::quadratic_example(EXAMPLE.delta_l, EXAMPLE.delta_r, EXAMPLE.alpha).unwrap();
    let mut rng = common::rng(4);
    let mut pass = true;
    let mut notes = Vec::new();
    for mu in [1e-3, 1e-2, 1e-1] {
        let map = example_map_quadratic(&EXAMPLE, mu).unwrap();
        let check = phi_increment_check(&map, &monitor, mu, 10_000).unwrap();
        let bound = (6.0 * eta / mu).ceil() as usize;
        let mut worst = 0;
        for _ in 0..100 {
            let x0 = common::in_ball(&mut rng, 2, eta);
            match escape_time(&map, &x0, eta, 10 * bound).unwrap() {
                Some(m) => worst = worst.max(m),
                None => worst = usize::MAX,
            }
        }
        pass &= check.passed && worst <= bound;
        notes.push(format!(
            "mu={mu:e}: min dPhi-mu {:.1e}, escape {worst}/{bound}",
            check.min_increment - mu
        ));
    }
    let elapsed = started.elapsed();
    outcome(
        pass && within(elapsed, 10),
        format!("eta = {eta:.6}; {}; {elapsed:.2?}", notes.join("; ")),
    )
}

/// Manifold-state invariants gathered while running trajectory suites.
#[derive(Default)]
struct ManifoldStats {
    sliding_samples: usize,
    sticking_samples: usize,
    worst_sliding_normal: f64,
    worst_sliding_offset: f64,
    worst_sticking_velocity: f64,
    worst_sticking_offset: f64,
}

impl ManifoldStats {
    fn filippov(&mut self, sys: &GeneralFilippovSystem, mu: f64, traj: &Trajectory) {
        for s in traj.samples.iter().filter(|s| s.mode == Mode::Sliding) {
            self.sliding_samples += 1;
            let fs = sliding_field(sys, &s.x, mu).unwrap();
            let normal = sys.gradient(&s.x).dot(&fs).abs();
            self.worst_sliding_normal = self.worst_sliding_normal.max(normal);
            self.worst_sliding_offset = self.worst_sliding_offset.max(sys.sigma(&s.x).abs());
        }
    }

    fn hybrid(&mut self, h: &HybridForm, traj: &Trajectory) {
        for s in traj.samples.iter().filter(|s| s.mode == Mode::Sticking) {
            self.sticking_samples += 1;
            self.worst_sticking_velocity = self.worst_sticking_velocity.max(h.velocity(&s.x).abs());
            self.worst_sticking_offset = self.worst_sticking_offset.max(s.x[0].abs());
        }
    }

    fn pass(&self) -> bool {
        self.worst_sliding_normal <= 1e-8
            && self.worst_sliding_offset <= 1e-9
            && self.worst_sticking_velocity <= 1e-8
            && self.worst_sticking_offset <= 1e-9
    }

    fn summary(&self) -> String {
        format!(
            "{} sliding samples (|n.fS| <= {:.1e}, |sigma| <= {:.1e}), {} sticking samples (|v| <= {:.1e}, |x1| <= {:.1e})",
            self.sliding_samples,
            self.worst_sliding_normal,
            self.worst_sliding_offset,
            self.sticking_samples,
            self.worst_sticking_velocity,
            self.worst_sticking_offset
        )
    }
}

/// Smallest `(w.x(t2) - w.x(t1)) / (rate (t2 - t1))` over consecutive samples.
fn worst_rate_ratio(traj: &Trajectory, w: &[f64], rate: f64) -> f64 {
    traj.samples
        .windows(2)
        .map(|s| (dot(w, &s[1].x) - dot(w, &s[0].x)) / (rate * (s[1].t - s[0].t)))
        .fold(f64::INFINITY, f64::min)
}

fn trajectory_suites(stats: &mut ManifoldStats) -> Outcome {
    let started = Instant::now();
    let opts = FlowOptions::default();
    let mut rng = common::rng(5);
    let t_end = 20.0;
    let (mut ode, mut fil, mut hyb) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut impacts = 0usize;
    let mut bad_impacts = 0usize;
    let mut failures = Vec::new();
    for k in 0..50 {
        let n = 2 + k % 3;

        let (o, cert) = common::fold_ode(&mut rng, n, 1e-2);
        let x0 = common::uniform_vec(&mut rng, n, 1.0);
        match integrate_pws_ode(&o, &x0, t_end, &opts) {
            Ok(traj) => ode = ode.min(worst_rate_ratio(&traj, &cert.direction, cert.rate)),
            Err(e) => failures.push(format!("ode {k}: {e}")),
        }

        let (f, cert) = common::fold_filippov(&mut rng, n, 1e-2);
        let sys = GeneralFilippovSystem::from(&f);
        let x0 = common::uniform_vec(&mut rng, n, 1.0);
        match integrate_filippov(&sys, &x0, f.mu(), t_end, &opts) {
            Ok(traj) => {
                fil = fil.min(worst_rate_ratio(&traj, &cert.direction, cert.rate));
                stats.filippov(&sys, f.mu(), &traj);
            }
            Err(e) => failures.push(format!("filippov {k}: {e}")),
        }

        let (h, cert) = common::fold_hybrid(&mut rng, n, 1e-2);
        let mut x0 = common::uniform_vec(&mut rng, n, 1.0);
        x0[0] = -x0[0].abs();
        match integrate_hybrid(&h, &x0, t_end, &opts) {
            Ok(traj) => {
                hyb = hyb.min(worst_rate_ratio(&traj, &cert.direction, cert.rate));
                for e in traj.events_of(EventKind::Impact) {
                    impacts += 1;
                    if cert.value(&e.post) <= cert.value(&e.pre) {
                        bad_impacts += 1;
                    }
                }
                stats.hybrid(&h, &traj);
            }
            Err(e) => failures.push(format!("hybrid {k}: {e}")),
        }
    }
    let elapsed = started.elapsed();
    let floor = 1.0 - 1e-6;
    outcome(
        failures.is_empty()
            && ode >= floor
            && fil >= floor
            && hyb >= floor
            && bad_impacts == 0
            && within(elapsed, 120),
        format!(
            "worst rate ratio ode {ode:.9}, filippov {fil:.9}, hybrid {hyb:.9}; {impacts} impacts, {bad_impacts} non-increasing; failures {failures:?}; {elapsed:.2?}"
        ),
    )
}

fn bcnf_grid() -> GridSpec {
    GridSpec::desk_scale(
        ParamAxis::new("tau_L", -2.0, 2.0, 100),
        ParamAxis::new("tau_R", -2.0, 2.0, 100),
    )
}

fn bcnf_family(tau_l: f64, tau_r: f64) -> Result<PwlMap, CertError> {
    let p = Bcnf3dParams {
        tau_l,
        sigma_l: 0.0,
        delta_l: 0.5,
        tau_r,
        sigma_r: 1.0,
        delta_r: 1.5,
    };
    bcnf3d(&p, 1.0).map_err(|e| match e {
        ModelError::Cert(c) => c,
        _ => CertError::NonFinite("bcnf3d parameters"),
    })
}

fn bcnf_quadrants(result: &ScanResult, elapsed: Duration) -> Outcome {
    let spec = &result.spec;
    let h = spec.x.width();
    let mut fold_cells = 0;
    let mut fold_survivors = Vec::new();
    for j in 0..spec.y.cells {
        for i in 0..spec.x.cells {
            let (tl, tr) = (spec.x.value(i), spec.y.value(j));
            if tl < 0.5 - h && tr > 0.5 + h {
                fold_cells += 1;
                if !result.get(i, j).is_diverged() {
                    fold_survivors.push((tl, tr));
                }
            }
        }
    }
    // The corner (0.5, 0.5) is the centre of cell (62, 62).
    let corner = 62usize;
    let near = |di: std::ops::RangeInclusive<usize>, dj: std::ops::RangeInclusive<usize>| {
        di.flat_map(|i| dj.clone().map(move |j| (i, j)))
            .filter(|&(i, j)| !result.get(i, j).is_diverged())
            .count()
    };
    let above_right = near(corner + 1..=corner + 3, corner + 1..=corner + 3);
    let below_right = near(corner + 1..=corner + 3, corner - 3..=corner - 1);
    let below_left = near(corner - 3..=corner - 1, corner - 3..=corner - 1);
    outcome(
        fold_survivors.is_empty()
            && above_right > 0
            && below_right > 0
            && below_left > 0
            && within(elapsed, 120),
        format!(
            "{fold_cells} fold-quadrant cells, {} not Diverged; attractors near corner: {above_right}/{below_right}/{below_left} of 9; {elapsed:.2?}",
            fold_survivors.len()
        ),
    )
}

fn stommel_tipping() -> Outcome {
    let started = Instant::now();
    let m = StommelModel::new(5.0, 0.2, 1.3).unwrap();
    let run = TippingRun {
        mu_start: 1.3,
        mu_rate: -0.01,
        t_end: 50.0,
        x0: None,
    };
    let traj = run_tipping(&m, &run, &FlowOptions::default()).unwrap();
    let mut before = 0.0f64;
    for s in traj.samples.iter().filter(|s| s.x[2] >= 1.05) {
        let eq = m.with_mu(s.x[2]).equilibria();
        let lower = &eq.stable_on(StommelSide::SalinityDominated).unwrap().state;
        before = before.max(norm(&[s.x[0] - lower[0], s.x[1] - lower[1]]));
    }
    let end = &traj.last().x;
    let eq = m.with_mu(end[2]).equilibria();
    let upper = &eq
        .stable_on(StommelSide::TemperatureDominated)
        .unwrap()
        .state;
    let after = norm(&[end[0] - upper[0], end[1] - upper[1]]);
    let elapsed = started.elapsed();
    outcome(
        (end[2] - 0.8).abs() < 1e-12 && after <= 1e-2 && before <= 5e-2 && within(elapsed, 10),
        format!(
            "distance to lower branch while mu >= 1.05: {before:.2e}; at mu = {:.3} distance to upper equilibrium ({:.4}, {:.4}) is {after:.4e}; {elapsed:.2?}",
            end[2], upper[0], upper[1]
        ),
    )
}

fn welander_cycle(stats: &mut ManifoldStats) -> Outcome {
    let started = Instant::now();
    let w = WelanderModel::new(1.3, 0.2, -0.4, 1.0).unwrap();
    let virtual_both = w
        .equilibria()
        .iter()
        .all(|(_, a)| *a == Admissibility::Virtual);
    let sys = welander_system(&w);
    let opts = CycleOptions::default();
    let Ok(Some(cycle)) = limit_cycle(&sys, &w.manifold_point(0.4), w.mu, 100, &opts) else {
        return outcome(false, "no cycle found");
    };
    let ratios = cycle.contraction_ratios();
    let contracting = !ratios.is_empty() && ratios.iter().all(|r| *r < 1.0);
    let p = cycle.fixed_point().clone();
    let perturbed = w.manifold_point(p[0] + 1e-3);
    let back = limit_cycle(&sys, &perturbed, w.mu, 100, &opts);
    let returned = match &back {
        Ok(Some(c)) => norm(&[c.fixed_point()[0] - p[0], c.fixed_point()[1] - p[1]]),
        _ => f64::INFINITY,
    };
    if let Ok(traj) = integrate_filippov(&sys, &p, w.mu, 3.0 * cycle.period, &opts.flow) {
        stats.filippov(&sys, w.mu, &traj);
    }
    let elapsed = started.elapsed();
    outcome(
        virtual_both && contracting && returned <= 1e-5 && within(elapsed, 10),
        format!(
            "both equilibria virtual: {virtual_both}; period {:.6}, section point ({:.6}, {:.6}), gap ratios {:?}; perturbed return within {returned:.1e}; {elapsed:.2?}",
            cycle.period,
            p[0],
            p[1],
            ratios.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let mut stats = ManifoldStats::default();
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, adjugate_identities()),
        (2, map_certificate_suite()),
        (3, example_map_drift()),
        (4, quadratic_escape()),
        (5, trajectory_suites(&mut stats)),
    ];

    let spec = bcnf_grid();
    let started = Instant::now();
    let parallel = scan2d(bcnf_family, &spec, Execution::Parallel).unwrap();
    results.push((6, bcnf_quadrants(&parallel, started.elapsed())));

    results.push((7, stommel_tipping()));
    results.push((8, welander_cycle(&mut stats)));
    results.push((9, outcome(stats.pass(), stats.summary())));

    let reference = parallel.to_csv();
    let mut identical = true;
    let mut runs = Vec::new();
    for exec in [
        Execution::Sequential,
        Execution::Threads(1),
        Execution::Threads(4),
    ] {
        let csv = scan2d(bcnf_family, &spec, exec).unwrap().to_csv();
        identical &= csv == reference;
        runs.push(format!("{exec:?}"));
    }
    results.push((
        10,
        outcome(
            identical,
            format!(
                "outcome CSV ({} bytes) identical across default pool and {}",
                reference.len(),
                runs.join(", ")
            ),
        ),
    ));

    let mut failed = 0;
    for (n, r) in &results {
        if !r.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2}: {} - {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
