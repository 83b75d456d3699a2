//! Event-driven simulation of piecewise-smooth flows: continuous PWS ODEs,
//! Filippov systems with attracting sliding, and impacting systems with
//! reset and sticking.
//!
//! Smooth motion is integrated with the Dormand-Prince 5(4) pair. Events are
//! bracketed by a sign change across an accepted step and refined by an
//! Illinois iteration that re-takes a single step of reduced length from the
//! step start, so located states carry the same local accuracy as ordinary
//! steps.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{FilippovForm, HybridForm, PwlOde};
use crate::linalg::{dot, norm, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integrator could not meet tolerance at t = {t} (step {h:e})")]
    StepFailure { t: f64, h: f64 },
    #[error("sliding field undefined at t = {t}: normal components coincide ({denominator:e})")]
    DegenerateDenominator { t: f64, denominator: f64 },
    #[error("event accumulation at t = {t} with no sticking region to absorb it")]
    ChatterBudgetExceeded { t: f64 },
    #[error("state at t = {t} lies in a repelling sliding region; forward motion is not unique")]
    RepellingSliding { t: f64 },
    #[error("switching gradient disagrees with finite differences by {error:e}")]
    InconsistentGradient { error: f64 },
    #[error("flow did not return to the section within t = {budget}")]
    NoReturn { budget: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Tolerance on the event function at a located event.
    pub event_tol: f64,
    /// Sliding and sticking states are re-projected to within this distance.
    pub manifold_tol: f64,
    pub max_steps: usize,
    /// Integration stops once the state norm exceeds this.
    pub escape_radius: f64,
    /// Impacts closer together than this are treated as an accumulation.
    pub min_impact_interval: f64,
    pub max_impacts_per_unit_time: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: 0.1,
            event_tol: 1e-11,
            manifold_tol: 1e-12,
            max_steps: 2_000_000,
            escape_radius: 1e6,
            min_impact_interval: 1e-12,
            max_impacts_per_unit_time: 10_000,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = [
            ("rtol", self.rtol),
            ("atol", self.atol),
            ("max_step", self.max_step),
            ("event_tol", self.event_tol),
            ("manifold_tol", self.manifold_tol),
            ("escape_radius", self.escape_radius),
            ("min_impact_interval", self.min_impact_interval),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(FlowError::InvalidArgument(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    FlowLeft,
    FlowRight,
    Sliding,
    Sticking,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Crossing,
    SlidingEntry,
    SlidingExit,
    Impact,
    StickingEntry,
    StickingExit,
    Graze,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// State at the located event.
    pub pre: Vector,
    /// State motion continues from; differs from `pre` only at impacts and
    /// projections onto a manifold.
    pub post: Vector,
    pub mode_after: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Escaped,
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: Termination,
}

impl Trajectory {
    fn new() -> Self {
        Trajectory {
            samples: Vec::new(),
            events: Vec::new(),
            termination: Termination::Completed,
        }
    }

    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn mode_sequence(&self) -> Vec<Mode> {
        let mut modes: Vec<Mode> = Vec::new();
        for s in &self.samples {
            if modes.last() != Some(&s.mode) {
                modes.push(s.mode);
            }
        }
        modes
    }

    fn push_sample(&mut self, t: f64, x: &[f64], mode: Mode) {
        match self.samples.last_mut() {
            Some(last) if last.t >= t => {
                last.x = x.into();
                last.mode = mode;
            }
            _ => self.samples.push(Sample {
                t,
                x: x.into(),
                mode,
            }),
        }
    }

    /// Event table `t,kind`, a blank line, then `t,x_1..x_n,mode`. Values use
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,kind\n");
        for e in &self.events {
            out.push_str(&format!("{},{}\n", fmt_f64(e.t), e.kind));
        }
        out.push('\n');
        let n = self.samples.first().map_or(0, |s| s.x.dim());
        out.push('t');
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        out.push_str(",mode\n");
        for s in &self.samples {
            out.push_str(&fmt_f64(s.t));
            for v in s.x.iter() {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push_str(&format!(",{}\n", s.mode));
        }
        out
    }
}

/// Shortest representation that round-trips; at most 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub type FieldFn = Arc<dyn Fn(&[f64], f64) -> Vector + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Vector + Send + Sync>;

/// Two smooth fields separated by the zero set of a switching function:
/// `f^L` applies where `sigma < 0`, `f^R` where `sigma > 0`.
#[derive(Clone)]
pub struct GeneralFilippovSystem {
    dim: usize,
    pub field_left: FieldFn,
    pub field_right: FieldFn,
    pub switching_fn: ScalarFn,
    pub switching_gradient: GradientFn,
    /// Fields agree on the manifold, so every contact is a crossing.
    continuous: bool,
}

impl fmt::Debug for GeneralFilippovSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralFilippovSystem")
            .field("dim", &self.dim)
            .field("continuous", &self.continuous)
            .finish_non_exhaustive()
    }
}

impl GeneralFilippovSystem {
    pub fn new(
        dim: usize,
        field_left: FieldFn,
        field_right: FieldFn,
        switching_fn: ScalarFn,
        switching_gradient: GradientFn,
    ) -> Self {
        GeneralFilippovSystem {
            dim,
            field_left,
            field_right,
            switching_fn,
            switching_gradient,
            continuous: false,
        }
    }

    /// Marks the system as continuous across the manifold.
    pub fn continuous(mut self) -> Self {
        self.continuous = true;
        self
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        (self.switching_fn)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vector {
        (self.switching_gradient)(x)
    }

    pub fn f_left(&self, x: &[f64], mu: f64) -> Vector {
        (self.field_left)(x, mu)
    }

    pub fn f_right(&self, x: &[f64], mu: f64) -> Vector {
        (self.field_right)(x, mu)
    }

    /// Normal components `grad(sigma) . f^L` and `grad(sigma) . f^R`.
    pub fn normal_components(&self, x: &[f64], mu: f64) -> (f64, f64) {
        let g = self.gradient(x);
        (g.dot(&self.f_left(x, mu)), g.dot(&self.f_right(x, mu)))
    }

    /// Compares the gradient callback with central differences at `points`.
    pub fn check_gradient(&self, points: &[Vector], tol: f64) -> Result<(), FlowError> {
        for p in points {
            let g = self.gradient(p);
            let mut x = p.to_vec();
            for i in 0..self.dim {
                let h = 1e-6 * (1.0 + p[i].abs());
                x[i] = p[i] + h;
                let up = self.sigma(&x);
                x[i] = p[i] - h;
                let down = self.sigma(&x);
                x[i] = p[i];
                let error = ((up - down) / (2.0 * h) - g[i]).abs();
                if error > tol * (1.0 + g[i].abs()) {
                    return Err(FlowError::InconsistentGradient { error });
                }
            }
        }
        Ok(())
    }

    /// Newton projection along the gradient onto `sigma = 0`.
    pub fn project(&self, x: &mut [f64], tol: f64) {
        for _ in 0..8 {
            let s = self.sigma(x);
            if s.abs() <= tol {
                return;
            }
            let g = self.gradient(x);
            let gg = g.dot(&g);
            if gg == 0.0 {
                return;
            }
            x.iter_mut()
                .zip(g.iter())
                .for_each(|(xi, gi)| *xi -= s * gi / gg);
        }
    }

    fn tangency_tol(&self, x: &[f64], mu: f64) -> f64 {
        let g = norm(&self.gradient(x));
        let f = norm(&self.f_left(x, mu)).max(norm(&self.f_right(x, mu)));
        1e-10 * (1.0 + f) * g.max(f64::MIN_POSITIVE)
    }
}

fn first_coordinate_switch() -> (ScalarFn, GradientFn, usize) {
    (
        Arc::new(|x: &[f64]| x[0]),
        Arc::new(|x: &[f64]| Vector::unit(x.len(), 0)),
        0,
    )
}

impl From<&PwlOde> for GeneralFilippovSystem {
    fn from(o: &PwlOde) -> Self {
        let (al, ar, b) = (o.a_left().clone(), o.a_right().clone(), o.b().clone());
        let b2 = b.clone();
        let (sigma, grad, _) = first_coordinate_switch();
        GeneralFilippovSystem::new(
            o.dim(),
            Arc::new(move |x, mu| affine(&al.mul_vec(x), &b, mu)),
            Arc::new(move |x, mu| affine(&ar.mul_vec(x), &b2, mu)),
            sigma,
            grad,
        )
        .continuous()
    }
}

impl From<&FilippovForm> for GeneralFilippovSystem {
    fn from(f: &FilippovForm) -> Self {
        let (a, b, c) = (f.a().clone(), f.b().clone(), f.c().clone());
        let (sigma, grad, _) = first_coordinate_switch();
        GeneralFilippovSystem::new(
            f.dim(),
            Arc::new(move |x, mu| affine(&a.mul_vec(x), &b, mu)),
            Arc::new(move |_x, _mu| c.clone()),
            sigma,
            grad,
        )
    }
}

fn affine(ax: &Vector, b: &[f64], mu: f64) -> Vector {
    let mut out = ax.clone();
    out.iter_mut().zip(b).for_each(|(o, bi)| *o += bi * mu);
    out
}

/// Filippov sliding field `(n_L f^R - n_R f^L) / (n_L - n_R)` where `n_L`,
/// `n_R` are the normal components of the two fields.
pub fn sliding_field(sys: &GeneralFilippovSystem, x: &[f64], mu: f64) -> Result<Vector, FlowError> {
    let g = sys.gradient(x);
    let fl = sys.f_left(x, mu);
    let fr = sys.f_right(x, mu);
    let (nl, nr) = (g.dot(&fl), g.dot(&fr));
    let den = nl - nr;
    if den.abs() <= sys.tangency_tol(x, mu) {
        return Err(FlowError::DegenerateDenominator {
            t: f64::NAN,
            denominator: den,
        });
    }
    Ok(fl
        .iter()
        .zip(fr.iter())
        .map(|(l, r)| (nl * r - nr * l) / den)
        .collect::<Vec<_>>()
        .into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManifoldClass {
    Crossing,
    SlidingAttracting,
    SlidingRepelling,
    Tangency,
}

/// Classifies a point of the switching manifold by the signs of the normal
/// components of the two fields.
pub fn classify_manifold_point(sys: &GeneralFilippovSystem, x: &[f64], mu: f64) -> ManifoldClass {
    let (nl, nr) = sys.normal_components(x, mu);
    let tol = sys.tangency_tol(x, mu);
    if nl.abs() <= tol || nr.abs() <= tol {
        ManifoldClass::Tangency
    } else if nl * nr > 0.0 {
        ManifoldClass::Crossing
    } else if nl > 0.0 {
        ManifoldClass::SlidingAttracting
    } else {
        ManifoldClass::SlidingRepelling
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type Rhs<'a> = dyn Fn(&[f64]) -> Vector + 'a;
type Projection<'a> = dyn Fn(&mut [f64]) + 'a;
type EventFn<'a> = dyn Fn(&[f64]) -> f64 + 'a;
type TrialStep<'a> = dyn Fn(&[f64], f64) -> (Vec<f64>, f64) + 'a;

/// One Dormand-Prince step; returns the fifth-order state and the scaled
/// error norm.
fn dopri_step(rhs: &Rhs, x: &[f64], h: f64, opts: &FlowOptions) -> (Vec<f64>, f64) {
    let n = x.len();
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    let mut stage = vec![0.0; n];
    for s in 0..6 {
        debug_assert!(C[s] >= 0.0);
        for i in 0..n {
            stage[i] = x[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
        }
        k.push(rhs(&stage));
    }
    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + h * (0..6).map(|j| A[6][j] * k[j][i]).sum::<f64>())
        .collect();
    k.push(rhs(&next));
    let mut acc = 0.0;
    for i in 0..n {
        let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
        let sc = opts.atol + opts.rtol * x[i].abs().max(next[i].abs());
        acc += (e / sc) * (e / sc);
    }
    let err = (acc / n as f64).sqrt();
    (next, if err.is_finite() { err } else { f64::INFINITY })
}

enum SegmentEnd {
    Finished,
    Escaped,
    Event { index: usize },
}

/// Integrates one smooth piece from `(t, x)` until `t_end`, escape, or the
/// first event function to become positive. On return `(t, x)` holds the
/// final or located state; every accepted step before it is passed to
/// `sink`.
#[allow(clippy::too_many_arguments)]
fn run_segment(
    rhs: &Rhs,
    project: &Projection,
    events: &[&EventFn],
    t: &mut f64,
    x: &mut Vec<f64>,
    h: &mut f64,
    t_end: f64,
    opts: &FlowOptions,
    steps: &mut usize,
    sink: &mut dyn FnMut(f64, &[f64]),
) -> Result<SegmentEnd, FlowError> {
    let trial = |x0: &[f64], hh: f64| {
        let (mut next, err) = dopri_step(rhs, x0, hh, opts);
        project(&mut next);
        (next, err)
    };
    loop {
        if *t >= t_end {
            return Ok(SegmentEnd::Finished);
        }
        *steps += 1;
        if *steps > opts.max_steps {
            return Err(FlowError::StepFailure { t: *t, h: *h });
        }
        let remaining = t_end - *t;
        let hh = h.min(opts.max_step).min(remaining);
        let (next, err) = trial(x, hh);
        if err > 1.0 || !next.iter().all(|v| v.is_finite()) {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            *h = hh * factor;
            if *h < 1e-15 * (1.0 + t.abs()) {
                return Err(FlowError::StepFailure { t: *t, h: *h });
            }
            continue;
        }
        let grow = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };

        let mut earliest: Option<(f64, Vec<f64>, usize)> = None;
        for (index, g) in events.iter().enumerate() {
            let g_old = g(x);
            let g_new = g(&next);
            if !(g_new > 0.0 && g_old <= opts.event_tol) {
                continue;
            }
            let (dt, xe) = if g_old > 0.0 {
                (0.0, x.clone())
            } else {
                locate(
                    &trial,
                    g,
                    x,
                    hh,
                    g_old,
                    next.clone(),
                    g_new,
                    opts.event_tol,
                    *t,
                )
            };
            if earliest.as_ref().is_none_or(|(best, _, _)| dt < *best) {
                earliest = Some((dt, xe, index));
            }
        }
        if let Some((dt, xe, index)) = earliest {
            *t += dt;
            *x = xe;
            *h = hh.max(1e-3 * opts.max_step).min(opts.max_step);
            return Ok(SegmentEnd::Event { index });
        }

        *t = if hh == remaining { t_end } else { *t + hh };
        *x = next;
        *h = hh * grow;
        sink(*t, x);
        if norm(x) > opts.escape_radius {
            return Ok(SegmentEnd::Escaped);
        }
    }
}

/// Illinois iteration on the step length for the zero of `g` in `(0, h]`.
/// Returns a state on the positive side within tolerance, or the upper end
/// of a bracket that cannot be narrowed further.
#[allow(clippy::too_many_arguments)]
fn locate(
    trial: &TrialStep,
    g: &EventFn,
    x0: &[f64],
    h: f64,
    g_lo: f64,
    x_hi: Vec<f64>,
    g_hi: f64,
    tol: f64,
    t: f64,
) -> (f64, Vec<f64>) {
    let (mut lo, mut hi) = (0.0, h);
    let (mut glo, mut ghi) = (g_lo, g_hi);
    let mut best = (hi, x_hi);
    let mut last_side = 0i8;
    for _ in 0..200 {
        if ghi <= tol || hi - lo <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
            break;
        }
        let mut m = lo - glo * (hi - lo) / (ghi - glo);
        if !(m > lo && m < hi) {
            m = 0.5 * (lo + hi);
        }
        let (xm, _) = trial(x0, m);
        let gm = g(&xm);
        if gm > 0.0 {
            hi = m;
            ghi = gm;
            best = (m, xm);
            if last_side == 1 {
                glo *= 0.5;
            }
            last_side = 1;
        } else {
            lo = m;
            glo = gm;
            if last_side == -1 {
                ghi *= 0.5;
            }
            last_side = -1;
        }
    }
    best
}

fn initial_step(rhs: &Rhs, x: &[f64], opts: &FlowOptions) -> f64 {
    let f = norm(&rhs(x));
    let h = if f > 0.0 {
        0.01 * norm(x).max(1.0) / f
    } else {
        0.01
    };
    h.min(opts.max_step).max(1e-10)
}

/// Guards against loops of events at a single instant.
struct ZenoGuard {
    last_t: f64,
    repeats: usize,
}

impl ZenoGuard {
    fn new() -> Self {
        ZenoGuard {
            last_t: f64::NEG_INFINITY,
            repeats: 0,
        }
    }

    fn record(&mut self, t: f64) -> Result<(), FlowError> {
        if t - self.last_t <= 1e-13 * (1.0 + t.abs()) {
            self.repeats += 1;
            if self.repeats > 100 {
                return Err(FlowError::ChatterBudgetExceeded { t });
            }
        } else {
            self.repeats = 0;
        }
        self.last_t = t;
        Ok(())
    }
}

fn check_start(x0: &[f64], dim: usize, t_end: f64) -> Result<(), FlowError> {
    if x0.len() != dim {
        return Err(FlowError::InvalidArgument(format!(
            "initial state has dimension {}, system has {dim}",
            x0.len()
        )));
    }
    if !(t_end > 0.0) {
        return Err(FlowError::InvalidArgument("t_end must be positive".into()));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(FlowError::InvalidArgument(
            "initial state is not finite".into(),
        ));
    }
    Ok(())
}

/// Integrates a continuous piecewise-linear ODE; manifold contacts are
/// crossings.
pub fn integrate_pws_ode(
    o: &PwlOde,
    x0: &[f64],
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory, FlowError> {
    integrate_filippov(&GeneralFilippovSystem::from(o), x0, o.mu(), t_end, opts)
}

/// Integrates a Filippov system, sliding along attracting parts of the
/// manifold.
pub fn integrate_filippov(
    sys: &GeneralFilippovSystem,
    x0: &[f64],
    mu: f64,
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory, FlowError> {
    simulate_filippov(sys, x0, mu, t_end, opts, &mut |_| false)
}

/// Decision on reaching the manifold from `side` (`FlowLeft` or `FlowRight`).
fn arrival(sys: &GeneralFilippovSystem, x: &[f64], mu: f64, from: Mode) -> (EventKind, Mode) {
    let (nl, nr) = sys.normal_components(x, mu);
    let tol = sys.tangency_tol(x, mu);
    let other = if from == Mode::FlowLeft {
        Mode::FlowRight
    } else {
        Mode::FlowLeft
    };
    if sys.continuous {
        return (EventKind::Crossing, other);
    }
    // Oriented so that `own` is the component of the field we arrive on
    // (positive towards the manifold) and `beyond` that of the other field
    // (positive away from it).
    let (own, beyond) = if from == Mode::FlowLeft {
        (nl, nr)
    } else {
        (-nr, -nl)
    };
    if beyond > tol {
        (EventKind::Crossing, other)
    } else if beyond < -tol && own > tol {
        (EventKind::SlidingEntry, Mode::Sliding)
    } else if own > tol {
        // The other field is tangent: the sliding field equals it.
        (EventKind::Crossing, other)
    } else {
        (EventKind::Graze, from)
    }
}

/// Mode for a state starting on the manifold.
fn start_mode_on_manifold(
    sys: &GeneralFilippovSystem,
    x: &[f64],
    mu: f64,
) -> Result<Mode, FlowError> {
    let (nl, nr) = sys.normal_components(x, mu);
    let tol = sys.tangency_tol(x, mu);
    if sys.continuous {
        return Ok(if nl < 0.0 {
            Mode::FlowLeft
        } else {
            Mode::FlowRight
        });
    }
    match classify_manifold_point(sys, x, mu) {
        ManifoldClass::Crossing => Ok(if nl > 0.0 {
            Mode::FlowRight
        } else {
            Mode::FlowLeft
        }),
        ManifoldClass::SlidingAttracting => Ok(Mode::Sliding),
        ManifoldClass::SlidingRepelling => Err(FlowError::RepellingSliding { t: 0.0 }),
        ManifoldClass::Tangency => Ok(if nr > tol {
            Mode::FlowRight
        } else if nl < -tol {
            Mode::FlowLeft
        } else if nl > tol && nr < tol {
            Mode::Sliding
        } else {
            Mode::FlowLeft
        }),
    }
}

fn simulate_filippov(
    sys: &GeneralFilippovSystem,
    x0: &[f64],
    mu: f64,
    t_end: f64,
    opts: &FlowOptions,
    stop: &mut dyn FnMut(&Event) -> bool,
) -> Result<Trajectory, FlowError> {
    check_start(x0, sys.dim, t_end)?;
    opts.validate()?;
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut traj = Trajectory::new();
    let s0 = sys.sigma(&x);
    let mut mode = if s0.abs() <= opts.manifold_tol {
        sys.project(&mut x, opts.manifold_tol);
        start_mode_on_manifold(sys, &x, mu)?
    } else if s0 < 0.0 {
        Mode::FlowLeft
    } else {
        Mode::FlowRight
    };
    traj.push_sample(t, &x, mode);

    let fl = |x: &[f64]| sys.f_left(x, mu);
    let fr = |x: &[f64]| sys.f_right(x, mu);
    let fs = |x: &[f64]| {
        sliding_field(sys, x, mu).unwrap_or_else(|_| Vector::from(vec![f64::NAN; x.len()]))
    };
    let no_projection = |_: &mut [f64]| {};
    let onto_manifold = |x: &mut [f64]| sys.project(x, opts.manifold_tol);
    let into_right = |x: &[f64]| sys.sigma(x);
    let into_left = |x: &[f64]| -sys.sigma(x);
    let exit_left = |x: &[f64]| -sys.normal_components(x, mu).0;
    let exit_right = |x: &[f64]| sys.normal_components(x, mu).1;

    let mut h = initial_step(&fl, &x, opts);
    let mut steps = 0usize;
    let mut guard = ZenoGuard::new();
    loop {
        let (rhs, project, events): (&Rhs, &Projection, Vec<&EventFn>) = match mode {
            Mode::FlowLeft => (&fl, &no_projection, vec![&into_right]),
            Mode::FlowRight => (&fr, &no_projection, vec![&into_left]),
            Mode::Sliding => (&fs, &onto_manifold, vec![&exit_left, &exit_right]),
            Mode::Sticking => unreachable!("no sticking in Filippov systems"),
        };
        let current = mode;
        let end = run_segment(
            rhs,
            project,
            &events,
            &mut t,
            &mut x,
            &mut h,
            t_end,
            opts,
            &mut steps,
            &mut |t, x| traj.push_sample(t, x, current),
        );
        let end = match end {
            Err(FlowError::StepFailure { .. }) if mode == Mode::Sliding => {
                let (nl, nr) = sys.normal_components(&x, mu);
                return Err(FlowError::DegenerateDenominator {
                    t,
                    denominator: nl - nr,
                });
            }
            other => other?,
        };
        match end {
            SegmentEnd::Finished => break,
            SegmentEnd::Escaped => {
                traj.termination = Termination::Escaped;
                break;
            }
            SegmentEnd::Event { index } => {
                guard.record(t)?;
                let pre = Vector::from(x.as_slice());
                sys.project(&mut x, opts.manifold_tol);
                let (kind, next) = match (mode, index) {
                    (Mode::FlowLeft | Mode::FlowRight, _) => arrival(sys, &x, mu, mode),
                    (Mode::Sliding, 0) => (EventKind::SlidingExit, Mode::FlowLeft),
                    _ => (EventKind::SlidingExit, Mode::FlowRight),
                };
                mode = next;
                let event = Event {
                    t,
                    kind,
                    pre,
                    post: x.as_slice().into(),
                    mode_after: mode,
                };
                traj.push_sample(t, &x, mode);
                let halt = stop(&event);
                traj.events.push(event);
                if halt {
                    traj.termination = Termination::Stopped;
                    break;
                }
            }
        }
    }
    Ok(traj)
}

/// Integrates the impacting hybrid form from `x_1 <= 0`.
pub fn integrate_hybrid(
    hy: &HybridForm,
    x0: &[f64],
    t_end: f64,
    opts: &FlowOptions,
) -> Result<Trajectory, FlowError> {
    check_start(x0, hy.dim(), t_end)?;
    opts.validate()?;
    let eac = hy.restitution_term();
    if !(eac < -1.0) {
        return Err(FlowError::InvalidArgument(format!(
            "reset law needs e_1^T A c < -1, got {eac}"
        )));
    }
    if x0[0] > opts.manifold_tol {
        return Err(FlowError::InvalidArgument(
            "initial state must satisfy x_1 <= 0".into(),
        ));
    }
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut traj = Trajectory::new();
    let c = hy.c().clone();

    let scale = |x: &[f64]| 1e-10 * (1.0 + norm(&hy.field(x)));
    let onto_grazing_set = |x: &mut [f64]| {
        x[0] = 0.0;
        let v = hy.velocity(x);
        x.iter_mut()
            .zip(c.iter())
            .for_each(|(xi, ci)| *xi -= v * ci / eac);
    };
    let f = |x: &[f64]| hy.field(x);
    let fst = |x: &[f64]| hy.sticking_field(x);
    let no_projection = |_: &mut [f64]| {};
    let hit_wall = |x: &[f64]| x[0];
    let detach = |x: &[f64]| -hy.acceleration(x);

    let mut mode = Mode::FlowLeft;
    let mut pending_contact = x[0] >= -opts.manifold_tol;
    if pending_contact {
        x[0] = 0.0;
    }
    traj.push_sample(t, &x, mode);

    let mut h = initial_step(&f, &x, opts);
    let mut steps = 0usize;
    let mut guard = ZenoGuard::new();
    let mut impacts: VecDeque<f64> = VecDeque::new();
    loop {
        if pending_contact {
            pending_contact = false;
            let pre = Vector::from(x.as_slice());
            x[0] = 0.0;
            let v = hy.velocity(&x);
            let a = hy.acceleration(&x);
            let tol = scale(&x);
            let (kind, next) = if v > tol {
                let v_after = (1.0 + eac) * v;
                let last_gap = impacts.back().map_or(f64::INFINITY, |last| t - last);
                while impacts.front().is_some_and(|&s| t - s > 1.0) {
                    impacts.pop_front();
                }
                let accumulating = last_gap < opts.min_impact_interval
                    || impacts.len() >= opts.max_impacts_per_unit_time
                    || (a > 0.0 && 2.0 * v_after.abs() / a < opts.min_impact_interval);
                if accumulating {
                    if a <= tol {
                        return Err(FlowError::ChatterBudgetExceeded { t });
                    }
                    onto_grazing_set(&mut x);
                    (EventKind::StickingEntry, Mode::Sticking)
                } else {
                    impacts.push_back(t);
                    x = hy.reset(&x).into_inner();
                    x[0] = 0.0;
                    (EventKind::Impact, Mode::FlowLeft)
                }
            } else if v < -tol {
                (EventKind::Graze, Mode::FlowLeft)
            } else if a > tol {
                onto_grazing_set(&mut x);
                (EventKind::StickingEntry, Mode::Sticking)
            } else {
                (EventKind::Graze, Mode::FlowLeft)
            };
            mode = next;
            if !(t == 0.0 && kind == EventKind::Graze) {
                guard.record(t)?;
                traj.events.push(Event {
                    t,
                    kind,
                    pre,
                    post: x.as_slice().into(),
                    mode_after: mode,
                });
            }
            if kind == EventKind::Impact {
                // The sample at the impact instant keeps the pre-impact state.
                if traj.samples.last().is_none_or(|s| s.t < t) {
                    traj.push_sample(t, &traj.events.last().unwrap().pre.clone(), Mode::FlowLeft);
                }
            } else {
                traj.push_sample(t, &x, mode);
            }
        }

        let (rhs, project, events): (&Rhs, &Projection, Vec<&EventFn>) = match mode {
            Mode::FlowLeft => (&f, &no_projection, vec![&hit_wall]),
            Mode::Sticking => (&fst, &onto_grazing_set, vec![&detach]),
            _ => unreachable!("impacting systems flow only on x_1 <= 0"),
        };
        let current = mode;
        let end = run_segment(
            rhs,
            project,
            &events,
            &mut t,
            &mut x,
            &mut h,
            t_end,
            opts,
            &mut steps,
            &mut |t, x| traj.push_sample(t, x, current),
        )?;
        match end {
            SegmentEnd::Finished => break,
            SegmentEnd::Escaped => {
                traj.termination = Termination::Escaped;
                break;
            }
            SegmentEnd::Event { .. } => match mode {
                Mode::FlowLeft => pending_contact = true,
                _ => {
                    guard.record(t)?;
                    let pre = Vector::from(x.as_slice());
                    onto_grazing_set(&mut x);
                    mode = Mode::FlowLeft;
                    traj.events.push(Event {
                        t,
                        kind: EventKind::StickingExit,
                        pre,
                        post: x.as_slice().into(),
                        mode_after: mode,
                    });
                    traj.push_sample(t, &x, mode);
                }
            },
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    pub flow: FlowOptions,
    /// Successive section returns closer than this declare convergence.
    pub tolerance: f64,
    /// Time allowed for each return to the section.
    pub return_budget: f64,
    /// Speed below which a non-returning orbit counts as having come to rest.
    pub rest_speed: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            flow: FlowOptions::default(),
            tolerance: 1e-7,
            return_budget: 1e3,
            rest_speed: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    /// Return time at convergence.
    pub period: f64,
    /// Successive section points, starting with the supplied one.
    pub points: Vec<Vector>,
    pub return_times: Vec<f64>,
    /// `|p_{k+1} - p_k|`.
    pub gaps: Vec<f64>,
}

impl Cycle {
    pub fn fixed_point(&self) -> &Vector {
        self.points.last().expect("cycle has section points")
    }

    /// Ratios of successive gaps; below one for a contracting return map.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.gaps
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

/// Iterates the return map to the switching manifold, counting crossings in
/// the direction the flow crosses at `section_point`.
///
/// Returns `None` when the orbit escapes, comes to rest, or fails to
/// converge within `max_returns`.
pub fn limit_cycle(
    sys: &GeneralFilippovSystem,
    section_point: &[f64],
    mu: f64,
    max_returns: usize,
    opts: &CycleOptions,
) -> Result<Option<Cycle>, FlowError> {
    if !(opts.tolerance > 0.0 && opts.return_budget > 0.0) {
        return Err(FlowError::InvalidArgument(
            "cycle tolerance and return budget must be positive".into(),
        ));
    }
    let mut p = section_point.to_vec();
    if sys.sigma(&p).abs() > 1e-8 * (1.0 + norm(&p)) {
        return Err(FlowError::InvalidArgument(
            "section point is not on the manifold".into(),
        ));
    }
    sys.project(&mut p, opts.flow.manifold_tol);
    let target = match start_mode_on_manifold(sys, &p, mu)? {
        m @ (Mode::FlowLeft | Mode::FlowRight)
            if classify_manifold_point(sys, &p, mu) == ManifoldClass::Crossing =>
        {
            m
        }
        _ => {
            return Err(FlowError::InvalidArgument(
                "flow is not transversal at the section point".into(),
            ))
        }
    };
    let mut cycle = Cycle {
        period: f64::NAN,
        points: vec![p.as_slice().into()],
        return_times: Vec::new(),
        gaps: Vec::new(),
    };
    for _ in 0..max_returns {
        let traj = simulate_filippov(sys, &p, mu, opts.return_budget, &opts.flow, &mut |e| {
            e.kind == EventKind::Crossing && e.mode_after == target && e.t > 0.0
        })?;
        match traj.termination {
            Termination::Stopped => {}
            Termination::Escaped => return Ok(None),
            Termination::Completed => {
                let end = &traj.last().x;
                let speed = norm(&match traj.last().mode {
                    Mode::FlowLeft => sys.f_left(end, mu),
                    Mode::FlowRight => sys.f_right(end, mu),
                    _ => sliding_field(sys, end, mu)?,
                });
                if speed < opts.rest_speed {
                    return Ok(None);
                }
                return Err(FlowError::NoReturn {
                    budget: opts.return_budget,
                });
            }
        }
        let event = traj.events.last().expect("stopped on an event");
        let next = event.post.clone();
        let gap = norm(
            &next
                .iter()
                .zip(p.iter())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        cycle.return_times.push(event.t);
        cycle.gaps.push(gap);
        cycle.points.push(next.clone());
        p = next.into_inner();
        if gap <= opts.tolerance {
            cycle.period = event.t;
            return Ok(Some(cycle));
        }
    }
    Ok(None)
}

/// `d/dt (w . x)` is not available for hybrid resets, so monotonicity checks
/// use sample differences.
pub fn projected_increments(traj: &Trajectory, w: &[f64]) -> Vec<(f64, f64)> {
    traj.samples
        .windows(2)
        .map(|s| (s[1].t - s[0].t, dot(w, &s[1].x) - dot(w, &s[0].x)))
        .collect()
}
