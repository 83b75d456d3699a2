//! Iteration of two-piece maps: orbits, escape times, attractor
//! classification and the quadratic-map escape monitor.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::PwlMap;
use crate::flow::ScalarFn;
use crate::linalg::{norm, Vector};

/// Orbits leaving this ball count as divergent.
pub const DEFAULT_DIVERGENCE_RADIUS: f64 = 1e6;
/// Absolute recurrence tolerance for period detection.
pub const DEFAULT_PERIOD_TOL: f64 = 1e-8;
pub const DEFAULT_TRANSIENT: usize = 100_000;
pub const DEFAULT_WINDOW: usize = 1_000;
pub const DEFAULT_MAX_PERIOD: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state dimension {found} does not match map dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// A continuous map of `R^n` with a single switching manifold `x_1 = 0`.
pub trait PiecewiseMap: Sync {
    fn dim(&self) -> usize;

    /// Writes the image of `x` into `out`. The left branch is used on
    /// `x_1 <= 0`.
    fn apply_into(&self, x: &[f64], out: &mut [f64]);

    /// Left-branch and right-branch images, regardless of `x_1`.
    fn branch_images(&self, x: &[f64]) -> (Vector, Vector);

    fn apply(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out.into()
    }
}

impl PiecewiseMap for PwlMap {
    fn dim(&self) -> usize {
        PwlMap::dim(self)
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        PwlMap::apply_into(self, x, out)
    }

    fn branch_images(&self, x: &[f64]) -> (Vector, Vector) {
        let mu = self.mu();
        let shift = |mut v: Vector| {
            v.iter_mut()
                .zip(self.b().iter())
                .for_each(|(o, b)| *o += b * mu);
            v
        };
        (
            shift(self.a_left().mul_vec(x)),
            shift(self.a_right().mul_vec(x)),
        )
    }
}

/// Higher-order term `E(x; mu)` added to one branch of a [`PwlMap`].
pub type Residual = Arc<dyn Fn(&[f64], f64) -> Vector + Send + Sync>;

/// `f(x) = A_{L,R} x + b mu + E^{L,R}(x; mu)`.
#[derive(Clone)]
pub struct TwoPieceSmoothMap {
    pub base: PwlMap,
    pub residual_left: Residual,
    pub residual_right: Residual,
}

impl TwoPieceSmoothMap {
    pub fn new(base: PwlMap, residual_left: Residual, residual_right: Residual) -> Self {
        TwoPieceSmoothMap {
            base,
            residual_left,
            residual_right,
        }
    }

    /// Same residual on both sides.
    pub fn symmetric(base: PwlMap, residual: Residual) -> Self {
        Self::new(base, residual.clone(), residual)
    }

    pub fn mu(&self) -> f64 {
        self.base.mu()
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        TwoPieceSmoothMap {
            base: self.base.with_mu(mu),
            ..self.clone()
        }
    }
}

impl fmt::Debug for TwoPieceSmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoPieceSmoothMap")
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl PiecewiseMap for TwoPieceSmoothMap {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.apply_into(x, out);
        let residual = if x[0] <= 0.0 {
            (self.residual_left)(x, self.mu())
        } else {
            (self.residual_right)(x, self.mu())
        };
        out.iter_mut()
            .zip(residual.iter())
            .for_each(|(o, e)| *o += e);
    }

    fn branch_images(&self, x: &[f64]) -> (Vector, Vector) {
        let (mut l, mut r) = self.base.branch_images(x);
        let el = (self.residual_left)(x, self.mu());
        let er = (self.residual_right)(x, self.mu());
        l.iter_mut().zip(el.iter()).for_each(|(o, e)| *o += e);
        r.iter_mut().zip(er.iter()).for_each(|(o, e)| *o += e);
        (l, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitOutcome {
    /// The state at this step left the escape ball or became non-finite.
    Escaped {
        step: usize,
    },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitResult {
    /// `x_0, x_1, ...` up to and including the escaping state.
    pub iterates: Vec<Vector>,
    pub outcome: OrbitOutcome,
}

fn check_state<M: PiecewiseMap + ?Sized>(map: &M, x0: &[f64]) -> Result<(), MapError> {
    if x0.len() != map.dim() {
        return Err(MapError::DimensionMismatch {
            expected: map.dim(),
            found: x0.len(),
        });
    }
    Ok(())
}

fn escaped(x: &[f64], radius: f64) -> bool {
    let mut r = norm(x);
    if r.is_infinite() && x.iter().all(|v| v.is_finite()) {
        let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        r = m * norm(&x.iter().map(|v| v / m).collect::<Vec<_>>());
    }
    !r.is_finite() || r > radius
}

/// Iterates `steps` times, stopping early if the orbit leaves the ball of
/// [`DEFAULT_DIVERGENCE_RADIUS`].
pub fn iterate<M: PiecewiseMap + ?Sized>(
    map: &M,
    x0: &[f64],
    steps: usize,
) -> Result<OrbitResult, MapError> {
    iterate_within(map, x0, steps, DEFAULT_DIVERGENCE_RADIUS)
}

pub fn iterate_within<M: PiecewiseMap + ?Sized>(
    map: &M,
    x0: &[f64],
    steps: usize,
    radius: f64,
) -> Result<OrbitResult, MapError> {
    if steps == 0 {
        return Err(MapError::InvalidArgument("steps must be at least 1".into()));
    }
    check_state(map, x0)?;
    let mut iterates = Vec::with_capacity(steps + 1);
    iterates.push(Vector::from(x0));
    for step in 1..=steps {
        let next = map.apply(&iterates[step - 1]);
        let out = escaped(&next, radius);
        iterates.push(next);
        if out {
            return Ok(OrbitResult {
                iterates,
                outcome: OrbitOutcome::Escaped { step },
            });
        }
    }
    Ok(OrbitResult {
        iterates,
        outcome: OrbitOutcome::BudgetExhausted,
    })
}

/// Smallest `m` in `1..=budget` with `|f^m(x0)| > radius`.
pub fn escape_time<M: PiecewiseMap + ?Sized>(
    map: &M,
    x0: &[f64],
    radius: f64,
    budget: usize,
) -> Result<Option<usize>, MapError> {
    if radius <= 0.0 {
        return Err(MapError::InvalidArgument("radius must be positive".into()));
    }
    check_state(map, x0)?;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for m in 1..=budget {
        map.apply_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        if escaped(&x, radius) {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// A scalar function whose increase along orbits forces escape from `B_eta`.
#[derive(Clone)]
pub struct PhiMonitor {
    pub phi: ScalarFn,
    pub eta: f64,
}

impl fmt::Debug for PhiMonitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiMonitor")
            .field("eta", &self.eta)
            .finish_non_exhaustive()
    }
}

impl PhiMonitor {
    pub fn new(phi: ScalarFn, eta: f64) -> Result<Self, MapError> {
        if eta <= 0.0 || !eta.is_finite() {
            return Err(MapError::InvalidArgument(format!(
                "eta must be positive, got {eta}"
            )));
        }
        Ok(PhiMonitor { phi, eta })
    }

    /// `Phi(x) = x_1 + x_2 - 2 x_2^2` on the ball of radius
    /// `min(alpha / (2 delta_L^2), alpha / (2 delta_R^2), 1/sqrt 2)`, for
    /// the example map with quadratic term `(0, -x_2^2)`.
    pub fn quadratic_example(
        delta_left: f64,
        delta_right: f64,
        alpha: f64,
    ) -> Result<Self, MapError> {
        Self::new(
            Arc::new(|x: &[f64]| x[0] + x[1] - 2.0 * x[1] * x[1]),
            quadratic_example_eta(delta_left, delta_right, alpha),
        )
    }

    /// A linear monitor `p . x`.
    pub fn linear(p: Vector, eta: f64) -> Result<Self, MapError> {
        Self::new(Arc::new(move |x: &[f64]| p.dot(x)), eta)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }
}

/// `min(alpha/(2 delta_L^2), alpha/(2 delta_R^2), 1/sqrt(2))`; a zero
/// `delta` imposes no constraint.
pub fn quadratic_example_eta(delta_left: f64, delta_right: f64, alpha: f64) -> f64 {
    let term = |d: f64| {
        if d == 0.0 {
            f64::INFINITY
        } else {
            alpha / (2.0 * d * d)
        }
    };
    term(delta_left)
        .min(term(delta_right))
        .min(std::f64::consts::FRAC_1_SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiCheck {
    pub min_increment: f64,
    pub argmin: Vector,
    pub samples: usize,
    pub mu: f64,
    pub passed: bool,
}

/// `Phi(f(x; mu)) - Phi(x)`.
pub fn phi_increment<M: PiecewiseMap + ?Sized>(map: &M, monitor: &PhiMonitor, x: &[f64]) -> f64 {
    monitor.eval(&map.apply(x)) - monitor.eval(x)
}

/// Minimum of `Phi(f(x; mu)) - Phi(x)` over a deterministic lattice of
/// `samples` points in the closed ball `B_eta`; passes when the minimum is
/// at least `mu - 1e-12`.
pub fn phi_increment_check(
    map: &TwoPieceSmoothMap,
    monitor: &PhiMonitor,
    mu: f64,
    samples: usize,
) -> Result<PhiCheck, MapError> {
    if mu <= 0.0 {
        return Err(MapError::InvalidArgument("mu must be positive".into()));
    }
    let map = map.with_mu(mu);
    let points = ball_lattice(map.dim(), monitor.eta, samples);
    let (min_increment, argmin) = points
        .into_iter()
        .map(|x| (phi_increment(&map, monitor, &x), x))
        .fold((f64::INFINITY, Vector::zeros(map.dim())), |best, cur| {
            if cur.0 < best.0 {
                cur
            } else {
                best
            }
        });
    Ok(PhiCheck {
        min_increment,
        argmin,
        samples,
        mu,
        passed: min_increment >= mu - 1e-12,
    })
}

/// `count` points of the Kronecker sequence with generalized golden ratio
/// increments, mapped into `[-radius, radius]^n` and kept when inside the
/// closed ball.
pub fn ball_lattice(n: usize, radius: f64, count: usize) -> Vec<Vector> {
    // phi_n is the positive root of x^(n+1) = x + 1.
    let mut g: f64 = 2.0;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (n as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=n).map(|j| g.powi(-(j as i32)).fract()).collect();
    let mut out = Vec::with_capacity(count);
    let mut i: u64 = 0;
    while out.len() < count {
        let x: Vec<f64> = alpha
            .iter()
            .map(|a| {
                let u = (0.5 + a * i as f64).fract();
                radius * (2.0 * u - 1.0)
            })
            .collect();
        i += 1;
        if norm(&x) <= radius {
            out.push(x.into());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attractor {
    Periodic(usize),
    Aperiodic,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    /// Iterates discarded before looking for recurrence.
    pub transient: usize,
    /// Total iterates; the final `budget - transient` form the detection window.
    pub budget: usize,
    pub max_period: usize,
    pub divergence_radius: f64,
    pub tolerance: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            transient: DEFAULT_TRANSIENT,
            budget: DEFAULT_TRANSIENT + DEFAULT_WINDOW,
            max_period: DEFAULT_MAX_PERIOD,
            divergence_radius: DEFAULT_DIVERGENCE_RADIUS,
            tolerance: DEFAULT_PERIOD_TOL,
        }
    }
}

impl ClassifyConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.max_period == 0 {
            return Err(MapError::InvalidArgument(
                "max_period must be at least 1".into(),
            ));
        }
        if self.budget <= self.transient {
            return Err(MapError::InvalidArgument(
                "budget must exceed the transient".into(),
            ));
        }
        if !(self.tolerance > 0.0 && self.divergence_radius > 0.0) {
            return Err(MapError::InvalidArgument(
                "tolerance and divergence radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Classifies the long-term behaviour of the orbit of `x0`.
///
/// Divergence is declared as soon as the orbit leaves the divergence ball.
/// Otherwise the least `T <= max_period` is reported for which every state
/// of the detection window recurs after `T` steps to within the tolerance.
pub fn classify_attractor<M: PiecewiseMap + ?Sized>(
    map: &M,
    x0: &[f64],
    config: &ClassifyConfig,
) -> Result<Attractor, MapError> {
    config.validate()?;
    check_state(map, x0)?;
    let n = map.dim();
    let window = config.budget - config.transient;
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut tail: Vec<f64> = Vec::with_capacity(window * n);
    for step in 1..=config.budget {
        map.apply_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        if escaped(&x, config.divergence_radius) {
            return Ok(Attractor::Diverged);
        }
        if step > config.transient {
            tail.extend_from_slice(&x);
        }
    }
    Ok(detect_period(&tail, n, config.max_period, config.tolerance))
}

fn detect_period(tail: &[f64], n: usize, max_period: usize, tol: f64) -> Attractor {
    let len = tail.len() / n;
    let state = |i: usize| &tail[i * n..(i + 1) * n];
    'periods: for period in 1..=max_period.min(len.saturating_sub(1)) {
        for i in period..len {
            let d = state(i)
                .iter()
                .zip(state(i - period))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d > tol {
                continue 'periods;
            }
        }
        return Attractor::Periodic(period);
    }
    Attractor::Aperiodic
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SquareMatrix;

    fn mat(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(rows).unwrap()
    }

    fn example(mu: f64) -> PwlMap {
        let (dl, dr, alpha) = (1.2, -2.4, 0.1);
        PwlMap::new(
            mat(&[&[dl + 1.0 - alpha, 1.0], &[-dl, 0.0]]),
            mat(&[&[dr + 1.0 + alpha, 1.0], &[-dr, 0.0]]),
            Vector::from([1.0, 0.0]),
            mu,
        )
        .unwrap()
    }

    fn quadratic(mu: f64) -> TwoPieceSmoothMap {
        TwoPieceSmoothMap::symmetric(
            example(mu),
            Arc::new(|x: &[f64], _mu: f64| Vector::from([0.0, -x[1] * x[1]])),
        )
    }

    #[test]
    fn zero_linear_part_hits_fixed_point_in_one_step() {
        let m = PwlMap::new(
            SquareMatrix::zeros(3),
            SquareMatrix::zeros(3),
            Vector::unit(3, 0),
            1.0,
        )
        .unwrap();
        let orbit = iterate(&m, &[5.0, -2.0, 7.0], 3).unwrap();
        assert_eq!(orbit.outcome, OrbitOutcome::BudgetExhausted);
        for x in &orbit.iterates[1..] {
            assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn example_orbit_drifts_along_certificate() {
        let orbit = iterate(&example(1.0), &[0.0, 0.0], 50).unwrap();
        let w = |x: &[f64]| x[0] + x[1];
        for pair in orbit.iterates.windows(2) {
            assert!(w(&pair[1]) - w(&pair[0]) >= 1.0 - 1e-12);
        }
    }

    #[test]
    fn iterate_rejects_zero_steps_and_bad_dimension() {
        assert!(iterate(&example(1.0), &[0.0, 0.0], 0).is_err());
        assert!(matches!(
            iterate(&example(1.0), &[0.0], 1),
            Err(MapError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn overflow_counts_as_escape() {
        let m = PwlMap::new(mat(&[&[1e200]]), mat(&[&[1e200]]), Vector::from([1.0]), 1.0).unwrap();
        let orbit = iterate_within(&m, &[1.0], 10, f64::MAX).unwrap();
        assert!(matches!(orbit.outcome, OrbitOutcome::Escaped { step: 2 }));
    }

    #[test]
    fn contraction_never_escapes() {
        let half = SquareMatrix::identity(2).scaled(0.5);
        let m = PwlMap::new(half.clone(), half, Vector::zeros(2), 0.0).unwrap();
        assert_eq!(escape_time(&m, &[0.3, -0.2], 1.0, 10_000).unwrap(), None);
    }

    #[test]
    fn phi_increment_on_vertical_axis() {
        let mu = 0.05;
        let map = quadratic(mu);
        let monitor = PhiMonitor::quadratic_example(1.2, -2.4, 0.1).unwrap();
        for x2 in [-0.7, -0.2, 0.0, 0.1, 0.5, 0.7] {
            let inc = phi_increment(&map, &monitor, &[0.0, x2]);
            let expected = mu + (1.0 - 2.0 * x2 * x2) * x2 * x2;
            assert!((inc - expected).abs() < 1e-14);
            assert!(inc >= mu);
        }
    }

    #[test]
    fn linear_monitor_fails_on_quadratic_map() {
        let eta = quadratic_example_eta(1.2, -2.4, 0.1);
        let mu = 0.5 * eta * eta;
        let map = quadratic(mu);
        let linear = PhiMonitor::linear(Vector::from([1.0, 1.0]), eta).unwrap();
        let inc = phi_increment(&map, &linear, &[0.0, eta]);
        assert!((inc - (mu - eta * eta)).abs() < 1e-15);
        assert!(inc < 0.0);
    }

    #[test]
    fn eta_formula() {
        let eta = quadratic_example_eta(1.2, -2.4, 0.1);
        assert!((eta - 0.1 / (2.0 * 2.4 * 2.4)).abs() < 1e-18);
        assert_eq!(
            quadratic_example_eta(0.0, 0.0, 1.0),
            std::f64::consts::FRAC_1_SQRT_2
        );
        assert!(PhiMonitor::linear(Vector::from([1.0]), 0.0).is_err());
    }

    #[test]
    fn lattice_stays_in_ball_and_is_deterministic() {
        let a = ball_lattice(2, 0.3, 500);
        let b = ball_lattice(2, 0.3, 500);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|x| x.norm() <= 0.3));
        // Covers all four quadrants.
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            assert!(a.iter().any(|x| x[0] * sx > 0.1 && x[1] * sy > 0.1));
        }
    }

    #[test]
    fn classify_fixed_point_and_divergence() {
        let m = PwlMap::new(
            SquareMatrix::identity(2),
            mat(&[&[0.5, 0.0], &[0.0, 1.0]]),
            Vector::zeros(2),
            0.0,
        )
        .unwrap();
        let cfg = ClassifyConfig {
            transient: 10,
            budget: 110,
            ..Default::default()
        };
        assert_eq!(
            classify_attractor(&m, &[0.0, 0.0], &cfg).unwrap(),
            Attractor::Periodic(1)
        );
        let long = ClassifyConfig {
            transient: 9_000,
            budget: 10_000,
            ..Default::default()
        };
        assert_eq!(
            classify_attractor(&example(1.0), &[0.0, 0.0], &long).unwrap(),
            Attractor::Diverged
        );
    }

    #[test]
    fn least_period_is_reported() {
        // x -> -x is period 2 everywhere except the origin.
        let neg = SquareMatrix::identity(1).scaled(-1.0);
        let m = PwlMap::new(neg.clone(), neg, Vector::zeros(1), 0.0).unwrap();
        let cfg = ClassifyConfig {
            transient: 5,
            budget: 105,
            max_period: 8,
            ..Default::default()
        };
        assert_eq!(
            classify_attractor(&m, &[0.25], &cfg).unwrap(),
            Attractor::Periodic(2)
        );
    }

    #[test]
    fn irrational_rotation_is_aperiodic() {
        let th: f64 = 2.0 * std::f64::consts::PI * (5f64.sqrt() - 1.0) / 2.0;
        let rot = mat(&[&[th.cos(), -th.sin()], &[th.sin(), th.cos()]]);
        let m = PwlMap::new(rot.clone(), rot, Vector::zeros(2), 0.0).unwrap();
        let cfg = ClassifyConfig {
            transient: 10,
            budget: 500,
            ..Default::default()
        };
        assert_eq!(
            classify_attractor(&m, &[1.0, 0.0], &cfg).unwrap(),
            Attractor::Aperiodic
        );
    }

    #[test]
    fn classify_config_validation() {
        let bad = ClassifyConfig {
            transient: 10,
            budget: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ClassifyConfig {
            max_period: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
