//! Named systems: Stommel's and Welander's ocean-circulation models, the
//! planar example map with its quadratic extension, and the
//! three-dimensional border-collision normal form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{Admissibility, CertError, PwlMap};
use crate::flow::{integrate_filippov, FlowError, FlowOptions, GeneralFilippovSystem, Trajectory};
use crate::linalg::{SquareMatrix, Vector};
use crate::map_dynamics::TwoPieceSmoothMap;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no stable equilibrium on the T < S side at mu = {mu}")]
    NoLowerBranch { mu: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

/// Which side of `T = S` an equilibrium of Stommel's model lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StommelSide {
    /// `T > S`: the upper branch.
    TemperatureDominated,
    /// `T < S`: the lower branch.
    SalinityDominated,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
}

/// `T' = 1 - T - k T`, `S' = beta (mu - S) - k S` with
/// `k = alpha beta |T - S|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StommelModel {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StommelEquilibrium {
    pub state: Vector,
    pub stability: Stability,
    pub side: StommelSide,
    pub eigenvalues_re: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StommelEquilibria {
    pub mu: f64,
    pub equilibria: Vec<StommelEquilibrium>,
    /// Value of `mu` where two equilibria meet on `T = S`; the point of
    /// collision is `(1, 1)`.
    pub fold_mu: f64,
}

impl StommelEquilibria {
    /// Stable equilibrium on the given side, if any.
    pub fn stable_on(&self, side: StommelSide) -> Option<&StommelEquilibrium> {
        self.equilibria
            .iter()
            .find(|e| e.side == side && e.stability == Stability::Stable)
    }
}

impl StommelModel {
    pub fn new(alpha: f64, beta: f64, mu: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(ModelError::InvalidParameter(
                "alpha and beta must be positive".into(),
            ));
        }
        if !mu.is_finite() {
            return Err(ModelError::InvalidParameter("mu must be finite".into()));
        }
        Ok(StommelModel { alpha, beta, mu })
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        StommelModel { mu, ..*self }
    }

    pub fn flow_coefficient(&self, t: f64, s: f64) -> f64 {
        self.alpha * self.beta * (t - s).abs()
    }

    /// Right-hand side on the side `d = sign(T - S)`, evaluated anywhere.
    fn side_field(alpha: f64, beta: f64, mu: f64, d: f64, x: &[f64]) -> Vector {
        let k = alpha * beta * d * (x[0] - x[1]);
        Vector::from([1.0 - x[0] - k * x[0], beta * (mu - x[1]) - k * x[1]])
    }

    pub fn field(&self, x: &[f64]) -> Vector {
        let d = if x[0] >= x[1] { 1.0 } else { -1.0 };
        Self::side_field(self.alpha, self.beta, self.mu, d, x)
    }

    /// Continuous switched system with switching function `T - S`; the
    /// parameter argument of the fields is `mu`.
    pub fn system(&self) -> GeneralFilippovSystem {
        let (alpha, beta) = (self.alpha, self.beta);
        GeneralFilippovSystem::new(
            2,
            Arc::new(move |x, mu| Self::side_field(alpha, beta, mu, -1.0, x)),
            Arc::new(move |x, mu| Self::side_field(alpha, beta, mu, 1.0, x)),
            Arc::new(|x| x[0] - x[1]),
            Arc::new(|_x| Vector::from([1.0, -1.0])),
        )
        .continuous()
    }

    /// The same system with `mu` appended as a third state variable drifting
    /// at `rate`.
    pub fn drifting_system(&self, rate: f64) -> GeneralFilippovSystem {
        let (alpha, beta) = (self.alpha, self.beta);
        let field = move |d: f64| {
            move |x: &[f64], _mu: f64| {
                let f = Self::side_field(alpha, beta, x[2], d, x);
                Vector::from([f[0], f[1], rate])
            }
        };
        GeneralFilippovSystem::new(
            3,
            Arc::new(field(-1.0)),
            Arc::new(field(1.0)),
            Arc::new(|x| x[0] - x[1]),
            Arc::new(|_x| Vector::from([1.0, -1.0, 0.0])),
        )
        .continuous()
    }

    fn jacobian_eigen_re(&self, d: f64, t: f64, s: f64) -> ([f64; 2], Stability) {
        let (a, b) = (self.alpha, self.beta);
        let k = a * b * d * (t - s);
        let j11 = -1.0 - k - t * a * b * d;
        let j12 = t * a * b * d;
        let j21 = -s * a * b * d;
        let j22 = -b - k + s * a * b * d;
        let tr = j11 + j22;
        let det = j11 * j22 - j12 * j21;
        let disc = tr * tr - 4.0 * det;
        let re = if disc >= 0.0 {
            let r = disc.sqrt();
            [(tr + r) / 2.0, (tr - r) / 2.0]
        } else {
            [tr / 2.0, tr / 2.0]
        };
        let stability = if re[0] < 0.0 && re[1] < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        };
        (re, stability)
    }

    /// All equilibria at frozen `mu`.
    ///
    /// On the side `d = sign(T - S)` write `k = alpha beta d (T - S) >= 0`;
    /// then `T = 1/(1 + k)`, `S = beta mu/(beta + k)` and `k` solves
    /// `k^3 + (1 + beta) k^2 + (beta - alpha beta d (1 - beta mu)) k
    ///  - alpha beta^2 d (1 - mu) = 0`.
    pub fn equilibria(&self) -> StommelEquilibria {
        let (a, b, mu) = (self.alpha, self.beta, self.mu);
        let mut equilibria = Vec::new();
        for d in [1.0, -1.0] {
            let roots = real_cubic_roots(
                1.0 + b,
                b - a * b * d * (1.0 - b * mu),
                -a * b * b * d * (1.0 - mu),
            );
            for k in roots {
                if k < 0.0 {
                    continue;
                }
                let t = 1.0 / (1.0 + k);
                let s = b * mu / (b + k);
                let side = if k <= 1e-14 {
                    StommelSide::Boundary
                } else if d > 0.0 {
                    StommelSide::TemperatureDominated
                } else {
                    StommelSide::SalinityDominated
                };
                // The boundary point satisfies both cubics; keep one copy.
                if side == StommelSide::Boundary && d < 0.0 {
                    continue;
                }
                let (eigenvalues_re, stability) = self.jacobian_eigen_re(d, t, s);
                equilibria.push(StommelEquilibrium {
                    state: Vector::from([t, s]),
                    stability,
                    side,
                    eigenvalues_re,
                });
            }
        }
        equilibria.sort_by(|x, y| x.state[0].total_cmp(&y.state[0]));
        StommelEquilibria {
            mu,
            equilibria,
            fold_mu: 1.0,
        }
    }
}

/// Real roots of `k^3 + p k^2 + q k + r`, ascending, polished by Newton.
pub fn real_cubic_roots(p: f64, q: f64, r: f64) -> Vec<f64> {
    let f = |k: f64| ((k + p) * k + q) * k + r;
    let df = |k: f64| (3.0 * k + 2.0 * p) * k + q;
    // Break points: critical points, and a bound on all roots.
    let bound = 1.0 + p.abs().max(q.abs()).max(r.abs());
    let mut knots = vec![-bound];
    let disc = p * p - 3.0 * q;
    if disc > 0.0 {
        let sq = disc.sqrt();
        knots.push((-p - sq) / 3.0);
        knots.push((-p + sq) / 3.0);
    }
    knots.push(bound);
    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo * fhi > 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut k = 0.5 * (lo + hi);
        for _ in 0..3 {
            let d = df(k);
            if d != 0.0 {
                let next = k - f(k) / d;
                if next.is_finite() && (next - k).abs() < 1e-8 * (1.0 + k.abs()) {
                    k = next;
                }
            }
        }
        roots.push(k);
    }
    if let Some(last) = knots.last() {
        if f(*last) == 0.0 {
            roots.push(*last);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
    roots
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingRun {
    pub mu_start: f64,
    /// `d mu / dt`; nonzero.
    pub mu_rate: f64,
    pub t_end: f64,
    /// Initial `(T, S)`; defaults to the stable lower-branch equilibrium at
    /// `mu_start`.
    pub x0: Option<Vector>,
}

impl TippingRun {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mu_rate == 0.0 || !self.mu_rate.is_finite() {
            return Err(ModelError::InvalidParameter(
                "mu_rate must be nonzero".into(),
            ));
        }
        if !(self.t_end > 0.0) {
            return Err(ModelError::InvalidParameter(
                "t_end must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Time at which `mu` reaches `target`.
    pub fn time_at(&self, target: f64) -> f64 {
        (target - self.mu_start) / self.mu_rate
    }
}

/// Integrates Stommel's model while `mu` drifts; states are `(T, S, mu)`.
pub fn run_tipping(
    m: &StommelModel,
    run: &TippingRun,
    opts: &FlowOptions,
) -> Result<Trajectory, ModelError> {
    run.validate()?;
    let start = match &run.x0 {
        Some(x) if x.dim() == 2 => x.clone(),
        Some(x) => {
            return Err(ModelError::InvalidParameter(format!(
                "initial state must be (T, S), got dimension {}",
                x.dim()
            )))
        }
        None => m
            .with_mu(run.mu_start)
            .equilibria()
            .stable_on(StommelSide::SalinityDominated)
            .ok_or(ModelError::NoLowerBranch { mu: run.mu_start })?
            .state
            .clone(),
    };
    let sys = m.drifting_system(run.mu_rate);
    let x0 = [start[0], start[1], run.mu_start];
    Ok(integrate_filippov(
        &sys,
        &x0,
        run.mu_start,
        run.t_end,
        opts,
    )?)
}

/// Welander's model in the discontinuous limit: `k = 1` where
/// `-alpha T + S > epsilon`, else `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelanderModel {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub mu: f64,
}

impl WelanderModel {
    pub fn new(alpha: f64, beta: f64, epsilon: f64, mu: f64) -> Result<Self, ModelError> {
        if ![alpha, beta, epsilon, mu].iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "parameters must be finite".into(),
            ));
        }
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(ModelError::InvalidParameter(
                "alpha and beta must be positive".into(),
            ));
        }
        Ok(WelanderModel {
            alpha,
            beta,
            epsilon,
            mu,
        })
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        -self.alpha * x[0] + x[1] - self.epsilon
    }

    /// Equilibria of the `k = 0` and `k = 1` fields with their
    /// admissibility.
    pub fn equilibria(&self) -> [(Vector, Admissibility); 2] {
        let off = Vector::from([1.0, self.mu]);
        let on = Vector::from([0.5, self.beta * self.mu / (self.beta + 1.0)]);
        let label = |x: &Vector, admissible_if_positive: bool| {
            Admissibility::from_quantity(self.sigma(x), admissible_if_positive, 0.0)
        };
        let l0 = label(&off, false);
        let l1 = label(&on, true);
        [(off, l0), (on, l1)]
    }

    /// A point of the switching line `S = alpha T + epsilon`.
    pub fn manifold_point(&self, t: f64) -> Vector {
        Vector::from([t, self.alpha * t + self.epsilon])
    }
}

/// Two-field system with switching function `-alpha T + S - epsilon`.
pub fn welander_system(m: &WelanderModel) -> GeneralFilippovSystem {
    let WelanderModel {
        alpha,
        beta,
        epsilon,
        ..
    } = *m;
    GeneralFilippovSystem::new(
        2,
        Arc::new(move |x, mu| Vector::from([1.0 - x[0], beta * (mu - x[1])])),
        Arc::new(move |x, mu| Vector::from([1.0 - 2.0 * x[0], beta * (mu - x[1]) - x[1]])),
        Arc::new(move |x| -alpha * x[0] + x[1] - epsilon),
        Arc::new(move |_x| Vector::from([-alpha, 1.0])),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleMapParams {
    pub delta_l: f64,
    pub delta_r: f64,
    pub alpha: f64,
}

impl ExampleMapParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.alpha > 0.0) {
            return Err(ModelError::InvalidParameter(
                "alpha must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `A_L = [[delta_L + 1 - alpha, 1], [-delta_L, 0]]`,
/// `A_R = [[delta_R + 1 + alpha, 1], [-delta_R, 0]]`, `b = e_1`.
pub fn example_map(p: &ExampleMapParams, mu: f64) -> Result<PwlMap, ModelError> {
    p.validate()?;
    let al = SquareMatrix::from_rows(&[[p.delta_l + 1.0 - p.alpha, 1.0], [-p.delta_l, 0.0]])
        .expect("2x2 rows");
    let ar = SquareMatrix::from_rows(&[[p.delta_r + 1.0 + p.alpha, 1.0], [-p.delta_r, 0.0]])
        .expect("2x2 rows");
    Ok(PwlMap::new(al, ar, Vector::from([1.0, 0.0]), mu)?)
}

/// The example map with `(0, -x_2^2)` added on both sides.
pub fn example_map_quadratic(
    p: &ExampleMapParams,
    mu: f64,
) -> Result<TwoPieceSmoothMap, ModelError> {
    Ok(TwoPieceSmoothMap::symmetric(
        example_map(p, mu)?,
        Arc::new(|x: &[f64], _mu: f64| Vector::from([0.0, -x[1] * x[1]])),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bcnf3dParams {
    pub tau_l: f64,
    pub sigma_l: f64,
    pub delta_l: f64,
    pub tau_r: f64,
    pub sigma_r: f64,
    pub delta_r: f64,
}

fn companion(tau: f64, sigma: f64, delta: f64) -> SquareMatrix {
    SquareMatrix::from_rows(&[[tau, 1.0, 0.0], [-sigma, 0.0, 1.0], [delta, 0.0, 0.0]])
        .expect("3x3 rows")
}

/// Three-dimensional border-collision normal form: companion matrices with
/// first columns `(tau, -sigma, delta)` and `b = e_1`.
pub fn bcnf3d(p: &Bcnf3dParams, mu: f64) -> Result<PwlMap, ModelError> {
    Ok(PwlMap::new(
        companion(p.tau_l, p.sigma_l, p.delta_l),
        companion(p.tau_r, p.sigma_r, p.delta_r),
        Vector::unit(3, 0),
        mu,
    )?)
}

impl Bcnf3dParams {
    /// `det(I - A_L) = 1 - tau_L + sigma_L - delta_L`.
    pub fn det_left(&self) -> f64 {
        1.0 - self.tau_l + self.sigma_l - self.delta_l
    }

    pub fn det_right(&self) -> f64 {
        1.0 - self.tau_r + self.sigma_r - self.delta_r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{map_certificate, map_fixed_points};

    const EXAMPLE: ExampleMapParams = ExampleMapParams {
        delta_l: 1.2,
        delta_r: -2.4,
        alpha: 0.1,
    };

    #[test]
    fn example_map_matrices() {
        let m = example_map(&EXAMPLE, 1.0).unwrap();
        assert_eq!(m.a_left().rows(), vec![vec![2.1, 1.0], vec![-1.2, 0.0]]);
        assert!((m.a_right()[(0, 0)] + 1.3).abs() < 1e-15);
        assert_eq!(m.a_right().row(1), &[2.4, 0.0]);
        assert_eq!(m.a_left().max_diff_outside_column(m.a_right(), 0), 0.0);
        assert!(example_map(
            &ExampleMapParams {
                alpha: 0.0,
                ..EXAMPLE
            },
            1.0
        )
        .is_err());
    }

    #[test]
    fn example_map_fixed_points() {
        let report = map_fixed_points(&example_map(&EXAMPLE, 1.0).unwrap()).unwrap();
        let xl = &report.solutions[0].location;
        let xr = &report.solutions[1].location;
        assert!((xl[0] - 10.0).abs() < 1e-12 && (xl[1] + 12.0).abs() < 1e-12);
        assert!((xr[0] + 10.0).abs() < 1e-12 && (xr[1] + 24.0).abs() < 1e-12);
        let cert = map_certificate(&example_map(&EXAMPLE, 1.0).unwrap()).unwrap();
        assert_eq!(cert.direction.as_slice(), &[1.0, 1.0]);
        assert_eq!(cert.rate, 1.0);
    }

    #[test]
    fn bcnf_determinants_and_direction() {
        let p = Bcnf3dParams {
            tau_l: 0.2,
            sigma_l: 0.0,
            delta_l: 0.5,
            tau_r: 0.9,
            sigma_r: 1.0,
            delta_r: 1.5,
        };
        let m = bcnf3d(&p, 1.0).unwrap();
        assert!((m.a_left().identity_minus().determinant() - p.det_left()).abs() < 1e-12);
        assert!((m.a_right().identity_minus().determinant() - p.det_right()).abs() < 1e-12);
        // Fold boundaries of the scanned slice sit at tau = 0.5.
        assert!(Bcnf3dParams { tau_l: 0.5, ..p }.det_left().abs() < 1e-15);
        assert!(Bcnf3dParams { tau_r: 0.5, ..p }.det_right().abs() < 1e-15);
        let cert = map_certificate(&m).unwrap();
        assert_eq!(cert.direction.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn cubic_roots() {
        // (k - 1)(k + 2)(k - 3) = k^3 - 2k^2 - 5k + 6
        let r = real_cubic_roots(-2.0, -5.0, 6.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([-2.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // k (k^2 + 1): single real root at zero.
        assert_eq!(real_cubic_roots(0.0, 1.0, 0.0), vec![0.0]);
    }

    fn residual(m: &StommelModel, x: &[f64]) -> f64 {
        crate::linalg::norm(&m.field(x))
    }

    #[test]
    fn stommel_fold_at_one() {
        let m = StommelModel::new(5.0, 0.2, 1.0).unwrap();
        let eq = m.equilibria();
        let boundary: Vec<_> = eq
            .equilibria
            .iter()
            .filter(|e| e.side == StommelSide::Boundary)
            .collect();
        assert_eq!(boundary.len(), 1);
        assert!((boundary[0].state[0] - 1.0).abs() < 1e-12);
        assert!((boundary[0].state[1] - 1.0).abs() < 1e-12);
        assert_eq!(eq.fold_mu, 1.0);
    }

    #[test]
    fn stommel_branches_above_and_below_the_fold() {
        let m = StommelModel::new(5.0, 0.2, 1.2).unwrap();
        let eq = m.equilibria();
        assert_eq!(eq.equilibria.len(), 3);
        let lower = eq.stable_on(StommelSide::SalinityDominated).unwrap();
        assert!(lower.state[0] < lower.state[1]);
        assert!(eq.stable_on(StommelSide::TemperatureDominated).is_some());
        for e in &eq.equilibria {
            assert!(residual(&m, &e.state) < 1e-12);
        }
        let below = m.with_mu(0.8).equilibria();
        assert_eq!(below.equilibria.len(), 1);
        assert_eq!(below.equilibria[0].side, StommelSide::TemperatureDominated);
        assert_eq!(below.equilibria[0].stability, Stability::Stable);
    }

    #[test]
    fn stommel_field_is_continuous() {
        let m = StommelModel::new(5.0, 0.2, 1.1).unwrap();
        let sys = m.system();
        for t in [-1.0, 0.0, 0.3, 2.0] {
            let x = [t, t];
            let (l, r) = (sys.f_left(&x, m.mu), sys.f_right(&x, m.mu));
            assert!((l[0] - r[0]).abs() <= 1e-12 && (l[1] - r[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn welander_equilibria_are_virtual() {
        let w = WelanderModel::new(1.3, 0.2, -0.4, 1.0).unwrap();
        let [(off, l0), (on, l1)] = w.equilibria();
        assert_eq!(off.as_slice(), &[1.0, 1.0]);
        assert!((on[1] - 0.2 / 1.2).abs() < 1e-15);
        assert_eq!(l0, Admissibility::Virtual);
        assert_eq!(l1, Admissibility::Virtual);
        let admissible = WelanderModel::new(1.3, 0.2, 2.0, 1.0).unwrap();
        assert_eq!(admissible.equilibria()[0].1, Admissibility::Admissible);
    }

    #[test]
    fn tipping_run_requires_drift() {
        let m = StommelModel::new(5.0, 0.2, 1.3).unwrap();
        let run = TippingRun {
            mu_start: 1.3,
            mu_rate: 0.0,
            t_end: 1.0,
            x0: None,
        };
        assert!(run_tipping(&m, &run, &FlowOptions::default()).is_err());
        let below = TippingRun {
            mu_start: 0.5,
            mu_rate: 0.01,
            ..run
        };
        assert!(matches!(
            run_tipping(&m, &below, &FlowOptions::default()),
            Err(ModelError::NoLowerBranch { .. })
        ));
    }
}
