//! Truncated normal forms of boundary-equilibrium and border-collision
//! bifurcations, their equilibria, and divergence certificates.
//!
//! Each of the four forms has exactly two candidate invariant points: two
//! regular equilibria (or fixed points) for the continuous forms, and a
//! regular equilibrium plus a pseudo-equilibrium for the Filippov and
//! impacting forms. The first coordinate of each is proportional to
//! `s = e_1^T adj(M) b mu` over a determinant-like sign witness, so the
//! bifurcation is classified from two signs, and when both points are virtual
//! the same row vector `e_1^T adj(M)` gives a direction along which every
//! orbit drifts at a uniform rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, LinalgError, SquareMatrix, Vector};

/// Admissibility quantities within `BOUNDARY_TOL * (1 + |mu|)` of zero are
/// labelled [`Admissibility::Boundary`].
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Relative threshold below which scalar coefficients such as `p^T b`,
/// `c_1` and `q^T c` are treated as zero.
pub const DEGENERACY_RTOL: f64 = 1e-12;

/// Continuity tolerance for the columns that left and right matrices share.
pub const CONTINUITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("left and right matrices differ outside the first column (entry ({row}, {col}) differs by {diff:e})")]
    Discontinuous { row: usize, col: usize, diff: f64 },
    #[error("reset direction must have c_1 = 0 exactly, got {c1}")]
    NonzeroResetNormal { c1: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate form: {0}")]
    Degenerate(Degeneracy),
    #[error("not a nonsmooth fold at this mu: {class:?}, admissibility {labels:?}")]
    NotAFold {
        class: BebClass,
        labels: [Admissibility; 2],
    },
    #[error("reset law does not map incoming to outgoing states: e_1^T A c = {e1_a_c} >= -1")]
    InvalidResetLaw { e1_a_c: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Why a form falls outside the generic (codimension-zero) case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Degeneracy {
    SingularLeft { det: f64 },
    SingularRight { det: f64 },
    ZeroDrift { coefficient: f64 },
    ZeroSwitchingNormal { c1: f64 },
    ZeroQc { qc: f64 },
}

impl std::fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degeneracy::SingularLeft { det } => write!(f, "left matrix singular (det = {det:e})"),
            Degeneracy::SingularRight { det } => write!(f, "right matrix singular (det = {det:e})"),
            Degeneracy::ZeroDrift { coefficient } => {
                write!(
                    f,
                    "drift coefficient e_1^T adj(M) b vanishes ({coefficient:e})"
                )
            }
            Degeneracy::ZeroSwitchingNormal { c1 } => write!(f, "c_1 vanishes ({c1:e})"),
            Degeneracy::ZeroQc { qc } => write!(f, "q^T c vanishes ({qc:e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Admissibility {
    Admissible,
    Virtual,
    Boundary,
}

impl Admissibility {
    /// Labels a point whose deciding quantity must be positive (or negative,
    /// when `admissible_if_positive` is false) for admissibility.
    pub fn from_quantity(quantity: f64, admissible_if_positive: bool, mu: f64) -> Self {
        if quantity.abs() <= BOUNDARY_TOL * (1.0 + mu.abs()) {
            Admissibility::Boundary
        } else if (quantity > 0.0) == admissible_if_positive {
            Admissibility::Admissible
        } else {
            Admissibility::Virtual
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Admissibility::Admissible => Admissibility::Virtual,
            Admissibility::Virtual => Admissibility::Admissible,
            Admissibility::Boundary => Admissibility::Boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolutionKind {
    RegularLeft,
    RegularRight,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BebClass {
    Persistence,
    NonsmoothFold,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormKind {
    Map,
    PwsOde,
    Filippov,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub location: Vector,
    pub kind: SolutionKind,
    pub admissibility: Admissibility,
    /// The signed quantity the label was read from (`x_1`, `s c_1^2 / q^T c`
    /// or the relative acceleration).
    pub deciding_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub form: FormKind,
    pub mu: f64,
    pub solutions: Vec<Solution>,
    pub beb_class: BebClass,
    /// `p` (maps) or `q` (flows): the first row of the relevant adjugate.
    pub adjugate_row: Vector,
    /// `s = adjugate_row . b mu`.
    pub s: f64,
    pub det_left: f64,
    /// `det` of the right matrix for the continuous forms, `q^T c` otherwise.
    pub det_right_or_qc: f64,
}

impl EquilibriumReport {
    pub fn labels(&self) -> [Admissibility; 2] {
        [
            self.solutions[0].admissibility,
            self.solutions[1].admissibility,
        ]
    }

    pub fn both_virtual(&self) -> bool {
        self.labels().iter().all(|&l| l == Admissibility::Virtual)
    }
}

/// A direction `w` and rate such that `w . x` increases by at least `rate`
/// per iterate (maps) or per unit time (flows) along every orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub form: FormKind,
    pub direction: Vector,
    pub rate: f64,
    pub det_left: f64,
    pub det_right_or_qc: f64,
}

impl Certificate {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.direction.dot(x)
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), CertError> {
    if expected == found {
        Ok(())
    } else {
        Err(CertError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<(), CertError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(CertError::NonFinite(what))
    }
}

fn check_continuity(left: &SquareMatrix, right: &SquareMatrix) -> Result<(), CertError> {
    check_dim("right matrix", left.dim(), right.dim())?;
    let tol = CONTINUITY_RTOL * (1.0 + left.max_abs().max(right.max_abs()));
    for row in 0..left.dim() {
        for col in 1..left.dim() {
            let diff = (left[(row, col)] - right[(row, col)]).abs();
            if diff > tol {
                return Err(CertError::Discontinuous { row, col, diff });
            }
        }
    }
    Ok(())
}

fn negligible(value: f64, scale: f64) -> bool {
    value.abs() <= DEGENERACY_RTOL * (1.0 + scale)
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn nonsingular_det(m: &SquareMatrix, right: bool) -> Result<f64, CertError> {
    let det = m.determinant();
    if det.abs() <= m.singular_threshold() {
        let d = if right {
            Degeneracy::SingularRight { det }
        } else {
            Degeneracy::SingularLeft { det }
        };
        return Err(CertError::Degenerate(d));
    }
    Ok(det)
}

/// Continuous two-piece piecewise-linear map
/// `g(x) = A_L x + b mu` for `x_1 <= 0`, `A_R x + b mu` for `x_1 > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlMap {
    a_left: SquareMatrix,
    a_right: SquareMatrix,
    b: Vector,
    mu: f64,
}

impl PwlMap {
    pub fn new(
        a_left: SquareMatrix,
        a_right: SquareMatrix,
        b: Vector,
        mu: f64,
    ) -> Result<Self, CertError> {
        check_continuity(&a_left, &a_right)?;
        check_dim("b", a_left.dim(), b.dim())?;
        check_finite("b", &b)?;
        check_finite("mu", &[mu])?;
        Ok(PwlMap {
            a_left,
            a_right,
            b,
            mu,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
    pub fn a_left(&self) -> &SquareMatrix {
        &self.a_left
    }
    pub fn a_right(&self) -> &SquareMatrix {
        &self.a_right
    }
    pub fn b(&self) -> &Vector {
        &self.b
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        PwlMap { mu, ..self.clone() }
    }

    /// Left branch on `x_1 <= 0`; the branches agree on `x_1 = 0`.
    pub fn matrix_at(&self, x: &[f64]) -> &SquareMatrix {
        if x[0] <= 0.0 {
            &self.a_left
        } else {
            &self.a_right
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.matrix_at(x).mul_vec_into(x, out);
        for (o, b) in out.iter_mut().zip(self.b.iter()) {
            *o += b * self.mu;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out);
        out.into()
    }
}

/// Continuous piecewise-linear ODE `x' = A_L x + b mu` (`x_1 <= 0`),
/// `A_R x + b mu` (`x_1 >= 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct PwlOde {
    a_left: SquareMatrix,
    a_right: SquareMatrix,
    b: Vector,
    mu: f64,
}

impl PwlOde {
    pub fn new(
        a_left: SquareMatrix,
        a_right: SquareMatrix,
        b: Vector,
        mu: f64,
    ) -> Result<Self, CertError> {
        check_continuity(&a_left, &a_right)?;
        check_dim("b", a_left.dim(), b.dim())?;
        check_finite("b", &b)?;
        check_finite("mu", &[mu])?;
        Ok(PwlOde {
            a_left,
            a_right,
            b,
            mu,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
    pub fn a_left(&self) -> &SquareMatrix {
        &self.a_left
    }
    pub fn a_right(&self) -> &SquareMatrix {
        &self.a_right
    }
    pub fn b(&self) -> &Vector {
        &self.b
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        PwlOde { mu, ..self.clone() }
    }

    pub fn field_left(&self, x: &[f64]) -> Vector {
        affine(&self.a_left, x, &self.b, self.mu)
    }

    pub fn field_right(&self, x: &[f64]) -> Vector {
        affine(&self.a_right, x, &self.b, self.mu)
    }

    pub fn field(&self, x: &[f64]) -> Vector {
        if x[0] <= 0.0 {
            self.field_left(x)
        } else {
            self.field_right(x)
        }
    }
}

/// Truncated Filippov form: `x' = A x + b mu` for `x_1 < 0`, `x' = c` for
/// `x_1 > 0`, with sliding on `x_1 = 0` by Filippov's convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FilippovForm {
    a: SquareMatrix,
    b: Vector,
    c: Vector,
    mu: f64,
}

impl FilippovForm {
    pub fn new(a: SquareMatrix, b: Vector, c: Vector, mu: f64) -> Result<Self, CertError> {
        check_dim("b", a.dim(), b.dim())?;
        check_dim("c", a.dim(), c.dim())?;
        check_finite("b", &b)?;
        check_finite("c", &c)?;
        check_finite("mu", &[mu])?;
        Ok(FilippovForm { a, b, c, mu })
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
    pub fn a(&self) -> &SquareMatrix {
        &self.a
    }
    pub fn b(&self) -> &Vector {
        &self.b
    }
    pub fn c(&self) -> &Vector {
        &self.c
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        FilippovForm { mu, ..self.clone() }
    }

    pub fn field_left(&self, x: &[f64]) -> Vector {
        affine(&self.a, x, &self.b, self.mu)
    }

    pub fn field_right(&self, _x: &[f64]) -> Vector {
        self.c.clone()
    }
}

/// Truncated impacting hybrid form: `x' = A x + b mu` on `x_1 < 0`, and the
/// reset `x -> x + v(x) c` on `x_1 = 0` with `v(x) = e_1^T (A x + b mu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridForm {
    a: SquareMatrix,
    b: Vector,
    c: Vector,
    mu: f64,
}

impl HybridForm {
    pub fn new(a: SquareMatrix, b: Vector, c: Vector, mu: f64) -> Result<Self, CertError> {
        check_dim("b", a.dim(), b.dim())?;
        check_dim("c", a.dim(), c.dim())?;
        check_finite("b", &b)?;
        check_finite("c", &c)?;
        check_finite("mu", &[mu])?;
        if c[0] != 0.0 {
            return Err(CertError::NonzeroResetNormal { c1: c[0] });
        }
        Ok(HybridForm { a, b, c, mu })
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
    pub fn a(&self) -> &SquareMatrix {
        &self.a
    }
    pub fn b(&self) -> &Vector {
        &self.b
    }
    pub fn c(&self) -> &Vector {
        &self.c
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        HybridForm { mu, ..self.clone() }
    }

    pub fn field(&self, x: &[f64]) -> Vector {
        affine(&self.a, x, &self.b, self.mu)
    }

    /// Velocity relative to the wall, `v = e_1^T (A x + b mu)`.
    pub fn velocity(&self, x: &[f64]) -> f64 {
        dot(self.a.row(0), x) + self.b[0] * self.mu
    }

    /// Relative acceleration `a = e_1^T A (A x + b mu)`.
    pub fn acceleration(&self, x: &[f64]) -> f64 {
        dot(self.a.row(0), &self.field(x))
    }

    /// `e_1^T A c`; the reset multiplies `v` by `1 + e_1^T A c`.
    pub fn restitution_term(&self) -> f64 {
        dot(self.a.row(0), &self.c)
    }

    pub fn reset(&self, x: &[f64]) -> Vector {
        let v = self.velocity(x);
        x.iter()
            .zip(self.c.iter())
            .map(|(xi, ci)| xi + v * ci)
            .collect::<Vec<_>>()
            .into()
    }

    /// Sticking vector field: `f` projected onto the grazing set along `c`.
    pub fn sticking_field(&self, x: &[f64]) -> Vector {
        let eac = self.restitution_term();
        let f = self.field(x);
        let acc = dot(self.a.row(0), &f);
        f.iter()
            .zip(self.c.iter())
            .map(|(fi, ci)| fi - acc * ci / eac)
            .collect::<Vec<_>>()
            .into()
    }
}

fn affine(a: &SquareMatrix, x: &[f64], b: &[f64], mu: f64) -> Vector {
    let mut out = a.mul_vec(x);
    out.iter_mut().zip(b).for_each(|(o, bi)| *o += bi * mu);
    out
}

/// Pseudo-equilibrium on `x_1 = 0` where the left field is parallel to `c`.
///
/// Both the sliding and the sticking fields vanish exactly where
/// `A x + b mu = lambda c` with `x_1 = 0`. In the unknowns
/// `(x_2, ..., x_n, lambda)` this is the square system
/// `[A e_2 ... A e_n | -c] (y, lambda) = -b mu`, whose determinant is
/// `+-q^T c`.
fn pseudo_equilibrium(
    a: &SquareMatrix,
    b: &[f64],
    c: &[f64],
    mu: f64,
) -> Result<Vector, CertError> {
    let n = a.dim();
    let mut k = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 1..n {
            k[(i, j - 1)] = a[(i, j)];
        }
        k[(i, n - 1)] = -c[i];
    }
    let rhs: Vec<f64> = b.iter().map(|bi| -bi * mu).collect();
    let sol = k.solve(&rhs)?;
    let mut x = vec![0.0; n];
    x[1..n].copy_from_slice(&sol[..n - 1]);
    Ok(x.into())
}

/// Fixed points `x^L = (I - A_L)^{-1} b mu`, `x^R = (I - A_R)^{-1} b mu`.
pub fn map_fixed_points(m: &PwlMap) -> Result<EquilibriumReport, CertError> {
    let il = m.a_left.identity_minus();
    let ir = m.a_right.identity_minus();
    let det_left = nonsingular_det(&il, false)?;
    let det_right = nonsingular_det(&ir, true)?;
    let bmu = m.b.scaled(m.mu);
    let xl = il.solve(&bmu)?;
    let xr = ir.solve(&bmu)?;
    let p = il.first_row_of_adjugate();
    let pb = p.dot(&m.b);
    let s = pb * m.mu;
    // x^L_1 = s / det(I - A_L) and x^R_1 = s / det(I - A_R).
    let ql = s / det_left;
    let qr = s / det_right;
    let class = if negligible(pb, p.max_abs() * m.b.max_abs()) {
        BebClass::Degenerate
    } else if det_left * det_right < 0.0 {
        BebClass::NonsmoothFold
    } else {
        BebClass::Persistence
    };
    Ok(EquilibriumReport {
        form: FormKind::Map,
        mu: m.mu,
        solutions: vec![
            Solution {
                location: xl,
                kind: SolutionKind::RegularLeft,
                admissibility: Admissibility::from_quantity(ql, false, m.mu),
                deciding_value: ql,
            },
            Solution {
                location: xr,
                kind: SolutionKind::RegularRight,
                admissibility: Admissibility::from_quantity(qr, true, m.mu),
                deciding_value: qr,
            },
        ],
        beb_class: class,
        adjugate_row: p,
        s,
        det_left,
        det_right_or_qc: det_right,
    })
}

fn require_fold(report: &EquilibriumReport) -> Result<f64, CertError> {
    if report.beb_class == BebClass::Degenerate {
        return Err(CertError::Degenerate(Degeneracy::ZeroDrift {
            coefficient: if report.mu != 0.0 {
                report.s / report.mu
            } else {
                0.0
            },
        }));
    }
    if !report.both_virtual() {
        return Err(CertError::NotAFold {
            class: report.beb_class,
            labels: report.labels(),
        });
    }
    Ok(sign(report.s))
}

/// Divergence certificate for a piecewise-linear map with both fixed points
/// virtual: `w = sign(s) p` with `p = e_1^T adj(I - A_L)`, rate `|s|`.
pub fn map_certificate(m: &PwlMap) -> Result<Certificate, CertError> {
    let report = map_fixed_points(m)?;
    let sigma = require_fold(&report)?;
    Ok(Certificate {
        form: FormKind::Map,
        direction: report.adjugate_row.scaled(sigma),
        rate: report.s.abs(),
        det_left: report.det_left,
        det_right_or_qc: report.det_right_or_qc,
    })
}

/// Equilibria `x^L = -A_L^{-1} b mu`, `x^R = -A_R^{-1} b mu` of the
/// continuous piecewise-linear ODE.
pub fn ode_equilibria(o: &PwlOde) -> Result<EquilibriumReport, CertError> {
    let det_left = nonsingular_det(&o.a_left, false)?;
    let det_right = nonsingular_det(&o.a_right, true)?;
    let neg_bmu = o.b.scaled(-o.mu);
    let xl = o.a_left.solve(&neg_bmu)?;
    let xr = o.a_right.solve(&neg_bmu)?;
    let q = o.a_left.first_row_of_adjugate();
    let qb = q.dot(&o.b);
    let s = qb * o.mu;
    // x^L_1 = -s / det(A_L), x^R_1 = -s / det(A_R).
    let ql = -s / det_left;
    let qr = -s / det_right;
    let class = if negligible(qb, q.max_abs() * o.b.max_abs()) {
        BebClass::Degenerate
    } else if det_left * det_right < 0.0 {
        BebClass::NonsmoothFold
    } else {
        BebClass::Persistence
    };
    Ok(EquilibriumReport {
        form: FormKind::PwsOde,
        mu: o.mu,
        solutions: vec![
            Solution {
                location: xl,
                kind: SolutionKind::RegularLeft,
                admissibility: Admissibility::from_quantity(ql, false, o.mu),
                deciding_value: ql,
            },
            Solution {
                location: xr,
                kind: SolutionKind::RegularRight,
                admissibility: Admissibility::from_quantity(qr, true, o.mu),
                deciding_value: qr,
            },
        ],
        beb_class: class,
        adjugate_row: q,
        s,
        det_left,
        det_right_or_qc: det_right,
    })
}

/// Certificate `w = sign(s) q`, `q = e_1^T adj(A_L)`, rate `|s|`:
/// `w . x'` is at least the rate everywhere.
pub fn ode_certificate(o: &PwlOde) -> Result<Certificate, CertError> {
    let report = ode_equilibria(o)?;
    let sigma = require_fold(&report)?;
    Ok(Certificate {
        form: FormKind::PwsOde,
        direction: report.adjugate_row.scaled(sigma),
        rate: report.s.abs(),
        det_left: report.det_left,
        det_right_or_qc: report.det_right_or_qc,
    })
}

/// Regular equilibrium and sliding pseudo-equilibrium of the Filippov form.
pub fn filippov_report(f: &FilippovForm) -> Result<EquilibriumReport, CertError> {
    let det = nonsingular_det(&f.a, false)?;
    let c1 = f.c[0];
    if negligible(c1, f.c.max_abs()) {
        return Err(CertError::Degenerate(Degeneracy::ZeroSwitchingNormal {
            c1,
        }));
    }
    let q = f.a.first_row_of_adjugate();
    let qc = q.dot(&f.c);
    if negligible(qc, q.max_abs() * f.c.max_abs()) {
        return Err(CertError::Degenerate(Degeneracy::ZeroQc { qc }));
    }
    let xl = f.a.solve(&f.b.scaled(-f.mu))?;
    let xs = pseudo_equilibrium(&f.a, &f.b, &f.c, f.mu)?;
    let qb = q.dot(&f.b);
    let s = qb * f.mu;
    let ql = -s / det;
    // f^L_1 f^R_1 at x^S equals s c_1^2 / q^T c; negative means sliding.
    let qs = s * c1 * c1 / qc;
    let class = if negligible(qb, q.max_abs() * f.b.max_abs()) {
        BebClass::Degenerate
    } else if det * qc < 0.0 {
        BebClass::NonsmoothFold
    } else {
        BebClass::Persistence
    };
    Ok(EquilibriumReport {
        form: FormKind::Filippov,
        mu: f.mu,
        solutions: vec![
            Solution {
                location: xl,
                kind: SolutionKind::RegularLeft,
                admissibility: Admissibility::from_quantity(ql, false, f.mu),
                deciding_value: ql,
            },
            Solution {
                location: xs,
                kind: SolutionKind::Pseudo,
                admissibility: Admissibility::from_quantity(qs, false, f.mu),
                deciding_value: qs,
            },
        ],
        beb_class: class,
        adjugate_row: q,
        s,
        det_left: det,
        det_right_or_qc: qc,
    })
}

/// Certificate for the Filippov form: `w = sign(s) q`, rate
/// `min(|s|, sign(s) q^T c)`. Covers motion under `f^L`, `f^R = c` and
/// sliding.
pub fn filippov_certificate(f: &FilippovForm) -> Result<Certificate, CertError> {
    let report = filippov_report(f)?;
    let sigma = require_fold(&report)?;
    let rate = report.s.abs().min(sigma * report.det_right_or_qc);
    Ok(Certificate {
        form: FormKind::Filippov,
        direction: report.adjugate_row.scaled(sigma),
        rate,
        det_left: report.det_left,
        det_right_or_qc: report.det_right_or_qc,
    })
}

/// Regular equilibrium and sticking pseudo-equilibrium of the hybrid form.
pub fn hybrid_report(h: &HybridForm) -> Result<EquilibriumReport, CertError> {
    let eac = h.restitution_term();
    if eac >= -1.0 {
        return Err(CertError::InvalidResetLaw { e1_a_c: eac });
    }
    let det = nonsingular_det(&h.a, false)?;
    let q = h.a.first_row_of_adjugate();
    let qc = q.dot(&h.c);
    if negligible(qc, q.max_abs() * h.c.max_abs()) {
        return Err(CertError::Degenerate(Degeneracy::ZeroQc { qc }));
    }
    let xl = h.a.solve(&h.b.scaled(-h.mu))?;
    let xst = pseudo_equilibrium(&h.a, &h.b, &h.c, h.mu)?;
    let qb = q.dot(&h.b);
    let s = qb * h.mu;
    let ql = -s / det;
    // Relative acceleration at x^St; positive means sticking.
    let qst = eac * s / qc;
    let class = if negligible(qb, q.max_abs() * h.b.max_abs()) {
        BebClass::Degenerate
    } else if det * qc < 0.0 {
        BebClass::NonsmoothFold
    } else {
        BebClass::Persistence
    };
    Ok(EquilibriumReport {
        form: FormKind::Hybrid,
        mu: h.mu,
        solutions: vec![
            Solution {
                location: xl,
                kind: SolutionKind::RegularLeft,
                admissibility: Admissibility::from_quantity(ql, false, h.mu),
                deciding_value: ql,
            },
            Solution {
                location: xst,
                kind: SolutionKind::Pseudo,
                admissibility: Admissibility::from_quantity(qst, true, h.mu),
                deciding_value: qst,
            },
        ],
        beb_class: class,
        adjugate_row: q,
        s,
        det_left: det,
        det_right_or_qc: qc,
    })
}

/// Certificate for the impacting form: `w = sign(s) q`, rate `|s|` for the
/// flow and sticking motion; every impact moves `w . x` up by `v |q^T c|`.
pub fn hybrid_certificate(h: &HybridForm) -> Result<Certificate, CertError> {
    let report = hybrid_report(h)?;
    let sigma = require_fold(&report)?;
    Ok(Certificate {
        form: FormKind::Hybrid,
        direction: report.adjugate_row.scaled(sigma),
        rate: report.s.abs(),
        det_left: report.det_left,
        det_right_or_qc: report.det_right_or_qc,
    })
}
