//! Normal forms, divergence certificates and simulators for boundary
//! equilibrium bifurcations of piecewise-smooth systems.
//!
//! When both solutions of a truncated normal form are virtual, a single row
//! of an adjugate matrix gives a direction along which every orbit drifts at
//! a uniform rate, so no bounded invariant set exists near the bifurcation.
//! [`certificates`] constructs these directions; [`map_dynamics`] and
//! [`flow`] simulate the systems they describe; [`models`] and [`scan`]
//! reproduce the ocean-circulation and border-collision experiments.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod flow;
pub mod linalg;
pub mod map_dynamics;
pub mod models;
pub mod scan;

pub use certificates::{Certificate, FilippovForm, HybridForm, PwlMap, PwlOde};
pub use linalg::{SquareMatrix, Vector};
