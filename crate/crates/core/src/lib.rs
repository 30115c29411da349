//! Stabilization of periodic parabolic systems by finite-dimensional controls.
//!
//! The pipeline: discretize `−∇·(a∇y) + c y` on an interval or rectangle
//! ([`spectral`]), evolve with Crank–Nicolson ([`evolution`]), solve for
//! K-approximate periodic states ([`periodic`]), and synthesize a control
//! `Σ u_l(t) X_l` that makes a perturbed problem periodic ([`control`]).

// `!(x <= tol)` is how NaN is made to fail a check throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod config;
pub mod control;
pub mod error;
pub mod evolution;
pub mod expr;
pub mod field;
pub mod periodic;
pub mod report;
pub mod scenarios;
pub mod spectral;
pub mod time;

pub use error::{Error, Result};
pub use evolution::{energy_norms, evolve, period_map, perturbation_norm, Evolver, PeriodMap, Trajectory};
pub use field::{SampledField, SpaceTimeField, SpatialField};
pub use periodic::{choose_k0, solve_k_approx_periodic, PeriodicityClass, SolveOptions};
pub use spectral::{build_operator, eigendecompose, gram_matrix, DomainSpec, EigenBasis, OperatorSpec, Subdomain};
pub use time::TimeGrid;
