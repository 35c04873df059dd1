//! Numerical persistence analysis for heteroclinic orbits of piecewise-smooth
//! slow-fast systems
//!
//! ```text
//! x' = f_l(x, y)     when c_{l-1} < h(x, y) < c_l
//! y' = eps * g(x, y, eps)
//! ```
//!
//! The crate is organised bottom-up:
//!
//! * [`system`] holds the piecewise system, region classification, hyperbolic
//!   endpoints and spectral projections.
//! * [`ode`] and [`trajectory`] integrate the frozen and slow systems with
//!   transversal event handling and build the anchored half-orbits.
//! * [`variational`] builds saltation matrices, piecewise fundamental
//!   matrices, the dichotomy projections at `t = 0` and bounded adjoint
//!   solutions.
//! * [`melnikov`] evaluates the Melnikov matrix in boundary and integral form
//!   and decides the rank condition.
//! * [`duffing`] is the piecewise bistable example with closed-form orbits.
//! * [`verifier`] checks persistence at finite `eps` by two-sided shooting.
//! * [`spec_file`] reads declarative system descriptions.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod duffing;
pub mod error;
pub mod linalg;
pub mod melnikov;
pub mod ode;
pub mod params;
pub mod poly;
pub mod quadrature;
pub mod spec_file;
pub mod system;
pub mod trajectory;
pub mod variational;
pub mod verifier;

pub use nalgebra::{DMatrix, DVector};

pub use error::{Error, Result};
pub use melnikov::{MelnikovReport, MelnikovSetup, RankVerdict};
pub use params::{ParamFamily, ParamKind};
pub use system::{
    HyperbolicEndpoint, Location, PiecewiseSlowFastSystem, RegionIndex, Side, SwitchingSpec,
};
pub use trajectory::{
    CrossingEvent, FrozenOrbitPair, IntegrationOptions, OrbitSetup, PiecewiseTrajectory, YMode,
};
pub use variational::{AdjointSolution, DichotomyData, PiecewiseFundamental, SaltationMatrix};
pub use verifier::{ConnectionResult, ConvergenceTable, ShootingOptions};

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
