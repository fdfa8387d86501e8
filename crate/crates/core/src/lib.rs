//! Numerical schemes for SDEs whose drift is discontinuous across a
//! hypersurface of positive reach.
//!
//! The library provides:
//!
//! - deterministic Brownian grids with exact dyadic coarsening, so one
//!   path drives every step size in a strong-error experiment
//!   ([`brownian`]);
//! - geometric descriptors of the discontinuity surface — projection,
//!   unit normal, signed distance, reach ([`geometry`]);
//! - the drift-straightening transform `G` with certified global
//!   invertibility, its derivatives, and the coefficients of the
//!   transformed SDE ([`transform`]);
//! - the two schemes: plain Euler on the original coefficients and the
//!   transform scheme (Euler in transformed coordinates, mapped back)
//!   ([`solvers`]);
//! - the Monte Carlo harness: coupled strong-error estimates, order
//!   regression, occupation-time and excursion diagnostics
//!   ([`analysis`]);
//! - the built-in benchmark problems ([`problems`]).

pub mod analysis;
pub mod brownian;
pub mod em;
pub mod error;
pub mod geometry;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod solvers;
pub mod transform;

pub use analysis::{
    excursion_probabilities, excursion_probability, fit_order, occupation_time, strong_error,
    strong_error_multi, strong_error_with_reference, ConvergenceReport, ConvergenceRow,
    OccupationReport, OccupationRow, ReferenceSpec, StrongErrorConfig,
};
pub use brownian::{sample_brownian, BrownianGrid};
pub use em::euler_maruyama_path;
pub use error::{CoreError, Result};
pub use geometry::{
    lipschitz_quotient_estimate, lipschitz_quotient_filtered, Hypersurface, PairFilter,
    SampleRegion,
};
pub use problem::{DiffusionFn, DriftFn, Path, SdeProblem};
pub use solvers::{solve, solve_em, solve_gm, Scheme, SchemeOutput, StepDiagnostics};
pub use transform::{alpha_1d, alpha_surface, bump, Transform, TransformOptions, TransformSummary};
