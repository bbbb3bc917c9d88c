//! Population chains and their diffusion-with-jumps scaling limits.
//!
//! The crate simulates discrete Wright-Fisher chains with selection in an
//! i.i.d. random environment and generalized Galton-Watson chains with
//! density- and environment-dependent reproduction, evaluates their rescaled
//! transition characteristics against closed-form limiting generators,
//! integrates the limiting jump-diffusion SDEs, and provides a harness that
//! certifies the convergence numerically (characteristic residuals,
//! tail/increment checks, Wasserstein distances between marginal laws).

pub mod branching;
pub mod coupled;
pub mod drivers;
pub mod error;
pub mod levy;
pub mod quad;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sde;
pub mod special;
pub mod stats;
pub mod testfn;
pub mod wf;

pub use error::{Error, Result};
pub use levy::{EnvFamily, JumpComponent, JumpMeasure, LevyTriplet, TruncationFn};
pub use testfn::TestFunction;
