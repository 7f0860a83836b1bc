//! Heat-flow quantitative differentiation laboratory.
//!
//! The crate computes, on regular grids and by Monte Carlo, the objects that
//! govern heat-semigroup approximation of Lipschitz maps between
//! finite-dimensional normed spaces:
//!
//! - [`spaces`]: normed spaces on ℝⁿ with a reference Euclidean structure and
//!   their averaged invariants `M_p`, `I_q`, `b`, `L_X`.
//! - [`fields`]: grid-sampled vector fields, test-function generators and
//!   discrete Lipschitz constants.
//! - [`heat`]: heat and Poisson evolutes, gradients, first-order Taylor
//!   approximants and kernel constants.
//! - [`lps`]: Littlewood–Paley–Stein G-functionals and an empirical
//!   martingale-cotype tester.
//! - [`dorronsoro`]: multiscale Carleson functionals and the affine
//!   approximation search.
//! - [`spectral`]: Fourier-side kernel constants and the Poisson divergence
//!   demonstrator.
//! - [`transport`]: the affine projection on `L₂(B_X)`, half-ball measures and
//!   exact Wasserstein-1 distances.
//! - [`cli`]: experiment configuration and report emission.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dorronsoro;
pub mod error;
pub mod fft;
pub mod fields;
pub mod heat;
pub mod lps;
pub mod quadrature;
pub mod rng;
pub mod spaces;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
pub use fields::{GridField, TestFunctionSpec};
pub use heat::{AffineMap, Evolute};
pub use lps::{FunctionalReport, ScaleGrid};
pub use spaces::{InvariantEstimate, NormKind, NormedSpace};

/// Version string embedded in every emitted report.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
