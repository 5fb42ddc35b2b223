//! Differentially private estimation algorithms for stochastic block models
//! and mixtures of spherical Gaussians, together with the privacy primitives
//! they compose.
//!
//! The crate is organized around five subsystems:
//!
//! * [`dp`] — Laplace / truncated-Laplace / Gaussian mechanisms, budget
//!   composition, and a sparse high-dimensional private histogram learner.
//! * [`sbm`] — stochastic block model sampling, the centered rescaled matrix
//!   `Y(G)`, label error `err`, and graph splitting.
//! * [`projection`] — orthogonal projection onto the PSD / fixed-diagonal
//!   set `K` plus spectral utilities and a sensitivity probe.
//! * [`recovery`] — private weak recovery, private majority voting, private
//!   exact recovery, and exponential-mechanism recovery.
//! * [`gmm`] — the private Gaussian-mixture center-recovery pipeline.
//!
//! Every randomized operation takes an explicit RNG; see [`rng`] for the
//! seed-derivation scheme used by the experiment harness.

pub mod dp;
pub mod gmm;
pub mod matrix;
pub mod projection;
pub mod recovery;
pub mod rng;
pub mod sbm;

pub use dp::PrivacyBudget;
pub use matrix::SymmetricMatrix;
pub use sbm::{Graph, LabelVector};
