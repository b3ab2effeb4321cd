//! Pseudo-spectral solvers for the time-fractional transport-diffusion
//! equation ∂_t^α θ + ε(−Δ)θ + (−Δ)^{γ/2} θ + div(u θ) = 0 with a
//! divergence-free drift u = φ_ε ∗ A[θ], together with the numerical checks
//! that accompany its mild and time-marching formulations.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod fraccalc;
pub mod kernels;
pub mod persist;
mod quad;
pub mod solver_march;
pub mod solver_mild;

pub use error::{Error, Result};
