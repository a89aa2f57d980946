//! Blow-up machinery for the SO(d)-equivariant Yang-Mills heat flow
//!
//! `u_t = u_rr + (d-3)/r u_r - (d-2)/r^2 u(1-u)(2-u)`, `d > 10`.
//!
//! The crate computes the ground state `Q`, realizes the linearized operator
//! `L = A*A` and its inverse on a graded radial mesh, builds the profile
//! ladder `T_k`, the orthogonality generator `Phi_M`, the approximate
//! profiles `Q_b`, integrates the modulation equations, and evolves the full
//! PDE in physical and renormalized variables.

pub mod banded;
pub mod bpoly;
pub mod bspline;
pub mod cutoff;
pub mod error;
pub mod fit;
pub mod grid;
pub mod ground_state;
pub mod linops;
pub mod modulation;
pub mod ode;
pub mod params;
pub mod pde;
pub mod profiles;
pub mod spectral;
pub mod tiers;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{weighted_inner, weighted_norm, Grading, GridFunction, RadialGrid};
pub use params::ModelParams;
pub use tiers::Tier;
