//! Numerical laboratory for the radially symmetric parabolic-elliptic
//! Keller-Segel system on a disk with no-flux conditions for the density
//! and a Dirichlet condition for the signal.
//!
//! The evolution is carried out in the cumulated variables
//! `w(s) = int_0^sqrt(s) rho u d rho` and `z(s) = k int_0^sqrt(s) rho v d rho`,
//! `s = r^2`, which turn the system into one degenerate parabolic equation
//! coupled to a linear two-point problem.

pub mod analysis;
pub mod elliptic;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod initial;
pub mod quadrature;
pub mod steady;
pub mod tridiag;

pub use error::{KsError, Result};
pub use grid::{build_mass_grid, profile_to_w0, total_mass, w_to_u, MassGrid, Params, RadialProfile, WState};
