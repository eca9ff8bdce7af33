//! Multiphase coefficient recovery for a pure Neumann elliptic problem with a
//! phase-field perimeter regulariser.
//!
//! The diffusion coefficient is a convex combination `a(u) = sum_i a_i u_i` of
//! phase values, with `u` a P1 field constrained nodewise to the Gibbs
//! simplex. Recovery minimises a boundary or bulk data misfit plus
//! `sigma F_eps(u)` by a semi-implicit projected gradient flow whose steps are
//! convex quadratic programs over the simplex.
//!
//! Everything is generic over the scalar ([`scalar::Real`]); the aliases below
//! fix the common choices.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod fem;
pub mod gamma;
pub mod linalg;
pub mod mesh;
pub mod objective;
pub mod optimizer;
pub mod scalar;
pub mod state;
pub mod vi_step;
pub mod vtk;

pub use error::{Error, Result};

pub type Mesh64 = mesh::Mesh<f64>;
pub type Mesh32 = mesh::Mesh<f32>;
pub type Discretization64 = fem::Discretization<f64>;
pub type Discretization32 = fem::Discretization<f32>;
pub type PhaseField64 = fem::PhaseField<f64>;
pub type PhaseField32 = fem::PhaseField<f32>;
pub type ScalarField64 = fem::ScalarField<f64>;
pub type ScalarField32 = fem::ScalarField<f32>;
pub type CsrMatrix64 = linalg::CsrMatrix<f64>;
pub type CsrMatrix32 = linalg::CsrMatrix<f32>;
pub type RecoveryConfig64 = optimizer::RecoveryConfig<f64>;
pub type RecoveryConfig32 = optimizer::RecoveryConfig<f32>;
