//! Sparse storage, Krylov solvers and a geometric multigrid preconditioner.

mod krylov;
mod multigrid;
mod sparse;

pub use krylov::{
    bicgstab_solve, bicgstab_solve_with, cg_solve, cg_solve_preconditioned, cg_solve_with, KrylovOptions,
    KrylovSolution, Preconditioner, PreconditionerOp, Projection,
};
pub use multigrid::{GridHierarchy, Multigrid};
pub use sparse::CsrMatrix;
