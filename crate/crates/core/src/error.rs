use thiserror::Error;

/// Errors raised by mesh construction, assembly, solvers and the recovery loop.
///
/// Numerical payloads are reported as `f64` regardless of the working scalar.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { solver: &'static str, iterations: usize, residual: f64 },

    #[error("coefficient must be strictly positive, found {value} at node {node}")]
    NonPositiveCoefficient { node: usize, value: f64 },

    #[error("boundary flux violates compatibility: integral over the boundary is {integral:e}")]
    IncompatibleFlux { integral: f64 },

    #[error("adjoint right-hand side is not mean compatible: (y - y_obs, 1) = {mean:e}")]
    IncompatibleAdjoint { mean: f64 },

    #[error("direction is not tangent to the simplex at node {node}: component sum {sum:e}")]
    NonTangentDirection { node: usize, sum: f64 },

    #[error("phase field leaves the Gibbs simplex at node {node}: {detail}")]
    OutsideSimplex { node: usize, detail: String },

    #[error("phase label {label} outside 1..={phases}")]
    LabelOutOfRange { label: usize, phases: usize },

    #[error("point ({x}, {y}) is not on the domain boundary")]
    NotOnBoundary { x: f64, y: f64 },

    #[error("mesh too coarse for the interface: h = {h:e} exceeds eps/8 = {limit:e}")]
    UnderResolved { h: f64, limit: f64 },

    #[error("subproblem did not converge in {iterations} iterations (projected gradient {residual:e})")]
    SubproblemNotConverged { iterations: usize, residual: f64 },

    #[error("eigenvalue iteration did not converge in {iterations} iterations (last change {change:e})")]
    EigenNotConverged { iterations: usize, change: f64 },

    #[error(
        "step size halving exhausted at iteration {iteration}: tau = {tau:e}, J(u^n) = {j_prev:e}, J(trial) = {j_trial:e}"
    )]
    BacktrackingExhausted {
        iteration: usize,
        tau: f64,
        j_prev: f64,
        j_trial: f64,
        /// Nodal values (row-major, `Nv x r`) of the iterate the loop was stuck at.
        state: Vec<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
