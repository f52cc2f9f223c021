//! Optical flow estimation with convective-acceleration regularization.
//!
//! The flow `u = (u¹, u²)` of an image sequence `f` is estimated by minimizing
//!
//! ```text
//! E(u) = ‖λ D_u f‖² + α ‖D_u u‖² + β ‖∇̄u‖²
//! ```
//!
//! over continuous trilinear finite elements on a regular space-time grid.
//! `D_u f = f_t + ∇f·u` is the convective derivative, `D_u u` the convective
//! acceleration and `λ = 1/√(|∇̄f|² + ε²)` a contrast-normalizing weight.
//! The nonconvex convective term is handled by a lagged-coefficient iteration:
//! each outer step solves a linear anisotropic diffusion problem with tensor
//! `α w̄w̄ᵀ + β Id`, where `w` is the previous iterate.
//!
//! Units: node `(k, i, j)` sits at `(t, x¹, x²) = (k·dt, i·h, j·h)`, so `x¹`
//! runs down the rows and `x²` along the columns. Velocities are expressed in
//! spatial units per unit of `t`; multiply by `dt` to get pixels per frame.

pub mod derivatives;
pub mod energy;
pub mod error;
pub mod fem;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod solver;
pub mod synth;
pub mod trajectory;

pub use derivatives::{
    convective_acceleration, convective_derivative, convective_derivative_vector,
    nodal_derivatives, ImageDerivatives,
};
pub use energy::{energy, surrogate_energy, EnergyBreakdown, ModelWeights};
pub use error::{Error, Result};
pub use fem::{
    assemble_data_blocks, assemble_mass, assemble_stiffness, assemble_system, project_derivatives,
    BlockSparseSystem, CsrMatrix, DataBlocks, DiffusionTensorField, Element, QuadratureRule,
};
pub use grid::{ImageSequence, ScalarField, SpaceTimeGrid, VectorField};
pub use pipeline::{
    check_linear_independence, compute_weight, convective_iterate, el_residual,
    el_residual_parts, horn_schunck_init, DataWeighting, FlowParams, FlowProblem,
    IterationFailure, IterationTrace, OuterIteration, ResidualParts,
};
pub use solver::{cg_solve, matvec, Preconditioner, SolveReport, SolverConfig};
pub use synth::{
    advect_sequence, endpoint_error, mean_speed, sample_flow, scenario, AnalyticFlow, ErrorStats,
    GroundTruthPair, Profile, Template, Velocity, SCENARIOS,
};
pub use trajectory::{
    curvature, default_step, integrate_trajectory, Trajectory, TrajectorySample,
    DEFAULT_STAGNATION_SPEED,
};
