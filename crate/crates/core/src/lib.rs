//! Hybrid Monte Carlo / discrete-ordinates transport with a per-particle
//! scatter cap.
//!
//! Each step runs three stages:
//!
//! 1. Scatter-limited (Q)MC carries the uncollided flux and the first `N_s`
//!    collided components.
//! 2. An `S_N` source iteration solves for everything that scatters more
//!    often.
//! 3. A zero-scatter re-emission leg rebuilds the step-end census.
//!
//! `N_s = 0` is the classic uncollided/collided split and `N_s = ∞` is plain
//! Monte Carlo.

pub mod analysis;
pub mod benchmarks;
pub mod error;
pub mod geometry;
pub mod hybrid;
pub mod mc;
pub mod sampling;
pub mod sn;

pub use analysis::{
    erlang_sandwich_bounds, erlang_tail, fit_convergence_rate, l2_error, reference_solution,
    run_sweep, ConvergencePoint, RateFit, ReferenceSettings, SweepAxes,
};
pub use benchmarks::{dogleg_problem, reed_problem};
pub use error::{Error, Result};
pub use geometry::{
    BoundarySource, Direction, Extent, Face, Material, Mesh, Mode, Point, ProblemSpec, RegionSpec,
};
pub use hybrid::{
    hybrid_step, n_collision_reference, run_transient, steady_state_solve, HybridConfig,
    RemapVariant, SnScale, StepOutput, StepState,
};
pub use mc::{Particle, Reduction, ScatterCap};
pub use sampling::{SampleStream, SamplerKind};
pub use sn::{QuadratureSet, SnSettings, SnSolution};
