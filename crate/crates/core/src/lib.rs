//! Numerical laboratory for the stochastic heat equation
//! `du = (1/2) u'' dt + f(u) dt + sigma(u) dW` with a half-Lipschitz drift `f`.
//!
//! The crate provides the grid and heat semigroup, spatially homogeneous Gaussian noise,
//! reactions with their Yosida approximations, the deterministic map `z -> m` solving
//! `m = z + int G f(m)`, Picard iteration for mild solutions, directional Malliavin
//! derivatives along heat-kernel probes, and density diagnostics of `u(t0, x0)`.

pub mod config;
pub mod density;
pub mod det_map;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod malliavin;
pub mod noise;
pub mod plot;
pub mod reaction;
pub mod solver;

pub use config::ExperimentConfig;
pub use density::{atom_test, kde, run_ensemble, AtomReport, Bandwidth, Ensemble, KdeCurve, KdeResult};
pub use det_map::{apply_l, apply_m, MapMethod, MapSolveReport, MapSolver, WeightedNorm};
pub use error::{Error, Result};
pub use experiments::{Command, CommandOutcome, RunOptions};
pub use grid::{heat_kernel, semigroup_apply, Boundary, RandomField, SpaceTimeGrid};
pub use malliavin::{
    cameron_martin_fd_oracle, decompose_derivative, positivity_study, solve_directional_derivative,
    DerivativeDecomposition, MalliavinProbe, PositivityStudy,
};
pub use noise::{
    dalang_check, derive_seed, q_lambda, CameronMartinElement, CovarianceKind, CovarianceSpec, NoiseModel,
    NoisePath,
};
pub use reaction::{resolvent, yosida_f, ReactionFn, YosidaApprox};
pub use solver::{picard_solve, Diffusion, InitialCondition, PicardOptions, PicardSolution, PicardSolver, SpdeProblem};
