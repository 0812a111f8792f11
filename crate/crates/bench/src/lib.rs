//! Fixtures shared by the benchmarks.

use shelab::{
    Boundary, CovarianceSpec, Diffusion, InitialCondition, NoiseModel, ReactionFn, SpaceTimeGrid, SpdeProblem,
    WeightedNorm,
};

/// Desk-scale periodic grid: `T = 1`, `n_t`, `L = 8`, `n_x`.
pub fn desk_grid(n_t: usize, n_x: usize) -> SpaceTimeGrid {
    SpaceTimeGrid::new(1.0, n_t, 8.0, n_x, Boundary::Periodic).expect("valid grid")
}

/// Cubic drift, `sigma = 1 + 0.1 sin u`, white noise, zero initial data.
pub fn multiplicative_problem(n_t: usize, n_x: usize) -> SpdeProblem {
    let grid = desk_grid(n_t, n_x);
    let noise = NoiseModel::new(&grid, &CovarianceSpec::white(0.25).expect("valid spec")).expect("noise");
    SpdeProblem::new(
        noise,
        ReactionFn::cubic(),
        Diffusion::sine(),
        InitialCondition::Constant { value: 0.0 },
        WeightedNorm::new(0.5, 0.0).expect("valid weight"),
    )
    .expect("valid problem")
}
