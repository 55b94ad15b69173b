//! Shared fixtures for the solver benchmarks in `benches/`.

use mfsg_core::{ModelParams, TimeGrid};

/// The default scalar scenario on `[0, 1]` with step `dt`.
pub fn fixture(dt: f64) -> (ModelParams, TimeGrid) {
    let grid = TimeGrid::new(1.0, dt).expect("benchmark step divides the horizon");
    (ModelParams::scalar_scenario(), grid)
}
