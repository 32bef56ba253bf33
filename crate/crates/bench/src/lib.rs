//! Shared fixtures for the criterion benchmarks.

use myodecode_core::config::SimConfig;
use myodecode_core::sim::{self, Scene};

/// A small single-DoF scene sized for benchmarking individual stages.
pub fn bench_scene() -> Scene {
    let cfg = SimConfig {
        channels: 16,
        neurons_per_dof: 5,
        trials: 2,
        ..SimConfig::default()
    };
    sim::simulate_scene(&cfg, 7).expect("bench scene")
}
