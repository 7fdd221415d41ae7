//! Shared fixtures for the benchmarks.

use aridprob_core::basis::{encode_rasters, BandwidthRule, BasisConfig};
use aridprob_core::grid::{synth_generate, GridSpec, StGrid, SynthConfig};
use aridprob_core::ktc::{label_grid, LabelRaster};
use aridprob_core::nn::Dataset;

/// Synthetic grid of `side`×`side` one-degree cells over `years` years.
pub fn grid(side: usize, years: i32) -> StGrid {
    let spec =
        GridSpec::new((0.0, side as f64), (0.0, side as f64), 1.0, (1960, 1960 + years - 1)).expect("valid bench grid");
    synth_generate(&SynthConfig {
        spec,
        seed: 1,
        precip_gradient: 16.0 / side as f64 * 1.5,
        precip_base: 16.0,
        noise_sd: 1.0,
        temp_base: 30.0,
        temp_lapse: 0.25,
        seasonal_amp: 0.1,
    })
    .expect("valid synthetic config")
}

pub fn labels(grid: &StGrid) -> Vec<LabelRaster> {
    let s = grid.spec();
    label_grid(grid, s.year_start..=s.year_end).expect("grid covers its years")
}

pub fn dataset(grid: &StGrid) -> (BasisConfig, Dataset) {
    let basis = BasisConfig::build(grid.spec(), 5, BandwidthRule::MaxDistance, 5, None).expect("basis");
    let (data, _) = encode_rasters(&labels(grid), &basis).expect("encode");
    (basis, data)
}
