//! Fixtures shared by the benchmarks under `benches/`.

use sdploc::sim::{measure, paper_scenario_with, random_scenario, Connectivity, NoiseModel, Scenario};
use sdploc::{derive_bounds, DistanceBounds, NoiseBoundPolicy, RangeMeasurement};

/// Paper layout with `n` sensors and its default-noise measurements.
pub fn paper_instance(n: usize, seed: u64) -> (Scenario, Vec<RangeMeasurement>) {
    let s = paper_scenario_with(seed, n);
    let ms = measure(&s, &NoiseModel::default(), seed + 1).expect("valid noise");
    (s, ms)
}

/// Random sensor-anchor-only network with derived bounds.
pub fn sparse_instance(n: usize, m: usize, seed: u64) -> (Scenario, Vec<DistanceBounds>) {
    let s = random_scenario(seed, n, m, 40.0, Connectivity::SensorAnchorOnly);
    let ms = measure(&s, &NoiseModel::default(), seed + 1).expect("valid noise");
    let bs = derive_bounds(&ms, &s.anchor_map(), NoiseBoundPolicy::default(), 0.01).expect("bounds");
    (s, bs)
}
