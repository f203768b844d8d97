//! Synthetic inputs shared by the benchmarks.

use hicorr_core::data::{check_uvc, UvcPolicy};
use hicorr_core::sim::{generate_data, generate_truth, GroundTruth, TruthConfig};
use hicorr_core::{SampleMatrix, UniqueSets};

pub struct Fixture {
    pub truth: GroundTruth,
    pub sets: UniqueSets,
    pub z: SampleMatrix,
}

/// A truth with `p` higher-level variables over `q` lower-level ones and
/// `n` generated samples.
pub fn fixture(p: usize, q: usize, unique: usize, n: usize) -> Fixture {
    let cfg = TruthConfig {
        p,
        q,
        unique_per_higher: unique,
        diag: 1.0 + 0.05 * p as f64,
        density: 0.3,
        ..TruthConfig::default()
    };
    let truth = generate_truth(&cfg, 17).expect("truth");
    let sets = check_uvc(&truth.map, UvcPolicy::Strict).expect("uvc").sets;
    let z = generate_data(&truth, n, 18).expect("data");
    Fixture { truth, sets, z }
}
