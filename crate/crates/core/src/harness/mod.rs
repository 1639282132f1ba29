//! Monte Carlo experiments: configuration, metrics, FLOP accounting and
//! result files.

pub mod complexity;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use complexity::flop_count;
pub use config::{ExperimentSpec, SnrAxis, SystemConfig};
pub use experiment::{run_experiment, run_trial, Experiment, ExperimentRun, TrialRecord};
pub use metrics::{count_bit_errors, mse_metric, summarize, BitCounts, SummaryRow};
pub use output::{emit_results, read_records, version_string, RunManifest};

/// The RNG used for every seeded draw in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Decorrelated child seed for purpose `tag` (splitmix64 finalizer).
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
