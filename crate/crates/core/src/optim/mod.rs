//! Two-stage hyperparameter search: random warm-up, tree-structured Parzen
//! estimator suggestions, and Adam refinement inside k-fold cross-validation.

mod acquisition;
mod adam;
mod search;
mod space;
mod tpe;

pub use acquisition::expected_improvement;
pub use adam::{AdamConfig, AdamState};
pub use search::{
    evaluate_split, fine_tune, fit_scalers, read_history, run_search, write_history_line, SearchConfig,
    SearchOutcome, Stage, TrialRecord,
};
pub use space::{random_suggest, SearchSpace, Slot, SpaceBounds, MAX_SEARCH_DEGREE};
pub use tpe::{tpe_suggest, TpeConfig};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derives an independent seed for a named random stream of a master seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}
