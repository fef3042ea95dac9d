//! Inputs shared by the benchmarks.

use poi_xaudit_core::ingest::{build_trajectories, BoundingBox, Dataset};
use poi_xaudit_core::recommender::{ModelConfig, Recommender, Vocab};
use poi_xaudit_core::synth::{generate, SynthConfig};

pub use poi_xaudit_core::{PoiId, UserId};

/// Synthetic dataset with the default generator layout.
pub fn dataset(n_users: usize) -> Dataset {
    let checkins = generate(&SynthConfig { n_users, ..SynthConfig::default() }).expect("valid generator config");
    let (trajs, registry) = build_trajectories(&checkins, &BoundingBox::NEW_YORK, 10).expect("non-empty dataset");
    Dataset::new(trajs, registry).expect("consistent dataset")
}

/// Untrained recommender with default width over `ds`.
pub fn model(ds: &Dataset) -> Recommender {
    Recommender::init(ModelConfig::default(), Vocab::from_dataset(ds)).expect("valid model config")
}
