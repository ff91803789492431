//! Learned pairwise similarity between tracked targets and detections, and
//! the grid maps built from it.

pub mod maps;
mod network;
pub mod pairs;
mod train;

#[cfg(test)]
mod tests;

pub use maps::{
    build_global_map, crop_local_map, Cell, GlobalSimilarityMap, GridGeometry, LocalSimilarityMap, Occupancy,
};
pub use network::{
    dense_reference_map, loss_weights, pair_scores, simnet_loss, Branches, Embeddings, LossWeights, ObjectBatch, SimNet, SimNetError,
    SimNetLayers, weighted_loss, BOX_SCALE, BOX_SHIFT, CHECKPOINT_KIND,
};
pub(crate) use network::{load_store, push_stats, read_stats};
pub use pairs::{generate_pair_specs, sample_specs, PairSpec, PairStats, Split, TrainingPair};
pub use train::{accuracy_at, pair_accuracy, spec_scores, sweep_threshold, train_simnet, validation_specs, EpochLog, TrainReport};
