//! Learned association over local similarity maps.

pub mod decode;
pub mod frames;
mod network;
mod train;

#[cfg(test)]
mod tests;

pub use decode::decode;
pub use frames::{label_frame, sample_frames, LabeledFrame};
pub use network::{AssocInput, AssocNet, AssocNetError, AssocNetLayers, AssocSample, AssociationMap, CHECKPOINT_KIND};
pub use train::{argmax_accuracy, train_assocnet, AssocEpochLog, AssocTrainError, AssocTrainReport};
