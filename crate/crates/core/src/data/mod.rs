//! Epoch preprocessing, file formats, the toy vision encoder and the
//! synthetic data generator.

pub mod cache;
pub mod epochs;
pub mod formats;
pub mod synthetic;
pub mod toy;

pub use cache::FeatureCache;
pub use epochs::{
    average_repetitions, baseline_correct, crop_and_downsample, select_channels, subject_variability,
    ChannelRef, EpochTensor, StorageDtype,
};
pub use synthetic::{generate_subjects, generate_synthetic, SyntheticDataset, SyntheticSpec};
pub use toy::{build_feature_cache, ToyVisionEncoder, VisionEncoder};
