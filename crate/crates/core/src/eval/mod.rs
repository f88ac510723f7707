//! Zero-shot retrieval metrics and reports.

pub mod metrics;
pub mod report;

pub use metrics::{
    map_score, mean_similarity, pearson, rank_gallery, spearman, topk_accuracy, RetrievalResult,
};
pub use report::{evaluate, Evaluation, GalleryBlur, Report};
