//! Evaluation of generated images against references.

pub mod features;
pub mod metrics;
pub mod report;

pub use features::{embed_images, embed_set, Embedder, FeatureSet, ToyEmbedder};
pub use metrics::{
    cosine_similarity_score, frechet_details, frechet_distance, identity_integrity, Aggregate,
    FrechetDetails, Integrity, RegionMad,
};
pub use report::{Report, ReportRow, COLUMNS};
