//! Pre-analysis k-means, posterior similarity and Binder partitions, and cluster summaries.

pub mod binder;
pub mod kmeans;
pub mod summary;

pub use binder::{
    adjusted_rand_index, binder_loss, binder_partition, canonicalize, similarity_matrix,
    BinderEstimate, SimilarityMatrix,
};
pub use kmeans::{kmeans, select_dataset, wss_profile, ImputedPanel, KMeansResult, WssProfile};
pub use summary::{
    cluster_summary, pearson_by_subtype, pearson_by_subtype_panel, ClusterSummary, CorrelationCell,
};
