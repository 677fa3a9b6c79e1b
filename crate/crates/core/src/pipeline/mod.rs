//! End-to-end release: invert, cluster, average, aggregate labels, write.

pub mod artifacts;
pub mod dataset;
pub mod labels;
pub mod pca;
pub mod release;

pub use artifacts::{ReleaseEntry, ReleaseManifest};
pub use dataset::{LabeledDataset, Record};
pub use labels::aggregate_labels;
pub use pca::{fit_pca, fit_pca_images, PcaModel};
pub use release::{
    average_clusters, baseline_average, cluster_codes, invert_dataset, obtain_codes, run_ksalsa, run_release,
    run_release_with, Release, ReleaseOptions,
};
