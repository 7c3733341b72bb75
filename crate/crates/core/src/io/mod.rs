//! File formats: dataset ingestion, imputed panels, output tables and run manifests.

pub mod dataset;
pub mod manifest;
pub mod output;
pub mod panel;

pub use dataset::{
    fill_lc50, merge_subtypes, parse_dataset, parse_dataset_str, registry_for, write_dataset,
    IngestOptions, ParsedDataset, SubtypeRules,
};
pub use manifest::{read_config_file, sha256_file, Manifest};
pub use panel::{load_panel, write_panel_file};
