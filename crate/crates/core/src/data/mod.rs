//! Dataset ingestion, canonical bundles, splits and synthetic generators.

mod bundle;
mod raw;
mod splits;
mod synth;

pub use bundle::{
    load_bundle, parse_bundle, save_bundle, BundleLabels, Features, GraphBundle, Metadata,
    SparseRow, Splits, FORMAT_VERSION,
};
pub use raw::{
    load_content_cites, load_geom_gcn, parse_content_cites, parse_geom_gcn, IngestReport,
};
pub use splits::make_splits;
pub use synth::{chain_ends, synth_distance_task, synth_sbm};
