//! Pipeline driver: configuration, staged execution with a content-hashed
//! manifest, and plot-data export.

pub mod config;
pub mod export;
pub mod run;

pub use config::{Preset, RunConfig};
pub use export::{export_plotdata, ExportKind};
pub use run::{parse_stages, run_pipeline, Layout, Manifest, Stage};
