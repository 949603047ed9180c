//! Configuration files, result tables, plots and run manifests.

pub mod config;
pub mod manifest;
pub mod plot;
pub mod table;

pub use config::{parse_config, parse_config_str, preset, RunConfig, SweepSection, PRESETS};
pub use manifest::{ManifestWriter, RunManifest};
pub use plot::{emit_plot, render_plot, PlotKind};
pub use table::{emit_table, read_table, Table};
