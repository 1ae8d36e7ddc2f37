//! File formats, report writers and subcommands for the `stgg` tool.

pub mod app;
pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod tensor;

pub use error::{CliError, Result};
pub use manifest::{load_dataset, write_dataset, Dataset, DatasetManifest, ManifestMeta};
pub use tensor::{FormatError, Tensor};
