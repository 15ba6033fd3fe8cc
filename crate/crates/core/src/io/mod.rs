//! File formats: binary PNM images, HGT1 tensors, TOML run configuration,
//! and cluster visualizations.

mod config;
mod pnm;
mod tensor;
mod viz;

pub use config::{ModuleConfig, RunConfig};
pub use pnm::{read_pnm, write_pnm, Image};
pub use tensor::{Tensor, MAX_RANK, TENSOR_MAGIC};
pub use viz::{cluster_visualize, color_table, MARKER_COLOR};
