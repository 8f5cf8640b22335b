//! File formats: point clouds (XYZ, OFF, ASCII PLY), the binary ODF field
//! format, OBJ glyph export, and the synthetic labeled dataset.

pub mod glyphs;
pub mod odf_file;
pub mod pointcloud;
pub mod synthetic;

pub use glyphs::export_glyphs;
pub use odf_file::{read_odf, read_odf_bytes, write_odf, write_odf_bytes, ODF_MAGIC, ODF_VERSION};
pub use pointcloud::{read_point_cloud, write_point_cloud, CloudFormat};
pub use synthetic::{generate_synthetic_dataset, ShapeClass, SyntheticDataset, SyntheticDatasetSpec};
