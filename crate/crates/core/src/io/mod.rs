//! File formats: DRC-GRID voxel grids, Netpbm/PFM images, TOML camera files
//! and observation bundle directories.

mod bundle;
mod camera_file;
mod grid_file;
mod image;

pub use bundle::{read_bundle, read_bundles, write_bundle, BUNDLE_CAMERA, BUNDLE_KIND};
pub use camera_file::{camera_from_toml, camera_to_toml, read_camera, write_camera, CameraFile};
pub use grid_file::{
    read_binary_grid, read_grid, read_grid_any, write_binary_grid, write_grid, GridFile,
    LoadedGrid, FUSED_XFORM, MAGIC,
};
pub use image::{
    color_from_bytes, color_to_bytes, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm,
    write_ppm, Image,
};
