//! Ingestion and emission of cameras, images, scalar volumes and transfer
//! functions, plus ground-truth dataset generation.

mod camera;
mod image;
mod volume;

pub use camera::{
    load_camera_set, orbit_camera_to_world, save_camera_set, Camera, LoadedCamera, Ray,
};
pub use image::{read_image, write_image, ImageBuffer};
pub use volume::{
    bake_ground_truth, composite_over_background, load_volume, save_volume, BakeOptions,
    ScalarVolume, TransferFunction, VolumeDtype,
};
