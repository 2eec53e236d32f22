//! File formats: PFM images with key=value sidecars, frame-sequence
//! directories and ASCII PLY.

mod frames;
mod pfm;
mod ply;

pub use frames::{
    frame_file, read_frame_dir, read_frames_csv, read_map_dir, write_frame_dir, write_frames_csv, write_map_dir,
    FrameDir, FRAMES_CSV, GEOMETRY_META,
};
pub use pfm::{read_geometry_meta, read_pfm, read_polar, write_geometry_meta, write_pfm, write_polar, meta_path};
pub use ply::{read_mesh_ply, read_points_ply, write_mesh_ply, write_points_ply};

#[cfg(test)]
mod tests;
