use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::pfm::{read_geometry_meta, read_pfm, write_geometry_meta, write_pfm};
use crate::error::{Error, Result};
use crate::geometry::{FrameRecord, FrameSequence, ImageGeometry, PolarImage, Pose};
use crate::grid::Grid;

pub const FRAMES_CSV: &str = "frames.csv";
pub const GEOMETRY_META: &str = "geometry.meta";

const POSE_COLUMNS: [&str; 12] = ["r00", "r01", "r02", "tx", "r10", "r11", "r12", "ty", "r20", "r21", "r22", "tz"];

/// `<prefix>_%06d.pfm`.
pub fn frame_file(dir: &Path, prefix: &str, frame_id: usize) -> PathBuf {
    dir.join(format!("{prefix}_{frame_id:06}.pfm"))
}

pub fn write_frames_csv(frames: &FrameSequence, path: &Path) -> Result<()> {
    let mut out = String::from("frame_id,sweep_id,sweep_direction,joint_theta_rad,joint_t_m");
    for c in POSE_COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for f in frames.iter() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            f.frame_id,
            f.sweep_id,
            f.sweep_direction.as_str(),
            f.joint_theta_rad,
            f.joint_t_m
        );
        for v in f.pose.to_row_major() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_frames_csv(path: &Path) -> Result<FrameSequence> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |n: usize, what: &str| Error::Parse(format!("{} line {n}: {what}", path.display()));
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if header.split(',').count() != 17 {
        return Err(bad(1, "expected 17 columns"));
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let tok: Vec<&str> = line.split(',').map(str::trim).collect();
        if tok.len() != 17 {
            return Err(bad(n, &format!("{} columns", tok.len())));
        }
        let count = |j: usize| tok[j].parse::<usize>().map_err(|_| bad(n, tok[j]));
        let float = |j: usize| tok[j].parse::<f64>().map_err(|_| bad(n, tok[j]));
        let mut m = [0.0; 12];
        for (j, v) in m.iter_mut().enumerate() {
            *v = float(5 + j)?;
        }
        let pose = Pose::from_row_major(&m);
        if !pose.is_rigid(1e-6) {
            return Err(bad(n, "pose is not rigid"));
        }
        frames.push(FrameRecord {
            frame_id: count(0)?,
            sweep_id: count(1)?,
            sweep_direction: tok[2].parse()?,
            joint_theta_rad: float(3)?,
            joint_t_m: float(4)?,
            pose,
        });
    }
    Ok(FrameSequence::new(frames))
}

/// A frame-sequence directory: geometry, poses and one B-mode image per
/// frame, plus labels when present.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDir {
    pub geometry: ImageGeometry,
    pub frames: FrameSequence,
    pub images: Vec<PolarImage>,
    pub labels: Option<Vec<Grid>>,
}

pub fn write_frame_dir(dir: &Path, data: &FrameDir) -> Result<()> {
    if data.images.len() != data.frames.len() || data.labels.as_ref().is_some_and(|l| l.len() != data.frames.len()) {
        return Err(Error::Alignment("frame, image and label counts differ".into()));
    }
    fs::create_dir_all(dir)?;
    write_geometry_meta(&data.geometry, &dir.join(GEOMETRY_META))?;
    write_frames_csv(&data.frames, &dir.join(FRAMES_CSV))?;
    for (i, f) in data.frames.iter().enumerate() {
        write_pfm(&data.images[i].data, &frame_file(dir, "frame", f.frame_id))?;
        if let Some(labels) = &data.labels {
            write_pfm(&labels[i], &frame_file(dir, "label", f.frame_id))?;
        }
    }
    Ok(())
}

/// Labels are loaded only when every frame has one.
pub fn read_frame_dir(dir: &Path) -> Result<FrameDir> {
    let geometry = read_geometry_meta(&dir.join(GEOMETRY_META))?;
    let frames = read_frames_csv(&dir.join(FRAMES_CSV))?;
    let images = frames
        .iter()
        .map(|f| PolarImage::new(geometry, read_pfm(&frame_file(dir, "frame", f.frame_id))?))
        .collect::<Result<Vec<_>>>()?;
    let labelled = frames.iter().all(|f| frame_file(dir, "label", f.frame_id).is_file());
    let labels = if labelled && !frames.is_empty() {
        Some(read_map_dir(dir, "label", &frames, &geometry)?)
    } else {
        None
    };
    Ok(FrameDir {
        geometry,
        frames,
        images,
        labels,
    })
}

pub fn write_map_dir(dir: &Path, prefix: &str, frames: &FrameSequence, maps: &[Grid]) -> Result<()> {
    if maps.len() != frames.len() {
        return Err(Error::Alignment(format!("{} maps for {} frames", maps.len(), frames.len())));
    }
    fs::create_dir_all(dir)?;
    for (f, m) in frames.iter().zip(maps) {
        write_pfm(m, &frame_file(dir, prefix, f.frame_id))?;
    }
    Ok(())
}

/// Per-frame maps on the polar lattice of `geo`.
pub fn read_map_dir(dir: &Path, prefix: &str, frames: &FrameSequence, geo: &ImageGeometry) -> Result<Vec<Grid>> {
    frames
        .iter()
        .map(|f| {
            let path = frame_file(dir, prefix, f.frame_id);
            let g = read_pfm(&path)?;
            if g.rows() != geo.n_samples || g.cols() != geo.n_rays {
                return Err(Error::Alignment(format!(
                    "{} is {}x{}, frames are {}x{}",
                    path.display(),
                    g.rows(),
                    g.cols(),
                    geo.n_samples,
                    geo.n_rays
                )));
            }
            Ok(g)
        })
        .collect()
}
