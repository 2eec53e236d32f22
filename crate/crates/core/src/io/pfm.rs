use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{ImageGeometry, PolarImage};
use crate::grid::Grid;

/// Single-channel little-endian PFM (scale -1). Rows are stored bottom-up as
/// the format requires, so row 0 of the grid is the last scanline written.
pub fn write_pfm(grid: &Grid, path: &Path) -> Result<()> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut buf = format!("Pf\n{cols} {rows}\n-1.0\n").into_bytes();
    buf.reserve(rows * cols * 4);
    for r in (0..rows).rev() {
        for c in 0..cols {
            buf.extend_from_slice(&(grid.get(r, c) as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Parse("PFM header is not ASCII".into()))
}

pub fn read_pfm(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let bad = |what: &str| Error::Parse(format!("{}: {what}", path.display()));
    if header_token(&bytes, &mut pos)? != "Pf" {
        return Err(bad("not a single-channel PFM"));
    }
    let cols: usize = header_token(&bytes, &mut pos)?.parse().map_err(|_| bad("width"))?;
    let rows: usize = header_token(&bytes, &mut pos)?.parse().map_err(|_| bad("height"))?;
    let scale: f64 = header_token(&bytes, &mut pos)?.parse().map_err(|_| bad("scale"))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != rows * cols * 4 {
        return Err(bad(&format!("payload has {} bytes, expected {}", body.len(), rows * cols * 4)));
    }
    let word = |i: usize| -> [u8; 4] { body[4 * i..4 * i + 4].try_into().unwrap() };
    let value = |i: usize| -> f64 {
        if scale < 0.0 {
            f32::from_le_bytes(word(i)) as f64
        } else {
            f32::from_be_bytes(word(i)) as f64
        }
    };
    Ok(Grid::from_fn(rows, cols, |r, c| value((rows - 1 - r) * cols + c)))
}

/// `<path>.meta` next to an image.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_geometry_meta(geo: &ImageGeometry, path: &Path) -> Result<()> {
    let text = format!(
        "depth_min_m={}\ndepth_max_m={}\nfov_rad={}\nn_rays={}\nn_samples={}\n",
        geo.depth_min_m, geo.depth_max_m, geo.fov_rad, geo.n_rays, geo.n_samples
    );
    fs::write(path, text)?;
    Ok(())
}

pub fn read_geometry_meta(path: &Path) -> Result<ImageGeometry> {
    let text = fs::read_to_string(path)?;
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}: expected key=value, got {line:?}", path.display())))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::Parse(format!("{}: missing {k}", path.display())))
    };
    let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Parse(format!("{k} is not a number"))) };
    let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Parse(format!("{k} is not a count"))) };
    let geo = ImageGeometry {
        depth_min_m: float("depth_min_m")?,
        depth_max_m: float("depth_max_m")?,
        fov_rad: float("fov_rad")?,
        n_rays: count("n_rays")?,
        n_samples: count("n_samples")?,
    };
    geo.validate()?;
    Ok(geo)
}

/// Image plus sidecar.
pub fn write_polar(img: &PolarImage, path: &Path) -> Result<()> {
    write_pfm(&img.data, path)?;
    write_geometry_meta(&img.geometry, &meta_path(path))
}

pub fn read_polar(path: &Path) -> Result<PolarImage> {
    let geo = read_geometry_meta(&meta_path(path))?;
    PolarImage::new(geo, read_pfm(path)?)
}
