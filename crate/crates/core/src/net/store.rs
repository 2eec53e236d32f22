//! Binary weight files: magic, six i32 spec fields, then every parameter
//! array as little-endian f64 in declaration order. A text manifest next to
//! the blob lists `name offset shape` per array (offset in f64 elements).

use std::fs;
use std::path::{Path, PathBuf};

use super::params::ParamSet;
use super::unet::{UNet, UNetSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"SSUN1";
const HEADER_LEN: usize = 5 + 6 * 4;

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn save_weights(net: &UNet, path: &Path) -> Result<()> {
    let s = &net.spec;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * net.params.count());
    buf.extend_from_slice(MAGIC);
    for v in [
        s.in_channels as i32,
        s.base_channels as i32,
        s.depth as i32,
        s.use_convgru as i32,
        s.use_spatial_attention as i32,
        s.use_channel_attention as i32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut manifest = String::new();
    let mut offset = 0;
    for e in &net.params.entries {
        let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{} {} {}\n", e.name, offset, shape.join("x")));
        offset += e.values.len();
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<UNet> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
        return Err(Error::Parse(format!("{} is not a weight file", path.display())));
    }
    let field = |i: usize| {
        let o = 5 + 4 * i;
        i32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
    };
    let count = |i: usize| usize::try_from(field(i)).map_err(|_| Error::Parse(format!("negative spec field {i}")));
    let flag = |i: usize| match field(i) {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Parse(format!("spec flag {i} is {v}"))),
    };
    let spec = UNetSpec {
        in_channels: count(0)?,
        base_channels: count(1)?,
        depth: count(2)?,
        use_convgru: flag(3)?,
        use_spatial_attention: flag(4)?,
        use_channel_attention: flag(5)?,
    };
    let mut net = UNet::new(spec, 0)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * net.params.count() {
        return Err(Error::Parse(format!(
            "weight payload has {} bytes, spec needs {}",
            body.len(),
            8 * net.params.count()
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut params: ParamSet = net.params.clone();
    for e in &mut params.entries {
        for v in &mut e.values {
            *v = values.next().unwrap();
        }
    }
    net.params = params;
    Ok(net)
}
