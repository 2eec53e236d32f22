//! Detached-header NRRD with a raw little-endian float32 payload.

use std::fs;
use std::path::{Path, PathBuf};

use super::{GridSpec, VolumeGrid};
use crate::error::{Error, Result};

fn payload_path(header: &Path) -> Result<(PathBuf, String)> {
    let stem = header
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidParam(format!("bad NRRD path {}", header.display())))?;
    let name = format!("{stem}.raw");
    Ok((header.with_file_name(&name), name))
}

/// Writes `<path>` (header) and `<stem>.raw` next to it. Values are stored
/// as 32-bit floats.
pub fn export_nrrd(vol: &VolumeGrid, path: &Path) -> Result<()> {
    let (raw_path, raw_name) = payload_path(path)?;
    let [nx, ny, nz] = vol.spec.dims;
    let [sx, sy, sz] = vol.spec.spacing_m;
    let [ox, oy, oz] = vol.spec.origin_m;
    let header = format!(
        "NRRD0004\n\
         type: float\n\
         dimension: 3\n\
         space dimension: 3\n\
         sizes: {nx} {ny} {nz}\n\
         space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})\n\
         space origin: ({ox},{oy},{oz})\n\
         kinds: domain domain domain\n\
         endian: little\n\
         encoding: raw\n\
         data file: {raw_name}\n"
    );
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, header)?;
    fs::write(raw_path, bytes)?;
    Ok(())
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Parse(format!("expected (a,b,c), got {s:?}")))?;
    inner
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
        .collect()
}

/// Reads a volume written by [`export_nrrd`].
pub fn import_nrrd(path: &Path) -> Result<VolumeGrid> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if !lines.next().is_some_and(|l| l.starts_with("NRRD")) {
        return Err(Error::Parse("missing NRRD magic".into()));
    }
    let mut sizes = None;
    let mut spacing = None;
    let mut origin = None;
    let mut data_file = None;
    for line in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("header line {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "type" if value != "float" => return Err(Error::Parse(format!("unsupported type {value}"))),
            "encoding" if value != "raw" => return Err(Error::Parse(format!("unsupported encoding {value}"))),
            "endian" if value != "little" => return Err(Error::Parse(format!("unsupported endian {value}"))),
            "dimension" if value != "3" => return Err(Error::Parse(format!("dimension {value}"))),
            "sizes" => {
                let v: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| Error::Parse(format!("sizes: {e}"))))
                    .collect::<Result<_>>()?;
                sizes = Some(<[usize; 3]>::try_from(v).map_err(|_| Error::Parse("sizes needs 3 values".into()))?);
            }
            "space directions" => {
                let dirs: Vec<Vec<f64>> = value.split_whitespace().map(parse_vector).collect::<Result<_>>()?;
                if dirs.len() != 3 || dirs.iter().any(|d| d.len() != 3) {
                    return Err(Error::Parse("space directions needs three 3-vectors".into()));
                }
                for (a, d) in dirs.iter().enumerate() {
                    if (0..3).any(|b| b != a && d[b] != 0.0) {
                        return Err(Error::Parse("only axis-aligned space directions are supported".into()));
                    }
                }
                spacing = Some([dirs[0][0], dirs[1][1], dirs[2][2]]);
            }
            "space origin" => {
                let v = parse_vector(value)?;
                origin = Some(<[f64; 3]>::try_from(v).map_err(|_| Error::Parse("origin needs 3 values".into()))?);
            }
            "data file" => data_file = Some(value.to_string()),
            _ => {}
        }
    }
    let missing = |f: &str| Error::Parse(format!("NRRD header lacks {f}"));
    let spec = GridSpec {
        origin_m: origin.ok_or_else(|| missing("space origin"))?,
        spacing_m: spacing.ok_or_else(|| missing("space directions"))?,
        dims: sizes.ok_or_else(|| missing("sizes"))?,
    };
    spec.validate()?;
    let raw = fs::read(path.with_file_name(data_file.ok_or_else(|| missing("data file"))?))?;
    if raw.len() != spec.len() * 4 {
        return Err(Error::Parse(format!("payload has {} bytes, expected {}", raw.len(), spec.len() * 4)));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(VolumeGrid {
        spec,
        data,
        weight: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volume_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec {
            origin_m: [0.01, 0.02, 0.03],
            spacing_m: [0.001; 3],
            dims: [2, 2, 2],
        };
        let vol = VolumeGrid::zeros(spec).unwrap();
        let path = dir.path().join("vol.nrrd");
        export_nrrd(&vol, &path).unwrap();
        let raw = fs::read(dir.path().join("vol.raw")).unwrap();
        assert_eq!(raw, vec![0u8; 32]);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.contains("sizes: 2 2 2\n"));
        assert!(header.contains("space origin: (0.01,0.02,0.03)\n"));
        assert!(header.contains("space directions: (0.001,0,0) (0,0.001,0) (0,0,0.001)\n"));
        assert!(header.contains("encoding: raw\n"));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec {
            origin_m: [-0.0125, 0.5, 1e-3],
            spacing_m: [0.0007, 0.0011, 0.0013],
            dims: [4, 3, 5],
        };
        let mut vol = VolumeGrid::zeros(spec).unwrap();
        for (i, v) in vol.data.iter_mut().enumerate() {
            *v = ((i * 37 % 60) as f32 / 59.0) as f64;
        }
        let path = dir.path().join("a.nrrd");
        export_nrrd(&vol, &path).unwrap();
        let back = import_nrrd(&path).unwrap();
        assert_eq!(back.spec, vol.spec);
        assert_eq!(
            back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            vol.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let again = dir.path().join("b.nrrd");
        export_nrrd(&back, &again).unwrap();
        assert_eq!(fs::read(dir.path().join("a.raw")).unwrap(), fs::read(dir.path().join("b.raw")).unwrap());
    }

    #[test]
    fn malformed_headers_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nrrd");
        fs::write(&path, "NRRD0004\ntype: double\n").unwrap();
        assert!(matches!(import_nrrd(&path), Err(Error::Parse(_))));
        fs::write(&path, "hello\n").unwrap();
        assert!(import_nrrd(&path).is_err());
    }
}
