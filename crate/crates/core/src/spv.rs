//! SPV1 volume file format.
//!
//! A text header of newline-terminated `key=value` lines — `magic=SPV1`,
//! `dims=nx,ny,nz`, `spacing=s` (mm, isotropic), `dtype` in `{u8, f32}`,
//! `byteorder=little` — terminated by a single blank line, followed by the
//! raw voxel payload in x-fastest order. Slice images use the same format
//! with `nz=1`. Round trips are bit-exact for both payload types.

use crate::volume::{Dtype, SliceImage, Volume};
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpvError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported scalar type {0:?}")]
    UnsupportedDtype(String),
    #[error("payload size mismatch: header implies {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite intensity at voxel {0}")]
    NonFinite(usize),
    #[error("expected a single-plane image (nz=1), found nz={0}")]
    NotASlice(usize),
}

fn encode_header(nx: usize, ny: usize, nz: usize, spacing: f64, dtype: Dtype) -> String {
    format!(
        "magic=SPV1\ndims={nx},{ny},{nz}\nspacing={spacing}\ndtype={}\nbyteorder=little\n\n",
        dtype.name()
    )
}

fn encode_payload(data: &[f64], dtype: Dtype) -> Vec<u8> {
    match dtype {
        Dtype::U8 => data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        Dtype::F32 => data
            .iter()
            .flat_map(|v| (*v as f32).to_le_bytes())
            .collect(),
    }
}

/// Serialize a volume to SPV1 bytes using its preferred payload type.
pub fn to_bytes(v: &Volume) -> Vec<u8> {
    let mut out = encode_header(v.nx, v.ny, v.nz, v.spacing, v.dtype).into_bytes();
    out.extend(encode_payload(v.data(), v.dtype));
    out
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<(), SpvError> {
    fs::write(path, to_bytes(v))?;
    Ok(())
}

/// Parse a volume from SPV1 bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Volume, SpvError> {
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| SpvError::MalformedHeader("no blank line terminating header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end + 1])
        .map_err(|_| SpvError::MalformedHeader("header is not UTF-8".into()))?;
    let payload = &bytes[header_end + 2..];

    let mut fields = HashMap::new();
    for line in header.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| SpvError::MalformedHeader(format!("line without '=': {line:?}")))?;
        if fields.insert(key.to_string(), value.to_string()).is_some() {
            return Err(SpvError::MalformedHeader(format!("duplicate key {key:?}")));
        }
    }
    let get = |key: &str| -> Result<&String, SpvError> {
        fields
            .get(key)
            .ok_or_else(|| SpvError::MalformedHeader(format!("missing key {key:?}")))
    };

    if get("magic")? != "SPV1" {
        return Err(SpvError::MalformedHeader(format!(
            "bad magic {:?}",
            fields["magic"]
        )));
    }
    if get("byteorder")? != "little" {
        return Err(SpvError::MalformedHeader(format!(
            "unsupported byteorder {:?}",
            fields["byteorder"]
        )));
    }
    let dims: Vec<usize> = get("dims")?
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| SpvError::MalformedHeader(format!("bad dims: {e}")))?;
    if dims.len() != 3 || dims.iter().any(|d| *d == 0) {
        return Err(SpvError::MalformedHeader(format!("bad dims {dims:?}")));
    }
    let spacing: f64 = get("spacing")?
        .parse()
        .map_err(|e| SpvError::MalformedHeader(format!("bad spacing: {e}")))?;
    if !(spacing > 0.0) {
        return Err(SpvError::MalformedHeader(format!("bad spacing {spacing}")));
    }
    let dtype = match get("dtype")?.as_str() {
        "u8" => Dtype::U8,
        "f32" => Dtype::F32,
        other => return Err(SpvError::UnsupportedDtype(other.to_string())),
    };

    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let count = nx * ny * nz;
    let expected = count * dtype.byte_size();
    if payload.len() != expected {
        return Err(SpvError::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }

    let data: Vec<f64> = match dtype {
        Dtype::U8 => payload.iter().map(|b| *b as f64).collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(SpvError::NonFinite(idx));
    }

    let mut v = Volume::new(nx, ny, nz, spacing, data);
    v.dtype = dtype;
    Ok(v)
}

pub fn load_volume(path: &Path) -> Result<Volume, SpvError> {
    from_bytes(&fs::read(path)?)
}

/// Write a slice image as a single-plane SPV1 volume.
pub fn save_slice(img: &SliceImage, path: &Path, dtype: Dtype) -> Result<(), SpvError> {
    let mut v = Volume::new(img.l, img.l, 1, img.spacing, img.pixels.clone());
    v.dtype = dtype;
    save_volume(&v, path)
}

pub fn load_slice(path: &Path) -> Result<SliceImage, SpvError> {
    let v = load_volume(path)?;
    if v.nz != 1 {
        return Err(SpvError::NotASlice(v.nz));
    }
    if v.nx != v.ny {
        return Err(SpvError::MalformedHeader(format!(
            "slice images must be square, found {}x{}",
            v.nx, v.ny
        )));
    }
    Ok(SliceImage::new(v.nx, v.spacing, v.data().to_vec()))
}
