//! Binary ODF field files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                      |
//! |--------|------|--------------------------------------------|
//! | 0      | 4    | magic `ODF1`                               |
//! | 4      | 4    | format version (`u32`, currently 1)        |
//! | 8      | 4    | point count (`u32`, >= 1)                  |
//! | 12     | 4    | direction count (`u32`)                    |
//! | 16     | 4    | scale count (`u32`)                        |
//! | 20     | 1    | alignment mode (0 none, 1 ri_xy, 2 ri_xyz) |
//! | 21     | 3    | reserved, zero                             |
//! | 24     | ...  | `N * D * S` little-endian `f32` values     |
//!
//! Values are point-major, then direction, then scale.

use std::fs;
use std::path::Path;

use crate::alignment::AlignmentMode;
use crate::error::{OdfError, Result};
use crate::odf::OdfField;

pub const ODF_MAGIC: [u8; 4] = *b"ODF1";
pub const ODF_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

fn format_err(path: &str, offset: usize, msg: impl Into<String>) -> OdfError {
    OdfError::Format {
        path: path.to_string(),
        offset,
        msg: msg.into(),
    }
}

pub fn write_odf_bytes(field: &OdfField) -> Result<Vec<u8>> {
    if field.n_points == 0 {
        return Err(OdfError::Shape("ODF field must hold at least one point".into()));
    }
    if field.n_directions == 0 || field.n_scales == 0 {
        return Err(OdfError::Shape("ODF field needs directions and scales".into()));
    }
    let expected = field.n_points * field.point_stride();
    if field.values.len() != expected {
        return Err(OdfError::Shape(format!(
            "{} values for a {}x{}x{} field",
            field.values.len(),
            field.n_points,
            field.n_directions,
            field.n_scales
        )));
    }
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| OdfError::Shape(format!("{what} {v} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * expected);
    out.extend_from_slice(&ODF_MAGIC);
    out.extend_from_slice(&ODF_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(field.n_points, "point count")?.to_le_bytes());
    out.extend_from_slice(&dim(field.n_directions, "direction count")?.to_le_bytes());
    out.extend_from_slice(&dim(field.n_scales, "scale count")?.to_le_bytes());
    out.push(field.mode.code());
    out.extend_from_slice(&[0, 0, 0]);
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_odf(path: &Path, field: &OdfField) -> Result<()> {
    fs::write(path, write_odf_bytes(field)?)?;
    Ok(())
}

/// Parses an ODF file image; `name` labels errors.
pub fn read_odf_bytes(name: &str, bytes: &[u8]) -> Result<OdfField> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            name,
            bytes.len(),
            format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len()),
        ));
    }
    if bytes[0..4] != ODF_MAGIC {
        return Err(format_err(name, 0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != ODF_VERSION {
        return Err(format_err(name, 4, format!("unsupported version {version}")));
    }
    let n_points = u32_at(8) as usize;
    let n_directions = u32_at(12) as usize;
    let n_scales = u32_at(16) as usize;
    if n_points == 0 {
        return Err(format_err(name, 8, "point count is zero"));
    }
    if n_directions == 0 {
        return Err(format_err(name, 12, "direction count is zero"));
    }
    if n_scales == 0 {
        return Err(format_err(name, 16, "scale count is zero"));
    }
    let mode = AlignmentMode::from_code(bytes[20])
        .ok_or_else(|| format_err(name, 20, format!("unknown alignment mode {}", bytes[20])))?;
    if let Some(k) = bytes[21..24].iter().position(|&b| b != 0) {
        return Err(format_err(name, 21 + k, "reserved byte is not zero"));
    }
    let count = n_points
        .checked_mul(n_directions)
        .and_then(|v| v.checked_mul(n_scales))
        .ok_or_else(|| format_err(name, 8, "field dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    let want = count
        .checked_mul(4)
        .ok_or_else(|| format_err(name, 8, "field dimensions overflow"))?;
    if payload.len() < want {
        return Err(format_err(
            name,
            bytes.len(),
            format!("truncated payload: {} of {want} bytes", payload.len()),
        ));
    }
    if payload.len() > want {
        return Err(format_err(
            name,
            HEADER_LEN + want,
            format!("{} trailing bytes", payload.len() - want),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() || v < 0.0 {
            return Err(format_err(name, HEADER_LEN + 4 * i, format!("invalid ODF value {v}")));
        }
        values.push(v);
    }
    Ok(OdfField {
        n_points,
        n_directions,
        n_scales,
        mode,
        values,
    })
}

pub fn read_odf(path: &Path) -> Result<OdfField> {
    let bytes = fs::read(path)?;
    read_odf_bytes(&path.display().to_string(), &bytes)
}
