//! OBJ line-glyph export of per-point ODFs.
//!
//! Each selected point gets one segment per direction, pointing along the
//! aligned direction. Its length is the max-over-scales ODF value divided by
//! the point's largest value, times a global length. Zero-length segments
//! are omitted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::alignment::FrameSet;
use crate::error::{OdfError, Result};
use crate::geometry::PointCloud;
use crate::icosphere::DirectionSet;
use crate::odf::OdfField;

/// Glyph geometry as OBJ text, plus the number of segments written.
pub fn glyph_obj(
    cloud: &PointCloud,
    field: &OdfField,
    directions: &DirectionSet,
    frames: Option<&FrameSet>,
    selection: &[usize],
    length: f64,
) -> Result<(String, usize)> {
    if field.n_points != cloud.len() || field.n_directions != directions.len() {
        return Err(OdfError::Shape(format!(
            "field is {}x{}, cloud has {} points and {} directions",
            field.n_points,
            field.n_directions,
            cloud.len(),
            directions.len()
        )));
    }
    if let Some(&bad) = selection.iter().find(|&&i| i >= cloud.len()) {
        return Err(OdfError::IndexOutOfRange {
            index: bad,
            size: cloud.len(),
        });
    }
    let mut obj = String::new();
    writeln!(obj, "# ODF glyphs: {} points, {} directions", selection.len(), directions.len()).ok();
    writeln!(obj, "# segment length = {length} * value / point_max").ok();

    let mut vertex = 0usize;
    let mut segments = 0usize;
    for &p in selection {
        let strengths: Vec<f32> = (0..field.n_directions)
            .map(|l| (0..field.n_scales).map(|s| field.get(p, l, s)).fold(0.0, f32::max))
            .collect();
        let point_max = strengths.iter().copied().fold(0.0, f32::max);
        writeln!(obj, "# point {p} point_max {point_max}").ok();
        if point_max <= 0.0 {
            continue;
        }
        let origin = cloud.points[p];
        for (l, &s) in strengths.iter().enumerate() {
            if s <= 0.0 {
                continue;
            }
            let dir = match frames {
                Some(f) => f.frames[p].apply(&directions.directions()[l]),
                None => directions.directions()[l],
            };
            let tip = origin + dir * (length * s as f64 / point_max as f64);
            writeln!(obj, "v {} {} {}", origin.x, origin.y, origin.z).ok();
            writeln!(obj, "v {} {} {}", tip.x, tip.y, tip.z).ok();
            writeln!(obj, "l {} {}", vertex + 1, vertex + 2).ok();
            vertex += 2;
            segments += 1;
        }
    }
    Ok((obj, segments))
}

/// Writes the glyph OBJ to `path` and returns the segment count.
pub fn export_glyphs(
    path: &Path,
    cloud: &PointCloud,
    field: &OdfField,
    directions: &DirectionSet,
    frames: Option<&FrameSet>,
    selection: &[usize],
    length: f64,
) -> Result<usize> {
    let (obj, segments) = glyph_obj(cloud, field, directions, frames, selection, length)?;
    fs::write(path, obj)?;
    Ok(segments)
}
