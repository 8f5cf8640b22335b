//! Network inputs: ODF rows, per-point geometry and edge geometry.
//!
//! In [`NetMode::Standard`] the geometric channels are the point position and
//! the neighbor offsets `x_j - x_i`, both expressed in the point's ODF frame.
//! With identity frames this is the plain coordinate input; with RI-XY
//! frames the channels do not change when the cloud turns about z.
//!
//! In [`NetMode::XyzInvariant`] only distances and angles are used, so every
//! channel is unchanged by any rotation about the object center.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use odf_core::alignment::{frames_from_neighbors, FrameSet};
use odf_core::geometry::centroid;
use odf_core::{
    odf_with_neighbors, AlignmentMode, ConeBank, KnnIndex, NeighborList, OdfError, OdfField,
    Point3, PointCloud,
};

/// Neighbors per point in the edge blocks.
pub const EDGE_NEIGHBORS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetMode {
    Standard,
    XyzInvariant,
}

impl NetMode {
    pub fn code(self) -> u8 {
        match self {
            NetMode::Standard => 0,
            NetMode::XyzInvariant => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NetMode::Standard),
            1 => Some(NetMode::XyzInvariant),
            _ => None,
        }
    }

    /// Per-point geometric channels.
    pub fn point_geo_dim(self) -> usize {
        match self {
            NetMode::Standard => 3,
            NetMode::XyzInvariant => 2,
        }
    }

    /// Per-edge geometric channels.
    pub fn edge_geo_dim(self) -> usize {
        match self {
            NetMode::Standard => 3,
            NetMode::XyzInvariant => 5,
        }
    }

    /// ODF alignment used with this mode unless overridden.
    pub fn default_alignment(self) -> AlignmentMode {
        match self {
            NetMode::Standard => AlignmentMode::RiXy,
            NetMode::XyzInvariant => AlignmentMode::RiXyz,
        }
    }
}

impl fmt::Display for NetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetMode::Standard => "standard",
            NetMode::XyzInvariant => "xyz",
        })
    }
}

impl FromStr for NetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "std" => Ok(NetMode::Standard),
            "xyz" | "xyz_invariant" => Ok(NetMode::XyzInvariant),
            other => Err(format!("unknown net mode '{other}' (standard|xyz)")),
        }
    }
}

/// Everything the network reads for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    pub n_points: usize,
    pub k: usize,
    pub n_directions: usize,
    pub n_scales: usize,
    /// ODF values, one row per (point, direction): `(n·D) × S`.
    pub odf: Array2<f64>,
    /// `n × point_geo_dim`.
    pub point_geo: Array2<f64>,
    /// Neighbor indices, `k` per point, nearest first.
    pub neighbors: Vec<usize>,
    /// `(n·k) × edge_geo_dim`.
    pub edge_geo: Array2<f64>,
    /// Points that take part in the final max-pool; `None` means all.
    pub keep: Option<Vec<usize>>,
    /// Angle channels that hit a zero-length vector and were set to 0.
    pub degenerate_angles: usize,
    /// Index in the source cloud of each sample point.
    pub source_index: Vec<usize>,
}

impl SampleInput {
    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}

/// Angle between `u` and `v`; 0 (and `false`) if either is zero-length.
fn angle(u: &Point3, v: &Point3) -> (f64, bool) {
    let cross = u.cross(v).norm();
    let dot = u.dot(v);
    if u.norm() == 0.0 || v.norm() == 0.0 {
        (0.0, false)
    } else {
        (cross.atan2(dot), true)
    }
}

/// Indices of the first occurrence of every distinct point, in order.
///
/// The network treats a cloud as a set: exact duplicates add nothing to a
/// max-pool, so they are dropped before the neighbor graph is built.
pub fn unique_point_indices(cloud: &PointCloud) -> Vec<usize> {
    let mut seen = HashSet::with_capacity(cloud.len());
    (0..cloud.len())
        .filter(|&i| {
            let p = cloud.points[i];
            seen.insert([p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        })
        .collect()
}

/// Builds the network input from a cloud: KNN graph, aligned ODF field and
/// geometric channels. Duplicate points are dropped first.
pub fn prepare_sample(
    cloud: &PointCloud,
    bank: &ConeBank,
    mode: NetMode,
    alignment: AlignmentMode,
    k: usize,
) -> Result<SampleInput, OdfError> {
    let source = unique_point_indices(cloud);
    let unique = if source.len() == cloud.len() {
        cloud.clone()
    } else {
        cloud.select(&source)
    };
    let index = KnnIndex::build(&unique)?;
    let (field, frames, neighbors) = odf_with_neighbors(&index, bank, alignment, k)?;
    assemble(&unique, &field, &frames, &neighbors, mode, k, source)
}

/// Builds the network input around an already computed ODF field. Frames
/// are recomputed from the cloud with the field's alignment mode. For a
/// cloud with duplicate points the field rows of first occurrences are used.
pub fn sample_from_field(
    cloud: &PointCloud,
    field: &OdfField,
    mode: NetMode,
    k: usize,
) -> Result<SampleInput, OdfError> {
    if field.n_points != cloud.len() {
        return Err(OdfError::Shape(format!(
            "field has {} points, cloud has {}",
            field.n_points,
            cloud.len()
        )));
    }
    let source = unique_point_indices(cloud);
    let (cloud, field) = if source.len() == cloud.len() {
        (cloud.clone(), field.clone())
    } else {
        (cloud.select(&source), field.select_points(&source))
    };
    let index = KnnIndex::build(&cloud)?;
    let pivot_k = match field.mode {
        AlignmentMode::None => 0,
        _ => odf_core::alignment::PIVOT_NEIGHBORS,
    };
    let kk = k.max(pivot_k);
    if kk >= cloud.len() {
        return Err(OdfError::KTooLarge {
            k: kk,
            size: cloud.len(),
        });
    }
    let neighbors = index.knn_all(kk)?;
    let frames = frames_from_neighbors(&cloud.points, &neighbors, field.mode);
    assemble(&cloud, &field, &frames, &neighbors, mode, k, source)
}

fn assemble(
    cloud: &PointCloud,
    field: &OdfField,
    frames: &FrameSet,
    neighbors: &[NeighborList],
    mode: NetMode,
    k: usize,
    source_index: Vec<usize>,
) -> Result<SampleInput, OdfError> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(OdfError::KTooLarge { k, size: n });
    }
    let odf = Array2::from_shape_vec(
        (n * field.n_directions, field.n_scales),
        field.values.iter().map(|&v| v as f64).collect(),
    )
    .map_err(|e| OdfError::Shape(e.to_string()))?;
    let nbrs: Vec<usize> = neighbors
        .iter()
        .flat_map(|l| l.indices[..k].iter().copied())
        .collect();
    let (point_geo, edge_geo, degenerate_angles) = match mode {
        NetMode::Standard => {
            let (p, e) = standard_geometry(&cloud.points, frames, &nbrs, k);
            (p, e, 0)
        }
        NetMode::XyzInvariant => ri_edge_features(&cloud.points, &nbrs, k),
    };
    Ok(SampleInput {
        n_points: n,
        k,
        n_directions: field.n_directions,
        n_scales: field.n_scales,
        odf,
        point_geo,
        neighbors: nbrs,
        edge_geo,
        keep: None,
        degenerate_angles,
        source_index,
    })
}

/// Point position relative to the centroid and neighbor offsets `x_j - x_i`,
/// both in each point's frame.
pub fn standard_geometry(
    points: &[Point3],
    frames: &FrameSet,
    neighbors: &[usize],
    k: usize,
) -> (Array2<f64>, Array2<f64>) {
    let n = points.len();
    let c = centroid(points);
    let mut point_geo = Array2::zeros((n, 3));
    let mut edge_geo = Array2::zeros((n * k, 3));
    for i in 0..n {
        let frame = &frames.frames[i];
        let p = frame.to_local(&(points[i] - c));
        for a in 0..3 {
            point_geo[[i, a]] = p[a];
        }
        for t in 0..k {
            let j = neighbors[i * k + t];
            let d = frame.to_local(&(points[j] - points[i]));
            for a in 0..3 {
                edge_geo[[i * k + t, a]] = d[a];
            }
        }
    }
    (point_geo, edge_geo)
}

/// Rotation-invariant channels around the object center `c` (the centroid).
///
/// Per point: `|x - c|` and the angle at `x` between `c - x` and
/// `c_local - x` (`c_local` = centroid of the point's neighbors).
/// Per edge: `|x - x_j|`, `|x - c|`, `|x_j - c|`, the angle at `c` between
/// `x - c` and `x_j - c`, and the per-point angle above.
///
/// Returns `(point channels, edge channels, degenerate angle count)`.
pub fn ri_edge_features(points: &[Point3], neighbors: &[usize], k: usize) -> (Array2<f64>, Array2<f64>, usize) {
    let n = points.len();
    let c = centroid(points);
    let mut point_geo = Array2::zeros((n, 2));
    let mut edge_geo = Array2::zeros((n * k, 5));
    let mut degenerate = 0;
    for i in 0..n {
        let x = points[i];
        let nb = &neighbors[i * k..(i + 1) * k];
        let local: Vec<Point3> = nb.iter().map(|&j| points[j]).collect();
        let c_local = centroid(&local);
        let (center_angle, ok) = angle(&(c - x), &(c_local - x));
        degenerate += usize::from(!ok);
        let r_x = (x - c).norm();
        point_geo[[i, 0]] = r_x;
        point_geo[[i, 1]] = center_angle;
        for (t, &j) in nb.iter().enumerate() {
            let xj = points[j];
            let (pair_angle, ok) = angle(&(x - c), &(xj - c));
            degenerate += usize::from(!ok);
            let row = i * k + t;
            edge_geo[[row, 0]] = (x - xj).norm();
            edge_geo[[row, 1]] = r_x;
            edge_geo[[row, 2]] = (xj - c).norm();
            edge_geo[[row, 3]] = pair_angle;
            edge_geo[[row, 4]] = center_angle;
        }
    }
    (point_geo, edge_geo, degenerate)
}

/// Explicit edge tensor: one row `[f_i, f_j, geo_ij]` per (point, neighbor).
pub fn edge_features(point_feats: &Array2<f64>, sample: &SampleInput) -> Array2<f64> {
    let d = point_feats.ncols();
    let g = sample.edge_geo.ncols();
    let k = sample.k;
    let mut out = Array2::zeros((sample.n_points * k, 2 * d + g));
    for i in 0..sample.n_points {
        for (t, &j) in sample.neighbors_of(i).iter().enumerate() {
            let row = i * k + t;
            for c in 0..d {
                out[[row, c]] = point_feats[[i, c]];
                out[[row, d + c]] = point_feats[[j, c]];
            }
            for c in 0..g {
                out[[row, 2 * d + c]] = sample.edge_geo[[row, c]];
            }
        }
    }
    out
}
