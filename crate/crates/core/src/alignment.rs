//! Per-point frames that align the cone directions.
//!
//! [`AlignmentMode::RiXy`] rotates the canonical directions about z so the
//! first axis points along the densest azimuth of the point's neighborhood.
//! [`AlignmentMode::RiXyz`] builds a full frame from the direction towards
//! the object center and the direction towards the local neighborhood
//! center. Both frames rotate together with the cloud, so ODF values taken
//! in them do not.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::error::{OdfError, Result};
use crate::geometry::{centroid, Point3};
use crate::icosphere::DirectionSet;
use crate::knn::{KnnIndex, NeighborList};
use crate::par;

/// Neighbors used to pick a pivot.
pub const PIVOT_NEIGHBORS: usize = 32;

/// Offsets whose x-y projection is shorter than this are ignored by RI-XY.
const XY_EPS: f64 = 1e-9;
/// Norm below which an RI-XYZ pivot vector counts as undefined.
const XYZ_EPS: f64 = 1e-9;
/// Half-width of the azimuth window used to find the densest direction (5°,
/// i.e. a 10° wide window).
const AZIMUTH_HALF_WINDOW_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AlignmentMode {
    #[default]
    None,
    RiXy,
    RiXyz,
}

impl AlignmentMode {
    pub fn code(self) -> u8 {
        match self {
            AlignmentMode::None => 0,
            AlignmentMode::RiXy => 1,
            AlignmentMode::RiXyz => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AlignmentMode::None),
            1 => Some(AlignmentMode::RiXy),
            2 => Some(AlignmentMode::RiXyz),
            _ => None,
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignmentMode::None => "none",
            AlignmentMode::RiXy => "rixy",
            AlignmentMode::RiXyz => "rixyz",
        })
    }
}

impl FromStr for AlignmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" => Ok(AlignmentMode::None),
            "rixy" => Ok(AlignmentMode::RiXy),
            "rixyz" => Ok(AlignmentMode::RiXyz),
            other => Err(format!("unknown alignment mode '{other}' (none|rixy|rixyz)")),
        }
    }
}

/// Proper rotation whose columns are the world-space images of the canonical
/// x, y and z axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame(Matrix3<f64>);

impl Frame {
    pub fn identity() -> Self {
        Frame(Matrix3::identity())
    }

    /// Accepts `m` only if it is orthonormal with determinant +1 (to 1e-9).
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(OdfError::DegenerateFrame("non-finite entries".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(OdfError::DegenerateFrame(format!(
                "not orthonormal (|RᵀR - I| = {err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(OdfError::DegenerateFrame(format!("determinant {det}")));
        }
        Ok(Frame(m))
    }

    pub fn from_columns(a: Point3, b: Point3, c: Point3) -> Result<Self> {
        Self::new(Matrix3::from_columns(&[a, b, c]))
    }

    /// Rotation by `angle` radians about +z.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Frame(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Maps a canonical direction into world coordinates.
    pub fn apply(&self, v: &Point3) -> Point3 {
        self.0 * v
    }

    /// Maps a world vector into the frame's canonical coordinates.
    pub fn to_local(&self, v: &Point3) -> Point3 {
        self.0.tr_mul(v)
    }
}

/// A frame plus a flag telling whether a fallback was used to build it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pivot {
    pub frame: Frame,
    pub degenerate: bool,
}

/// Per-point frames for a whole cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub mode: AlignmentMode,
    pub frames: Vec<Frame>,
    pub degenerate: Vec<bool>,
}

impl FrameSet {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Rotates every direction of the set by `frame`.
pub fn apply_frame(directions: &DirectionSet, frame: &Frame) -> Vec<Point3> {
    directions.directions().iter().map(|v| frame.apply(v)).collect()
}

/// RI-XY pivot of point `point_index`: a rotation about z taking +x to the
/// densest azimuth among its 32 nearest neighbors.
pub fn pivot_ri_xy(index: &KnnIndex, point_index: usize) -> Result<Pivot> {
    let neighbors = pivot_neighbors(index, point_index)?;
    Ok(ri_xy_from_neighbors(index.points(), point_index, &neighbors))
}

/// RI-XYZ pivot of point `point_index`. The object center is the centroid of
/// the indexed cloud.
pub fn pivot_ri_xyz(index: &KnnIndex, point_index: usize) -> Result<Pivot> {
    let neighbors = pivot_neighbors(index, point_index)?;
    let center = centroid(index.points());
    Ok(ri_xyz_from_neighbors(
        index.points(),
        &center,
        point_index,
        &neighbors,
    ))
}

fn pivot_neighbors(index: &KnnIndex, point_index: usize) -> Result<NeighborList> {
    if index.len() <= PIVOT_NEIGHBORS {
        return Err(OdfError::TooFewPoints {
            got: index.len(),
            need: PIVOT_NEIGHBORS + 1,
        });
    }
    index.knn(point_index, PIVOT_NEIGHBORS)
}

/// Densest azimuth: every usable projected offset opens a 10° window centered
/// on itself; the window holding the most offsets wins (ties go to the nearer
/// neighbor) and the pivot is the normalized sum of the offsets inside it.
/// Windows centered on data rather than fixed bins keep the choice
/// equivariant under rotations about z.
///
/// Only the first [`PIVOT_NEIGHBORS`] entries of `neighbors` are used.
pub fn ri_xy_from_neighbors(points: &[Point3], point_index: usize, neighbors: &NeighborList) -> Pivot {
    let x = points[point_index];
    let offsets: Vec<(f64, f64)> = neighbors
        .indices
        .iter()
        .take(PIVOT_NEIGHBORS)
        .map(|&j| (points[j].x - x.x, points[j].y - x.y))
        .filter(|&(dx, dy)| dx.hypot(dy) >= XY_EPS)
        .collect();
    if offsets.is_empty() {
        return Pivot {
            frame: Frame::identity(),
            degenerate: true,
        };
    }
    let units: Vec<(f64, f64)> = offsets
        .iter()
        .map(|&(dx, dy)| {
            let n = dx.hypot(dy);
            (dx / n, dy / n)
        })
        .collect();
    let cos_window = AZIMUTH_HALF_WINDOW_DEG.to_radians().cos();
    let in_window = |c: usize, m: usize| units[c].0 * units[m].0 + units[c].1 * units[m].1 >= cos_window;

    let mut best = (0usize, 0usize);
    for c in 0..units.len() {
        let count = (0..units.len()).filter(|&m| in_window(c, m)).count();
        if count > best.1 {
            best = (c, count);
        }
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (m, &(dx, dy)) in offsets.iter().enumerate() {
        if in_window(best.0, m) {
            sx += dx;
            sy += dy;
        }
    }
    let angle = sy.atan2(sx);
    Pivot {
        frame: Frame::about_z(angle),
        degenerate: false,
    }
}

/// First pivot towards `center`, second pivot `p1 × (c_local - x)`, third
/// completing a right-handed frame. Undefined pivots fall back to +z for p1
/// and to the part of +x (or +y) orthogonal to p1 for p2; the result is then
/// flagged degenerate.
pub fn ri_xyz_from_neighbors(
    points: &[Point3],
    center: &Point3,
    point_index: usize,
    neighbors: &NeighborList,
) -> Pivot {
    let x = points[point_index];
    let mut degenerate = false;

    let to_center = center - x;
    let p1 = if to_center.norm() < XYZ_EPS {
        degenerate = true;
        Point3::z()
    } else {
        to_center.normalize()
    };

    let local: Vec<Point3> = neighbors
        .indices
        .iter()
        .take(PIVOT_NEIGHBORS)
        .map(|&j| points[j])
        .collect();
    let to_local = centroid(&local) - x;
    let cross = p1.cross(&to_local);
    let p2 = if cross.norm() < XYZ_EPS {
        degenerate = true;
        let ortho = |axis: Point3| axis - p1 * p1.dot(&axis);
        let ex = ortho(Point3::x());
        if ex.norm() >= XYZ_EPS {
            ex.normalize()
        } else {
            ortho(Point3::y()).normalize()
        }
    } else {
        cross.normalize()
    };
    let p3 = p1.cross(&p2);
    let frame = Frame::from_columns(p1, p2, p3).expect("cross-product frame is orthonormal");
    Pivot { frame, degenerate }
}

/// Frames for every point under `mode`, given neighbor lists sorted nearest
/// first (at least [`PIVOT_NEIGHBORS`] long unless `mode` is `None`).
pub fn frames_from_neighbors(
    points: &[Point3],
    neighbors: &[NeighborList],
    mode: AlignmentMode,
) -> FrameSet {
    let center = centroid(points);
    let pivots: Vec<Pivot> = par::map_indexed(points.len(), |i| match mode {
        AlignmentMode::None => Pivot {
            frame: Frame::identity(),
            degenerate: false,
        },
        AlignmentMode::RiXy => ri_xy_from_neighbors(points, i, &neighbors[i]),
        AlignmentMode::RiXyz => ri_xyz_from_neighbors(points, &center, i, &neighbors[i]),
    });
    FrameSet {
        mode,
        frames: pivots.iter().map(|p| p.frame).collect(),
        degenerate: pivots.iter().map(|p| p.degenerate).collect(),
    }
}

/// Frames for every point of an indexed cloud.
pub fn compute_frames(index: &KnnIndex, mode: AlignmentMode) -> Result<FrameSet> {
    let neighbors = match mode {
        AlignmentMode::None => vec![NeighborList { indices: vec![], distances: vec![] }; index.len()],
        _ => {
            if index.len() <= PIVOT_NEIGHBORS {
                return Err(OdfError::TooFewPoints {
                    got: index.len(),
                    need: PIVOT_NEIGHBORS + 1,
                });
            }
            index.knn_all(PIVOT_NEIGHBORS)?
        }
    };
    Ok(frames_from_neighbors(index.points(), &neighbors, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use crate::icosphere::icosphere_directions;
    use crate::rng;
    use nalgebra::{Rotation3, Unit};
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::seeded(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect(),
        )
    }

    fn random_rotation(r: &mut impl Rng) -> Matrix3<f64> {
        let axis = Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let angle = r.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
    }

    #[test]
    fn unanimous_azimuth() {
        let dir = Point3::new(1.0, 1.0, 0.0).normalize();
        let mut pts = vec![Point3::zeros()];
        for i in 1..=40 {
            pts.push(dir * (i as f64 * 0.01) + Point3::new(0.0, 0.0, 0.001 * i as f64));
        }
        let idx = KnnIndex::build(&PointCloud::new(pts)).unwrap();
        let pivot = pivot_ri_xy(&idx, 0).unwrap();
        assert!(!pivot.degenerate);
        let expected = Frame::about_z(std::f64::consts::FRAC_PI_4);
        assert!((pivot.frame.matrix() - expected.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn vertical_stick_falls_back() {
        let pts = (0..40).map(|i| Point3::new(0.0, 0.0, i as f64)).collect();
        let idx = KnnIndex::build(&PointCloud::new(pts)).unwrap();
        let pivot = pivot_ri_xy(&idx, 3).unwrap();
        assert!(pivot.degenerate);
        assert_eq!(pivot.frame, Frame::identity());
    }

    #[test]
    fn ri_xy_keeps_z() {
        let idx = KnnIndex::build(&random_cloud(64, 1)).unwrap();
        for i in 0..64 {
            let f = pivot_ri_xy(&idx, i).unwrap().frame;
            assert!((f.apply(&Point3::z()) - Point3::z()).norm() < 1e-15);
        }
    }

    #[test]
    fn ri_xy_equivariant_under_z_rotation() {
        let cloud = random_cloud(80, 2);
        let idx = KnnIndex::build(&cloud).unwrap();
        let theta = 0.7;
        let rot = Frame::about_z(theta);
        let rotated = cloud.map_points(|p| rot.apply(p));
        let ridx = KnnIndex::build(&rotated).unwrap();
        for i in 0..80 {
            let a = pivot_ri_xy(&idx, i).unwrap().frame;
            let b = pivot_ri_xy(&ridx, i).unwrap().frame;
            assert!((rot.matrix() * a.matrix() - b.matrix()).abs().max() < 1e-9, "point {i}");
        }
    }

    #[test]
    fn ri_xyz_first_pivot_points_to_center() {
        let mut cloud = random_cloud(60, 3);
        // Shift so the centroid is at the origin, then place point 0 at (1,0,0)
        // and compensate with point 1 to keep the centroid.
        let c = cloud.centroid();
        cloud = cloud.map_points(|p| p - c);
        let delta = Point3::new(1.0, 0.0, 0.0) - cloud.points[0];
        cloud.points[0] += delta;
        cloud.points[1] -= delta;
        let idx = KnnIndex::build(&cloud).unwrap();
        let pivot = pivot_ri_xyz(&idx, 0).unwrap();
        let p1 = pivot.frame.matrix().column(0).into_owned();
        assert!((p1 - Point3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn ri_xyz_equivariant() {
        let cloud = random_cloud(70, 4);
        let idx = KnnIndex::build(&cloud).unwrap();
        let mut r = rng::seeded(99);
        for _ in 0..5 {
            let rot = random_rotation(&mut r);
            let ridx = KnnIndex::build(&cloud.map_points(|p| rot * p)).unwrap();
            for i in 0..70 {
                let a = pivot_ri_xyz(&idx, i).unwrap().frame;
                let b = pivot_ri_xyz(&ridx, i).unwrap().frame;
                assert!((rot * a.matrix() - b.matrix()).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn ri_xyz_point_at_center_falls_back() {
        let mut cloud = random_cloud(50, 5);
        let c = cloud.centroid();
        cloud = cloud.map_points(|p| p - c);
        let delta = -cloud.points[0];
        cloud.points[0] += delta;
        cloud.points[1] -= delta;
        let idx = KnnIndex::build(&cloud).unwrap();
        let pivot = pivot_ri_xyz(&idx, 0).unwrap();
        assert!(pivot.degenerate);
        assert_eq!(pivot.frame.matrix().column(0).into_owned(), Point3::z());
        Frame::new(*pivot.frame.matrix()).unwrap();
    }

    #[test]
    fn ri_xyz_collinear_local_center_falls_back() {
        // Points on the x axis: c_local - x is parallel to p1.
        let pts: Vec<Point3> = (0..40).map(|i| Point3::new(i as f64 - 19.5, 0.0, 0.0)).collect();
        let idx = KnnIndex::build(&PointCloud::new(pts)).unwrap();
        let pivot = pivot_ri_xyz(&idx, 0).unwrap();
        assert!(pivot.degenerate);
        // +x is parallel to p1, so the fallback uses +y.
        let p2 = pivot.frame.matrix().column(1).into_owned();
        assert!((p2 - Point3::y()).norm() < 1e-12);
    }

    #[test]
    fn frames_are_proper_rotations() {
        let idx = KnnIndex::build(&random_cloud(100, 6)).unwrap();
        for mode in [AlignmentMode::RiXy, AlignmentMode::RiXyz] {
            let set = compute_frames(&idx, mode).unwrap();
            for f in &set.frames {
                Frame::new(*f.matrix()).unwrap();
            }
        }
    }

    #[test]
    fn apply_frame_examples() {
        let dirs = icosphere_directions(1).unwrap();
        assert_eq!(apply_frame(&dirs, &Frame::identity()), dirs.directions().to_vec());
        let quarter = Frame::about_z(std::f64::consts::FRAC_PI_2);
        assert!((quarter.apply(&Point3::x()) - Point3::y()).norm() < 1e-15);
    }

    #[test]
    fn apply_frame_preserves_angles() {
        let dirs = icosphere_directions(1).unwrap();
        let mut r = rng::seeded(12);
        for _ in 0..10 {
            let frame = Frame::new(random_rotation(&mut r)).unwrap();
            let rotated = apply_frame(&dirs, &frame);
            for i in 0..dirs.len() {
                assert!((rotated[i].norm() - 1.0).abs() < 1e-12);
                for j in 0..dirs.len() {
                    let before = dirs.directions()[i].dot(&dirs.directions()[j]);
                    let after = rotated[i].dot(&rotated[j]);
                    assert!((before - after).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_improper_frames() {
        let mirror = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Frame::new(mirror).is_err());
        assert!(Frame::new(Matrix3::identity() * 2.0).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("rixyz".parse::<AlignmentMode>().unwrap(), AlignmentMode::RiXyz);
        assert_eq!("RI-XY".parse::<AlignmentMode>().unwrap(), AlignmentMode::RiXy);
        assert!("foo".parse::<AlignmentMode>().is_err());
        for m in [AlignmentMode::None, AlignmentMode::RiXy, AlignmentMode::RiXyz] {
            assert_eq!(AlignmentMode::from_code(m.code()), Some(m));
        }
    }
}
