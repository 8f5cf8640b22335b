//! Cone-density descriptors.
//!
//! For a point `x_i`, a cone with direction `v`, half-angle `alpha` and
//! neighbor rank `n` counts the points `x_j` (`j != i`) with
//! `|x_j - x_i| < d_n` and `angle(x_j - x_i, v) < alpha`, where `d_n` is the
//! distance to the `n`-th nearest neighbor. The count is divided by `n`.
//! Both comparisons are strict, so the `n`-th neighbor itself never counts.
//! Coincident points have no direction and are never counted.

use crate::alignment::{frames_from_neighbors, AlignmentMode, Frame, FrameSet, PIVOT_NEIGHBORS};
use crate::error::{OdfError, Result};
use crate::geometry::{distance, Point3, PointCloud};
use crate::icosphere::DirectionSet;
use crate::knn::{KnnIndex, NeighborList};
use crate::par;

/// Narrow cone half-angle, in degrees.
pub const ALPHA_NARROW_DEG: f64 = 31.71;
/// Wide cone half-angle, in degrees.
pub const ALPHA_WIDE_DEG: f64 = 60.0;
/// Default neighbor ranks selecting the cone heights.
pub const DEFAULT_RANKS: [usize; 4] = [8, 16, 24, 32];

/// One cone of a bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSpec {
    pub direction_id: usize,
    /// Half-angle in radians.
    pub alpha: f64,
    pub neighbor_rank: usize,
}

/// Directions × half-angles × neighbor ranks.
///
/// Scales are ordered rank-major: `(r0, a0), (r0, a1), (r1, a0), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBank {
    directions: DirectionSet,
    alphas: Vec<f64>,
    ranks: Vec<usize>,
}

impl ConeBank {
    /// `alphas` in radians, each in `(0, π]`; `ranks` at least 1.
    pub fn new(directions: DirectionSet, alphas: Vec<f64>, ranks: Vec<usize>) -> Result<Self> {
        if alphas.is_empty() || ranks.is_empty() {
            return Err(OdfError::BadConeBank("need at least one angle and one rank".into()));
        }
        if let Some(a) = alphas
            .iter()
            .find(|&&a| !(a > 0.0 && a <= std::f64::consts::PI))
        {
            return Err(OdfError::BadConeBank(format!("half-angle {a} rad outside (0, π]")));
        }
        if ranks.contains(&0) {
            return Err(OdfError::BadConeBank("neighbor rank must be >= 1".into()));
        }
        Ok(Self {
            directions,
            alphas,
            ranks,
        })
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn direction_count(&self) -> usize {
        self.directions.len()
    }

    pub fn scale_count(&self) -> usize {
        self.alphas.len() * self.ranks.len()
    }

    pub fn cone_count(&self) -> usize {
        self.direction_count() * self.scale_count()
    }

    pub fn max_rank(&self) -> usize {
        *self.ranks.iter().max().expect("non-empty ranks")
    }

    pub fn min_rank(&self) -> usize {
        *self.ranks.iter().min().expect("non-empty ranks")
    }

    /// `(rank index, alpha index)` of scale `s`.
    pub fn scale_parts(&self, s: usize) -> (usize, usize) {
        (s / self.alphas.len(), s % self.alphas.len())
    }

    pub fn cone(&self, direction_id: usize, scale: usize) -> ConeSpec {
        let (r, a) = self.scale_parts(scale);
        ConeSpec {
            direction_id,
            alpha: self.alphas[a],
            neighbor_rank: self.ranks[r],
        }
    }

    /// All cones in storage order (direction-major, then scale).
    pub fn cones(&self) -> impl Iterator<Item = ConeSpec> + '_ {
        (0..self.direction_count())
            .flat_map(move |l| (0..self.scale_count()).map(move |s| self.cone(l, s)))
    }
}

/// Half-angles 31.71° and 60°, ranks 8, 16, 24, 32.
pub fn default_cone_bank(directions: DirectionSet) -> ConeBank {
    ConeBank::new(
        directions,
        vec![ALPHA_NARROW_DEG.to_radians(), ALPHA_WIDE_DEG.to_radians()],
        DEFAULT_RANKS.to_vec(),
    )
    .expect("default bank is valid")
}

/// Normalized cone densities for a whole cloud, stored point-major as
/// `[point][direction][scale]` in 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct OdfField {
    pub n_points: usize,
    pub n_directions: usize,
    pub n_scales: usize,
    pub mode: AlignmentMode,
    pub values: Vec<f32>,
}

impl OdfField {
    pub fn zeros(n_points: usize, n_directions: usize, n_scales: usize, mode: AlignmentMode) -> Self {
        Self {
            n_points,
            n_directions,
            n_scales,
            mode,
            values: vec![0.0; n_points * n_directions * n_scales],
        }
    }

    pub fn point_stride(&self) -> usize {
        self.n_directions * self.n_scales
    }

    pub fn point(&self, p: usize) -> &[f32] {
        let stride = self.point_stride();
        &self.values[p * stride..(p + 1) * stride]
    }

    pub fn get(&self, p: usize, direction: usize, scale: usize) -> f32 {
        self.values[(p * self.n_directions + direction) * self.n_scales + scale]
    }

    /// Reorders rows: row `i` of the result is row `order[i]` of `self`.
    pub fn select_points(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(order.len() * self.point_stride());
        for &p in order {
            values.extend_from_slice(self.point(p));
        }
        Self {
            n_points: order.len(),
            values,
            ..*self
        }
    }
}

fn check_rank(bank: &ConeBank, size: usize) -> Result<()> {
    if bank.max_rank() >= size {
        return Err(OdfError::KTooLarge {
            k: bank.max_rank(),
            size,
        });
    }
    Ok(())
}

/// ODF slice (`directions × scales`, normalized) of one point, using the
/// index to restrict the scan to the largest cone ball.
pub fn odf_point(index: &KnnIndex, point_index: usize, bank: &ConeBank, frame: &Frame) -> Result<Vec<f64>> {
    check_rank(bank, index.len())?;
    Frame::new(*frame.matrix())?;
    let neighbors = index.knn(point_index, bank.max_rank())?;
    let mut counts = vec![0u32; bank.cone_count()];
    count_cones(index.points(), point_index, &neighbors, bank, frame, &mut counts);
    Ok(normalize_counts(&counts, bank))
}

fn normalize_counts(counts: &[u32], bank: &ConeBank) -> Vec<f64> {
    let s_count = bank.scale_count();
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let (r, _) = bank.scale_parts(c % s_count);
            n as f64 / bank.ranks()[r] as f64
        })
        .collect()
}

/// Raw cone counts of one point into `counts` (`directions × scales`).
///
/// `neighbors` must hold at least `bank.max_rank()` entries sorted by
/// distance. Every point strictly inside `d_n` is among the first `n - 1`
/// of them, so nothing beyond the list can fall into any cone.
pub fn count_cones(
    points: &[Point3],
    point_index: usize,
    neighbors: &NeighborList,
    bank: &ConeBank,
    frame: &Frame,
    counts: &mut [u32],
) {
    let x = points[point_index];
    let n_alpha = bank.alphas().len();
    let n_scales = bank.scale_count();
    let cos_alpha: Vec<f64> = bank.alphas().iter().map(|a| a.cos()).collect();

    // For each rank: how many leading neighbors lie strictly inside d_n.
    let inside: Vec<usize> = bank
        .ranks()
        .iter()
        .map(|&n| {
            let d_n = neighbors.rank_distance(n);
            neighbors.distances.partition_point(|&d| d < d_n)
        })
        .collect();
    let scan = inside.iter().copied().max().unwrap_or(0);

    let mut diffs = Vec::with_capacity(scan);
    for (&j, &dist) in neighbors.indices[..scan].iter().zip(&neighbors.distances[..scan]) {
        diffs.push((points[j] - x, dist));
    }

    // Ranks sorted by their inside-count so one pass per cone fills them all.
    let mut rank_order: Vec<usize> = (0..bank.ranks().len()).collect();
    rank_order.sort_by_key(|&r| inside[r]);

    counts.iter_mut().for_each(|c| *c = 0);
    for (l, dir) in bank.directions().directions().iter().enumerate() {
        let v = frame.apply(dir);
        let v_norm = v.norm();
        for (a, &cos_a) in cos_alpha.iter().enumerate() {
            let mut running = 0u32;
            let mut seen = 0usize;
            for &r in &rank_order {
                for (d, dist) in &diffs[seen..inside[r]] {
                    if *dist > 0.0 && d.dot(&v) > cos_a * dist * v_norm {
                        running += 1;
                    }
                }
                seen = inside[r];
                counts[l * n_scales + r * n_alpha + a] = running;
            }
        }
    }
}

/// Literal evaluation of the cone indicator over every other point: no
/// index, no pruning, `acos` for the angle. Used as the reference oracle.
pub fn odf_brute_force(points: &[Point3], point_index: usize, bank: &ConeBank, frame: &Frame) -> Result<Vec<f64>> {
    if point_index >= points.len() {
        return Err(OdfError::IndexOutOfRange {
            index: point_index,
            size: points.len(),
        });
    }
    check_rank(bank, points.len())?;
    Frame::new(*frame.matrix())?;
    let xi = points[point_index];

    let mut sorted: Vec<f64> = (0..points.len())
        .filter(|&j| j != point_index)
        .map(|j| distance(&xi, &points[j]))
        .collect();
    sorted.sort_by(f64::total_cmp);

    let mut out = Vec::with_capacity(bank.cone_count());
    for cone in bank.cones() {
        let v = frame.apply(&bank.directions().directions()[cone.direction_id]);
        let d_n = sorted[cone.neighbor_rank - 1];
        let mut count = 0usize;
        for (j, xj) in points.iter().enumerate() {
            if j == point_index {
                continue;
            }
            let dist = distance(&xi, xj);
            if dist == 0.0 {
                continue;
            }
            let angle = ((xj - xi).dot(&v) / (dist * v.norm())).acos();
            if dist < d_n && angle < cone.alpha {
                count += 1;
            }
        }
        out.push(count as f64 / cone.neighbor_rank as f64);
    }
    Ok(out)
}

/// Minimum cloud size for `bank` under `mode`.
pub fn min_points(bank: &ConeBank, mode: AlignmentMode) -> usize {
    let need = match mode {
        AlignmentMode::None => bank.max_rank(),
        _ => bank.max_rank().max(PIVOT_NEIGHBORS),
    };
    need + 1
}

/// ODF field of every point, with cone directions aligned by `mode`.
pub fn odf_cloud(cloud: &PointCloud, bank: &ConeBank, mode: AlignmentMode) -> Result<OdfField> {
    odf_cloud_with_frames(cloud, bank, mode).map(|(field, _)| field)
}

/// Like [`odf_cloud`], also returning the per-point frames.
pub fn odf_cloud_with_frames(
    cloud: &PointCloud,
    bank: &ConeBank,
    mode: AlignmentMode,
) -> Result<(OdfField, FrameSet)> {
    let index = KnnIndex::build(cloud)?;
    odf_indexed(&index, bank, mode)
}

/// ODF field over an existing index.
pub fn odf_indexed(index: &KnnIndex, bank: &ConeBank, mode: AlignmentMode) -> Result<(OdfField, FrameSet)> {
    odf_with_neighbors(index, bank, mode, 0).map(|(field, frames, _)| (field, frames))
}

/// ODF field over an existing index, also returning the neighbor lists it
/// used. Lists hold at least `min_k` entries (more if the bank or the pivots
/// need them).
pub fn odf_with_neighbors(
    index: &KnnIndex,
    bank: &ConeBank,
    mode: AlignmentMode,
    min_k: usize,
) -> Result<(OdfField, FrameSet, Vec<NeighborList>)> {
    let n = index.len();
    let need = min_points(bank, mode).max(min_k + 1);
    if n < need {
        return Err(OdfError::TooFewPoints { got: n, need });
    }
    let neighbors = index.knn_all(need - 1)?;
    let frames = frames_from_neighbors(index.points(), &neighbors, mode);

    let mut field = OdfField::zeros(n, bank.direction_count(), bank.scale_count(), mode);
    let stride = field.point_stride();
    let n_alpha = bank.alphas().len();
    par::fill_rows(&mut field.values, stride, |i, row| {
        let mut counts = vec![0u32; stride];
        count_cones(index.points(), i, &neighbors[i], bank, &frames.frames[i], &mut counts);
        for (c, (out, &count)) in row.iter_mut().zip(&counts).enumerate() {
            let r = (c % bank.scale_count()) / n_alpha;
            *out = (count as f64 / bank.ranks()[r] as f64) as f32;
        }
    });
    Ok((field, frames, neighbors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icosphere::icosphere_directions;
    use crate::rng;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::seeded(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect(),
        )
    }

    fn bank(level: u32) -> ConeBank {
        default_cone_bank(icosphere_directions(level).unwrap())
    }

    #[test]
    fn default_bank_sizes() {
        assert_eq!(bank(1).cone_count(), 336);
        assert_eq!(bank(0).cone_count(), 96);
        assert_eq!(bank(2).cone_count(), 1296);
        assert_eq!(bank(1).scale_count(), 8);
    }

    #[test]
    fn scale_layout_is_rank_major() {
        let b = bank(1);
        let scales: Vec<(usize, f64)> = (0..8)
            .map(|s| {
                let c = b.cone(0, s);
                (c.neighbor_rank, c.alpha.to_degrees())
            })
            .collect();
        assert_eq!(scales[0].0, 8);
        assert!((scales[0].1 - 31.71).abs() < 1e-9);
        assert_eq!(scales[1].0, 8);
        assert!((scales[1].1 - 60.0).abs() < 1e-9);
        assert_eq!(scales[2].0, 16);
        assert_eq!(scales[7].0, 32);
    }

    #[test]
    fn bank_validation() {
        let d = icosphere_directions(0).unwrap();
        assert!(ConeBank::new(d.clone(), vec![0.0], vec![8]).is_err());
        assert!(ConeBank::new(d.clone(), vec![4.0], vec![8]).is_err());
        assert!(ConeBank::new(d.clone(), vec![1.0], vec![0]).is_err());
        assert!(ConeBank::new(d, vec![], vec![8]).is_err());
    }

    #[test]
    fn collinear_cone_counts() {
        let pts: Vec<Point3> = (0..9).map(|i| Point3::new(0.0, 0.0, i as f64 * 0.1)).collect();
        let idx = KnnIndex::build(&PointCloud::new(pts.clone())).unwrap();
        // A direction set holding +z and -z exactly: level-0 icosahedron
        // rotated so vertex 0 maps to +z.
        let set = icosphere_directions(0).unwrap();
        let v0 = set.directions()[0];
        let rot = nalgebra::Rotation3::rotation_between(&v0, &Point3::z()).unwrap();
        let frame = Frame::new(rot.into_inner()).unwrap();
        let b = ConeBank::new(set.clone(), vec![31.71f64.to_radians()], vec![8]).unwrap();
        let slice = odf_point(&idx, 0, &b, &frame).unwrap();
        assert_eq!(slice[0], 7.0 / 8.0);
        // The antipode of vertex 0 is also a vertex; its cone sees nothing.
        let anti = set
            .directions()
            .iter()
            .position(|d| (d + v0).norm() < 1e-12)
            .unwrap();
        assert_eq!(slice[anti], 0.0);
        assert_eq!(odf_brute_force(&pts, 0, &b, &frame).unwrap(), slice);
    }

    #[test]
    fn strict_distance_at_boundary() {
        // Two points: d_1 is the neighbor's own distance, so it never counts.
        let pts = vec![Point3::zeros(), Point3::new(0.3, 0.1, 0.2)];
        let set = icosphere_directions(0).unwrap();
        let b = ConeBank::new(set, vec![std::f64::consts::PI], vec![1]).unwrap();
        let out = odf_brute_force(&pts, 0, &b, &Frame::identity()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearer_neighbor_counts_at_rank_two() {
        let pts = vec![Point3::zeros(), Point3::new(0.0, 0.0, 0.5), Point3::new(1.0, 0.0, 0.0)];
        let set = icosphere_directions(0).unwrap();
        let v0 = set.directions()[0];
        let rot = nalgebra::Rotation3::rotation_between(&v0, &Point3::z()).unwrap();
        let frame = Frame::new(rot.into_inner()).unwrap();
        let b = ConeBank::new(set, vec![0.5], vec![2]).unwrap();
        let out = odf_brute_force(&pts, 0, &b, &frame).unwrap();
        assert_eq!(out[0], 0.5);
        let idx = KnnIndex::build(&PointCloud::new(pts)).unwrap();
        assert_eq!(odf_point(&idx, 0, &b, &frame).unwrap(), out);
    }

    #[test]
    fn matches_brute_force_on_random_clouds() {
        let b = bank(1);
        for seed in 0..50u64 {
            let n = 33 + (seed as usize * 19) % 96;
            let cloud = random_cloud(n, 1000 + seed);
            let idx = KnnIndex::build(&cloud).unwrap();
            for i in (0..n).step_by(7) {
                let fast = odf_point(&idx, i, &b, &Frame::identity()).unwrap();
                let slow = odf_brute_force(&cloud.points, i, &b, &Frame::identity()).unwrap();
                assert_eq!(fast, slow, "seed {seed} point {i}");
            }
        }
    }

    #[test]
    fn seed5_identity_frames_match_oracle() {
        let b = bank(1);
        let cloud = random_cloud(64, 5);
        let field = odf_cloud(&cloud, &b, AlignmentMode::None).unwrap();
        for i in 0..64 {
            let slow = odf_brute_force(&cloud.points, i, &b, &Frame::identity()).unwrap();
            let slow32: Vec<f32> = slow.iter().map(|&v| v as f32).collect();
            assert_eq!(field.point(i), &slow32[..]);
        }
    }

    #[test]
    fn field_shape_and_range() {
        let b = bank(1);
        let cloud = random_cloud(100, 8);
        let field = odf_cloud(&cloud, &b, AlignmentMode::RiXy).unwrap();
        assert_eq!((field.n_points, field.n_directions, field.n_scales), (100, 42, 8));
        let max = 99.0 / 8.0;
        assert!(field.values.iter().all(|&v| (0.0..=max).contains(&v) && v.is_finite()));
    }

    #[test]
    fn monotone_in_alpha_and_rank() {
        let b = bank(1);
        let cloud = random_cloud(120, 9);
        let idx = KnnIndex::build(&cloud).unwrap();
        for i in 0..120 {
            let nb = idx.knn(i, 32).unwrap();
            let mut counts = vec![0u32; b.cone_count()];
            count_cones(&cloud.points, i, &nb, &b, &Frame::identity(), &mut counts);
            for l in 0..42 {
                let c = &counts[l * 8..(l + 1) * 8];
                for r in 0..4 {
                    assert!(c[r * 2 + 1] >= c[r * 2]);
                    if r > 0 {
                        assert!(c[r * 2] >= c[(r - 1) * 2]);
                        assert!(c[r * 2 + 1] >= c[(r - 1) * 2 + 1]);
                    }
                }
            }
        }
    }

    #[test]
    fn wide_cones_cover_all_inner_neighbors() {
        let b = bank(1);
        let cloud = random_cloud(150, 10);
        let idx = KnnIndex::build(&cloud).unwrap();
        for i in 0..150 {
            let nb = idx.knn(i, 32).unwrap();
            let mut counts = vec![0u32; b.cone_count()];
            count_cones(&cloud.points, i, &nb, &b, &Frame::identity(), &mut counts);
            for (r, &n) in b.ranks().iter().enumerate() {
                let total: u32 = (0..42).map(|l| counts[l * 8 + r * 2 + 1]).sum();
                assert!(total as usize >= n - 1, "point {i} rank {n}");
            }
        }
    }

    #[test]
    fn duplicate_points_never_counted() {
        let mut cloud = random_cloud(40, 11);
        cloud.points[1] = cloud.points[0];
        let b = ConeBank::new(icosphere_directions(0).unwrap(), vec![std::f64::consts::PI], vec![8]).unwrap();
        let idx = KnnIndex::build(&cloud).unwrap();
        let fast = odf_point(&idx, 0, &b, &Frame::identity()).unwrap();
        let slow = odf_brute_force(&cloud.points, 0, &b, &Frame::identity()).unwrap();
        assert_eq!(fast, slow);
        // Half-angle π catches every direction; d_8 excludes the 8th neighbor
        // and the duplicate has no direction: 6 of the first 7 neighbors.
        assert!(fast.iter().all(|&v| v == 6.0 / 8.0));
    }

    #[test]
    fn permutation_permutes_rows() {
        let b = bank(1);
        let cloud = random_cloud(80, 12);
        let field = odf_cloud(&cloud, &b, AlignmentMode::RiXyz).unwrap();
        let order: Vec<usize> = (0..80).rev().collect();
        let permuted = odf_cloud(&cloud.select(&order), &b, AlignmentMode::RiXyz).unwrap();
        assert_eq!(permuted, field.select_points(&order));
    }

    #[test]
    fn too_small_cloud() {
        let b = bank(1);
        let cloud = random_cloud(32, 13);
        assert!(matches!(
            odf_cloud(&cloud, &b, AlignmentMode::None),
            Err(OdfError::TooFewPoints { got: 32, need: 33 })
        ));
        let idx = KnnIndex::build(&cloud).unwrap();
        assert!(odf_point(&idx, 0, &b, &Frame::identity()).is_err());
    }
}
