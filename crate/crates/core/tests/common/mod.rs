#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, Unit};
use odf_core::{rng, Point3, PointCloud};
use rand::Rng;

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = rng::seeded(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                    r.random_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

/// Uniform rotation from a random unit quaternion.
pub fn random_rotation(r: &mut impl Rng) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            let q = nalgebra::Quaternion::new(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
            return nalgebra::UnitQuaternion::from_quaternion(q)
                .to_rotation_matrix()
                .into_inner();
        }
    }
}

pub fn z_rotation(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(Point3::z()), angle).into_inner()
}

/// Exhaustive KNN: every other point sorted by (distance, index).
pub fn brute_knn(points: &[Point3], i: usize, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut all: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (odf_core::geometry::distance(&points[i], &points[j]), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    (all.iter().map(|a| a.1).collect(), all.iter().map(|a| a.0).collect())
}
