//! Seeded synthetic shape dataset.
//!
//! Four classes of surface-sampled canonical shapes with Gaussian jitter.
//! Sample `k` (counted over all classes) draws from its own ChaCha8 stream
//! seeded with `seed ^ k`, so samples can be generated in parallel and the
//! output is identical on every platform.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{normalize_to_unit_sphere, Point3, PointCloud};
use crate::par;
use crate::rng::{self, OdfRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    SphereShell,
    Box,
    TwoPlaneCorner,
    Cylinder,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::SphereShell,
        ShapeClass::Box,
        ShapeClass::TwoPlaneCorner,
        ShapeClass::Cylinder,
    ];

    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::SphereShell => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::TwoPlaneCorner => "corner",
            ShapeClass::Cylinder => "cylinder",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub samples_per_class: usize,
    pub points_per_cloud: usize,
    /// Standard deviation of the jitter, before normalization.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            samples_per_class: 100,
            points_per_cloud: 512,
            noise_sigma: 0.01,
            seed: 29,
        }
    }
}

/// Train/test split; the first 80% of each class (by per-class index) trains.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl SyntheticDataset {
    pub fn class_count(&self) -> usize {
        ShapeClass::ALL.len()
    }
}

/// Jitter norms are truncated at this many sigmas.
const JITTER_TRUNCATION: f64 = 1.5;

pub fn generate_synthetic_dataset(spec: &SyntheticDatasetSpec) -> SyntheticDataset {
    let per_class = spec.samples_per_class;
    let total = per_class * ShapeClass::ALL.len();
    let clouds = par::map_indexed(total, |k| {
        let class = ShapeClass::ALL[k / per_class];
        let mut r = rng::derived(spec.seed, k as u64);
        sample_shape(class, spec.points_per_cloud, spec.noise_sigma, &mut r)
    });
    let n_train = (per_class * 4).div_ceil(5);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, cloud) in clouds.into_iter().enumerate() {
        if k % per_class < n_train {
            train.push(cloud);
        } else {
            test.push(cloud);
        }
    }
    SyntheticDataset { train, test }
}

/// One normalized, labeled cloud of `class`.
pub fn sample_shape(class: ShapeClass, n: usize, sigma: f64, r: &mut OdfRng) -> PointCloud {
    let mut pts = Vec::with_capacity(n);
    match class {
        ShapeClass::SphereShell => {
            // Antipodal pairs keep the shell center at the sample centroid.
            while pts.len() < n {
                let v = unit_vector(r);
                pts.push(v);
                if pts.len() < n {
                    pts.push(-v);
                }
            }
        }
        ShapeClass::Box => {
            let dims = [
                r.random_range(0.9..1.1),
                r.random_range(0.6..0.75),
                r.random_range(0.3..0.45),
            ];
            let areas = [dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]];
            let total: f64 = areas.iter().sum::<f64>() * 2.0;
            for _ in 0..n {
                let mut t = r.random::<f64>() * total;
                let mut axis = 0;
                while axis < 2 && t >= 2.0 * areas[axis] {
                    t -= 2.0 * areas[axis];
                    axis += 1;
                }
                let mut p = Point3::zeros();
                for a in 0..3 {
                    p[a] = (r.random::<f64>() - 0.5) * dims[a];
                }
                p[axis] = if r.random::<bool>() { 0.5 } else { -0.5 } * dims[axis];
                pts.push(p);
            }
        }
        ShapeClass::TwoPlaneCorner => {
            // Floor z = 0 and wall x = 0 sharing the y edge.
            let depth = r.random_range(0.8..1.2);
            let width = r.random_range(0.8..1.2);
            let height = r.random_range(0.8..1.2);
            let floor = depth * width;
            let wall = height * width;
            for _ in 0..n {
                let y = (r.random::<f64>() - 0.5) * width;
                if r.random::<f64>() * (floor + wall) < floor {
                    pts.push(Point3::new(r.random::<f64>() * depth, y, 0.0));
                } else {
                    pts.push(Point3::new(0.0, y, r.random::<f64>() * height));
                }
            }
        }
        ShapeClass::Cylinder => {
            let radius = r.random_range(0.4..0.55);
            let height = r.random_range(1.2..1.6);
            let side = 2.0 * std::f64::consts::PI * radius * height;
            let cap = std::f64::consts::PI * radius * radius;
            for _ in 0..n {
                let theta = r.random::<f64>() * 2.0 * std::f64::consts::PI;
                let t = r.random::<f64>() * (side + 2.0 * cap);
                if t < side {
                    let z = (r.random::<f64>() - 0.5) * height;
                    pts.push(Point3::new(radius * theta.cos(), radius * theta.sin(), z));
                } else {
                    let rho = radius * r.random::<f64>().sqrt();
                    let z = if t < side + cap { 0.5 } else { -0.5 } * height;
                    pts.push(Point3::new(rho * theta.cos(), rho * theta.sin(), z));
                }
            }
        }
    }
    for p in &mut pts {
        *p += jitter(r, sigma);
    }
    normalize_to_unit_sphere(&PointCloud::new(pts))
        .expect("sampled shapes are not degenerate")
        .with_label(class.label())
}

fn unit_vector(r: &mut OdfRng) -> Point3 {
    loop {
        let v = Point3::new(
            StandardNormal.sample(r),
            StandardNormal.sample(r),
            StandardNormal.sample(r),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn jitter(r: &mut OdfRng, sigma: f64) -> Point3 {
    let v: Point3 = Point3::new(
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    ) * sigma;
    let cap = JITTER_TRUNCATION * sigma;
    let n = v.norm();
    if n > cap {
        v * (cap / n)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            samples_per_class: 10,
            points_per_cloud: 256,
            ..Default::default()
        }
    }

    #[test]
    fn split_sizes() {
        let spec = SyntheticDatasetSpec {
            samples_per_class: 100,
            points_per_cloud: 40,
            ..Default::default()
        };
        let ds = generate_synthetic_dataset(&spec);
        assert_eq!(ds.train.len(), 320);
        assert_eq!(ds.test.len(), 80);
        for c in 0..4 {
            assert_eq!(ds.train.iter().filter(|x| x.label == Some(c)).count(), 80);
            assert_eq!(ds.test.iter().filter(|x| x.label == Some(c)).count(), 20);
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic_dataset(&small_spec()), generate_synthetic_dataset(&small_spec()));
        let other = SyntheticDatasetSpec {
            seed: 30,
            ..small_spec()
        };
        assert_ne!(generate_synthetic_dataset(&small_spec()), generate_synthetic_dataset(&other));
    }

    #[test]
    fn normalized() {
        let ds = generate_synthetic_dataset(&small_spec());
        for c in ds.train.iter().chain(&ds.test) {
            assert_eq!(c.len(), 256);
            assert!(c.centroid().norm() < 1e-9);
            let max = c.points.iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_shell_thickness() {
        let spec = SyntheticDatasetSpec {
            points_per_cloud: 512,
            ..small_spec()
        };
        let sigma = spec.noise_sigma;
        let ds = generate_synthetic_dataset(&spec);
        for c in ds.train.iter().filter(|c| c.label == Some(0)) {
            for p in &c.points {
                let n = p.norm();
                assert!(n >= 1.0 - 4.0 * sigma && n <= 1.0 + 1e-12, "norm {n}");
            }
        }
    }
}
