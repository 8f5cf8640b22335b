//! Point clouds and basic geometry.

use nalgebra::Vector3;

use crate::error::{OdfError, Result};

/// A 3D point (or vector) in 64-bit coordinates.
pub type Point3 = Vector3<f64>;

/// Ordered points with optional per-point RGB colors and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            colors: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks finiteness, color length and the minimum point count.
    pub fn validate(&self, min_points: usize) -> Result<()> {
        if self.points.len() < min_points {
            return Err(OdfError::TooFewPoints {
                got: self.points.len(),
                need: min_points,
            });
        }
        if let Some(i) = self.points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(OdfError::NonFinite(i));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(OdfError::Shape(format!(
                    "{} colors for {} points",
                    colors.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    /// Applies `f` to every point, keeping colors and label.
    pub fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            colors: self.colors.clone(),
            label: self.label,
        }
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            label: self.label,
        }
    }
}

/// Arithmetic mean of the points.
///
/// Each coordinate is summed in sorted order, so the result does not depend
/// on the order of `points` down to the last bit.
pub fn centroid(points: &[Point3]) -> Point3 {
    let mut sum = Point3::zeros();
    let mut column = Vec::with_capacity(points.len());
    for a in 0..3 {
        column.clear();
        column.extend(points.iter().map(|p| p[a]));
        column.sort_by(f64::total_cmp);
        sum[a] = column.iter().sum();
    }
    sum / points.len() as f64
}

/// Euclidean distance. Every distance comparison in the crate goes through
/// this one expression so that independently written loops agree bit for bit.
#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let d = b - a;
    (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1. Point order, colors and label are preserved.
pub fn normalize_to_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    cloud.validate(1)?;
    let c = cloud.centroid();
    let max_norm = cloud
        .points
        .iter()
        .map(|p| (p - c).norm())
        .fold(0.0_f64, f64::max);
    if max_norm <= f64::EPSILON * (1.0 + c.norm()) {
        return Err(OdfError::DegenerateCloud("all points coincide".into()));
    }
    let scale = 1.0 / max_norm;
    Ok(cloud.map_points(|p| (p - c) * scale))
}
