//! Orientation distribution function (ODF) descriptors for 3D point clouds.
//!
//! Every point gets a tensor of normalized point counts inside cones placed
//! along a tessellated set of directions, at several apex angles and
//! neighbor-rank radii. Cone directions can be aligned per point with
//! rotation-invariant frames ([`AlignmentMode::RiXy`], [`AlignmentMode::RiXyz`]).
//!
//! Per-point work runs on rayon when the `parallel` feature is enabled
//! (default) and falls back to a plain loop otherwise. Results never depend
//! on the worker count.

pub mod alignment;
pub mod error;
pub mod geometry;
pub mod icosphere;
pub mod io;
pub mod knn;
pub mod odf;
pub mod par;
pub mod rng;

pub use alignment::{apply_frame, pivot_ri_xy, pivot_ri_xyz, AlignmentMode, Frame, FrameSet, Pivot};
pub use error::{OdfError, Result};
pub use geometry::{normalize_to_unit_sphere, Point3, PointCloud};
pub use icosphere::{icosphere_directions, DirectionSet};
pub use knn::{KnnIndex, NeighborList};
pub use odf::{
    default_cone_bank, odf_brute_force, odf_cloud, odf_cloud_with_frames, odf_indexed, odf_point,
    odf_with_neighbors, ConeBank,
    ConeSpec, OdfField,
};
