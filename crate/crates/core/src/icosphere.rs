//! Unit directions from a subdivided icosahedron.

use std::collections::HashMap;

use crate::error::{OdfError, Result};
use crate::geometry::Point3;

/// Unit cone directions at a fixed tessellation level.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    level: u32,
    directions: Vec<Point3>,
}

impl DirectionSet {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn directions(&self) -> &[Point3] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// `10 * 4^level + 2`.
pub fn direction_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

const PHI: f64 = 1.618_033_988_749_895;

fn seed_vertices() -> Vec<Point3> {
    let raw = [
        (-1.0, PHI, 0.0),
        (1.0, PHI, 0.0),
        (-1.0, -PHI, 0.0),
        (1.0, -PHI, 0.0),
        (0.0, -1.0, PHI),
        (0.0, 1.0, PHI),
        (0.0, -1.0, -PHI),
        (0.0, 1.0, -PHI),
        (PHI, 0.0, -1.0),
        (PHI, 0.0, 1.0),
        (-PHI, 0.0, -1.0),
        (-PHI, 0.0, 1.0),
    ];
    raw.iter()
        .map(|&(x, y, z)| Point3::new(x, y, z).normalize())
        .collect()
}

const SEED_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

/// Builds the direction set for `level` (0: 12, 1: 42, 2: 162 directions).
///
/// Level 0 is the golden-ratio icosahedron; each further level splits every
/// edge at its midpoint and projects it back onto the sphere. Shared edges
/// are deduplicated by their sorted endpoint pair, and new vertices are
/// appended in face order, so the layout is identical on every platform.
pub fn icosphere_directions(level: u32) -> Result<DirectionSet> {
    if level > 2 {
        return Err(OdfError::BadLevel(level));
    }
    let mut vertices = seed_vertices();
    let mut faces = SEED_FACES.to_vec();
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let mut mid = |i: usize, j: usize| -> usize {
                let key = (i.min(j), i.max(j));
                *midpoints.entry(key).or_insert_with(|| {
                    vertices.push(((vertices[i] + vertices[j]) * 0.5).normalize());
                    vertices.len() - 1
                })
            };
            let ab = mid(a, b);
            let bc = mid(b, c);
            let ca = mid(c, a);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    debug_assert_eq!(vertices.len(), direction_count(level));
    Ok(DirectionSet {
        level,
        directions: vertices,
    })
}
