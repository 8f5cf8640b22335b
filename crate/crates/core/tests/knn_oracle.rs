mod common;

use common::{brute_knn, random_cloud, random_rotation};
use odf_core::{rng, KnnIndex, Point3, PointCloud};
use proptest::prelude::*;

#[test]
fn seed3_256_points_k32_matches_exhaustive() {
    let cloud = random_cloud(256, 3);
    let idx = KnnIndex::build(&cloud).unwrap();
    for i in 0..256 {
        let got = idx.knn(i, 32).unwrap();
        let (ids, ds) = brute_knn(&cloud.points, i, 32);
        assert_eq!(got.indices, ids);
        assert_eq!(got.distances, ds);
    }
}

#[test]
fn seed11_128_points_every_query() {
    let cloud = random_cloud(128, 11);
    let idx = KnnIndex::build(&cloud).unwrap();
    let all = idx.knn_all(32).unwrap();
    for (i, got) in all.iter().enumerate() {
        let (ids, ds) = brute_knn(&cloud.points, i, 32);
        assert_eq!(got.indices, ids);
        assert_eq!(got.distances, ds);
    }
}

#[test]
fn rotation_keeps_neighbor_sets() {
    let cloud = random_cloud(200, 21);
    let idx = KnnIndex::build(&cloud).unwrap();
    let mut r = rng::seeded(5);
    for _ in 0..5 {
        let rot = random_rotation(&mut r);
        let ridx = KnnIndex::build(&cloud.map_points(|p| rot * p)).unwrap();
        for i in 0..200 {
            let a = idx.knn(i, 16).unwrap();
            let b = ridx.knn(i, 16).unwrap();
            assert_eq!(a.indices, b.indices);
            for (x, y) in a.distances.iter().zip(&b.distances) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

fn grid_cloud(coords: Vec<(i8, i8, i8)>) -> PointCloud {
    // Coarse integer lattice: lots of exact ties and duplicates.
    PointCloud::new(
        coords
            .into_iter()
            .map(|(x, y, z)| Point3::new(x as f64, y as f64, z as f64) * 0.25)
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_exhaustive_with_ties(
        coords in prop::collection::vec((-3i8..3, -3i8..3, -3i8..3), 2..160),
        k_frac in 0.0f64..1.0,
    ) {
        let cloud = grid_cloud(coords);
        let n = cloud.len();
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let idx = KnnIndex::build(&cloud).unwrap();
        for i in 0..n {
            let got = idx.knn(i, k).unwrap();
            let (ids, ds) = brute_knn(&cloud.points, i, k);
            prop_assert_eq!(&got.indices, &ids);
            prop_assert_eq!(&got.distances, &ds);
        }
    }

    #[test]
    fn matches_exhaustive_random(seed in 0u64..10_000, n in 2usize..512) {
        let cloud = random_cloud(n, seed);
        let k = (n - 1).min(1 + (seed as usize % 40));
        let idx = KnnIndex::build(&cloud).unwrap();
        for i in (0..n).step_by(1 + n / 32) {
            let got = idx.knn(i, k).unwrap();
            let (ids, ds) = brute_knn(&cloud.points, i, k);
            prop_assert_eq!(&got.indices, &ids);
            prop_assert_eq!(&got.distances, &ds);
        }
    }
}
