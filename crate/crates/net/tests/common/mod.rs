#![allow(dead_code)]

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use odf_core::rng::seeded;
use odf_core::{icosphere_directions, normalize_to_unit_sphere, AlignmentMode, ConeBank, Point3, PointCloud};
use odf_net::{Dense, MiniOdfNet, NetConfig, NetMode, SampleInput};
use rand::Rng;
use rand_distr::StandardNormal;

/// 12 directions, ranks 4 and 8, both default half-angles: 4 scales.
pub fn tiny_bank() -> ConeBank {
    ConeBank::new(
        icosphere_directions(0).unwrap(),
        vec![31.71f64.to_radians(), 60f64.to_radians()],
        vec![4, 8],
    )
    .unwrap()
}

/// A few hundred parameters on top of [`tiny_bank`].
pub fn tiny_config(mode: NetMode, classes: usize) -> NetConfig {
    NetConfig {
        n_directions: 12,
        n_scales: 4,
        k: 6,
        dir_widths: vec![6, 6],
        glob_widths: vec![8],
        edge_widths: vec![8, 8],
        final_width: 12,
        head_widths: vec![8],
        ..NetConfig::desk(mode, classes)
    }
}

/// Draws every weight and bias from N(0, 0.5²) so that no pre-activation
/// sits exactly at zero.
pub fn randomize(net: &mut MiniOdfNet, seed: u64) {
    let mut r = seeded(seed);
    let values: Vec<f64> = (0..net.param_count())
        .map(|_| 0.5 * r.sample::<f64, _>(StandardNormal))
        .collect();
    net.set_params(&values).unwrap();
}

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = seeded(seed);
    let pts = (0..n)
        .map(|_| {
            Point3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-0.7..0.7),
                r.random_range(-0.5..0.5),
            )
        })
        .collect();
    normalize_to_unit_sphere(&PointCloud::new(pts)).unwrap()
}

pub fn random_rotation(r: &mut impl Rng) -> Matrix3<f64> {
    let q = nalgebra::Quaternion::new(
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
        r.sample(StandardNormal),
    );
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

pub fn z_rotation(angle: f64) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
}

pub fn default_alignment(mode: NetMode) -> AlignmentMode {
    mode.default_alignment()
}

/// One dense layer on one row, written as plain loops.
pub fn dense_row(layer: &Dense, x: &[f64]) -> Vec<f64> {
    let (inp, out) = (layer.input_dim(), layer.output_dim());
    assert_eq!(x.len(), inp);
    let mut y = vec![0.0; out];
    for (c, yc) in y.iter_mut().enumerate() {
        let mut z = layer.bias[c];
        for (i, xi) in x.iter().enumerate() {
            z += xi * layer.weight[[i, c]];
        }
        *yc = match layer.activation {
            odf_net::Activation::Relu => z.max(0.0),
            odf_net::Activation::Identity => z,
        };
    }
    y
}

pub fn mlp_row(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    layers.iter().fold(x.to_vec(), |h, l| dense_row(l, &h))
}

/// ODFBlock on one point's `directions × scales` rows, max aggregation.
pub fn straight_odf_block(net: &MiniOdfNet, rows: &[Vec<f64>]) -> Vec<f64> {
    let embedded: Vec<Vec<f64>> = rows.iter().map(|r| mlp_row(&net.odf_dir.layers, r)).collect();
    let width = embedded[0].len();
    let pooled: Vec<f64> = match net.config.aggregation {
        odf_net::DirAggregation::Max => (0..width)
            .map(|c| embedded.iter().map(|e| e[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        odf_net::DirAggregation::Concat => embedded.concat(),
    };
    mlp_row(&net.odf_glob.layers, &pooled)
}

/// Edge block `b` evaluated per neighbor on the explicit concatenation,
/// then max over neighbors.
pub fn straight_edge_block(net: &MiniOdfNet, b: usize, h: &[Vec<f64>], s: &SampleInput) -> Vec<Vec<f64>> {
    let layer = &net.edge_blocks[b];
    (0..s.n_points)
        .map(|i| {
            let mut best = vec![f64::NEG_INFINITY; layer.output_dim()];
            for (t, &j) in s.neighbors_of(i).iter().enumerate() {
                let mut x = h[i].clone();
                x.extend(&h[j]);
                x.extend(s.edge_geo.row(i * s.k + t).iter());
                let y = dense_row(layer, &x);
                for (bst, v) in best.iter_mut().zip(y) {
                    *bst = bst.max(v);
                }
            }
            best
        })
        .collect()
}

/// Logits computed without ndarray products or the edge decomposition.
pub fn straight_logits(net: &MiniOdfNet, s: &SampleInput) -> Vec<f64> {
    let d = s.n_directions;
    let mut h: Vec<Vec<f64>> = (0..s.n_points)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..d).map(|l| s.odf.row(i * d + l).to_vec()).collect();
            let mut g = straight_odf_block(net, &rows);
            g.extend(s.point_geo.row(i).iter());
            g
        })
        .collect();
    let mut blocks = Vec::new();
    for b in 0..net.edge_blocks.len() {
        h = straight_edge_block(net, b, &h, s);
        blocks.push(h.clone());
    }
    let rows: Vec<usize> = s.keep.clone().unwrap_or_else(|| (0..s.n_points).collect());
    let mut global = vec![f64::NEG_INFINITY; net.final_block.output_dim()];
    for &i in &rows {
        let mut x: Vec<f64> = blocks.iter().flat_map(|blk| blk[i].iter().copied()).collect();
        x.extend(s.point_geo.row(i).iter());
        let u = dense_row(&net.final_block, &x);
        for (g, v) in global.iter_mut().zip(u) {
            *g = g.max(v);
        }
    }
    mlp_row(&net.head.layers, &global)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct GradCheck {
    pub params: usize,
    pub checked: usize,
    /// Coordinates where θ±h fell in different linear pieces.
    pub skipped: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Relative error with a floor on the denominator, so coordinates whose
/// true gradient is zero are judged by absolute error.
pub const GRAD_REL_FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR)
}

/// Central differences (step 1e-5) against the manual backward pass on a
/// randomized tiny net over a two-sample batch, one with half deletion.
pub fn gradient_check(seed: u64, mode: NetMode, aggregation: odf_net::DirAggregation) -> GradCheck {
    let bank = tiny_bank();
    let config = NetConfig {
        aggregation,
        ..tiny_config(mode, 3)
    };
    let mut net = MiniOdfNet::new(config, &mut seeded(seed)).unwrap();
    randomize(&mut net, seed + 1000);
    let mut batch = Vec::new();
    for (b, label) in [(0u64, 1usize), (1, 2)] {
        let cloud = random_cloud(40, seed * 10 + b);
        let mut s = odf_net::prepare_sample(&cloud, &bank, mode, mode.default_alignment(), 6).unwrap();
        if b == 1 {
            s.keep = Some((0..40).filter(|i| i % 2 == 0).collect());
        }
        batch.push((s, label));
    }
    let (_, grad) = odf_net::loss_and_grads(&net, &batch).unwrap();
    let analytic = grad.params();
    let theta = net.params();
    let eval = |p: &[f64]| -> (f64, Vec<u64>) {
        let mut n = net.clone();
        n.set_params(p).unwrap();
        let mut loss = 0.0;
        let mut sig = Vec::new();
        for (s, label) in &batch {
            let cache = n.forward(s).unwrap();
            loss += odf_net::cross_entropy(&cache.logits(), *label).0;
            sig.push(cache.activation_signature());
        }
        (loss / batch.len() as f64, sig)
    };
    let (_, base_sig) = eval(&theta);
    let h = 1e-5;
    let mut out = GradCheck {
        params: theta.len(),
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
        max_abs: 0.0,
    };
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        let (lp, sp) = eval(&p);
        p[i] = theta[i] - h;
        let (lm, sm) = eval(&p);
        if sp != base_sig || sm != base_sig {
            out.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        out.checked += 1;
        out.max_rel = out.max_rel.max(rel_error(analytic[i], numeric));
        out.max_abs = out.max_abs.max((analytic[i] - numeric).abs());
    }
    out
}
