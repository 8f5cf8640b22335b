//! Augmentation, batched gradients, SGD training, evaluation and voting.
//!
//! Randomness comes from independent ChaCha8 streams keyed by
//! `(seed, purpose, epoch, sample)`. Rotations for the z/SO3 scenarios use
//! their own purpose key, so two runs that differ only in the rotation
//! scenario see the same scaling, flips and deletion masks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use odf_core::rng::{seeded, OdfRng};
use odf_core::{par, AlignmentMode, ConeBank, PointCloud};

use crate::error::{NetError, Result};
use crate::features::{prepare_sample, NetMode, SampleInput};
use crate::model::{cross_entropy, softmax, MiniOdfNet, NetConfig};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_ROTATE: u64 = 4;
const STREAM_TEST_ROTATE: u64 = 5;
const STREAM_VOTE: u64 = 6;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> OdfRng {
    seeded(mix(mix(mix(seed ^ mix(purpose)) ^ a) ^ b))
}

/// Random rotation applied on top of the augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationAug {
    None,
    /// Uniform angle about z.
    Z,
    /// Uniform over SO(3).
    So3,
}

impl fmt::Display for RotationAug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationAug::None => "none",
            RotationAug::Z => "z",
            RotationAug::So3 => "so3",
        })
    }
}

impl FromStr for RotationAug {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RotationAug::None),
            "z" => Ok(RotationAug::Z),
            "so3" => Ok(RotationAug::So3),
            other => Err(format!("unknown rotation '{other}' (none|z|so3)")),
        }
    }
}

pub fn random_rotation(kind: RotationAug, rng: &mut impl Rng) -> Matrix3<f64> {
    match kind {
        RotationAug::None => Matrix3::identity(),
        RotationAug::Z => {
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
        }
        RotationAug::So3 => {
            let q = Quaternion::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
        }
    }
}

pub fn rotate_cloud(cloud: &PointCloud, r: &Matrix3<f64>) -> PointCloud {
    cloud.map_points(|p| r * p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Per-axis scale factors drawn uniformly from `[lo, hi]`.
    pub scale_range: Option<(f64, f64)>,
    /// Independent sign flips of x and y, each with probability 1/2.
    pub flip_xy: bool,
    /// Rotation about z by a uniform multiple of 90°.
    pub rot90: bool,
    /// Only half of the points enter the final block.
    pub half_deletion: bool,
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self {
            scale_range: None,
            flip_xy: false,
            rot90: false,
            half_deletion: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.scale_range {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(NetError::Config(format!("scale range needs 0 < lo <= hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_range: Some((0.8, 1.25)),
            flip_xy: true,
            rot90: true,
            half_deletion: true,
        }
    }
}

/// One draw of the point-level augmentations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub scale: [f64; 3],
    pub flip_x: bool,
    pub flip_y: bool,
    /// Number of quarter turns about z.
    pub quarter_turns: u8,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            scale: [1.0; 3],
            flip_x: false,
            flip_y: false,
            quarter_turns: 0,
        }
    }

    /// Scales, flips and the quarter turn, drawn in that order.
    pub fn sample(config: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let mut d = Self::identity();
        if let Some((lo, hi)) = config.scale_range {
            for s in &mut d.scale {
                *s = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            }
        }
        if config.flip_xy {
            d.flip_x = rng.random::<bool>();
            d.flip_y = rng.random::<bool>();
        }
        if config.rot90 {
            d.quarter_turns = rng.random_range(0..4u8);
        }
        d
    }

    /// Scale, then flip, then turn.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let sx = if self.flip_x { -self.scale[0] } else { self.scale[0] };
        let sy = if self.flip_y { -self.scale[1] } else { self.scale[1] };
        let sz = self.scale[2];
        cloud.map_points(|p| {
            let (x, y, z) = (p.x * sx, p.y * sy, p.z * sz);
            let (x, y) = match self.quarter_turns % 4 {
                0 => (x, y),
                1 => (-y, x),
                2 => (-x, -y),
                _ => (y, -x),
            };
            odf_core::Point3::new(x, y, z)
        })
    }
}

/// Scaling, flips and 90° turns drawn from `rng`.
pub fn augment(cloud: &PointCloud, config: &AugmentConfig, rng: &mut impl Rng) -> PointCloud {
    AugmentDraw::sample(config, rng).apply(cloud)
}

/// Sorted indices of the `n / 2` points (at least one) that survive deletion.
pub fn deletion_mask(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let keep = (n / 2).max(1);
    let mut idx = rand::seq::index::sample(rng, n, keep).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub rotation: RotationAug,
    /// ODF alignment; `None` picks the mode's default (RI-XY for standard,
    /// RI-XYZ for xyz).
    pub alignment: Option<AlignmentMode>,
    pub votes: usize,
    pub vote_scale: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 29,
            augment: AugmentConfig::default(),
            rotation: RotationAug::None,
            alignment: None,
            votes: 5,
            vote_scale: (0.8, 1.25),
        }
    }
}

impl TrainConfig {
    pub fn alignment_for(&self, mode: NetMode) -> AlignmentMode {
        self.alignment.unwrap_or(mode.default_alignment())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.votes == 0 {
            return Err(NetError::Config("epochs, batch size and votes must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        let (lo, hi) = self.vote_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(NetError::Config(format!("vote scale needs 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        self.augment.validate()
    }
}

/// Mean cross-entropy over the batch and the summed gradient. Samples are
/// evaluated in parallel; gradients are added in batch order.
pub fn loss_and_grads(net: &MiniOdfNet, batch: &[(SampleInput, usize)]) -> Result<(f64, MiniOdfNet)> {
    if batch.is_empty() {
        return Err(NetError::Shape("empty batch".into()));
    }
    if let Some((_, label)) = batch.iter().find(|(_, l)| *l >= net.config.classes) {
        return Err(NetError::Shape(format!("label {label} >= class count {}", net.config.classes)));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample = par::map_indexed(batch.len(), |i| -> Result<(f64, MiniOdfNet)> {
        let (sample, label) = &batch[i];
        let cache = net.forward(sample)?;
        let (loss, mut d) = cross_entropy(&cache.logits(), *label);
        if !loss.is_finite() {
            return Err(NetError::NonFiniteLoss { sample: i, loss });
        }
        d.iter_mut().for_each(|v| *v *= scale);
        let mut grad = net.zeros_like();
        net.backward(sample, &cache, &d, &mut grad);
        Ok((loss, grad))
    });
    let mut total = net.zeros_like();
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per step.
    pub step_losses: Vec<f64>,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// The augmented, rotated training view of sample `id` in `epoch`.
pub fn training_sample(
    cloud: &PointCloud,
    config: &TrainConfig,
    net_config: &NetConfig,
    bank: &ConeBank,
    epoch: usize,
    id: usize,
) -> Result<SampleInput> {
    let mut aug_rng = stream(config.seed, STREAM_AUGMENT, epoch as u64, id as u64);
    let mut rot_rng = stream(config.seed, STREAM_ROTATE, epoch as u64, id as u64);
    let augmented = augment(cloud, &config.augment, &mut aug_rng);
    let rotated = rotate_cloud(&augmented, &random_rotation(config.rotation, &mut rot_rng));
    let mut sample = prepare_sample(
        &rotated,
        bank,
        net_config.mode,
        config.alignment_for(net_config.mode),
        net_config.k,
    )?;
    if config.augment.half_deletion {
        sample.keep = Some(deletion_mask(sample.n_points, &mut aug_rng));
    }
    Ok(sample)
}

fn labels(clouds: &[PointCloud], classes: usize) -> Result<Vec<usize>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| match c.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(NetError::Config(format!("cloud {i}: label {l} >= class count {classes}"))),
            None => Err(NetError::Config(format!("cloud {i} has no label"))),
        })
        .collect()
}

/// Trains a fresh network. Deterministic for a given configuration.
pub fn train(
    config: &TrainConfig,
    net_config: &NetConfig,
    train_set: &[PointCloud],
    bank: &ConeBank,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(MiniOdfNet, TrainReport)> {
    config.validate()?;
    net_config.validate()?;
    if bank.direction_count() != net_config.n_directions || bank.scale_count() != net_config.n_scales {
        return Err(NetError::Shape(format!(
            "cone bank is {}x{}, net expects {}x{}",
            bank.direction_count(),
            bank.scale_count(),
            net_config.n_directions,
            net_config.n_scales
        )));
    }
    let y = labels(train_set, net_config.classes)?;
    let mut distinct = y.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(NetError::Config("training set needs at least 2 classes".into()));
    }
    let start = Instant::now();
    let mut net = MiniOdfNet::new(net_config.clone(), &mut stream(config.seed, STREAM_INIT, 0, 0))?;
    let mut velocity = net.zeros_like();
    let mut report = TrainReport {
        step_losses: Vec::new(),
        epoch_losses: Vec::new(),
        seconds: 0.0,
    };
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(config.seed, STREAM_SHUFFLE, epoch as u64, 0));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let prepared = par::map_indexed(chunk.len(), |b| {
                let id = chunk[b];
                training_sample(&train_set[id], config, net_config, bank, epoch, id).map(|s| (s, y[id]))
            });
            let batch: Vec<(SampleInput, usize)> = prepared.into_iter().collect::<Result<_>>()?;
            let (loss, grad) = loss_and_grads(&net, &batch).map_err(|e| match e {
                NetError::NonFiniteLoss { loss, .. } => NetError::Diverged { epoch, step, loss },
                other => other,
            })?;
            velocity.layers_mut().into_iter().zip(grad.layers()).for_each(|(v, (_, g))| {
                v.weight *= config.momentum;
                v.weight += &g.weight;
                v.bias *= config.momentum;
                v.bias += &g.bias;
            });
            net.add_scaled(&velocity, -config.learning_rate);
            if net.params().iter().any(|v| !v.is_finite()) {
                return Err(NetError::Diverged { epoch, step, loss });
            }
            report.step_losses.push(loss);
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        let mean = epoch_loss / train_set.len() as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((net, report))
}

/// Network input for a test cloud, no augmentation.
pub fn inference_sample(net: &MiniOdfNet, cloud: &PointCloud, bank: &ConeBank, alignment: AlignmentMode) -> Result<SampleInput> {
    Ok(prepare_sample(cloud, bank, net.config.mode, alignment, net.config.k)?)
}

/// Softmax probabilities for one cloud.
pub fn predict(net: &MiniOdfNet, cloud: &PointCloud, bank: &ConeBank, alignment: AlignmentMode) -> Result<Vec<f64>> {
    let sample = inference_sample(net, cloud, bank, alignment)?;
    Ok(softmax(&net.logits(&sample)?))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Average of the softmax outputs over `votes` copies with independent
/// per-axis scales from `scale_range`; ODFs are recomputed per copy.
pub fn predict_with_voting(
    net: &MiniOdfNet,
    cloud: &PointCloud,
    bank: &ConeBank,
    alignment: AlignmentMode,
    votes: usize,
    scale_range: (f64, f64),
    rng: &mut impl Rng,
) -> Result<(usize, Vec<f64>)> {
    if votes == 0 {
        return Err(NetError::Config("votes must be positive".into()));
    }
    let config = AugmentConfig {
        scale_range: Some(scale_range),
        ..AugmentConfig::off()
    };
    config.validate()?;
    let mut avg = vec![0.0; net.config.classes];
    for _ in 0..votes {
        let copy = augment(cloud, &config, rng);
        let p = predict(net, &copy, bank, alignment)?;
        avg.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
    }
    avg.iter_mut().for_each(|a| *a /= votes as f64);
    Ok((argmax(&avg), avg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Accuracy on `test`, each cloud rotated by its own draw of `rotation`.
/// With `votes > 1` predictions use [`predict_with_voting`].
pub fn evaluate(
    net: &MiniOdfNet,
    test: &[PointCloud],
    bank: &ConeBank,
    config: &TrainConfig,
    rotation: RotationAug,
    votes: usize,
) -> Result<EvalReport> {
    let y = labels(test, net.config.classes)?;
    if test.is_empty() {
        return Err(NetError::Config("empty test set".into()));
    }
    let alignment = config.alignment_for(net.config.mode);
    let predictions = par::map_indexed(test.len(), |i| -> Result<usize> {
        let r = random_rotation(rotation, &mut stream(config.seed, STREAM_TEST_ROTATE, 0, i as u64));
        let cloud = rotate_cloud(&test[i], &r);
        if votes > 1 {
            let mut rng = stream(config.seed, STREAM_VOTE, 0, i as u64);
            Ok(predict_with_voting(net, &cloud, bank, alignment, votes, config.vote_scale, &mut rng)?.0)
        } else {
            Ok(argmax(&predict(net, &cloud, bank, alignment)?))
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let correct = predictions.iter().zip(&y).filter(|(p, l)| p == l).count();
    Ok(EvalReport {
        accuracy: 100.0 * correct as f64 / test.len() as f64,
        predictions,
    })
}

/// Test accuracy (percent) under the three train/test rotation scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTable {
    pub z_z: f64,
    pub so3_so3: f64,
    pub z_so3: f64,
}

impl ScenarioTable {
    pub fn spread(&self) -> f64 {
        let v = [self.z_z, self.so3_so3, self.z_so3];
        v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min)
    }

    pub fn csv(&self, mode: &str) -> String {
        format!(
            "mode,z/z,SO3/SO3,z/SO3\n{mode},{:.2},{:.2},{:.2}\n",
            self.z_z, self.so3_so3, self.z_so3
        )
    }
}

/// Trains with z and with SO(3) rotations and evaluates both scenarios.
pub fn rotation_scenarios(
    config: &TrainConfig,
    net_config: &NetConfig,
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    bank: &ConeBank,
    mut log: impl FnMut(&str),
) -> Result<ScenarioTable> {
    let z_cfg = TrainConfig {
        rotation: RotationAug::Z,
        ..config.clone()
    };
    let so3_cfg = TrainConfig {
        rotation: RotationAug::So3,
        ..config.clone()
    };
    let (z_net, _) = train(&z_cfg, net_config, train_set, bank, |e, l| log(&format!("z epoch {e} loss {l:.4}")))?;
    let (so3_net, _) = train(&so3_cfg, net_config, train_set, bank, |e, l| {
        log(&format!("so3 epoch {e} loss {l:.4}"))
    })?;
    Ok(ScenarioTable {
        z_z: evaluate(&z_net, test_set, bank, config, RotationAug::Z, 1)?.accuracy,
        so3_so3: evaluate(&so3_net, test_set, bank, config, RotationAug::So3, 1)?.accuracy,
        z_so3: evaluate(&z_net, test_set, bank, config, RotationAug::So3, 1)?.accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use odf_core::Point3;

    fn cloud() -> PointCloud {
        PointCloud::new((0..20).map(|i| Point3::new(i as f64 * 0.1, (i % 3) as f64, -(i as f64).sqrt())).collect())
    }

    #[test]
    fn augment_off_is_identity() {
        let c = cloud();
        assert_eq!(augment(&c, &AugmentConfig::off(), &mut seeded(1)), c);
    }

    #[test]
    fn rot90_keeps_z_and_radius() {
        let c = cloud();
        let cfg = AugmentConfig {
            rot90: true,
            ..AugmentConfig::off()
        };
        for seed in 0..8 {
            let a = augment(&c, &cfg, &mut seeded(seed));
            for (p, q) in c.points.iter().zip(&a.points) {
                assert_eq!(p.z, q.z);
                assert_eq!(p.x.hypot(p.y), q.x.hypot(q.y));
            }
        }
    }

    #[test]
    fn rotations_are_proper() {
        let mut r = seeded(4);
        for kind in [RotationAug::None, RotationAug::Z, RotationAug::So3] {
            let m = random_rotation(kind, &mut r);
            assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deletion_keeps_half() {
        let m = deletion_mask(512, &mut seeded(3));
        assert_eq!(m.len(), 256);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(deletion_mask(1, &mut seeded(3)), vec![0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            augment: AugmentConfig {
                scale_range: Some((1.2, 0.8)),
                ..AugmentConfig::off()
            },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn streams_differ() {
        let a: u64 = stream(1, 2, 3, 4).random();
        let b: u64 = stream(1, 2, 3, 5).random();
        let c: u64 = stream(1, 2, 3, 4).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
