//! Desk-scale ODF point-cloud classifier with hand-written gradients.
//!
//! A cloud becomes a [`SampleInput`] (ODF rows, neighbor graph, geometric
//! channels), which [`MiniOdfNet`] maps to class logits. Training, voting
//! and the rotation-scenario protocol live in [`train`].

pub mod checkpoint;
pub mod contrib;
pub mod error;
pub mod features;
pub mod mlp;
pub mod model;
pub mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint};
pub use contrib::{contribution_map, ContributionMap};
pub use error::{NetError, Result};
pub use features::{
    edge_features, prepare_sample, ri_edge_features, sample_from_field, unique_point_indices, NetMode, SampleInput,
};
pub use mlp::{Activation, Dense, Mlp};
pub use model::{cross_entropy, softmax, DirAggregation, ForwardCache, LayerGroup, MiniOdfNet, NetConfig};
pub use train::{
    augment, deletion_mask, evaluate, inference_sample, loss_and_grads, predict, predict_with_voting, rotation_scenarios, train, AugmentConfig,
    EvalReport, AugmentDraw, RotationAug, ScenarioTable, TrainConfig, TrainReport,
};

use odf_core::{OdfField, PointCloud};

/// Class logits for `cloud` with a precomputed ODF field.
pub fn classifier_forward(net: &MiniOdfNet, cloud: &PointCloud, field: &OdfField) -> Result<Vec<f64>> {
    let sample = sample_from_field(cloud, field, net.config.mode, net.config.k)?;
    net.logits(&sample)
}
