//! A minimal deterministic dense detector: synthetic scenes, a fixed
//! featurizer, linear classification and distribution-regression heads, a
//! simplified detection loss, and an SGD trainer. Small enough to train in
//! seconds, structured enough to exhibit catastrophic forgetting and its
//! mitigation.

mod detect;
mod featurize;
mod loss;
mod params;
mod scene;
mod train;

pub use detect::detect;
pub use featurize::{FeatureMap, Featurizer, ToyLayout};
pub use loss::{model_loss, AssignedTarget, ModelLoss, ParamGradients};
pub use params::{read_params, write_params, DetectorParams, PARAMS_MAGIC, PARAMS_VERSION};
pub use scene::{
    enclosing_object, generate_scene, SceneObject, SyntheticScene, MAX_OBJECTS, MAX_SIDE,
    MIN_OBJECTS, MIN_SIDE,
};
pub use train::{
    scene_loss, train, DistillSetup, EpochLoss, FeaturizedScene, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::responses::{ClassScoreMap, EdgeDistributionMap};

use loss::{features_f64, DenseParams};

/// Head forward pass producing the response maps other modules consume.
pub fn forward(
    params: &DetectorParams,
    features: &FeatureMap,
) -> Result<(ClassScoreMap, EdgeDistributionMap)> {
    params.validate()?;
    if features.feature_dim() != params.feature_dim {
        return Err(Error::shape(format!(
            "features have dim {}, detector expects {}",
            features.feature_dim(),
            params.feature_dim
        )));
    }
    let dense = DenseParams::from_params(params);
    let feats = features_f64(features);
    let (z_cls, z_reg) = dense.forward(&feats, features.num_locations());
    let locations = features.locations().to_vec();
    let class_map = ClassScoreMap::new(
        z_cls.iter().map(|&v| v as f32).collect(),
        locations.clone(),
        params.class_ids.clone(),
    )?;
    let edge_map = EdgeDistributionMap::new(
        z_reg.iter().map(|&v| v as f32).collect(),
        locations,
        params.bins,
    )?;
    Ok((class_map, edge_map))
}
