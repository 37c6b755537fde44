//! Inference: sigmoid class scores, box decoding at locations above the
//! score threshold, and per-class NMS.

use crate::aps::nms;
use crate::error::{Error, Result};
use crate::responses::{sigmoid, tempered_softmax, BBox};
use crate::toydet::featurize::FeatureMap;
use crate::toydet::loss::{features_f64, DenseParams};
use crate::toydet::params::DetectorParams;

/// Run the detector on one scene's features.
pub fn detect(
    params: &DetectorParams,
    features: &FeatureMap,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<BBox>> {
    params.validate()?;
    if !(score_threshold > 0.0 && score_threshold < 1.0) {
        return Err(Error::invalid(format!(
            "score_threshold must be in (0, 1), got {score_threshold}"
        )));
    }
    if !(nms_iou > 0.0 && nms_iou <= 1.0) {
        return Err(Error::invalid(format!(
            "nms_iou must be in (0, 1], got {nms_iou}"
        )));
    }
    if features.feature_dim() != params.feature_dim {
        return Err(Error::shape(format!(
            "features have dim {}, detector expects {}",
            features.feature_dim(),
            params.feature_dim
        )));
    }

    let dense = DenseParams::from_params(params);
    let feats = features_f64(features);
    let num_locations = features.num_locations();
    let (z_cls, z_reg) = dense.forward(&feats, num_locations);
    let k = dense.num_classes;
    let bins = params.bins;

    // geometry decoded lazily, once per location
    let mut decoded: Vec<Option<BBox>> = vec![None; num_locations];
    let mut per_class: Vec<Vec<BBox>> = vec![Vec::new(); k];
    for l in 0..num_locations {
        for c in 0..k {
            let score = sigmoid(z_cls[l * k + c]);
            if score < score_threshold {
                continue;
            }
            if decoded[l].is_none() {
                let mut rows: Vec<Vec<f64>> = Vec::with_capacity(4);
                for e in 0..4 {
                    let base = (l * 4 + e) * bins;
                    let row: Vec<f64> = z_reg[base..base + bins].to_vec();
                    rows.push(tempered_softmax(&row, 1.0)?);
                }
                decoded[l] = Some(crate::responses::decode_box(
                    [&rows[0], &rows[1], &rows[2], &rows[3]],
                    &features.locations()[l],
                )?);
            }
            let geom = decoded[l].expect("decoded above");
            per_class[c].push(BBox {
                score: score as f32,
                class_id: params.class_ids[c],
                ..geom
            });
        }
    }

    let mut out = Vec::new();
    for candidates in per_class {
        out.extend(nms(&candidates, nms_iou));
    }
    Ok(out)
}
