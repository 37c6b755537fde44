//! Simplified detection loss of the toy detector: per-class binary
//! cross-entropy on the classification head plus a distribution-focal term
//! on the regression head at positive locations. Gradients are closed-form
//! through the linear heads.

use crate::error::{Error, Result};
use crate::responses::{sigmoid, Location};
use crate::toydet::featurize::FeatureMap;
use crate::toydet::params::DetectorParams;
use crate::toydet::scene::{enclosing_object, SyntheticScene};

/// f64 working copy of the detector heads.
#[derive(Debug, Clone)]
pub(crate) struct DenseParams {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub reg_cols: usize,
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
    pub w_reg: Vec<f64>,
    pub b_reg: Vec<f64>,
}

impl DenseParams {
    pub fn from_params(p: &DetectorParams) -> Self {
        DenseParams {
            feature_dim: p.feature_dim,
            num_classes: p.num_classes(),
            reg_cols: 4 * p.bins,
            w_cls: p.w_cls.iter().map(|&v| v as f64).collect(),
            b_cls: p.b_cls.iter().map(|&v| v as f64).collect(),
            w_reg: p.w_reg.iter().map(|&v| v as f64).collect(),
            b_reg: p.b_reg.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_params(&self, class_ids: Vec<u32>, bins: usize) -> DetectorParams {
        DetectorParams {
            class_ids,
            feature_dim: self.feature_dim,
            bins,
            w_cls: self.w_cls.iter().map(|&v| v as f32).collect(),
            b_cls: self.b_cls.iter().map(|&v| v as f32).collect(),
            w_reg: self.w_reg.iter().map(|&v| v as f32).collect(),
            b_reg: self.b_reg.iter().map(|&v| v as f32).collect(),
        }
    }

    /// Linear forward over all locations: classification and regression
    /// logits, location-major.
    pub fn forward(&self, feats: &[f64], num_locations: usize) -> (Vec<f64>, Vec<f64>) {
        let (f_dim, k, r) = (self.feature_dim, self.num_classes, self.reg_cols);
        let mut z_cls = vec![0.0f64; num_locations * k];
        let mut z_reg = vec![0.0f64; num_locations * r];
        for l in 0..num_locations {
            let feat = &feats[l * f_dim..(l + 1) * f_dim];
            let zc = &mut z_cls[l * k..(l + 1) * k];
            zc.copy_from_slice(&self.b_cls);
            let zr = &mut z_reg[l * r..(l + 1) * r];
            zr.copy_from_slice(&self.b_reg);
            for (f, &x) in feat.iter().enumerate() {
                let wc = &self.w_cls[f * k..(f + 1) * k];
                for (c, &w) in wc.iter().enumerate() {
                    zc[c] += x * w;
                }
                let wr = &self.w_reg[f * r..(f + 1) * r];
                for (c, &w) in wr.iter().enumerate() {
                    zr[c] += x * w;
                }
            }
        }
        (z_cls, z_reg)
    }
}

pub(crate) fn features_f64(fm: &FeatureMap) -> Vec<f64> {
    let f_dim = fm.feature_dim();
    let mut out = Vec::with_capacity(fm.num_locations() * f_dim);
    for l in 0..fm.num_locations() {
        out.extend(fm.row(l).iter().map(|&v| v as f64));
    }
    out
}

/// Regression/classification target of a positive location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignedTarget {
    /// Column of the enclosing object's class in the detector's class list.
    pub class_col: usize,
    /// Edge distances (top, bottom, left, right) normalized by stride and
    /// clamped to [0, bins - 1].
    pub edges: [f64; 4],
    pub clamped: bool,
}

/// Assign ground truth to grid locations: a location is positive for the
/// object containing it, nearest object center winning ties.
pub(crate) fn assign_targets(
    scene: &SyntheticScene,
    locations: &[Location],
    class_ids: &[u32],
    bins: usize,
) -> Result<Vec<Option<AssignedTarget>>> {
    let max_bin = (bins - 1) as f64;
    let mut out = Vec::with_capacity(locations.len());
    for loc in locations {
        let assigned = match enclosing_object(scene, loc.x, loc.y) {
            None => None,
            Some(obj_idx) => {
                let obj = &scene.objects[obj_idx];
                let class_col = class_ids
                    .iter()
                    .position(|&c| c == obj.class_id)
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "scene object class {} is unknown to this detector",
                            obj.class_id
                        ))
                    })?;
                let b = &obj.bounds;
                let s = loc.stride as f64;
                let raw = [
                    (loc.y - b.y1) as f64 / s,
                    (b.y2 - loc.y) as f64 / s,
                    (loc.x - b.x1) as f64 / s,
                    (b.x2 - loc.x) as f64 / s,
                ];
                let mut clamped = false;
                let mut edges = [0.0f64; 4];
                for (i, &d) in raw.iter().enumerate() {
                    if d > max_bin {
                        clamped = true;
                        edges[i] = max_bin;
                    } else {
                        edges[i] = d.max(0.0);
                    }
                }
                Some(AssignedTarget {
                    class_col,
                    edges,
                    clamped,
                })
            }
        };
        out.push(assigned);
    }
    Ok(out)
}

/// Numerically stable binary cross-entropy with logits and its d/dz.
fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

pub(crate) struct SceneDz {
    pub loss: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub dz_cls: Vec<f64>,
    pub dz_reg: Vec<f64>,
    pub clamped_edges: usize,
}

/// Loss and logit gradients for one scene. Both terms are summed over
/// locations and normalized by the positive-location count, the way dense
/// detection losses are usually averaged over foreground anchors.
pub(crate) fn model_loss_dz(
    z_cls: &[f64],
    z_reg: &[f64],
    targets: &[Option<AssignedTarget>],
    num_classes: usize,
    bins: usize,
) -> SceneDz {
    let num_pos = targets.iter().filter(|t| t.is_some()).count();
    let inv_l = 1.0 / (num_pos.max(1)) as f64;
    let mut dz_cls = vec![0.0f64; z_cls.len()];
    let mut dz_reg = vec![0.0f64; z_reg.len()];
    let mut cls_term = 0.0f64;
    let mut reg_term = 0.0f64;
    let mut clamped_edges = 0usize;

    for (l, target) in targets.iter().enumerate() {
        let zc = &z_cls[l * num_classes..(l + 1) * num_classes];
        for c in 0..num_classes {
            let y = match target {
                Some(t) if t.class_col == c => 1.0,
                _ => 0.0,
            };
            let (loss, dz) = bce_with_logits(zc[c], y);
            cls_term += loss * inv_l;
            dz_cls[l * num_classes + c] = dz * inv_l;
        }

        let Some(t) = target else { continue };
        if t.clamped {
            clamped_edges += 1;
        }
        for (e, &d) in t.edges.iter().enumerate() {
            let base = (l * 4 + e) * bins;
            let z = &z_reg[base..base + bins];
            // two-hot distribution-focal target bracketing d
            let k0 = d.floor() as usize;
            let (k0, k1, w1) = if k0 >= bins - 1 {
                (bins - 1, bins - 1, 0.0)
            } else {
                (k0, k0 + 1, d - k0 as f64)
            };
            let w0 = 1.0 - w1;
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            let log_p = |j: usize| z[j] - max - lse;
            let loss = -(w0 * log_p(k0) + w1 * log_p(k1));
            reg_term += loss * inv_l;
            for j in 0..bins {
                let p = log_p(j).exp();
                let target_j =
                    if j == k0 { w0 } else { 0.0 } + if j == k1 && k1 != k0 { w1 } else { 0.0 };
                dz_reg[base + j] = (p - target_j) * inv_l;
            }
        }
    }

    SceneDz {
        loss: cls_term + reg_term,
        cls_term,
        reg_term,
        dz_cls,
        dz_reg,
        clamped_edges,
    }
}

/// Gradients of a scene loss with respect to every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub w_cls: Vec<f64>,
    pub b_cls: Vec<f64>,
    pub w_reg: Vec<f64>,
    pub b_reg: Vec<f64>,
}

impl ParamGradients {
    pub(crate) fn zeros(feature_dim: usize, num_classes: usize, reg_cols: usize) -> Self {
        ParamGradients {
            w_cls: vec![0.0; feature_dim * num_classes],
            b_cls: vec![0.0; num_classes],
            w_reg: vec![0.0; feature_dim * reg_cols],
            b_reg: vec![0.0; reg_cols],
        }
    }
}

/// Push logit gradients through the linear heads.
pub(crate) fn project_gradients(
    feats: &[f64],
    feature_dim: usize,
    dz_cls: &[f64],
    num_classes: usize,
    dz_reg: &[f64],
    reg_cols: usize,
) -> ParamGradients {
    let num_locations = feats.len() / feature_dim;
    let mut g = ParamGradients::zeros(feature_dim, num_classes, reg_cols);
    for l in 0..num_locations {
        let feat = &feats[l * feature_dim..(l + 1) * feature_dim];
        let dzc = &dz_cls[l * num_classes..(l + 1) * num_classes];
        let dzr = &dz_reg[l * reg_cols..(l + 1) * reg_cols];
        for c in 0..num_classes {
            g.b_cls[c] += dzc[c];
        }
        for c in 0..reg_cols {
            g.b_reg[c] += dzr[c];
        }
        for (f, &x) in feat.iter().enumerate() {
            let wc = &mut g.w_cls[f * num_classes..(f + 1) * num_classes];
            for (c, w) in wc.iter_mut().enumerate() {
                *w += x * dzc[c];
            }
            let wr = &mut g.w_reg[f * reg_cols..(f + 1) * reg_cols];
            for (c, w) in wr.iter_mut().enumerate() {
                *w += x * dzr[c];
            }
        }
    }
    g
}

/// The simplified detection loss of one scene and its parameter gradients.
#[derive(Debug, Clone)]
pub struct ModelLoss {
    pub loss: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub gradients: ParamGradients,
    /// Positive locations whose true edge distance overflowed the bin range
    /// and was clamped to the last bin.
    pub clamped_edges: usize,
}

/// Evaluate the simplified detection loss for one scene.
pub fn model_loss(
    params: &DetectorParams,
    features: &FeatureMap,
    scene: &SyntheticScene,
) -> Result<ModelLoss> {
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
    let targets = assign_targets(scene, features.locations(), &params.class_ids, params.bins)?;
    let (z_cls, z_reg) = dense.forward(&feats, features.num_locations());
    let dz = model_loss_dz(&z_cls, &z_reg, &targets, dense.num_classes, params.bins);
    if dz.clamped_edges > 0 {
        log::debug!(
            "scene {}: {} positive locations had edge distances clamped to the last bin",
            scene.seed,
            dz.clamped_edges
        );
    }
    let gradients = project_gradients(
        &feats,
        dense.feature_dim,
        &dz.dz_cls,
        dense.num_classes,
        &dz.dz_reg,
        dense.reg_cols,
    );
    Ok(ModelLoss {
        loss: dz.loss,
        cls_term: dz.cls_term,
        reg_term: dz.reg_term,
        gradients,
        clamped_edges: dz.clamped_edges,
    })
}
