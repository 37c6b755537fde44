//! Plain SGD over the total objective. With a frozen teacher attached, each
//! scene adds the weighted distillation gradients on the old-class and
//! regression channels; selection runs once per scene on the teacher's
//! responses, which do not change during training.

use serde::{Deserialize, Serialize};

use crate::aps::{select_classification, select_regression, SelectionConfig};
use crate::distill::{cls_node_loss_grad, ld_node_loss_grad, DistillationConfig, LossBreakdown};
use crate::error::{Error, Result};
use crate::responses::{ClassScoreMap, EdgeDistributionMap};
use crate::toydet::featurize::FeatureMap;
use crate::toydet::loss::{
    assign_targets, features_f64, model_loss_dz, project_gradients, AssignedTarget, DenseParams,
    ParamGradients,
};
use crate::toydet::params::DetectorParams;
use crate::toydet::scene::SyntheticScene;

/// Distillation wiring for incremental training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillSetup {
    pub distill: DistillationConfig,
    pub selection: SelectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Scenes per epoch when a caller builds the dataset; `train` itself
    /// iterates over whatever scene slice it is given.
    pub scenes_per_epoch: usize,
    pub seed: u64,
    pub distillation: Option<DistillSetup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 30,
            scenes_per_epoch: 200,
            seed: 0,
            distillation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.scenes_per_epoch == 0 {
            return Err(Error::invalid("scenes_per_epoch must be positive"));
        }
        if let Some(setup) = &self.distillation {
            setup.distill.validate()?;
            setup.selection.validate()?;
        }
        Ok(())
    }
}

/// A scene paired with its (fixed) features.
#[derive(Debug, Clone)]
pub struct FeaturizedScene {
    pub scene: SyntheticScene,
    pub features: FeatureMap,
}

/// Per-epoch mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub model: f64,
    pub cls_distill: f64,
    pub bbox_distill: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DetectorParams,
    pub trace: Vec<EpochLoss>,
}

/// Frozen per-scene teacher state: responses and selected node sets.
struct TeacherSceneCtx {
    z_cls: Vec<f64>,
    z_reg: Vec<f64>,
    cls_selected: Vec<usize>,
    box_selected: Vec<usize>,
}

struct DistillContext {
    lambda_cls: f64,
    lambda_bbox: f64,
    setup: DistillSetup,
    /// Student column of each teacher class, in teacher class order.
    student_cols: Vec<usize>,
    teacher_bins: usize,
    per_scene: Vec<TeacherSceneCtx>,
}

fn build_distill_context(
    params: &DetectorParams,
    scenes: &[FeaturizedScene],
    feats: &[Vec<f64>],
    config: &TrainConfig,
    teacher: Option<&DetectorParams>,
) -> Result<Option<DistillContext>> {
    let (Some(teacher), Some(setup)) = (teacher, config.distillation.as_ref()) else {
        return Ok(None);
    };
    let lambda_cls = setup.distill.lambda_cls;
    let lambda_bbox = setup.distill.lambda_bbox;
    if lambda_cls == 0.0 && lambda_bbox == 0.0 {
        return Ok(None);
    }
    teacher.validate()?;
    if teacher.feature_dim != params.feature_dim || teacher.bins != params.bins {
        return Err(Error::shape(format!(
            "teacher head (F={}, n={}) does not match student head (F={}, n={})",
            teacher.feature_dim, teacher.bins, params.feature_dim, params.bins
        )));
    }
    let student_cols: Vec<usize> = teacher
        .class_ids
        .iter()
        .map(|&c| {
            params.class_index(c).ok_or_else(|| {
                Error::invalid(format!("student does not cover teacher class {c}"))
            })
        })
        .collect::<Result<_>>()?;

    let dense_teacher = DenseParams::from_params(teacher);
    let mut per_scene = Vec::with_capacity(scenes.len());
    for (fs, f64s) in scenes.iter().zip(feats) {
        let l = fs.features.num_locations();
        let (z_cls, z_reg) = dense_teacher.forward(f64s, l);
        let locations = fs.features.locations().to_vec();
        let cls_selected = if lambda_cls > 0.0 {
            let map = ClassScoreMap::new(
                z_cls.iter().map(|&v| v as f32).collect(),
                locations.clone(),
                teacher.class_ids.clone(),
            )?;
            select_classification(
                &map,
                &teacher.class_ids,
                &setup.selection,
                setup.distill.temperature_cls,
            )?
            .entries
            .iter()
            .map(|e| e.location)
            .collect()
        } else {
            Vec::new()
        };
        let box_selected = if lambda_bbox > 0.0 {
            let map = EdgeDistributionMap::new(
                z_reg.iter().map(|&v| v as f32).collect(),
                locations,
                teacher.bins,
            )?;
            select_regression(&map, &setup.selection)?
                .entries
                .iter()
                .map(|e| e.location)
                .collect()
        } else {
            Vec::new()
        };
        per_scene.push(TeacherSceneCtx {
            z_cls,
            z_reg,
            cls_selected,
            box_selected,
        });
    }
    Ok(Some(DistillContext {
        lambda_cls,
        lambda_bbox,
        setup: *setup,
        student_cols,
        teacher_bins: teacher.bins,
        per_scene,
    }))
}

/// One scene's total loss and logit gradients under the current student.
fn eval_scene(
    dense: &DenseParams,
    feats: &[f64],
    num_locations: usize,
    targets: &[Option<AssignedTarget>],
    bins: usize,
    distill: Option<(&DistillContext, &TeacherSceneCtx)>,
) -> (LossBreakdown, Vec<f64>, Vec<f64>) {
    let (z_cls, z_reg) = dense.forward(feats, num_locations);
    let model = model_loss_dz(&z_cls, &z_reg, targets, dense.num_classes, bins);
    let mut dz_cls = model.dz_cls;
    let mut dz_reg = model.dz_reg;
    let mut cls_loss = 0.0f64;
    let mut bbox_loss = 0.0f64;
    let (mut lambda_cls, mut lambda_bbox) = (0.0f64, 0.0f64);

    if let Some((ctx, scene_ctx)) = distill {
        lambda_cls = ctx.lambda_cls;
        lambda_bbox = ctx.lambda_bbox;
        let cfg = &ctx.setup.distill;
        let k_teacher = ctx.student_cols.len();
        let k_student = dense.num_classes;

        if lambda_cls > 0.0 && !scene_ctx.cls_selected.is_empty() {
            let m = scene_ctx.cls_selected.len() as f64;
            let norm = if cfg.normalize_by_count { 1.0 / m } else { 1.0 };
            for &l in &scene_ctx.cls_selected {
                let s_row = &z_cls[l * k_student..(l + 1) * k_student];
                let t_row = &scene_ctx.z_cls[l * k_teacher..(l + 1) * k_teacher];
                let (node_loss, node_grad) =
                    cls_node_loss_grad(s_row, &ctx.student_cols, t_row, cfg.temperature_cls);
                cls_loss += node_loss * norm;
                for (c, g) in node_grad.iter().enumerate() {
                    dz_cls[l * k_student + c] += lambda_cls * norm * g;
                }
            }
        }

        if lambda_bbox > 0.0 && !scene_ctx.box_selected.is_empty() {
            let j = scene_ctx.box_selected.len() as f64;
            let norm = if cfg.normalize_by_count { 1.0 / j } else { 1.0 };
            let nb = ctx.teacher_bins;
            for &l in &scene_ctx.box_selected {
                for e in 0..4 {
                    let base = (l * 4 + e) * nb;
                    let s_row = &z_reg[base..base + nb];
                    let t_row = &scene_ctx.z_reg[base..base + nb];
                    let (edge_loss, edge_grad) =
                        ld_node_loss_grad(s_row, t_row, cfg.temperature_reg, cfg.kl_direction);
                    bbox_loss += edge_loss * norm;
                    for (i, g) in edge_grad.iter().enumerate() {
                        dz_reg[base + i] += lambda_bbox * norm * g;
                    }
                }
            }
        }
    }

    let breakdown = LossBreakdown {
        model_loss: model.loss,
        cls_distill: cls_loss,
        bbox_distill: bbox_loss,
        total: model.loss + lambda_cls * cls_loss + lambda_bbox * bbox_loss,
    };
    (breakdown, dz_cls, dz_reg)
}

fn sgd_step(dense: &mut DenseParams, g: &ParamGradients, lr: f64) {
    for (w, g) in dense.w_cls.iter_mut().zip(&g.w_cls) {
        *w -= lr * g;
    }
    for (w, g) in dense.b_cls.iter_mut().zip(&g.b_cls) {
        *w -= lr * g;
    }
    for (w, g) in dense.w_reg.iter_mut().zip(&g.w_reg) {
        *w -= lr * g;
    }
    for (w, g) in dense.b_reg.iter_mut().zip(&g.b_reg) {
        *w -= lr * g;
    }
}

fn check_scenes(params: &DetectorParams, scenes: &[FeaturizedScene]) -> Result<()> {
    for fs in scenes {
        if fs.features.feature_dim() != params.feature_dim {
            return Err(Error::shape(format!(
                "scene features have dim {}, detector expects {}",
                fs.features.feature_dim(),
                params.feature_dim
            )));
        }
    }
    Ok(())
}

/// Train by plain SGD for `config.epochs` passes over `scenes`, in order.
/// Deterministic: no randomness beyond what the inputs carry.
pub fn train(
    params: &DetectorParams,
    scenes: &[FeaturizedScene],
    config: &TrainConfig,
    teacher: Option<&DetectorParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    check_scenes(params, scenes)?;
    if scenes.is_empty() && config.epochs > 0 {
        return Err(Error::invalid("training requires at least one scene"));
    }

    let feats: Vec<Vec<f64>> = scenes.iter().map(|fs| features_f64(&fs.features)).collect();
    let targets: Vec<Vec<Option<AssignedTarget>>> = scenes
        .iter()
        .map(|fs| {
            assign_targets(
                &fs.scene,
                fs.features.locations(),
                &params.class_ids,
                params.bins,
            )
        })
        .collect::<Result<_>>()?;
    let distill_ctx = build_distill_context(params, scenes, &feats, config, teacher)?;

    let mut dense = DenseParams::from_params(params);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sums = EpochLoss {
            model: 0.0,
            cls_distill: 0.0,
            bbox_distill: 0.0,
            total: 0.0,
        };
        for (i, fs) in scenes.iter().enumerate() {
            let distill = distill_ctx.as_ref().map(|ctx| (ctx, &ctx.per_scene[i]));
            let (breakdown, dz_cls, dz_reg) = eval_scene(
                &dense,
                &feats[i],
                fs.features.num_locations(),
                &targets[i],
                params.bins,
                distill,
            );
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    scene: i,
                    loss: breakdown.total,
                });
            }
            let g = project_gradients(
                &feats[i],
                dense.feature_dim,
                &dz_cls,
                dense.num_classes,
                &dz_reg,
                dense.reg_cols,
            );
            sgd_step(&mut dense, &g, config.learning_rate);
            sums.model += breakdown.model_loss;
            sums.cls_distill += breakdown.cls_distill;
            sums.bbox_distill += breakdown.bbox_distill;
            sums.total += breakdown.total;
        }
        let n = scenes.len() as f64;
        trace.push(EpochLoss {
            model: sums.model / n,
            cls_distill: sums.cls_distill / n,
            bbox_distill: sums.bbox_distill / n,
            total: sums.total / n,
        });
    }
    Ok(TrainOutcome {
        params: dense.to_params(params.class_ids.clone(), params.bins),
        trace,
    })
}

/// The total objective and its parameter gradients for one scene, without
/// updating anything. Diagnostic/test surface for the training step.
pub fn scene_loss(
    params: &DetectorParams,
    fs: &FeaturizedScene,
    config: &TrainConfig,
    teacher: Option<&DetectorParams>,
) -> Result<(LossBreakdown, ParamGradients)> {
    config.validate()?;
    params.validate()?;
    let scenes = std::slice::from_ref(fs);
    check_scenes(params, scenes)?;
    let feats = vec![features_f64(&fs.features)];
    let targets = assign_targets(
        &fs.scene,
        fs.features.locations(),
        &params.class_ids,
        params.bins,
    )?;
    let distill_ctx = build_distill_context(params, scenes, &feats, config, teacher)?;
    let dense = DenseParams::from_params(params);
    let distill = distill_ctx.as_ref().map(|ctx| (ctx, &ctx.per_scene[0]));
    let (breakdown, dz_cls, dz_reg) = eval_scene(
        &dense,
        &feats[0],
        fs.features.num_locations(),
        &targets,
        params.bins,
        distill,
    );
    let g = project_gradients(
        &feats[0],
        dense.feature_dim,
        &dz_cls,
        dense.num_classes,
        &dz_reg,
        dense.reg_cols,
    );
    Ok((breakdown, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toydet::featurize::{Featurizer, ToyLayout};
    use crate::toydet::scene::generate_scene;

    fn dataset(featurizer: &Featurizer, classes: &[u32], count: usize, base: u64) -> Vec<FeaturizedScene> {
        (0..count)
            .map(|i| {
                let scene = generate_scene(base + i as u64, classes, 64.0).unwrap();
                let features = featurizer.featurize(&scene);
                FeaturizedScene { scene, features }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_params_unchanged() {
        let layout = ToyLayout::default();
        let f = Featurizer::new(layout, &[0, 1]).unwrap();
        let scenes = dataset(&f, &[0, 1], 3, 10);
        let params = DetectorParams::init(1, &[0, 1], layout.feature_dim, layout.bins).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&params, &scenes, &cfg, None).unwrap();
        assert_eq!(out.params, params);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let layout = ToyLayout::default();
        let f = Featurizer::new(layout, &[0, 1]).unwrap();
        let scenes = dataset(&f, &[0, 1], 10, 20);
        let params = DetectorParams::init(1, &[0, 1], layout.feature_dim, layout.bins).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            scenes_per_epoch: 10,
            ..TrainConfig::default()
        };
        let a = train(&params, &scenes, &cfg, None).unwrap();
        let b = train(&params, &scenes, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn zero_lambdas_match_teacherless_training_bit_for_bit() {
        let layout = ToyLayout::default();
        let f = Featurizer::new(layout, &[0, 1, 2, 3]).unwrap();
        let teacher = {
            let scenes = dataset(&f, &[0, 1], 10, 30);
            let p0 = DetectorParams::init(2, &[0, 1], layout.feature_dim, layout.bins).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                scenes_per_epoch: 10,
                ..TrainConfig::default()
            };
            train(&p0, &scenes, &cfg, None).unwrap().params
        };
        let student0 = teacher.expand_for_classes(&[2, 3], 7).unwrap();
        let scenes = dataset(&f, &[2, 3], 10, 60);
        let plain_cfg = TrainConfig {
            epochs: 3,
            scenes_per_epoch: 10,
            ..TrainConfig::default()
        };
        let zero_cfg = TrainConfig {
            distillation: Some(DistillSetup {
                distill: DistillationConfig {
                    lambda_cls: 0.0,
                    lambda_bbox: 0.0,
                    ..DistillationConfig::default()
                },
                selection: SelectionConfig::default(),
            }),
            ..plain_cfg.clone()
        };
        let plain = train(&student0, &scenes, &plain_cfg, None).unwrap();
        let zeroed = train(&student0, &scenes, &zero_cfg, Some(&teacher)).unwrap();
        assert_eq!(plain.params, zeroed.params);
        assert_eq!(plain.trace, zeroed.trace);
    }

    #[test]
    fn distillation_losses_start_at_zero_when_student_is_teacher() {
        let layout = ToyLayout::default();
        let f = Featurizer::new(layout, &[0, 1]).unwrap();
        let scenes = dataset(&f, &[0, 1], 4, 40);
        let teacher = DetectorParams::init(5, &[0, 1], layout.feature_dim, layout.bins).unwrap();
        let cfg = TrainConfig {
            distillation: Some(DistillSetup {
                distill: DistillationConfig::default(),
                selection: SelectionConfig::default(),
            }),
            ..TrainConfig::default()
        };
        let (breakdown, _) = scene_loss(&teacher, &scenes[0], &cfg, Some(&teacher)).unwrap();
        assert!(breakdown.cls_distill.abs() < 1e-18);
        assert!(breakdown.bbox_distill.abs() < 1e-18);
    }

    #[test]
    fn teacher_class_outside_student_is_rejected() {
        let layout = ToyLayout::default();
        let f = Featurizer::new(layout, &[0, 1, 9]).unwrap();
        let teacher = DetectorParams::init(5, &[0, 9], layout.feature_dim, layout.bins).unwrap();
        let student = DetectorParams::init(5, &[0, 1], layout.feature_dim, layout.bins).unwrap();
        let scenes = dataset(&f, &[0, 1], 2, 50);
        let cfg = TrainConfig {
            epochs: 1,
            distillation: Some(DistillSetup {
                distill: DistillationConfig::default(),
                selection: SelectionConfig::default(),
            }),
            ..TrainConfig::default()
        };
        assert!(train(&student, &scenes, &cfg, Some(&teacher)).is_err());
    }
}
