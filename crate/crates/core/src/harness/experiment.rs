//! Incremental-learning experiment runner: a two-phase class-split protocol
//! over the toy detector, per-mode distillation wiring, AP evaluation on a
//! held-out mixed scene set, and the response-distance diagnostic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aps::{SelectionConfig, SelectionMode};
use crate::distill::DistillationConfig;
use crate::error::{Error, Result};
use crate::harness::ap::{evaluate_ap, ApSummary, ClassAp};
use crate::responses::BBox;
use crate::rng::mix_seed;
use crate::toydet::{
    detect, generate_scene, train, DetectorParams, DistillSetup, EpochLoss, FeaturizedScene,
    Featurizer, ToyLayout, TrainConfig,
};

// Stream tags for deriving independent seeds per run seed.
const STREAM_TEACHER_INIT: u64 = 0x01;
const STREAM_EXPAND: u64 = 0x02;
const STREAM_UPPER_INIT: u64 = 0x03;
const STREAM_PHASE1: u64 = 0x10;
const STREAM_PHASE2: u64 = 0x11;
const STREAM_JOINT: u64 = 0x12;
const STREAM_EVAL: u64 = 0x13;

/// Phase-2 training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Joint training on all classes from scratch.
    UpperBound,
    /// Continue on new-class scenes with no distillation.
    Finetune,
    /// Distill both branches at every location.
    AllClsAllReg,
    /// Distill the classification branch at every location.
    AllCls,
    /// Distill the regression branch at every location.
    AllReg,
    /// Adaptive selection, classification branch only.
    ClsAps,
    /// Adaptive selection on both branches.
    ClsRegAps,
    /// Alias regime for the scarce-data comparison: both branches, every
    /// location.
    AllResponse,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::UpperBound => "upper-bound",
            Mode::Finetune => "finetune",
            Mode::AllClsAllReg => "all-cls-all-reg",
            Mode::AllCls => "all-cls",
            Mode::AllReg => "all-reg",
            Mode::ClsAps => "cls-aps",
            Mode::ClsRegAps => "cls-reg-aps",
            Mode::AllResponse => "all-response",
        }
    }

    /// The ablation table rows, reference rows first.
    pub fn ablation_modes() -> [Mode; 7] {
        [
            Mode::UpperBound,
            Mode::Finetune,
            Mode::AllClsAllReg,
            Mode::AllCls,
            Mode::AllReg,
            Mode::ClsAps,
            Mode::ClsRegAps,
        ]
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub old_classes: Vec<u32>,
    pub new_classes: Vec<u32>,
    pub mode: Mode,
    pub distill: DistillationConfig,
    pub selection: SelectionConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub scenes_per_epoch: usize,
    /// Phase-2 dataset size override; the scarce-data setting shrinks it.
    pub phase2_scenes_per_epoch: Option<usize>,
    pub eval_scene_count: usize,
    pub seeds: Vec<u64>,
    pub layout: ToyLayout,
    /// Detection-time score threshold used for evaluation.
    pub score_threshold: f64,
    /// Detection-time per-class NMS IoU.
    pub detect_nms_iou: f64,
    /// IoU threshold of the AP metric.
    pub eval_iou: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            old_classes: vec![0, 1, 2, 3],
            new_classes: vec![4, 5, 6, 7],
            mode: Mode::ClsRegAps,
            distill: DistillationConfig::default(),
            selection: SelectionConfig::default(),
            learning_rate: 0.05,
            epochs: 30,
            scenes_per_epoch: 200,
            phase2_scenes_per_epoch: None,
            eval_scene_count: 200,
            seeds: vec![1, 2, 3, 4, 5],
            layout: ToyLayout::default(),
            score_threshold: 0.05,
            detect_nms_iou: 0.5,
            eval_iou: 0.5,
        }
    }
}

impl ExperimentConfig {
    /// The scarce-data comparison setting: 7 old classes, 1 new class, and a
    /// small phase-2 dataset.
    pub fn scarce_default() -> Self {
        ExperimentConfig {
            old_classes: (0..7).collect(),
            new_classes: vec![7],
            phase2_scenes_per_epoch: Some(20),
            ..ExperimentConfig::default()
        }
    }

    /// Student/universe class order: old classes then new classes.
    pub fn universe(&self) -> Vec<u32> {
        let mut u = self.old_classes.clone();
        u.extend_from_slice(&self.new_classes);
        u
    }

    pub fn validate(&self) -> Result<()> {
        if self.old_classes.is_empty() || self.new_classes.is_empty() {
            return Err(Error::invalid("old_classes and new_classes must be non-empty"));
        }
        let mut universe = self.universe();
        universe.sort_unstable();
        let len = universe.len();
        universe.dedup();
        if universe.len() != len {
            return Err(Error::invalid(
                "old_classes and new_classes must be disjoint and each unique",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be non-empty"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.scenes_per_epoch == 0 || self.phase2_scenes_per_epoch == Some(0) {
            return Err(Error::invalid("scenes_per_epoch must be positive"));
        }
        if self.eval_scene_count == 0 {
            return Err(Error::invalid("eval_scene_count must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "score_threshold must be in (0, 1), got {}",
                self.score_threshold
            )));
        }
        for (name, v) in [
            ("detect_nms_iou", self.detect_nms_iou),
            ("eval_iou", self.eval_iou),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        self.distill.validate()?;
        self.selection.validate()?;
        self.layout.validate()?;
        Ok(())
    }
}

/// Result of one (mode, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub seed: u64,
    pub per_class_ap: Vec<ClassAp>,
    pub teacher_per_class_ap: Vec<ClassAp>,
    pub map_old: f64,
    pub map_new: f64,
    pub map_all: f64,
    pub teacher_map_old: f64,
    /// Overall-mAP improvement over the same-seed finetune run, when that
    /// run is part of the suite.
    pub delta: Option<f64>,
    /// Overall-mAP gap to the same-seed upper-bound run, when that run is
    /// part of the suite.
    pub nabla: Option<f64>,
    pub teacher_trace: Vec<EpochLoss>,
    pub student_trace: Vec<EpochLoss>,
    pub config: ExperimentConfig,
}

/// A report plus the artifacts behind it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub student: DetectorParams,
    pub detections: Vec<Vec<BBox>>,
    pub ground_truth: Vec<Vec<BBox>>,
}

pub(crate) fn build_scene_set(
    featurizer: &Featurizer,
    classes: &[u32],
    count: usize,
    run_seed: u64,
    stream: u64,
) -> Result<Vec<FeaturizedScene>> {
    let canvas = featurizer.layout().canvas;
    (0..count)
        .map(|i| {
            let scene_seed = mix_seed(mix_seed(run_seed, stream), i as u64);
            let scene = generate_scene(scene_seed, classes, canvas)?;
            let features = featurizer.featurize(&scene);
            Ok(FeaturizedScene { scene, features })
        })
        .collect()
}

struct SeedContext {
    seed: u64,
    teacher: DetectorParams,
    teacher_trace: Vec<EpochLoss>,
    teacher_eval: ApSummary,
    eval_scenes: Vec<FeaturizedScene>,
    eval_gt: Vec<Vec<BBox>>,
    phase2_scenes: Vec<FeaturizedScene>,
    joint_scenes: Option<Vec<FeaturizedScene>>,
}

fn evaluate_detector(
    params: &DetectorParams,
    scenes: &[FeaturizedScene],
    gt: &[Vec<BBox>],
    cfg: &ExperimentConfig,
) -> Result<(ApSummary, Vec<Vec<BBox>>)> {
    let mut detections = Vec::with_capacity(scenes.len());
    for fs in scenes {
        detections.push(detect(
            params,
            &fs.features,
            cfg.score_threshold,
            cfg.detect_nms_iou,
        )?);
    }
    let summary = evaluate_ap(&detections, gt, cfg.eval_iou)?;
    Ok((summary, detections))
}

fn prepare_seed(
    cfg: &ExperimentConfig,
    featurizer: &Featurizer,
    seed: u64,
    need_joint: bool,
) -> Result<SeedContext> {
    let phase1 = build_scene_set(
        featurizer,
        &cfg.old_classes,
        cfg.scenes_per_epoch,
        seed,
        STREAM_PHASE1,
    )?;
    let teacher0 = DetectorParams::init(
        mix_seed(seed, STREAM_TEACHER_INIT),
        &cfg.old_classes,
        cfg.layout.feature_dim,
        cfg.layout.bins,
    )?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        scenes_per_epoch: cfg.scenes_per_epoch,
        seed,
        distillation: None,
    };
    let teacher_out = train(&teacher0, &phase1, &train_cfg, None)?;

    let universe = cfg.universe();
    let eval_scenes = build_scene_set(
        featurizer,
        &universe,
        cfg.eval_scene_count,
        seed,
        STREAM_EVAL,
    )?;
    let eval_gt: Vec<Vec<BBox>> = eval_scenes.iter().map(|fs| fs.scene.ground_truth()).collect();
    let (teacher_eval, _) = evaluate_detector(&teacher_out.params, &eval_scenes, &eval_gt, cfg)?;

    let phase2 = build_scene_set(
        featurizer,
        &cfg.new_classes,
        cfg.phase2_scenes_per_epoch.unwrap_or(cfg.scenes_per_epoch),
        seed,
        STREAM_PHASE2,
    )?;
    let joint_scenes = if need_joint {
        Some(build_scene_set(
            featurizer,
            &universe,
            cfg.scenes_per_epoch,
            seed,
            STREAM_JOINT,
        )?)
    } else {
        None
    };

    Ok(SeedContext {
        seed,
        teacher: teacher_out.params,
        teacher_trace: teacher_out.trace,
        teacher_eval,
        eval_scenes,
        eval_gt,
        phase2_scenes: phase2,
        joint_scenes,
    })
}

/// Distillation wiring implied by a mode: which selector runs and which
/// lambda is zeroed. Base weights come from the config.
fn mode_distillation(cfg: &ExperimentConfig, mode: Mode) -> Option<DistillSetup> {
    let (cls_on, reg_on, selection_mode) = match mode {
        Mode::UpperBound | Mode::Finetune => return None,
        Mode::AllClsAllReg | Mode::AllResponse => (true, true, SelectionMode::All),
        Mode::AllCls => (true, false, SelectionMode::All),
        Mode::AllReg => (false, true, SelectionMode::All),
        Mode::ClsAps => (true, false, SelectionMode::Adaptive),
        Mode::ClsRegAps => (true, true, SelectionMode::Adaptive),
    };
    let mut distill = cfg.distill;
    if !cls_on {
        distill.lambda_cls = 0.0;
    }
    if !reg_on {
        distill.lambda_bbox = 0.0;
    }
    let selection = SelectionConfig {
        mode: selection_mode,
        ..cfg.selection
    };
    Some(DistillSetup { distill, selection })
}

fn run_mode(cfg: &ExperimentConfig, ctx: &SeedContext, mode: Mode) -> Result<RunOutput> {
    let universe = cfg.universe();
    let phase2_len = ctx.phase2_scenes.len();
    let (student_out, _scenes_used) = match mode {
        Mode::UpperBound => {
            let joint = ctx
                .joint_scenes
                .as_ref()
                .expect("joint scenes prepared for upper-bound runs");
            let params0 = DetectorParams::init(
                mix_seed(ctx.seed, STREAM_UPPER_INIT),
                &universe,
                cfg.layout.feature_dim,
                cfg.layout.bins,
            )?;
            let train_cfg = TrainConfig {
                learning_rate: cfg.learning_rate,
                epochs: cfg.epochs,
                scenes_per_epoch: cfg.scenes_per_epoch,
                seed: ctx.seed,
                distillation: None,
            };
            (train(&params0, joint, &train_cfg, None)?, joint.len())
        }
        _ => {
            let student0 = ctx
                .teacher
                .expand_for_classes(&cfg.new_classes, mix_seed(ctx.seed, STREAM_EXPAND))?;
            let distillation = mode_distillation(cfg, mode);
            let teacher = distillation.as_ref().map(|_| &ctx.teacher);
            let train_cfg = TrainConfig {
                learning_rate: cfg.learning_rate,
                epochs: cfg.epochs,
                scenes_per_epoch: phase2_len,
                seed: ctx.seed,
                distillation,
            };
            (
                train(&student0, &ctx.phase2_scenes, &train_cfg, teacher)?,
                phase2_len,
            )
        }
    };

    let (summary, detections) =
        evaluate_detector(&student_out.params, &ctx.eval_scenes, &ctx.eval_gt, cfg)?;
    let mut echo = cfg.clone();
    echo.mode = mode;
    let report = ExperimentReport {
        mode,
        seed: ctx.seed,
        map_old: summary.mean_over(&cfg.old_classes),
        map_new: summary.mean_over(&cfg.new_classes),
        map_all: summary.mean,
        teacher_map_old: ctx.teacher_eval.mean_over(&cfg.old_classes),
        per_class_ap: summary.per_class,
        teacher_per_class_ap: ctx.teacher_eval.per_class.clone(),
        delta: None,
        nabla: None,
        teacher_trace: ctx.teacher_trace.clone(),
        student_trace: student_out.trace,
        config: echo,
    };
    Ok(RunOutput {
        report,
        student: student_out.params,
        detections,
        ground_truth: ctx.eval_gt.clone(),
    })
}

/// Run several modes over every configured seed. The teacher, phase-2 data,
/// and evaluation data are shared across modes within a seed. Delta and
/// nabla columns are filled whenever the suite includes the finetune and
/// upper-bound references. Output is grouped by seed, modes in given order.
pub fn run_suite(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    if modes.is_empty() {
        return Err(Error::invalid("at least one mode required"));
    }
    let featurizer = Featurizer::new(cfg.layout, &cfg.universe())?;
    let need_joint = modes.contains(&Mode::UpperBound);
    let mut outputs = Vec::with_capacity(cfg.seeds.len() * modes.len());
    for &seed in &cfg.seeds {
        let ctx = prepare_seed(cfg, &featurizer, seed, need_joint)?;
        let start = outputs.len();
        for &mode in modes {
            log::info!("seed {seed}: running mode {mode}");
            outputs.push(run_mode(cfg, &ctx, mode)?);
        }
        let finetune_map = outputs[start..]
            .iter()
            .find(|o| o.report.mode == Mode::Finetune)
            .map(|o| o.report.map_all);
        let upper_map = outputs[start..]
            .iter()
            .find(|o| o.report.mode == Mode::UpperBound)
            .map(|o| o.report.map_all);
        for out in &mut outputs[start..] {
            out.report.delta = finetune_map.map(|f| out.report.map_all - f);
            out.report.nabla = upper_map.map(|u| u - out.report.map_all);
        }
    }
    Ok(outputs)
}

/// Two-phase incremental run of the configured mode across all seeds.
pub fn run_incremental(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    run_suite(cfg, &[cfg.mode])
}

/// The ablation table: upper bound, finetune, and the distillation regimes
/// on identical seeds and data.
pub fn ablation_suite(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let outputs = run_suite(cfg, &Mode::ablation_modes())?;
    Ok(outputs.into_iter().map(|o| o.report).collect())
}

/// Scarce-data comparison: adaptive vs all-response on the same seeds.
#[derive(Debug, Clone)]
pub struct ScarcePair {
    pub adaptive: Vec<ExperimentReport>,
    pub all_response: Vec<ExperimentReport>,
}

/// Run the scarce-new-data comparison. The finetune baseline runs as the
/// delta reference; the returned pair carries the two distillation regimes.
pub fn scarce_data_experiment(cfg: &ExperimentConfig) -> Result<ScarcePair> {
    let outputs = run_suite(cfg, &[Mode::Finetune, Mode::ClsRegAps, Mode::AllResponse])?;
    let mut adaptive = Vec::new();
    let mut all_response = Vec::new();
    for out in outputs {
        match out.report.mode {
            Mode::ClsRegAps => adaptive.push(out.report),
            Mode::AllResponse => all_response.push(out.report),
            _ => {}
        }
    }
    Ok(ScarcePair {
        adaptive,
        all_response,
    })
}

/// Mean L2 distances between two detectors' responses over a scene set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistance {
    /// Always 0 with the shared featurizer; reported for completeness.
    pub feature: f64,
    pub classification: f64,
    pub regression: f64,
}

/// Mean per-location L2 distance between head responses of two detectors
/// with identical architecture, over the given scenes.
pub fn response_distance(
    a: &DetectorParams,
    b: &DetectorParams,
    scenes: &[FeaturizedScene],
) -> Result<ResponseDistance> {
    a.validate()?;
    b.validate()?;
    if a.class_ids != b.class_ids || a.feature_dim != b.feature_dim || a.bins != b.bins {
        return Err(Error::shape(
            "response_distance requires identical detector architectures".to_string(),
        ));
    }
    if scenes.is_empty() {
        return Err(Error::invalid("response_distance requires at least one scene"));
    }
    use crate::toydet::forward;
    let k = a.num_classes();
    let reg_cols = 4 * a.bins;
    let mut cls_sum = 0.0f64;
    let mut reg_sum = 0.0f64;
    let mut count = 0usize;
    for fs in scenes {
        let (cls_a, reg_a) = forward(a, &fs.features)?;
        let (cls_b, reg_b) = forward(b, &fs.features)?;
        let l = fs.features.num_locations();
        for loc in 0..l {
            let mut acc = 0.0f64;
            for c in 0..k {
                let d = cls_a.logits()[loc * k + c] as f64 - cls_b.logits()[loc * k + c] as f64;
                acc += d * d;
            }
            cls_sum += acc.sqrt();
            let mut acc = 0.0f64;
            for c in 0..reg_cols {
                let d = reg_a.logits()[loc * reg_cols + c] as f64
                    - reg_b.logits()[loc * reg_cols + c] as f64;
                acc += d * d;
            }
            reg_sum += acc.sqrt();
        }
        count += l;
    }
    Ok(ResponseDistance {
        feature: 0.0,
        classification: cls_sum / count as f64,
        regression: reg_sum / count as f64,
    })
}

/// Distances of the finetuned and distilled students to the upper-bound
/// detector, per seed, on the held-out evaluation scenes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceDiagnostic {
    pub seed: u64,
    pub finetune_vs_upper: ResponseDistance,
    pub distilled_vs_upper: ResponseDistance,
}

pub fn distance_diagnostic(cfg: &ExperimentConfig) -> Result<Vec<DistanceDiagnostic>> {
    let outputs = run_suite(cfg, &[Mode::UpperBound, Mode::Finetune, Mode::ClsRegAps])?;
    let featurizer = Featurizer::new(cfg.layout, &cfg.universe())?;
    let mut diagnostics = Vec::with_capacity(cfg.seeds.len());
    for chunk in outputs.chunks(3) {
        let seed = chunk[0].report.seed;
        let upper = &chunk[0].student;
        let finetune = &chunk[1].student;
        let distilled = &chunk[2].student;
        let eval_scenes = build_scene_set(
            &featurizer,
            &cfg.universe(),
            cfg.eval_scene_count,
            seed,
            STREAM_EVAL,
        )?;
        diagnostics.push(DistanceDiagnostic {
            seed,
            finetune_vs_upper: response_distance(finetune, upper, &eval_scenes)?,
            distilled_vs_upper: response_distance(distilled, upper, &eval_scenes)?,
        });
    }
    Ok(diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small config so harness tests stay fast.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            old_classes: vec![0, 1],
            new_classes: vec![2, 3],
            epochs: 2,
            scenes_per_epoch: 8,
            eval_scene_count: 6,
            seeds: vec![1],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_overlap_and_ranges() {
        let mut cfg = tiny_config();
        cfg.new_classes = vec![1, 2];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.score_threshold = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_config();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_strings_round_trip_through_serde() {
        for mode in [
            Mode::UpperBound,
            Mode::Finetune,
            Mode::AllClsAllReg,
            Mode::AllCls,
            Mode::AllReg,
            Mode::ClsAps,
            Mode::ClsRegAps,
            Mode::AllResponse,
        ] {
            let json = serde_json::to_string(&mode).unwrap();
            assert_eq!(json, format!("\"{}\"", mode.as_str()));
            let back: Mode = serde_json::from_str(&json).unwrap();
            assert_eq!(back, mode);
        }
    }

    #[test]
    fn mode_distillation_wiring() {
        let cfg = tiny_config();
        assert!(mode_distillation(&cfg, Mode::Finetune).is_none());
        assert!(mode_distillation(&cfg, Mode::UpperBound).is_none());
        let all_cls = mode_distillation(&cfg, Mode::AllCls).unwrap();
        assert_eq!(all_cls.distill.lambda_bbox, 0.0);
        assert!(all_cls.distill.lambda_cls > 0.0);
        assert_eq!(all_cls.selection.mode, SelectionMode::All);
        let aps = mode_distillation(&cfg, Mode::ClsRegAps).unwrap();
        assert_eq!(aps.selection.mode, SelectionMode::Adaptive);
        assert!(aps.distill.lambda_bbox > 0.0);
        let all_reg = mode_distillation(&cfg, Mode::AllReg).unwrap();
        assert_eq!(all_reg.distill.lambda_cls, 0.0);
    }

    #[test]
    fn run_suite_shares_references_and_fills_deltas() {
        let cfg = tiny_config();
        let outputs = run_suite(&cfg, &[Mode::UpperBound, Mode::Finetune, Mode::ClsRegAps]).unwrap();
        assert_eq!(outputs.len(), 3);
        for o in &outputs {
            assert!(o.report.delta.is_some());
            assert!(o.report.nabla.is_some());
            // config echo differs only in mode
            let mut echo = o.report.config.clone();
            echo.mode = cfg.mode;
            assert_eq!(echo, cfg);
        }
        let finetune = outputs
            .iter()
            .find(|o| o.report.mode == Mode::Finetune)
            .unwrap();
        assert_eq!(finetune.report.delta, Some(0.0));
        let upper = outputs
            .iter()
            .find(|o| o.report.mode == Mode::UpperBound)
            .unwrap();
        assert_eq!(upper.report.nabla, Some(0.0));
        // identical teacher references across modes of one seed
        assert_eq!(
            outputs[0].report.teacher_map_old,
            outputs[1].report.teacher_map_old
        );
    }

    #[test]
    fn reports_are_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = run_incremental(&cfg).unwrap();
        let b = run_incremental(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.report, y.report);
            assert_eq!(x.student, y.student);
        }
    }

    #[test]
    fn response_distance_is_zero_on_identical_detectors() {
        let cfg = tiny_config();
        let featurizer = Featurizer::new(cfg.layout, &cfg.universe()).unwrap();
        let scenes =
            build_scene_set(&featurizer, &cfg.universe(), 3, 7, STREAM_EVAL).unwrap();
        let p = DetectorParams::init(1, &cfg.universe(), cfg.layout.feature_dim, cfg.layout.bins)
            .unwrap();
        let d = response_distance(&p, &p, &scenes).unwrap();
        assert_eq!(d.feature, 0.0);
        assert_eq!(d.classification, 0.0);
        assert_eq!(d.regression, 0.0);

        let q = DetectorParams::init(2, &cfg.universe(), cfg.layout.feature_dim, cfg.layout.bins)
            .unwrap();
        let dq = response_distance(&p, &q, &scenes).unwrap();
        let qd = response_distance(&q, &p, &scenes).unwrap();
        assert!((dq.classification - qd.classification).abs() < 1e-12);
        assert!(dq.classification > 0.0);
    }

    #[test]
    fn response_distance_rejects_mismatched_heads() {
        let cfg = tiny_config();
        let featurizer = Featurizer::new(cfg.layout, &cfg.universe()).unwrap();
        let scenes = build_scene_set(&featurizer, &cfg.universe(), 2, 7, STREAM_EVAL).unwrap();
        let p = DetectorParams::init(1, &[0, 1], cfg.layout.feature_dim, cfg.layout.bins).unwrap();
        let q = DetectorParams::init(1, &[0, 1, 2], cfg.layout.feature_dim, cfg.layout.bins)
            .unwrap();
        assert!(response_distance(&p, &q, &scenes).is_err());
    }
}
