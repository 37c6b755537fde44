//! Adaptive pseudo-label selection: statistics-based thresholds over the
//! teacher's per-location confidences (classification branch) and Top-1
//! sharpness values (regression branch), NMS filtering of the surviving
//! boxes, and the all-response fallback that selects every location.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{
    decode_box, location_confidence_with, tempered_softmax, BBox, ClassScoreMap, ConfidenceRule,
    EdgeDistributionMap, EDGE_ORDER,
};

/// Selection behavior: statistics-based thresholding or everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    Adaptive,
    All,
}

impl Default for SelectionMode {
    fn default() -> Self {
        SelectionMode::Adaptive
    }
}

/// How the four per-edge Top-1 probabilities collapse into one value per
/// location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Top1Aggregation {
    /// Mean of the four per-edge maxima (default).
    Mean,
    /// Max of the four per-edge maxima.
    Max,
}

impl Default for Top1Aggregation {
    fn default() -> Self {
        Top1Aggregation::Mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Threshold offset in standard deviations: tau = mu + alpha * sigma.
    pub alpha: f64,
    pub nms_iou_threshold: f64,
    pub mode: SelectionMode,
    pub confidence_rule: ConfidenceRule,
    pub top1_aggregation: Top1Aggregation,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            alpha: 1.0,
            nms_iou_threshold: 0.5,
            mode: SelectionMode::Adaptive,
            confidence_rule: ConfidenceRule::default(),
            top1_aggregation: Top1Aggregation::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be finite, got {}", self.alpha)));
        }
        if !self.nms_iou_threshold.is_finite()
            || self.nms_iou_threshold <= 0.0
            || self.nms_iou_threshold > 1.0
        {
            return Err(Error::invalid(format!(
                "nms_iou_threshold must be in (0, 1], got {}",
                self.nms_iou_threshold
            )));
        }
        Ok(())
    }
}

/// Mean, population standard deviation, and threshold of a value field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
}

/// Mean, population standard deviation (divisor N), and tau = mu + alpha *
/// sigma.
///
/// Computed on values shifted by the first element so that a constant field
/// yields sigma exactly 0 and tau exactly equal to the constant.
pub fn threshold_stats(values: &[f64], alpha: f64) -> Result<ThresholdStats> {
    if values.is_empty() {
        return Err(Error::invalid("threshold_stats requires at least one value"));
    }
    if !values.iter().all(|v| v.is_finite()) || !alpha.is_finite() {
        return Err(Error::invalid("threshold_stats requires finite input"));
    }
    let base = values[0];
    let n = values.len() as f64;
    let shifted_mean = values.iter().map(|&v| v - base).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = (v - base) - shifted_mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let mu = base + shifted_mean;
    let sigma = var.sqrt();
    Ok(ThresholdStats {
        mu,
        sigma,
        tau: mu + alpha * sigma,
    })
}

/// One selected classification node: the teacher's confidence and its
/// tempered soft target over the selection's class subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPseudoLabel {
    pub location: usize,
    pub confidence: f64,
    pub soft_target: Vec<f32>,
}

/// Classification pseudo labels: selected locations with frozen teacher soft
/// targets. `threshold_used` is -inf (serialized as null) in all mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPseudoLabels {
    pub entries: Vec<ClassPseudoLabel>,
    /// Class subset the confidences and soft targets were computed over, in
    /// soft-target column order.
    pub class_ids: Vec<u32>,
    pub threshold_used: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// One selected regression node: its sharpness value, decoded box, and the
/// teacher's raw edge logits (edge-major, top/bottom/left/right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPseudoLabel {
    pub location: usize,
    pub top1: f64,
    pub decoded: BBox,
    pub edge_logits: Vec<f32>,
}

/// Regression pseudo labels after thresholding and (in adaptive mode) NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPseudoLabels {
    pub entries: Vec<BoxPseudoLabel>,
    pub threshold_used: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// Select classification distillation nodes from the teacher's class map.
///
/// `target_temperature` tempers the stored soft targets; it should match the
/// classification temperature of the distillation loss these labels feed.
pub fn select_classification(
    teacher_cls: &ClassScoreMap,
    old_classes: &[u32],
    cfg: &SelectionConfig,
    target_temperature: f64,
) -> Result<ClassPseudoLabels> {
    cfg.validate()?;
    let confidences = location_confidence_with(teacher_cls, old_classes, cfg.confidence_rule)?;
    let stats = threshold_stats(&confidences, cfg.alpha)?;
    let threshold_used = match cfg.mode {
        SelectionMode::Adaptive => stats.tau,
        SelectionMode::All => f64::NEG_INFINITY,
    };

    let columns: Vec<usize> = old_classes
        .iter()
        .map(|&c| teacher_cls.class_index(c).expect("validated above"))
        .collect();
    let mut entries = Vec::new();
    for (location, &confidence) in confidences.iter().enumerate() {
        if confidence < threshold_used {
            continue;
        }
        let row = teacher_cls.row(location);
        let restricted: Vec<f64> = columns.iter().map(|&c| row[c] as f64).collect();
        let soft_target: Vec<f32> = tempered_softmax(&restricted, target_temperature)?
            .iter()
            .map(|&p| p as f32)
            .collect();
        entries.push(ClassPseudoLabel {
            location,
            confidence,
            soft_target,
        });
    }
    Ok(ClassPseudoLabels {
        entries,
        class_ids: old_classes.to_vec(),
        threshold_used,
        mu: stats.mu,
        sigma: stats.sigma,
    })
}

/// Per-location sharpness of an edge-distribution map: Top-1 probabilities
/// of the four plain-softmax edge distributions, aggregated per `agg`.
pub fn regression_sharpness(
    teacher_edges: &EdgeDistributionMap,
    agg: Top1Aggregation,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(teacher_edges.num_locations());
    for l in 0..teacher_edges.num_locations() {
        let mut maxima = [0.0f64; 4];
        for edge in EDGE_ORDER {
            let row: Vec<f64> = teacher_edges
                .edge_row(l, edge)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let probs = tempered_softmax(&row, 1.0)?;
            maxima[edge as usize] = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        let value = match agg {
            Top1Aggregation::Mean => maxima.iter().sum::<f64>() / 4.0,
            Top1Aggregation::Max => maxima.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        out.push(value);
    }
    Ok(out)
}

/// Select regression distillation nodes from the teacher's edge map.
///
/// Candidates above the adaptive threshold are decoded, scored by their
/// sharpness value, and filtered with class-agnostic NMS (adaptive mode
/// only).
pub fn select_regression(
    teacher_edges: &EdgeDistributionMap,
    cfg: &SelectionConfig,
) -> Result<BoxPseudoLabels> {
    cfg.validate()?;
    let sharpness = regression_sharpness(teacher_edges, cfg.top1_aggregation)?;
    let stats = threshold_stats(&sharpness, cfg.alpha)?;
    let threshold_used = match cfg.mode {
        SelectionMode::Adaptive => stats.tau,
        SelectionMode::All => f64::NEG_INFINITY,
    };

    let bins = teacher_edges.bins();
    let mut candidates: Vec<BoxPseudoLabel> = Vec::new();
    for (location, &top1) in sharpness.iter().enumerate() {
        if top1 < threshold_used {
            continue;
        }
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(4);
        let mut edge_logits = Vec::with_capacity(4 * bins);
        for edge in EDGE_ORDER {
            let row = teacher_edges.edge_row(location, edge);
            edge_logits.extend_from_slice(row);
            let row64: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            probs.push(tempered_softmax(&row64, 1.0)?);
        }
        let decoded = decode_box(
            [&probs[0], &probs[1], &probs[2], &probs[3]],
            &teacher_edges.locations()[location],
        )?;
        let decoded = BBox {
            score: top1 as f32,
            ..decoded
        };
        candidates.push(BoxPseudoLabel {
            location,
            top1,
            decoded,
            edge_logits,
        });
    }

    let entries = match cfg.mode {
        SelectionMode::All => candidates,
        SelectionMode::Adaptive => {
            let boxes: Vec<BBox> = candidates.iter().map(|c| c.decoded).collect();
            nms_indices(&boxes, cfg.nms_iou_threshold)
                .into_iter()
                .map(|i| candidates[i].clone())
                .collect()
        }
    };
    Ok(BoxPseudoLabels {
        entries,
        threshold_used,
        mu: stats.mu,
        sigma: stats.sigma,
    })
}

/// Greedy NMS returning surviving original indices in descending-score
/// order; score ties keep the lower original index first.
pub(crate) fn nms_indices(boxes: &[BBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .expect("box scores are finite")
    });
    let mut kept: Vec<usize> = Vec::new();
    for &idx in &order {
        let suppressed = kept
            .iter()
            .any(|&k| crate::responses::iou(&boxes[k], &boxes[idx]) >= iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    kept
}

/// Greedy score-descending NMS: repeatedly keep the highest-scoring
/// remaining box and discard every box whose IoU with it reaches the
/// threshold. Output is sorted by descending score.
pub fn nms(boxes: &[BBox], iou_threshold: f64) -> Vec<BBox> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// The all-response fallback: every location selected in both branches, no
/// NMS. Equivalent to running both selectors with mode [`SelectionMode::All`].
pub fn select_all(
    teacher_cls: &ClassScoreMap,
    teacher_edges: &EdgeDistributionMap,
    old_classes: &[u32],
    cfg: &SelectionConfig,
    target_temperature: f64,
) -> Result<(ClassPseudoLabels, BoxPseudoLabels)> {
    if teacher_cls.locations() != teacher_edges.locations() {
        return Err(Error::invalid(
            "classification and regression maps must cover identical locations",
        ));
    }
    let all_cfg = SelectionConfig {
        mode: SelectionMode::All,
        ..*cfg
    };
    let cls = select_classification(teacher_cls, old_classes, &all_cfg, target_temperature)?;
    let boxes = select_regression(teacher_edges, &all_cfg)?;
    Ok((cls, boxes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::responses::Location;

    fn locs(n: usize) -> Vec<Location> {
        (0..n)
            .map(|i| Location::new(8.0 * i as f32 + 4.0, 4.0, 8.0).unwrap())
            .collect()
    }

    #[test]
    fn threshold_stats_hand_example() {
        let s = threshold_stats(&[0.1, 0.1, 0.9], 1.0).unwrap();
        assert!((s.mu - 0.366667).abs() < 1e-6);
        assert!((s.sigma - 0.377124).abs() < 1e-6);
        assert!((s.tau - 0.743791).abs() < 1e-6);
    }

    #[test]
    fn threshold_stats_constant_input_is_exact() {
        for v in [0.5f64, 0.1, 0.3, 0.7] {
            let s = threshold_stats(&[v, v, v], 3.7).unwrap();
            assert_eq!(s.sigma, 0.0);
            assert_eq!(s.tau, v);
        }
    }

    #[test]
    fn threshold_stats_alpha_zero_gives_mean() {
        let s = threshold_stats(&[0.2, 0.4, 0.9], 0.0).unwrap();
        assert_eq!(s.tau, s.mu);
    }

    #[test]
    fn threshold_stats_rejects_empty_and_nonfinite() {
        assert!(threshold_stats(&[], 1.0).is_err());
        assert!(threshold_stats(&[f64::NAN], 1.0).is_err());
        assert!(threshold_stats(&[0.0], f64::INFINITY).is_err());
    }

    /// Map with one class whose sigmoid confidences equal `conf` per location.
    fn map_with_confidences(conf: &[f64]) -> ClassScoreMap {
        let logits: Vec<f32> = conf
            .iter()
            .map(|&p| ((p / (1.0 - p)).ln()) as f32)
            .collect();
        ClassScoreMap::new(logits, locs(conf.len()), vec![0]).unwrap()
    }

    #[test]
    fn classification_selects_above_threshold() {
        let map = map_with_confidences(&[0.1, 0.1, 0.9]);
        let cfg = SelectionConfig::default();
        let labels = select_classification(&map, &[0], &cfg, 2.0).unwrap();
        assert_eq!(labels.entries.len(), 1);
        assert_eq!(labels.entries[0].location, 2);
        assert!((labels.threshold_used - 0.743790).abs() < 1e-5);
    }

    #[test]
    fn classification_constant_field_selects_everything() {
        let map = ClassScoreMap::new(vec![0.4; 5], locs(5), vec![0]).unwrap();
        let labels =
            select_classification(&map, &[0], &SelectionConfig::default(), 2.0).unwrap();
        assert_eq!(labels.entries.len(), 5);
    }

    #[test]
    fn classification_all_mode_selects_everything() {
        let map = map_with_confidences(&[0.1, 0.2, 0.3, 0.4, 0.9]);
        let cfg = SelectionConfig {
            mode: SelectionMode::All,
            ..SelectionConfig::default()
        };
        let labels = select_classification(&map, &[0], &cfg, 2.0).unwrap();
        assert_eq!(labels.entries.len(), 5);
        assert_eq!(labels.threshold_used, f64::NEG_INFINITY);
    }

    #[test]
    fn soft_targets_are_tempered_softmax_of_teacher_row() {
        let map = ClassScoreMap::new(vec![2.0, 0.0], locs(1), vec![0, 1]).unwrap();
        let labels =
            select_classification(&map, &[0, 1], &SelectionConfig::default(), 2.0).unwrap();
        let t = &labels.entries[0].soft_target;
        assert!((t[0] as f64 - 0.731059).abs() < 1e-6);
        assert!((t[1] as f64 - 0.268941).abs() < 1e-6);
    }

    fn uniform_edge_map(l: usize, bins: usize) -> Vec<f32> {
        vec![0.0; l * 4 * bins]
    }

    #[test]
    fn regression_single_location_is_selected() {
        let bins = 8;
        let map = EdgeDistributionMap::new(uniform_edge_map(1, bins), locs(1), bins).unwrap();
        let labels = select_regression(&map, &SelectionConfig::default()).unwrap();
        assert_eq!(labels.entries.len(), 1);
        assert_eq!(labels.sigma, 0.0);
    }

    #[test]
    fn regression_sharp_location_survives_thresholding() {
        let bins = 8;
        let l = 10;
        let mut logits = uniform_edge_map(l, bins);
        // location 3: near-one-hot distributions on every edge
        for edge in 0..4 {
            logits[(3 * 4 + edge) * bins + 2] = 50.0;
        }
        let map = EdgeDistributionMap::new(logits, locs(l), bins).unwrap();
        let labels = select_regression(&map, &SelectionConfig::default()).unwrap();
        assert_eq!(labels.entries.len(), 1);
        assert_eq!(labels.entries[0].location, 3);
        assert!(labels.entries[0].top1 > 0.99);
    }

    #[test]
    fn regression_duplicate_boxes_nms_to_strongest() {
        let bins = 4;
        let l = 2;
        // both locations share the same anchor, so identical logits decode to
        // identical boxes; make location 1 slightly sharper
        let locations = vec![
            Location::new(4.0, 4.0, 8.0).unwrap(),
            Location::new(4.0, 4.0, 8.0).unwrap(),
        ];
        let mut logits = uniform_edge_map(l, bins);
        for edge in 0..4 {
            logits[(0 * 4 + edge) * bins + 1] = 3.0;
            logits[(1 * 4 + edge) * bins + 1] = 4.0;
        }
        let map = EdgeDistributionMap::new(logits, locations, bins).unwrap();
        let cfg = SelectionConfig {
            alpha: -10.0, // keep both candidates past the threshold
            ..SelectionConfig::default()
        };
        let labels = select_regression(&map, &cfg).unwrap();
        assert_eq!(labels.entries.len(), 1);
        assert_eq!(labels.entries[0].location, 1);
    }

    #[test]
    fn nms_keeps_highest_scoring_duplicate() {
        let a = BBox::scored(0.0, 0.0, 2.0, 2.0, 0.9, 0).unwrap();
        let b = BBox::scored(0.0, 0.0, 2.0, 2.0, 0.8, 0).unwrap();
        let kept = nms(&[b, a], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let a = BBox::scored(0.0, 0.0, 1.0, 1.0, 0.5, 0).unwrap();
        let b = BBox::scored(5.0, 5.0, 6.0, 6.0, 0.4, 0).unwrap();
        let c = BBox::scored(10.0, 10.0, 11.0, 11.0, 0.9, 0).unwrap();
        let kept = nms(&[a, b, c], 0.5);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_breaks_score_ties_by_original_index() {
        let a = BBox::scored(0.0, 0.0, 2.0, 2.0, 0.7, 0).unwrap();
        let b = BBox::scored(0.1, 0.0, 2.1, 2.0, 0.7, 1).unwrap();
        let kept = nms(&[a, b], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].class_id, 0);
    }

    #[test]
    fn select_all_covers_every_location() {
        let l = 3;
        let bins = 4;
        let cls = ClassScoreMap::new(vec![0.0; l * 2], locs(l), vec![0, 1]).unwrap();
        let edges = EdgeDistributionMap::new(uniform_edge_map(l, bins), locs(l), bins).unwrap();
        let (c, b) =
            select_all(&cls, &edges, &[0, 1], &SelectionConfig::default(), 2.0).unwrap();
        assert_eq!(c.entries.len(), 3);
        assert_eq!(b.entries.len(), 3);
    }

    #[test]
    fn select_all_rejects_mismatched_maps() {
        let cls = ClassScoreMap::new(vec![0.0; 2], locs(2), vec![0]).unwrap();
        let edges = EdgeDistributionMap::new(uniform_edge_map(3, 4), locs(3), 4).unwrap();
        assert!(select_all(&cls, &edges, &[0], &SelectionConfig::default(), 2.0).is_err());
    }

    #[test]
    fn adaptive_selection_is_subset_of_select_all() {
        let map = map_with_confidences(&[0.2, 0.5, 0.8, 0.3, 0.9]);
        let adaptive =
            select_classification(&map, &[0], &SelectionConfig::default(), 2.0).unwrap();
        let all_cfg = SelectionConfig {
            mode: SelectionMode::All,
            ..SelectionConfig::default()
        };
        let all = select_classification(&map, &[0], &all_cfg, 2.0).unwrap();
        let all_locs: Vec<usize> = all.entries.iter().map(|e| e.location).collect();
        for e in &adaptive.entries {
            assert!(all_locs.contains(&e.location));
        }
        assert!(adaptive.entries.len() <= all.entries.len());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn alpha_monotonicity(
            values in proptest::collection::vec(0.0f64..1.0, 2..40),
            a1 in -1.0f64..2.0,
            da in 0.0f64..2.0,
        ) {
            let s1 = threshold_stats(&values, a1).unwrap();
            let s2 = threshold_stats(&values, a1 + da).unwrap();
            let set1: Vec<usize> = values.iter().enumerate()
                .filter(|(_, &v)| v >= s1.tau).map(|(i, _)| i).collect();
            let set2: Vec<usize> = values.iter().enumerate()
                .filter(|(_, &v)| v >= s2.tau).map(|(i, _)| i).collect();
            for i in &set2 {
                prop_assert!(set1.contains(i));
            }
        }

        #[test]
        fn affine_invariance_of_selection(
            values in proptest::collection::vec(0.01f64..0.99, 2..40),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
            alpha in -1.0f64..2.0,
        ) {
            let s = threshold_stats(&values, alpha).unwrap();
            let transformed: Vec<f64> = values.iter().map(|&v| scale * v + shift).collect();
            let st = threshold_stats(&transformed, alpha).unwrap();
            let set: Vec<usize> = values.iter().enumerate()
                .filter(|(_, &v)| v >= s.tau).map(|(i, _)| i).collect();
            let set_t: Vec<usize> = transformed.iter().enumerate()
                .filter(|(_, &v)| v >= st.tau).map(|(i, _)| i).collect();
            prop_assert_eq!(set, set_t);
        }
    }
}
