//! Average-precision evaluation: greedy one-to-one matching at an IoU
//! threshold, all-point interpolated AP per class, and mAP over classes
//! that have ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: u32,
    pub ap: f64,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// Per-class AP for every class with ground truth, ascending class id.
    pub per_class: Vec<ClassAp>,
    /// Arithmetic mean of the per-class APs.
    pub mean: f64,
}

impl ApSummary {
    pub fn class_ap(&self, class_id: u32) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class_id == class_id)
            .map(|c| c.ap)
    }

    /// Mean AP over the given subset of classes (those present).
    pub fn mean_over(&self, classes: &[u32]) -> f64 {
        let aps: Vec<f64> = self
            .per_class
            .iter()
            .filter(|c| classes.contains(&c.class_id))
            .map(|c| c.ap)
            .collect();
        if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        }
    }
}

/// Rank predictions of one class: descending score, ties by scene then
/// insertion order.
fn ranked_predictions(predictions: &[Vec<BBox>], class_id: u32) -> Vec<(usize, BBox)> {
    let mut preds: Vec<(usize, BBox)> = Vec::new();
    for (scene, boxes) in predictions.iter().enumerate() {
        for b in boxes {
            if b.class_id == class_id {
                preds.push((scene, *b));
            }
        }
    }
    preds.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .expect("finite scores")
            .then(a.0.cmp(&b.0))
    });
    preds
}

/// Greedy matching in rank order: each prediction takes the unmatched
/// same-scene ground truth with the highest IoU at or above the threshold.
fn match_predictions(
    ranked: &[(usize, BBox)],
    ground_truth: &[Vec<BBox>],
    class_id: u32,
    iou_threshold: f64,
) -> (Vec<bool>, usize) {
    let gt_boxes: Vec<Vec<&BBox>> = ground_truth
        .iter()
        .map(|scene| scene.iter().filter(|b| b.class_id == class_id).collect())
        .collect();
    let n_gt: usize = gt_boxes.iter().map(|s| s.len()).sum();
    let mut taken: Vec<Vec<bool>> = gt_boxes.iter().map(|s| vec![false; s.len()]).collect();
    let mut tp = Vec::with_capacity(ranked.len());
    for (scene, pred) in ranked {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gt_boxes[*scene].iter().enumerate() {
            if taken[*scene][gi] {
                continue;
            }
            let overlap = iou(pred, gt);
            if overlap < iou_threshold {
                continue;
            }
            match best {
                Some((_, b)) if b >= overlap => {}
                _ => best = Some((gi, overlap)),
            }
        }
        match best {
            Some((gi, _)) => {
                taken[*scene][gi] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    (tp, n_gt)
}

/// All-point interpolated AP from ranked true-positive flags.
fn ap_from_matches(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    if tp.is_empty() {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut cum_tp = 0usize;
    for (i, &hit) in tp.iter().enumerate() {
        if hit {
            cum_tp += 1;
        }
        precision.push(cum_tp as f64 / (i + 1) as f64);
        recall.push(cum_tp as f64 / n_gt as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len() - 1).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-class AP and mAP at one IoU threshold. Classes with no ground truth
/// are excluded from the summary.
pub fn evaluate_ap(
    predictions: &[Vec<BBox>],
    ground_truth: &[Vec<BBox>],
    iou_threshold: f64,
) -> Result<ApSummary> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::shape(format!(
            "{} prediction scenes vs {} ground-truth scenes",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "iou_threshold must be in (0, 1], got {iou_threshold}"
        )));
    }
    let mut classes: Vec<u32> = ground_truth
        .iter()
        .flatten()
        .map(|b| b.class_id)
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class = Vec::with_capacity(classes.len());
    for class_id in classes {
        let ranked = ranked_predictions(predictions, class_id);
        let (tp, n_gt) = match_predictions(&ranked, ground_truth, class_id, iou_threshold);
        let gt_count = n_gt;
        per_class.push(ClassAp {
            class_id,
            ap: ap_from_matches(&tp, n_gt),
            gt_count,
        });
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(ApSummary { per_class, mean })
}

/// AP averaged over several IoU thresholds (COCO-style sweep).
pub fn evaluate_ap_averaged(
    predictions: &[Vec<BBox>],
    ground_truth: &[Vec<BBox>],
    thresholds: &[f64],
) -> Result<ApSummary> {
    if thresholds.is_empty() {
        return Err(Error::invalid("at least one IoU threshold required"));
    }
    let summaries: Vec<ApSummary> = thresholds
        .iter()
        .map(|&t| evaluate_ap(predictions, ground_truth, t))
        .collect::<Result<_>>()?;
    let mut per_class = summaries[0].per_class.clone();
    for entry in &mut per_class {
        let mut total = 0.0;
        for s in &summaries {
            total += s.class_ap(entry.class_id).unwrap_or(0.0);
        }
        entry.ap = total / summaries.len() as f64;
    }
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(ApSummary { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f32, y1: f32, x2: f32, y2: f32, score: f32, class_id: u32) -> BBox {
        BBox::scored(x1, y1, x2, y2, score, class_id).unwrap()
    }

    #[test]
    fn perfect_single_detection_scores_one() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)]];
        // IoU 0.6 > 0.5 threshold
        let preds = vec![vec![b(0.0, 0.0, 10.0, 6.0, 0.9, 0)]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        assert_eq!(s.per_class.len(), 1);
        assert!((s.per_class[0].ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missed_ground_truth_scores_zero() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)]];
        let preds = vec![vec![]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        assert_eq!(s.per_class[0].ap, 0.0);
    }

    #[test]
    fn half_recall_with_perfect_precision_scores_half() {
        let gt = vec![vec![
            b(0.0, 0.0, 10.0, 10.0, 1.0, 0),
            b(30.0, 30.0, 40.0, 40.0, 1.0, 0),
        ]];
        let preds = vec![vec![b(0.0, 0.0, 10.0, 10.0, 0.8, 0)]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        assert!((s.per_class[0].ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classes_without_ground_truth_are_excluded() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)]];
        let preds = vec![vec![b(0.0, 0.0, 10.0, 10.0, 0.9, 5)]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        assert_eq!(s.per_class.len(), 1);
        assert_eq!(s.per_class[0].class_id, 0);
    }

    #[test]
    fn duplicate_detections_count_as_false_positives() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)]];
        let preds = vec![vec![
            b(0.0, 0.0, 10.0, 10.0, 0.9, 0),
            b(0.0, 0.0, 10.0, 10.0, 0.8, 0),
        ]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        // first matches, second is a duplicate; envelope keeps AP at 1.0
        assert!((s.per_class[0].ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predictions_do_not_match_across_scenes() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)], vec![]];
        let preds = vec![vec![], vec![b(0.0, 0.0, 10.0, 10.0, 0.9, 0)]];
        let s = evaluate_ap(&preds, &gt, 0.5).unwrap();
        assert_eq!(s.per_class[0].ap, 0.0);
    }

    #[test]
    fn scene_count_mismatch_is_rejected() {
        assert!(evaluate_ap(&[vec![]], &[], 0.5).is_err());
    }

    #[test]
    fn averaged_ap_over_thresholds() {
        let gt = vec![vec![b(0.0, 0.0, 10.0, 10.0, 1.0, 0)]];
        // IoU with GT is 0.6: counts at 0.5, misses at 0.75
        let preds = vec![vec![b(0.0, 0.0, 10.0, 6.0, 0.9, 0)]];
        let s = evaluate_ap_averaged(&preds, &gt, &[0.5, 0.75]).unwrap();
        assert!((s.per_class[0].ap - 0.5).abs() < 1e-12);
    }
}
