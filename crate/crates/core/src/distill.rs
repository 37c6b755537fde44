//! The incremental distillation objective: L2 classification distillation,
//! per-edge KL localization distillation, their aggregation over selected
//! pseudo labels, the total objective, and analytic gradients with respect
//! to student logits.

use serde::{Deserialize, Serialize};

use crate::aps::{BoxPseudoLabels, ClassPseudoLabels};
use crate::error::{Error, Result};
use crate::responses::{ClassScoreMap, EdgeDistributionMap};

/// Which distribution the localization KL term treats as the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// KL(teacher || student): the teacher is the target being matched.
    TeacherToStudent,
    /// KL(student || teacher), offered for comparison.
    StudentToTeacher,
}

impl Default for KlDirection {
    fn default() -> Self {
        KlDirection::TeacherToStudent
    }
}

/// Weights and temperatures of the distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillationConfig {
    pub lambda_cls: f64,
    pub lambda_bbox: f64,
    pub temperature_cls: f64,
    pub temperature_reg: f64,
    pub kl_direction: KlDirection,
    /// Divide each distillation term by its selected-node count instead of
    /// summing. Off by default.
    pub normalize_by_count: bool,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        DistillationConfig {
            lambda_cls: 1.0,
            lambda_bbox: 1.0,
            temperature_cls: 2.0,
            temperature_reg: 2.0,
            kl_direction: KlDirection::default(),
            normalize_by_count: false,
        }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cls", self.lambda_cls), ("lambda_bbox", self.lambda_bbox)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("temperature_cls", self.temperature_cls),
            ("temperature_reg", self.temperature_reg),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One training step's loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub model_loss: f64,
    pub cls_distill: f64,
    pub bbox_distill: f64,
    pub total: f64,
}

/// Combine the model loss with weighted distillation terms.
pub fn total_loss(
    model_loss: f64,
    cls: f64,
    bbox: f64,
    cfg: &DistillationConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    for (name, v) in [("model_loss", model_loss), ("cls", cls), ("bbox", bbox)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(LossBreakdown {
        model_loss,
        cls_distill: cls,
        bbox_distill: bbox,
        total: model_loss + cfg.lambda_cls * cls + cfg.lambda_bbox * bbox,
    })
}

/// log-softmax of `logits / t` in f64; finite for any finite input.
fn log_tempered_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|&z| ((z - max) / t).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|&z| (z - max) / t - lse).collect()
}

/// Squared-distance loss between tempered class responses at one node, with
/// its gradient with respect to the full student row.
///
/// The student distribution is the tempered softmax over its whole class
/// axis; the squared differences compare only the `student_cols` entries
/// against the teacher's tempered distribution. With matching class axes
/// this is a plain distribution match; with extra student channels it also
/// ties the old-class probability mass to the rest of the head, which is
/// what lets the anchor survive training on new-class data.
pub(crate) fn cls_node_loss_grad(
    student_logits: &[f64],
    student_cols: &[usize],
    teacher_logits: &[f64],
    t: f64,
) -> (f64, Vec<f64>) {
    let p: Vec<f64> = log_tempered_softmax(student_logits, t)
        .iter()
        .map(|&lp| lp.exp())
        .collect();
    let q: Vec<f64> = log_tempered_softmax(teacher_logits, t)
        .iter()
        .map(|&lq| lq.exp())
        .collect();
    let mut diff = vec![0.0f64; student_logits.len()];
    let mut in_subset = vec![false; student_logits.len()];
    let mut loss = 0.0f64;
    for (&col, &qi) in student_cols.iter().zip(&q) {
        let d = p[col] - qi;
        diff[col] = d;
        in_subset[col] = true;
        loss += d * d;
    }
    let s: f64 = student_cols.iter().map(|&col| diff[col] * p[col]).sum();
    let grad: Vec<f64> = (0..student_logits.len())
        .map(|j| {
            let dj = if in_subset[j] { diff[j] } else { 0.0 };
            2.0 / t * p[j] * (dj - s)
        })
        .collect();
    (loss, grad)
}

/// KL localization loss for one edge distribution, with its gradient with
/// respect to the student logits.
pub(crate) fn ld_node_loss_grad(
    student_logits: &[f64],
    teacher_logits: &[f64],
    t: f64,
    direction: KlDirection,
) -> (f64, Vec<f64>) {
    let log_p = log_tempered_softmax(student_logits, t);
    let log_q = log_tempered_softmax(teacher_logits, t);
    let p: Vec<f64> = log_p.iter().map(|&v| v.exp()).collect();
    let q: Vec<f64> = log_q.iter().map(|&v| v.exp()).collect();
    match direction {
        KlDirection::TeacherToStudent => {
            let loss: f64 = q
                .iter()
                .zip(log_q.iter().zip(&log_p))
                .map(|(&qi, (&lq, &lp))| if qi > 0.0 { qi * (lq - lp) } else { 0.0 })
                .sum();
            let grad: Vec<f64> = p.iter().zip(&q).map(|(&pi, &qi)| (pi - qi) / t).collect();
            // Rounding can leave a tiny negative residue when p == q.
            (loss.max(0.0), grad)
        }
        KlDirection::StudentToTeacher => {
            let loss: f64 = p
                .iter()
                .zip(log_p.iter().zip(&log_q))
                .map(|(&pi, (&lp, &lq))| if pi > 0.0 { pi * (lp - lq) } else { 0.0 })
                .sum();
            let loss = loss.max(0.0);
            let grad: Vec<f64> = p
                .iter()
                .zip(log_p.iter().zip(&log_q))
                .map(|(&pi, (&lp, &lq))| pi / t * ((lp - lq) - loss))
                .collect();
            (loss, grad)
        }
    }
}

/// KL divergence between tempered edge distributions, teacher as target.
pub fn ld_edge_loss(
    student_edge_logits: &[f64],
    teacher_edge_logits: &[f64],
    temperature: f64,
) -> Result<f64> {
    validate_edge_pair(student_edge_logits, teacher_edge_logits, temperature)?;
    let (loss, _) = ld_node_loss_grad(
        student_edge_logits,
        teacher_edge_logits,
        temperature,
        KlDirection::TeacherToStudent,
    );
    Ok(loss)
}

fn validate_edge_pair(student: &[f64], teacher: &[f64], t: f64) -> Result<()> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::shape(format!(
            "edge logit vectors must share a non-zero length, got {} and {}",
            student.len(),
            teacher.len()
        )));
    }
    if !student.iter().chain(teacher).all(|v| v.is_finite()) {
        return Err(Error::invalid("edge logits must be finite"));
    }
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Column indices of the selection's class subset in a map, in subset order.
fn subset_columns(map: &ClassScoreMap, class_ids: &[u32], role: &str) -> Result<Vec<usize>> {
    if class_ids.is_empty() {
        return Err(Error::invalid("selection covers no classes"));
    }
    class_ids
        .iter()
        .map(|&c| {
            map.class_index(c).ok_or_else(|| {
                Error::invalid(format!("{role} map does not cover selected class id {c}"))
            })
        })
        .collect()
}

fn check_selected_locations(count: usize, indices: impl Iterator<Item = usize>) -> Result<()> {
    for idx in indices {
        if idx >= count {
            return Err(Error::invalid(format!(
                "selected location index {idx} out of range (map has {count} locations)"
            )));
        }
    }
    Ok(())
}

pub(crate) fn cls_distill_loss_grad(
    student: &ClassScoreMap,
    teacher: &ClassScoreMap,
    selected: &ClassPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if student.num_locations() != teacher.num_locations() {
        return Err(Error::shape(format!(
            "student has {} locations, teacher has {}",
            student.num_locations(),
            teacher.num_locations()
        )));
    }
    let student_cols = subset_columns(student, &selected.class_ids, "student")?;
    let teacher_cols = subset_columns(teacher, &selected.class_ids, "teacher")?;
    check_selected_locations(
        student.num_locations(),
        selected.entries.iter().map(|e| e.location),
    )?;

    let k_student = student.num_classes();
    let mut grad = vec![0.0f64; student.num_locations() * k_student];
    let mut loss = 0.0f64;
    for entry in &selected.entries {
        let s_row: Vec<f64> = student.row(entry.location).iter().map(|&v| v as f64).collect();
        let t_row = teacher.row(entry.location);
        let t_sub: Vec<f64> = teacher_cols.iter().map(|&c| t_row[c] as f64).collect();
        let (node_loss, node_grad) =
            cls_node_loss_grad(&s_row, &student_cols, &t_sub, cfg.temperature_cls);
        loss += node_loss;
        let base = entry.location * k_student;
        for (c, g) in node_grad.iter().enumerate() {
            grad[base + c] += g;
        }
    }
    if cfg.normalize_by_count && !selected.entries.is_empty() {
        let m = selected.entries.len() as f64;
        loss /= m;
        for g in &mut grad {
            *g /= m;
        }
    }
    Ok((loss, grad))
}

/// Sum over selected nodes of squared differences between the tempered
/// teacher and student class responses, compared on the selection's class
/// subset. The student's tempered distribution runs over its full class
/// axis, so the loss also pins the subset's share of probability mass.
pub fn cls_distill_loss(
    student: &ClassScoreMap,
    teacher: &ClassScoreMap,
    selected: &ClassPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<f64> {
    cls_distill_loss_grad(student, teacher, selected, cfg).map(|(loss, _)| loss)
}

/// Gradient of [`cls_distill_loss`] with respect to the student logits.
///
/// The matrix matches the student map's location-major layout; rows of
/// non-selected locations are zero. Within a selected row every channel can
/// carry gradient, because the student's softmax normalizes over its full
/// class axis.
pub fn grad_cls_distill(
    student: &ClassScoreMap,
    teacher: &ClassScoreMap,
    selected: &ClassPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<Vec<f64>> {
    cls_distill_loss_grad(student, teacher, selected, cfg).map(|(_, grad)| grad)
}

pub(crate) fn bbox_distill_loss_grad(
    student: &EdgeDistributionMap,
    teacher: &EdgeDistributionMap,
    selected: &BoxPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if student.num_locations() != teacher.num_locations() || student.bins() != teacher.bins() {
        return Err(Error::shape(format!(
            "student map is {} locations x {} bins, teacher is {} x {}",
            student.num_locations(),
            student.bins(),
            teacher.num_locations(),
            teacher.bins()
        )));
    }
    check_selected_locations(
        student.num_locations(),
        selected.entries.iter().map(|e| e.location),
    )?;

    let bins = student.bins();
    let mut grad = vec![0.0f64; student.num_locations() * 4 * bins];
    let mut loss = 0.0f64;
    for entry in &selected.entries {
        for edge in crate::responses::EDGE_ORDER {
            let s_row: Vec<f64> = student
                .edge_row(entry.location, edge)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let t_row: Vec<f64> = teacher
                .edge_row(entry.location, edge)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let (edge_loss, edge_grad) =
                ld_node_loss_grad(&s_row, &t_row, cfg.temperature_reg, cfg.kl_direction);
            loss += edge_loss;
            let base = (entry.location * 4 + edge as usize) * bins;
            grad[base..base + bins].copy_from_slice(&edge_grad);
        }
    }
    if cfg.normalize_by_count && !selected.entries.is_empty() {
        let j = selected.entries.len() as f64;
        loss /= j;
        for g in &mut grad {
            *g /= j;
        }
    }
    Ok((loss, grad))
}

/// Localization distillation over the selected pseudo boxes: the double sum
/// over selected locations and their four edges of [`ld_edge_loss`].
pub fn bbox_distill_loss(
    student: &EdgeDistributionMap,
    teacher: &EdgeDistributionMap,
    selected: &BoxPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<f64> {
    bbox_distill_loss_grad(student, teacher, selected, cfg).map(|(loss, _)| loss)
}

/// Gradient of [`bbox_distill_loss`] with respect to the student edge
/// logits, in the map's location-major layout.
pub fn grad_bbox_distill(
    student: &EdgeDistributionMap,
    teacher: &EdgeDistributionMap,
    selected: &BoxPseudoLabels,
    cfg: &DistillationConfig,
) -> Result<Vec<f64>> {
    bbox_distill_loss_grad(student, teacher, selected, cfg).map(|(_, grad)| grad)
}
