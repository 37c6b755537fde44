//! Detector-head response values: per-location class scores, per-edge
//! bin-distribution logits, probability transforms, box decoding, IoU, and
//! the serialized dump format shared by the other modules.
//!
//! Values are stored as `f32`; every transform accumulates in `f64`.

mod dump;

pub use dump::{read_dump, write_dump, DumpMetadata, ResponseDump, DUMP_MAGIC, DUMP_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed edge order used by every 4-edge tensor in this crate.
pub const EDGE_ORDER: [Edge; 4] = [Edge::Top, Edge::Bottom, Edge::Left, Edge::Right];

/// One edge of an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Top = 0,
    Bottom = 1,
    Left = 2,
    Right = 3,
}

/// An anchor point on the prediction grid, in canvas units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f32,
    pub y: f32,
    /// Canvas units per grid cell; scales decoded edge distances.
    pub stride: f32,
}

impl Location {
    pub fn new(x: f32, y: f32, stride: f32) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() || !stride.is_finite() {
            return Err(Error::invalid("location coordinates must be finite"));
        }
        if stride <= 0.0 {
            return Err(Error::invalid(format!("stride must be positive, got {stride}")));
        }
        Ok(Location { x, y, stride })
    }
}

/// Per-location, per-class logits from a detector's classification head.
///
/// Layout is location-major: `logits[l * num_classes + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScoreMap {
    logits: Vec<f32>,
    locations: Vec<Location>,
    class_ids: Vec<u32>,
}

impl ClassScoreMap {
    pub fn new(logits: Vec<f32>, locations: Vec<Location>, class_ids: Vec<u32>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::shape("class score map needs at least one location"));
        }
        if class_ids.is_empty() {
            return Err(Error::shape("class score map needs at least one class"));
        }
        let mut seen = class_ids.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != class_ids.len() {
            return Err(Error::invalid("class ids must be unique"));
        }
        let expected = locations.len() * class_ids.len();
        if logits.len() != expected {
            return Err(Error::shape(format!(
                "class logits: expected {} values ({} locations x {} classes), got {}",
                expected,
                locations.len(),
                class_ids.len(),
                logits.len()
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("class logits must be finite"));
        }
        Ok(ClassScoreMap {
            logits,
            locations,
            class_ids,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    /// All class logits at one location.
    pub fn row(&self, location: usize) -> &[f32] {
        let k = self.class_ids.len();
        &self.logits[location * k..(location + 1) * k]
    }

    /// Column index of a global class id, if this map covers it.
    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }
}

/// Per-location, per-edge discrete bin-distribution logits from a detector's
/// regression head.
///
/// Layout is location-major with edges in [`EDGE_ORDER`]:
/// `logits[(l * 4 + edge) * bins + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDistributionMap {
    logits: Vec<f32>,
    locations: Vec<Location>,
    bins: usize,
}

impl EdgeDistributionMap {
    pub fn new(logits: Vec<f32>, locations: Vec<Location>, bins: usize) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::shape("edge distribution map needs at least one location"));
        }
        if bins < 2 {
            return Err(Error::shape(format!("bin count must be at least 2, got {bins}")));
        }
        let expected = locations.len() * 4 * bins;
        if logits.len() != expected {
            return Err(Error::shape(format!(
                "edge logits: expected {} values ({} locations x 4 edges x {} bins), got {}",
                expected,
                locations.len(),
                bins,
                logits.len()
            )));
        }
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("edge logits must be finite"));
        }
        Ok(EdgeDistributionMap {
            logits,
            locations,
            bins,
        })
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    /// Bin logits for one edge at one location.
    pub fn edge_row(&self, location: usize, edge: Edge) -> &[f32] {
        let start = (location * 4 + edge as usize) * self.bins;
        &self.logits[start..start + self.bins]
    }
}

/// An axis-aligned detection box in canvas units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
    pub class_id: u32,
}

impl BBox {
    /// Geometry-only box (score 0, class 0).
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Result<Self> {
        BBox::scored(x1, y1, x2, y2, 0.0, 0)
    }

    pub fn scored(x1: f32, y1: f32, x2: f32, y2: f32, score: f32, class_id: u32) -> Result<Self> {
        if ![x1, y1, x2, y2, score].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("box fields must be finite"));
        }
        if x1 > x2 || y1 > y2 {
            return Err(Error::invalid(format!(
                "degenerate box corners: ({x1}, {y1}) .. ({x2}, {y2})"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("box score must be in [0, 1], got {score}")));
        }
        Ok(BBox {
            x1,
            y1,
            x2,
            y2,
            score,
            class_id,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x2 as f64 - self.x1 as f64) * (self.y2 as f64 - self.y1 as f64)
    }
}

/// How a location's scalar confidence is read off its class logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceRule {
    /// Max over the class subset of per-class sigmoid scores (default).
    SigmoidMax,
    /// Softmax over the map's full class axis, then max over the subset.
    SoftmaxMax,
}

impl Default for ConfidenceRule {
    fn default() -> Self {
        ConfidenceRule::SigmoidMax
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `logits / t`, computed stably by subtracting the max logit.
pub fn tempered_softmax(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("tempered_softmax requires at least one logit"));
    }
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("tempered_softmax requires finite logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / t).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Per-location confidence over a class subset, using the default
/// sigmoid-max rule.
pub fn location_confidence(map: &ClassScoreMap, class_subset: &[u32]) -> Result<Vec<f64>> {
    location_confidence_with(map, class_subset, ConfidenceRule::SigmoidMax)
}

pub fn location_confidence_with(
    map: &ClassScoreMap,
    class_subset: &[u32],
    rule: ConfidenceRule,
) -> Result<Vec<f64>> {
    if class_subset.is_empty() {
        return Err(Error::invalid("class subset must be non-empty"));
    }
    let mut columns = Vec::with_capacity(class_subset.len());
    for &c in class_subset {
        match map.class_index(c) {
            Some(idx) => columns.push(idx),
            None => {
                return Err(Error::invalid(format!(
                    "class id {c} is not covered by this map"
                )))
            }
        }
    }
    let mut out = Vec::with_capacity(map.num_locations());
    for l in 0..map.num_locations() {
        let row = map.row(l);
        let confidence = match rule {
            ConfidenceRule::SigmoidMax => columns
                .iter()
                .map(|&k| sigmoid(row[k] as f64))
                .fold(f64::NEG_INFINITY, f64::max),
            ConfidenceRule::SoftmaxMax => {
                let row64: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                let probs = tempered_softmax(&row64, 1.0)?;
                columns
                    .iter()
                    .map(|&k| probs[k])
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        };
        out.push(confidence);
    }
    Ok(out)
}

/// Tolerance for the per-row normalization check in [`decode_box`].
pub const DECODE_ROW_SUM_TOL: f64 = 1e-6;

/// Decode four edge-bin probability rows into box geometry.
///
/// Each edge distance is the bin-index expectation scaled by the location's
/// stride; rows follow [`EDGE_ORDER`].
pub fn decode_box(edge_probs: [&[f64]; 4], loc: &Location) -> Result<BBox> {
    let bins = edge_probs[0].len();
    let mut distances = [0.0f64; 4];
    for (e, row) in edge_probs.iter().enumerate() {
        if row.len() != bins || row.is_empty() {
            return Err(Error::shape("edge probability rows must share a non-zero length"));
        }
        let mut sum = 0.0f64;
        let mut expectation = 0.0f64;
        for (k, &p) in row.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::invalid("edge probabilities must be finite and non-negative"));
            }
            sum += p;
            expectation += k as f64 * p;
        }
        if (sum - 1.0).abs() > DECODE_ROW_SUM_TOL {
            return Err(Error::invalid(format!(
                "edge probability row {e} sums to {sum}, expected 1 within {DECODE_ROW_SUM_TOL}"
            )));
        }
        distances[e] = expectation * loc.stride as f64;
    }
    let [top, bottom, left, right] = distances;
    BBox::new(
        (loc.x as f64 - left) as f32,
        (loc.y as f64 - top) as f32,
        (loc.x as f64 + right) as f32,
        (loc.y as f64 + bottom) as f32,
    )
}

/// Intersection-over-union of two boxes. Zero-area boxes yield 0 against
/// anything, keeping NaN out of NMS.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let ix1 = (a.x1 as f64).max(b.x1 as f64);
    let iy1 = (a.y1 as f64).max(b.y1 as f64);
    let ix2 = (a.x2 as f64).min(b.x2 as f64);
    let iy2 = (a.y2 as f64).min(b.y2 as f64);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    inter / (area_a + area_b - inter)
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, 1..=max_len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn softmax_sums_to_one(logits in finite_logits(12), t in 0.05f64..50.0) {
            let p = tempered_softmax(&logits, t).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            // extreme logit/temperature pairs can underflow an entry to 0
            prop_assert!(p.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }

        #[test]
        fn softmax_shift_invariant(logits in finite_logits(12), t in 0.05f64..50.0, c in -20.0f64..20.0) {
            let p = tempered_softmax(&logits, t).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|&z| z + c).collect();
            let q = tempered_softmax(&shifted, t).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_large_t_approaches_uniform(logits in finite_logits(12)) {
            let p = tempered_softmax(&logits, 1e6).unwrap();
            let uniform = 1.0 / logits.len() as f64;
            for v in p {
                prop_assert!((v - uniform).abs() < 1e-4);
            }
        }

        #[test]
        fn iou_symmetric_and_bounded(
            ax in -10.0f32..10.0, ay in -10.0f32..10.0, aw in 0.0f32..10.0, ah in 0.0f32..10.0,
            bx in -10.0f32..10.0, by in -10.0f32..10.0, bw in 0.0f32..10.0, bh in 0.0f32..10.0,
        ) {
            let a = BBox::new(ax, ay, ax + aw, ay + ah).unwrap();
            let b = BBox::new(bx, by, bx + bw, by + bh).unwrap();
            let ab = iou(&a, &b);
            let ba = iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn decode_one_hot_is_exact(k in 0usize..8, stride_pow in -1i32..4) {
            let stride = 2.0f32.powi(stride_pow);
            let mut row = vec![0.0f64; 8];
            row[k] = 1.0;
            let l = Location::new(100.0, 100.0, stride).unwrap();
            let b = decode_box([&row, &row, &row, &row], &l).unwrap();
            let expected = (k as f64 * stride as f64) as f32;
            prop_assert_eq!(l.x - b.x1, expected);
            prop_assert_eq!(b.x2 - l.x, expected);
            prop_assert_eq!(l.y - b.y1, expected);
            prop_assert_eq!(b.y2 - l.y, expected);
        }
    }
}
