//! Synthetic scenes: seeded rectangles on a fixed canvas, standing in for
//! real images.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::BBox;

pub const MIN_OBJECTS: usize = 1;
pub const MAX_OBJECTS: usize = 4;
pub const MIN_SIDE: f32 = 8.0;
pub const MAX_SIDE: f32 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: u32,
    pub bounds: BBox,
}

/// A canvas with 1..=4 axis-aligned rectangular objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub canvas: f32,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl SyntheticScene {
    /// Ground-truth boxes carrying their class ids, score 1.
    pub fn ground_truth(&self) -> Vec<BBox> {
        self.objects
            .iter()
            .map(|o| BBox {
                score: 1.0,
                class_id: o.class_id,
                ..o.bounds
            })
            .collect()
    }
}

/// Deterministically generate a scene: object count, classes, sizes, and
/// positions all drawn from a ChaCha stream seeded by `seed`.
pub fn generate_scene(seed: u64, class_universe: &[u32], canvas: f32) -> Result<SyntheticScene> {
    if class_universe.is_empty() {
        return Err(Error::invalid("class universe must be non-empty"));
    }
    if !(canvas.is_finite() && canvas >= MAX_SIDE) {
        return Err(Error::invalid(format!(
            "canvas must be at least {MAX_SIDE} units, got {canvas}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = class_universe[rng.random_range(0..class_universe.len())];
        let w = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let h = rng.random_range(MIN_SIDE..=MAX_SIDE);
        let x1 = rng.random_range(0.0..=(canvas - w));
        let y1 = rng.random_range(0.0..=(canvas - h));
        let bounds = BBox::scored(x1, y1, x1 + w, y1 + h, 1.0, class_id)?;
        objects.push(SceneObject { class_id, bounds });
    }
    Ok(SyntheticScene {
        canvas,
        objects,
        seed,
    })
}

/// Index of the object whose box contains the point, nearest center winning
/// ties; `None` when the point is background.
pub fn enclosing_object(scene: &SyntheticScene, x: f32, y: f32) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, obj) in scene.objects.iter().enumerate() {
        let b = &obj.bounds;
        if x < b.x1 || x > b.x2 || y < b.y1 || y > b.y2 {
            continue;
        }
        let cx = (b.x1 as f64 + b.x2 as f64) / 2.0;
        let cy = (b.y1 as f64 + b.y2 as f64) / 2.0;
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        match best {
            Some((_, best_d2)) if best_d2 <= d2 => {}
            _ => best = Some((idx, d2)),
        }
    }
    best.map(|(idx, _)| idx)
}
