//! Fixed featurizer: a seeded random linear projection of a hand-built
//! occupancy descriptor, shared by the teacher and every student so that
//! head responses are directly comparable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::Location;
use crate::rng::mix_seed;
use crate::toydet::scene::{enclosing_object, SyntheticScene};

/// Grid, head, and featurizer dimensions of the toy detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLayout {
    pub canvas: f32,
    pub stride: f32,
    pub feature_dim: usize,
    pub bins: usize,
    pub featurizer_seed: u64,
    pub noise_scale: f32,
}

impl Default for ToyLayout {
    fn default() -> Self {
        ToyLayout {
            canvas: 64.0,
            stride: 8.0,
            feature_dim: 32,
            bins: 8,
            featurizer_seed: 0xF0CA_1D17,
            noise_scale: 0.05,
        }
    }
}

impl ToyLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.canvas.is_finite() && self.canvas > 0.0) {
            return Err(Error::invalid(format!("canvas must be positive, got {}", self.canvas)));
        }
        if !(self.stride.is_finite() && self.stride > 0.0) {
            return Err(Error::invalid(format!("stride must be positive, got {}", self.stride)));
        }
        let cells = self.canvas / self.stride;
        if (cells - cells.round()).abs() > 1e-6 || cells < 1.0 {
            return Err(Error::invalid(format!(
                "canvas ({}) must be an integer multiple of stride ({})",
                self.canvas, self.stride
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if self.bins < 2 {
            return Err(Error::invalid(format!("bins must be at least 2, got {}", self.bins)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// Cells per canvas side.
    pub fn grid(&self) -> usize {
        (self.canvas / self.stride).round() as usize
    }

    pub fn num_locations(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Grid anchor points in row-major order (y outer, x inner).
    pub fn locations(&self) -> Vec<Location> {
        let g = self.grid();
        let mut out = Vec::with_capacity(g * g);
        for iy in 0..g {
            for ix in 0..g {
                let x = ix as f32 * self.stride + self.stride / 2.0;
                let y = iy as f32 * self.stride + self.stride / 2.0;
                out.push(Location { x, y, stride: self.stride });
            }
        }
        out
    }
}

/// Per-location features over the detector grid, location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    features: Vec<f32>,
    locations: Vec<Location>,
    feature_dim: usize,
}

impl FeatureMap {
    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn row(&self, location: usize) -> &[f32] {
        &self.features[location * self.feature_dim..(location + 1) * self.feature_dim]
    }
}

/// Coverage subsample resolution per cell axis (16 points per cell).
const COVERAGE_SAMPLES: usize = 4;

/// The fixed featurizer. The descriptor of a cell is the per-class coverage
/// fraction of the cell and its 8 neighbors plus the cell's normalized
/// offsets to the nearest enclosing object's four edges; features are a
/// seeded random projection of that descriptor plus small additive noise.
#[derive(Debug, Clone)]
pub struct Featurizer {
    layout: ToyLayout,
    class_universe: Vec<u32>,
    /// feature_dim x descriptor_dim, row-major by feature.
    projection: Vec<f64>,
    descriptor_dim: usize,
}

impl Featurizer {
    pub fn new(layout: ToyLayout, class_universe: &[u32]) -> Result<Self> {
        layout.validate()?;
        if class_universe.is_empty() {
            return Err(Error::invalid("featurizer needs a non-empty class universe"));
        }
        let descriptor_dim = class_universe.len() * 9 + 4;
        let mut rng = ChaCha8Rng::seed_from_u64(layout.featurizer_seed);
        let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let scale = 1.0 / (descriptor_dim as f64).sqrt();
        let projection: Vec<f64> = (0..layout.feature_dim * descriptor_dim)
            .map(|_| normal.sample(&mut rng) * scale)
            .collect();
        Ok(Featurizer {
            layout,
            class_universe: class_universe.to_vec(),
            projection,
            descriptor_dim,
        })
    }

    pub fn layout(&self) -> &ToyLayout {
        &self.layout
    }

    pub fn class_universe(&self) -> &[u32] {
        &self.class_universe
    }

    /// Fraction of each grid cell covered by each universe class, estimated
    /// on a fixed subsample lattice. Indexed `[cell * K + class]`.
    fn coverage_table(&self, scene: &SyntheticScene) -> Vec<f64> {
        let g = self.layout.grid();
        let k = self.class_universe.len();
        let stride = self.layout.stride;
        let mut table = vec![0.0f64; g * g * k];
        let step = stride / COVERAGE_SAMPLES as f32;
        for (ci, &class_id) in self.class_universe.iter().enumerate() {
            let boxes: Vec<_> = scene
                .objects
                .iter()
                .filter(|o| o.class_id == class_id)
                .map(|o| o.bounds)
                .collect();
            if boxes.is_empty() {
                continue;
            }
            for iy in 0..g {
                for ix in 0..g {
                    let mut hits = 0usize;
                    for sy in 0..COVERAGE_SAMPLES {
                        let py = iy as f32 * stride + (sy as f32 + 0.5) * step;
                        for sx in 0..COVERAGE_SAMPLES {
                            let px = ix as f32 * stride + (sx as f32 + 0.5) * step;
                            if boxes
                                .iter()
                                .any(|b| px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2)
                            {
                                hits += 1;
                            }
                        }
                    }
                    table[(iy * g + ix) * k + ci] =
                        hits as f64 / (COVERAGE_SAMPLES * COVERAGE_SAMPLES) as f64;
                }
            }
        }
        table
    }

    fn descriptor(
        &self,
        scene: &SyntheticScene,
        coverage: &[f64],
        ix: usize,
        iy: usize,
        out: &mut Vec<f64>,
    ) {
        out.clear();
        let g = self.layout.grid();
        let k = self.class_universe.len();
        for ci in 0..k {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = ix as i64 + dx;
                    let ny = iy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= g as i64 || ny >= g as i64 {
                        out.push(0.0);
                    } else {
                        out.push(coverage[(ny as usize * g + nx as usize) * k + ci]);
                    }
                }
            }
        }
        let cx = ix as f32 * self.layout.stride + self.layout.stride / 2.0;
        let cy = iy as f32 * self.layout.stride + self.layout.stride / 2.0;
        match enclosing_object(scene, cx, cy) {
            Some(obj) => {
                let b = &scene.objects[obj].bounds;
                let s = self.layout.stride as f64;
                out.push((cy - b.y1) as f64 / s);
                out.push((b.y2 - cy) as f64 / s);
                out.push((cx - b.x1) as f64 / s);
                out.push((b.x2 - cx) as f64 / s);
            }
            None => out.extend_from_slice(&[0.0; 4]),
        }
    }

    /// Deterministic features for a scene: projection of the descriptor plus
    /// noise seeded by (featurizer seed, scene seed).
    pub fn featurize(&self, scene: &SyntheticScene) -> FeatureMap {
        let g = self.layout.grid();
        let f_dim = self.layout.feature_dim;
        let coverage = self.coverage_table(scene);
        let mut noise_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(self.layout.featurizer_seed, scene.seed));
        let normal = Normal::new(0.0f64, self.layout.noise_scale as f64).expect("noise scale");
        let mut features = Vec::with_capacity(g * g * f_dim);
        let mut desc = Vec::with_capacity(self.descriptor_dim);
        for iy in 0..g {
            for ix in 0..g {
                self.descriptor(scene, &coverage, ix, iy, &mut desc);
                for f in 0..f_dim {
                    let row = &self.projection[f * self.descriptor_dim..(f + 1) * self.descriptor_dim];
                    let mut acc = 0.0f64;
                    for (w, d) in row.iter().zip(&desc) {
                        acc += w * d;
                    }
                    if self.layout.noise_scale > 0.0 {
                        acc += normal.sample(&mut noise_rng);
                    }
                    features.push(acc as f32);
                }
            }
        }
        FeatureMap {
            features,
            locations: self.layout.locations(),
            feature_dim: f_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toydet::scene::generate_scene;

    fn featurizer() -> Featurizer {
        Featurizer::new(ToyLayout::default(), &[0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn layout_grid_and_locations() {
        let l = ToyLayout::default();
        assert_eq!(l.grid(), 8);
        let locs = l.locations();
        assert_eq!(locs.len(), 64);
        assert_eq!((locs[0].x, locs[0].y), (4.0, 4.0));
        assert_eq!((locs[9].x, locs[9].y), (12.0, 12.0));
    }

    #[test]
    fn identical_scenes_identical_features() {
        let f = featurizer();
        let a = generate_scene(7, &[0, 1, 2, 3], 64.0).unwrap();
        let b = generate_scene(7, &[0, 1, 2, 3], 64.0).unwrap();
        assert_eq!(f.featurize(&a), f.featurize(&b));
    }

    #[test]
    fn empty_scene_features_are_pure_noise_around_zero() {
        let mut layout = ToyLayout::default();
        layout.noise_scale = 0.0;
        let f = Featurizer::new(layout, &[0]).unwrap();
        let empty = SyntheticScene {
            canvas: 64.0,
            objects: vec![],
            seed: 3,
        };
        let fm = f.featurize(&empty);
        assert!(fm.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coverage_separates_inside_from_outside() {
        let f = featurizer();
        let mut scene = generate_scene(11, &[0], 64.0).unwrap();
        // one object with a known footprint
        scene.objects.truncate(1);
        let b = crate::responses::BBox::scored(0.0, 0.0, 24.0, 24.0, 1.0, 0).unwrap();
        scene.objects[0].bounds = b;
        scene.objects[0].class_id = 0;
        let coverage = f.coverage_table(&scene);
        let k = 4;
        assert_eq!(coverage[0 * k + 0], 1.0); // cell (0,0) fully covered
        assert_eq!(coverage[(7 * 8 + 7) * k + 0], 0.0); // far corner untouched
    }

    #[test]
    fn noise_differs_across_scene_seeds() {
        let f = featurizer();
        let mut a = generate_scene(1, &[0], 64.0).unwrap();
        let mut b = a.clone();
        a.seed = 100;
        b.seed = 200;
        assert_ne!(f.featurize(&a), f.featurize(&b));
    }
}
