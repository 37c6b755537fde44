//! Linear detector-head parameters and their versioned binary format.
//!
//! Layout (little-endian): magic `IRDP`, `u16` version, `u32` F, `u32` K,
//! `u32` n, K x u32 class ids, then f32 payloads in declared field order:
//! classification weights (F*K, feature-major), classification bias (K),
//! regression weights (F*4n), regression bias (4n).

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::wire::{get_f32_vec, get_u16, get_u32, put_f32, put_u16, put_u32, take};

pub const PARAMS_MAGIC: [u8; 4] = *b"IRDP";
pub const PARAMS_VERSION: u16 = 1;

const MAX_DIM: u32 = 16_777_216;

/// Standard deviation of fresh head weights.
const INIT_STD: f64 = 0.01;

/// Classification and regression head weights of the toy detector.
///
/// Weight layout is feature-major: `w_cls[f * K + k]`, `w_reg[f * 4n + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub class_ids: Vec<u32>,
    pub feature_dim: usize,
    pub bins: usize,
    pub w_cls: Vec<f32>,
    pub b_cls: Vec<f32>,
    pub w_reg: Vec<f32>,
    pub b_reg: Vec<f32>,
}

impl DetectorParams {
    /// Fresh head with small seeded gaussian weights.
    pub fn init(seed: u64, class_ids: &[u32], feature_dim: usize, bins: usize) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::invalid("detector needs at least one class"));
        }
        if feature_dim == 0 || bins < 2 {
            return Err(Error::invalid(format!(
                "bad head dimensions: feature_dim={feature_dim}, bins={bins}"
            )));
        }
        let k = class_ids.len();
        let reg_cols = 4 * bins;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("init std");
        let mut draw = |count: usize| -> Vec<f32> {
            (0..count).map(|_| normal.sample(&mut rng) as f32).collect()
        };
        let params = DetectorParams {
            class_ids: class_ids.to_vec(),
            feature_dim,
            bins,
            w_cls: draw(feature_dim * k),
            b_cls: draw(k),
            w_reg: draw(feature_dim * reg_cols),
            b_reg: draw(reg_cols),
        };
        params.validate()?;
        Ok(params)
    }

    /// Copy of this detector extended with channels for `new_classes`; new
    /// columns get small seeded weights, existing weights are untouched.
    pub fn expand_for_classes(&self, new_classes: &[u32], seed: u64) -> Result<Self> {
        for &c in new_classes {
            if self.class_ids.contains(&c) {
                return Err(Error::invalid(format!("class {c} already present in detector")));
            }
        }
        let old_k = self.class_ids.len();
        let new_k = old_k + new_classes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("init std");
        let mut w_cls = vec![0.0f32; self.feature_dim * new_k];
        for f in 0..self.feature_dim {
            w_cls[f * new_k..f * new_k + old_k]
                .copy_from_slice(&self.w_cls[f * old_k..(f + 1) * old_k]);
            for nk in old_k..new_k {
                w_cls[f * new_k + nk] = normal.sample(&mut rng) as f32;
            }
        }
        let mut b_cls = self.b_cls.clone();
        for _ in 0..new_classes.len() {
            b_cls.push(normal.sample(&mut rng) as f32);
        }
        let mut class_ids = self.class_ids.clone();
        class_ids.extend_from_slice(new_classes);
        let params = DetectorParams {
            class_ids,
            feature_dim: self.feature_dim,
            bins: self.bins,
            w_cls,
            b_cls,
            w_reg: self.w_reg.clone(),
            b_reg: self.b_reg.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_ids.len();
        let mut uniq = self.class_ids.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != k {
            return Err(Error::invalid("class ids must be unique"));
        }
        let reg_cols = 4 * self.bins;
        let checks = [
            ("w_cls", self.w_cls.len(), self.feature_dim * k),
            ("b_cls", self.b_cls.len(), k),
            ("w_reg", self.w_reg.len(), self.feature_dim * reg_cols),
            ("b_reg", self.b_reg.len(), reg_cols),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape(format!("{name}: expected {want} values, got {got}")));
            }
        }
        for v in self
            .w_cls
            .iter()
            .chain(&self.b_cls)
            .chain(&self.w_reg)
            .chain(&self.b_reg)
        {
            if !v.is_finite() {
                return Err(Error::invalid("detector weights must be finite"));
            }
        }
        Ok(())
    }
}

pub fn write_params<W: Write>(params: &DetectorParams, sink: &mut W) -> Result<()> {
    params.validate()?;
    sink.write_all(&PARAMS_MAGIC)?;
    put_u16(sink, PARAMS_VERSION)?;
    put_u32(sink, params.feature_dim as u32)?;
    put_u32(sink, params.num_classes() as u32)?;
    put_u32(sink, params.bins as u32)?;
    for &c in &params.class_ids {
        put_u32(sink, c)?;
    }
    for &v in params
        .w_cls
        .iter()
        .chain(&params.b_cls)
        .chain(&params.w_reg)
        .chain(&params.b_reg)
    {
        put_f32(sink, v)?;
    }
    Ok(())
}

pub fn read_params<R: Read>(source: &mut R) -> Result<DetectorParams> {
    let magic = take::<R, 4>(source, "magic")?;
    if magic != PARAMS_MAGIC {
        return Err(Error::BadMagic {
            expected: PARAMS_MAGIC,
            found: magic,
        });
    }
    let version = get_u16(source, "version")?;
    if version != PARAMS_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: PARAMS_VERSION,
            found: version,
        });
    }
    let f = get_u32(source, "feature dim")?;
    let k = get_u32(source, "class count")?;
    let n = get_u32(source, "bin count")?;
    if f == 0 || k == 0 || n < 2 || f > MAX_DIM || k > MAX_DIM || n > MAX_DIM {
        return Err(Error::shape(format!(
            "implausible parameter dimensions: F={f}, K={k}, n={n}"
        )));
    }
    let (f, k, n) = (f as usize, k as usize, n as usize);
    let mut class_ids = Vec::with_capacity(k);
    for _ in 0..k {
        class_ids.push(get_u32(source, "class ids")?);
    }
    let params = DetectorParams {
        class_ids,
        feature_dim: f,
        bins: n,
        w_cls: get_f32_vec(source, f * k, "classification weights")?,
        b_cls: get_f32_vec(source, k, "classification bias")?,
        w_reg: get_f32_vec(source, f * 4 * n, "regression weights")?,
        b_reg: get_f32_vec(source, 4 * n, "regression bias")?,
    };
    params.validate()?;
    Ok(params)
}
