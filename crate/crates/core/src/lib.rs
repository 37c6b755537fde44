//! Response-based incremental distillation for dense detection, at desk
//! scale: detector-head response values and transforms, the distillation
//! objective with analytic gradients, adaptive pseudo-label selection, a
//! deterministic toy dense detector, and an incremental-training experiment
//! harness.

pub mod aps;
pub mod distill;
pub mod error;
pub mod harness;
pub mod responses;
pub mod rng;
pub mod toydet;

mod wire;

pub use error::{Error, Result};

/// JSON schema of the experiment report document emitted by the harness.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/experiment_report.schema.json");
