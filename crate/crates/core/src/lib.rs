//! Colon-capsule-endoscopy image analysis on a small deterministic
//! neural-network engine.
//!
//! Stages: abnormality recognition ([`recognition`]), polyp segmentation
//! ([`segmentation`]) and size estimation ([`sizing`]), and
//! neoplastic/non-neoplastic characterization with Gram-matrix spectra
//! ([`characterization`]). [`phantom`] generates seeded synthetic
//! datasets with ground truth, and [`pipeline`] wires the stages together.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characterization;
pub mod error;
pub mod format;
pub mod linalg;
pub mod mask;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod recognition;
pub mod rng;
pub mod segmentation;
pub mod sizing;

pub use error::{Error, Result};
pub use nn::Tensor;
pub use rng::Rng;
