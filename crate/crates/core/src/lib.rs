//! Prototype-conditioned flow matching at desk scale.
//!
//! The crate covers the whole controllable-generation stack: data curation,
//! a frozen prototype bank with hybrid dense + keyword retrieval, a
//! multi-stream condition builder, flow-matching training and Euler/CFG
//! sampling for a small diffusion transformer, and the evaluation metrics
//! used to judge it. Everything is seeded and runs on CPU in `f64`.

pub mod autograd;
pub mod bank;
pub mod checksum;
pub mod codec;
pub mod curation;
pub mod embed;
pub mod error;
pub mod eval;
pub mod flowmatch;
pub mod linalg;
pub mod msc;
pub mod nn;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod text;
pub mod toy;

pub use error::{Error, Result};
