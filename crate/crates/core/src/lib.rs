//! Toy-scale diffusion laboratory.
//!
//! A small MLP noise predictor is pretrained on a diverse 2-D source ring,
//! then fine-tuned on a limited, shifted target ring either naively or with
//! self-distillation from a frozen copy of itself: SNR-down-weighted
//! prediction matching on noised target data plus matching on pure-noise
//! inputs. Samplers, translation and metrics measure what the fine-tuned
//! model keeps from the source.
//!
//! Module map:
//! - [`tensor`]: dense tensors and a reverse-mode tape
//! - [`schedule`]: noise schedules and timestep weights
//! - [`model`]: the time-conditioned denoiser
//! - [`train`]: losses, optimizer and training loops
//! - [`sampler`]: ancestral and DDIM reverse processes, translation
//! - [`data`]: ring datasets
//! - [`metrics`]: coverage, MMD, faithfulness, alignment
//! - [`experiment`]: the end-to-end fine-tuning comparison
//! - [`io`]: checkpoints, config, CSV and SVG

pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
