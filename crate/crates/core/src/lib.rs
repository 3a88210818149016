//! Heterogeneity-aware metric learning.
//!
//! Embeddings are trained with a loss that combines a within-domain triplet
//! term and a cross-domain triplet term, each comparing against the mean
//! embedding of several samples of one negative identity. The crate also
//! provides the small embedding network and optimizer used for training, a
//! label-only tuple sampler, labeled feature datasets, and biometric
//! evaluation (CMC, ROC, EER, GAR@FAR).

pub mod adam;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod sampler;
pub mod vector;

pub use adam::{AdamConfig, AdamState};
pub use config::{LossMode, RunConfig};
pub use dataset::{Dataset, Sample, SynthConfig};
pub use error::{Error, Result};
pub use eval::{IdentReport, RocCurve, ScoreSet, VerificationReport};
pub use loss::{EmbeddingTuple, LossGrad, LossValue, Margins};
pub use net::{Activation, EmbeddingNet, NetConfig};
pub use sampler::{DatasetIndex, DomainPolicy, SampledTuple, TupleSpec};
