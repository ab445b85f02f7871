//! Desk-scale laboratory for teacher-guided training (TGT): knowledge
//! distillation with latent-space sample exploration, plus numerical
//! estimators for every quantity appearing in the associated generalization
//! bounds (reconstruction error, Wasserstein-1, empirical Rademacher
//! complexity, teacher penalty, variance and importance-sampling terms).
//!
//! Everything runs on synthetic manifold classification tasks whose
//! generative process is fully known, so population quantities can be
//! computed exactly or by dense Monte Carlo.

pub mod autodiff;
pub mod bounds;
pub mod distill;
pub mod error;
pub mod explore;
pub mod nets;
pub mod seeding;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, NodeId, OpKind, Tape};
pub use error::{Error, Result};
pub use nets::{Activation, MlpParams, MlpSpec, ProbVector};
pub use synth::{ManifoldTask, Provenance, SampleSet, TaskConfig};
pub use tensor::Tensor;
