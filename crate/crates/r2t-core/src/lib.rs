//! End-to-end parameter-recovery pipeline for daily wearable signals:
//! synthetic data generation with structured asymmetric noise, a small
//! transformer encoder that predicts the nine constants of a fixed symbolic
//! decoder, and classical robust nonlinear least-squares baselines, plus the
//! percentile evaluation comparing them.

pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod robust;
pub mod symbolic;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use symbolic::{ParamCodec, Sequence96, StepsSeq, SymbolicParams};
pub use synth::{GenConfig, SequenceSet};
