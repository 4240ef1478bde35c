//! Scenario-to-model allocation: a registry of scenarios, datasets and
//! models, a trainable attention score function, greedy allocation with a
//! persistent memo, and an evaluation harness with collaborative-filtering
//! baselines.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod allocator;
pub mod baselines;
pub mod eval;
pub mod fixtures;
pub mod mnemonic;
pub mod registry;
pub mod scalar;
pub mod scorer;

pub use scalar::Scalar;

pub type Scorer = scorer::TrainedScorer<f64>;
pub type Scorer32 = scorer::TrainedScorer<f32>;
pub type Params = scorer::ScorerParams<f64>;
pub type Params32 = scorer::ScorerParams<f32>;
pub type SlopeOne = baselines::SlopeOneModel<f64>;
pub type SlopeOne32 = baselines::SlopeOneModel<f32>;
pub type Mf = baselines::MfModel<f64>;
pub type Mf32 = baselines::MfModel<f32>;
