//! Evaluation harness: splits, Hit@k, the synthetic benchmark and repeated
//! seeded trials comparing the attention scorer with the baselines.

mod experiment;
mod metrics;
mod split;
mod synth;

use thiserror::Error;

pub use experiment::{
    evaluate_trial, run_experiment, BaselineKind, Block, ExperimentConfig, HitRates, Report, RuntimeStats, TrialEval,
    TrialResult, ATTENTION, MF, SLOPE_ONE, TOP_K,
};
pub use metrics::hit_at_k;
pub use split::{split_records, validate_ratios, Ratios, Splits};
pub use synth::{generate_synthetic, SynthConfig, SyntheticData, SCENARIO_TYPES};

use crate::baselines::BaselineError;
use crate::registry::RegistryError;
use crate::scorer::ScorerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("split: {0}")]
    Split(String),
    #[error("scenario {0}")]
    MissingScenario(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}
