//! Constraint-gated multi-head attention score function.
//!
//! Pipeline: constraint gate, z-score normalization, per-slot embedding,
//! `blocks` attention blocks, two-layer ReLU head.

mod adam;
mod features;
mod gradcheck;
mod io;
mod network;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::Adam;
pub use features::{
    feature_vector, read_samples_csv, write_samples_csv, FeatureStats, FeatureVector, ScoreSample, Transform,
    FEATURE_NAMES, NUM_FEATURES,
};
pub use gradcheck::{gradient_check, sample_loss};
pub use io::{read_scorer, write_scorer, FORMAT_VERSION, MAGIC};
pub use network::{
    attention_block_forward, embed_features, score_head, BlockTrace, Fcn, Head, HeadTrace, Projection, ProjectionTrace,
    ScorerParams, Shape, Trace, PROJECTIONS,
};
pub use train::{train_scorer, EpochLog, TrainingLog};

use crate::registry::{match_constraints, Dataset, Model, PerformanceRecord, Scenario};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in block {block}, head {head}")]
    NonFinite { block: usize, head: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("no performance record for ({scenario_id}, {dataset_id}, {model_id})")]
    MissingPerformance {
        scenario_id: String,
        dataset_id: String,
        model_id: String,
    },
    #[error("invalid sample ({scenario_id}, {model_id}): {reason}")]
    InvalidSample {
        scenario_id: String,
        model_id: String,
        reason: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("params file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub heads: usize,
    pub blocks: usize,
    pub head_dim: usize,
    /// Hidden width of the output head.
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            heads: 8,
            blocks: 1,
            head_dim: 8,
            hidden: 64,
            batch_size: 64,
            learning_rate: 0.001,
            epochs: 20,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn shape(&self) -> Shape {
        Shape {
            n_features: NUM_FEATURES,
            heads: self.heads,
            blocks: self.blocks,
            head_dim: self.head_dim,
            hidden: self.hidden,
        }
    }

    pub fn validate(&self) -> Result<(), ScorerError> {
        self.shape().validate()?;
        if self.batch_size == 0 {
            return Err(ScorerError::InvalidHyperparams("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ScorerError::InvalidHyperparams("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Trained parameters together with the statistics used to normalize inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScorer<T> {
    pub params: ScorerParams<T>,
    pub stats: FeatureStats,
}

impl<T: Scalar> TrainedScorer<T> {
    pub fn score_features(&self, raw: &FeatureVector) -> Result<f64, ScorerError> {
        let x: Vec<T> = self.stats.normalize(raw).iter().map(|v| T::lit(*v)).collect();
        Ok(self.params.score(&x)?.to_f64_lossy())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub value: f64,
    /// Set when the model's requirements are not met; `value` is then 0.
    pub gated: bool,
}

impl Scored {
    pub const GATED: Scored = Scored {
        value: 0.0,
        gated: true,
    };
}

/// Scores one (scenario, dataset, model) triple. Requirement mismatches
/// short-circuit to exactly 0 without touching the network.
pub fn score_triple<T: Scalar>(
    scenario: &Scenario,
    dataset: &Dataset,
    model: &Model,
    performance: Option<&PerformanceRecord>,
    scorer: &TrainedScorer<T>,
) -> Result<Scored, ScorerError> {
    if !match_constraints(&scenario.constraints, &model.requirements) {
        return Ok(Scored::GATED);
    }
    let perf = performance
        .filter(|p| p.scenario_id == scenario.id && p.dataset_id == dataset.id && p.model_id == model.id)
        .ok_or_else(|| ScorerError::MissingPerformance {
            scenario_id: scenario.id.clone(),
            dataset_id: dataset.id.clone(),
            model_id: model.id.clone(),
        })?;
    let value = scorer.score_features(&feature_vector(model, perf))?;
    Ok(Scored { value, gated: false })
}
