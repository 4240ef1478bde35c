//! Collaborative-filtering reference scorers. They see only
//! `(scenario context key, model id, label)` triples.

mod mf;
mod slope_one;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mf::{MfConfig, MfModel};
pub use slope_one::SlopeOneModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub context: String,
    pub item: String,
    pub value: f64,
}

impl Rating {
    pub fn new(context: impl Into<String>, item: impl Into<String>, value: f64) -> Self {
        Self {
            context: context.into(),
            item: item.into(),
            value,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("baseline file: {0}")]
    Format(String),
}

/// On-disk form of a fitted baseline, tagged by `format`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format")]
pub enum BaselineFile {
    #[serde(rename = "slope-one-v1")]
    SlopeOne(SlopeOneModel<f64>),
    #[serde(rename = "biased-mf-v1")]
    MatrixFactorization(MfModel<f64>),
}

impl BaselineFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("baseline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        serde_json::from_str(text).map_err(|e| BaselineError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_file_round_trip() {
        let ratings = vec![Rating::new("a", "m1", 0.2), Rating::new("a", "m2", 0.9)];
        let so = BaselineFile::SlopeOne(SlopeOneModel::fit(&ratings));
        let text = so.to_json();
        assert!(text.contains("\"format\":\"slope-one-v1\""));
        assert_eq!(BaselineFile::from_json(&text).unwrap(), so);

        let mf = BaselineFile::MatrixFactorization(
            MfModel::fit(
                &ratings,
                &MfConfig {
                    epochs: 3,
                    ..MfConfig::default()
                },
            )
            .unwrap(),
        );
        assert_eq!(BaselineFile::from_json(&mf.to_json()).unwrap(), mf);
        assert!(BaselineFile::from_json("{\"format\":\"svd++\"}").is_err());
    }
}
