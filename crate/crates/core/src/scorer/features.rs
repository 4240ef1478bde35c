//! Feature slots, z-score statistics and the labeled-sample CSV format.

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize};

use super::ScorerError;
use crate::registry::{Model, PerformanceRecord};

pub const NUM_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "citations",
    "github_stars",
    "mae",
    "rmse",
    "mape",
    "mae_mask",
    "rmse_mask",
    "mape_mask",
];

pub type FeatureVector = [f64; NUM_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    Log1pZscore,
}

impl Transform {
    pub fn for_slot(slot: usize) -> Transform {
        if slot < 2 {
            Transform::Log1pZscore
        } else {
            Transform::Identity
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log1pZscore => x.ln_1p(),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Transform::Identity => 0,
            Transform::Log1pZscore => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Transform> {
        match tag {
            0 => Some(Transform::Identity),
            1 => Some(Transform::Log1pZscore),
            _ => None,
        }
    }
}

/// Per-slot mean and population std, computed after the slot's transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub transforms: [Transform; NUM_FEATURES],
    pub means: [f64; NUM_FEATURES],
    pub stds: [f64; NUM_FEATURES],
}

impl FeatureStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Result<FeatureStats, ScorerError> {
        let transforms: [Transform; NUM_FEATURES] = std::array::from_fn(Transform::for_slot);
        let rows: Vec<FeatureVector> = rows
            .into_iter()
            .map(|r| std::array::from_fn(|i| transforms[i].apply(r[i])))
            .collect();
        if rows.is_empty() {
            return Err(ScorerError::EmptyTrainingSet);
        }
        let n = rows.len() as f64;
        let means: [f64; NUM_FEATURES] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n);
        let stds = std::array::from_fn(|i| {
            let var = rows.iter().map(|r| (r[i] - means[i]).powi(2)).sum::<f64>() / n;
            var.sqrt()
        });
        Ok(FeatureStats {
            transforms,
            means,
            stds,
        })
    }

    pub fn normalize(&self, raw: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|i| {
            if self.stds[i] == 0.0 {
                0.0
            } else {
                (self.transforms[i].apply(raw[i]) - self.means[i]) / self.stds[i]
            }
        })
    }
}

/// Raw slots `[citations, github_stars, mae, rmse, mape, masks...]`; absent
/// metrics contribute 0 with a 0 mask.
pub fn feature_vector(model: &Model, perf: &PerformanceRecord) -> FeatureVector {
    let m = perf.metrics;
    let slot = |v: Option<f64>| (v.unwrap_or(0.0), if v.is_some() { 1.0 } else { 0.0 });
    let (mae, mae_mask) = slot(m.mae);
    let (rmse, rmse_mask) = slot(m.rmse);
    let (mape, mape_mask) = slot(m.mape);
    [
        model.features.citations as f64,
        model.features.github_stars as f64,
        mae,
        rmse,
        mape,
        mae_mask,
        rmse_mask,
        mape_mask,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    pub scenario_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub features: FeatureVector,
    pub label: f64,
    pub gate: bool,
}

impl ScoreSample {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |reason: String| ScorerError::InvalidSample {
            model_id: self.model_id.clone(),
            scenario_id: self.scenario_id.clone(),
            reason,
        };
        for (i, v) in self.features.iter().enumerate() {
            if !v.is_finite() {
                return Err(bad(format!("{} is not finite", FEATURE_NAMES[i])));
            }
        }
        for i in 5..8 {
            let mask = self.features[i];
            if mask != 0.0 && mask != 1.0 {
                return Err(bad(format!("{} must be 0 or 1", FEATURE_NAMES[i])));
            }
            if mask == 0.0 && self.features[i - 3] != 0.0 {
                return Err(bad(format!("masked-off {} must carry 0", FEATURE_NAMES[i - 3])));
            }
        }
        if !(0.0..=1.0).contains(&self.label) {
            return Err(bad(format!("label {} outside [0, 1]", self.label)));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scenario_id: String,
    dataset_id: String,
    model_id: String,
    citations: f64,
    github_stars: f64,
    mae: f64,
    rmse: f64,
    mape: f64,
    mae_mask: f64,
    rmse_mask: f64,
    mape_mask: f64,
    #[serde(deserialize_with = "flag_from_str", serialize_with = "flag_to_str")]
    gate: bool,
    label: f64,
}

fn flag_from_str<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!("expected 0/1 gate, got `{other}`"))),
    }
}

fn flag_to_str<S: serde::Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(if *v { "1" } else { "0" })
}

pub fn read_samples_csv(reader: impl Read) -> Result<Vec<ScoreSample>, ScorerError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| ScorerError::Csv(format!("row {}: {e}", i + 1)))?;
        let sample = ScoreSample {
            features: [
                row.citations,
                row.github_stars,
                row.mae,
                row.rmse,
                row.mape,
                row.mae_mask,
                row.rmse_mask,
                row.mape_mask,
            ],
            scenario_id: row.scenario_id,
            dataset_id: row.dataset_id,
            model_id: row.model_id,
            label: row.label,
            gate: row.gate,
        };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_samples_csv(writer: impl Write, samples: &[ScoreSample]) -> Result<(), ScorerError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        let f = s.features;
        w.serialize(CsvRow {
            scenario_id: s.scenario_id.clone(),
            dataset_id: s.dataset_id.clone(),
            model_id: s.model_id.clone(),
            citations: f[0],
            github_stars: f[1],
            mae: f[2],
            rmse: f[3],
            mape: f[4],
            mae_mask: f[5],
            rmse_mask: f[6],
            mape_mask: f[7],
            gate: s.gate,
            label: s.label,
        })
        .map_err(|e| ScorerError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| ScorerError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(slot: usize, v: f64) -> FeatureVector {
        let mut r = [0.0; NUM_FEATURES];
        r[slot] = v;
        r
    }

    #[test]
    fn single_sample_has_zero_stds() {
        let stats = FeatureStats::fit(&[[3.0; NUM_FEATURES]]).unwrap();
        assert!(stats.stds.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn empty_fit_fails() {
        assert!(matches!(FeatureStats::fit(&[]), Err(ScorerError::EmptyTrainingSet)));
    }

    #[test]
    fn citations_use_log1p_population_std() {
        let stats = FeatureStats::fit(&[row(0, 0.0), row(0, 9.0)]).unwrap();
        assert_eq!(stats.transforms[0], Transform::Log1pZscore);
        assert_abs_diff_eq!(stats.means[0], 1.151293, epsilon = 1e-6);
        assert_abs_diff_eq!(stats.stds[0], 1.151293, epsilon = 1e-6);
    }

    #[test]
    fn mask_slot_is_identity() {
        let stats = FeatureStats::fit(&[row(5, 1.0), row(5, 1.0), row(5, 0.0)]).unwrap();
        assert_eq!(stats.transforms[5], Transform::Identity);
        assert_abs_diff_eq!(stats.means[5], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let stats = FeatureStats::fit(&[row(2, 1.0), row(2, 2.0), row(2, 3.0)]).unwrap();
        assert_abs_diff_eq!(stats.stds[2], 0.816497, epsilon = 1e-6);
        assert_abs_diff_eq!(stats.normalize(&row(2, 2.0))[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.normalize(&row(2, 3.0))[2], 1.224745, epsilon = 1e-6);
        assert_abs_diff_eq!(stats.normalize(&row(2, 4.0))[2], 2.449490, epsilon = 1e-6);
        // constant column
        assert_eq!(stats.normalize(&row(3, 17.0))[3], 0.0);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let s = ScoreSample {
            scenario_id: "s".into(),
            dataset_id: "d".into(),
            model_id: "m".into(),
            features: [1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 1.0, 0.0],
            label: 0.25,
            gate: true,
        };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "scenario_id,dataset_id,model_id,citations,github_stars,mae,rmse,mape,mae_mask,rmse_mask,mape_mask,gate,label\n"
        ));
        assert_eq!(read_samples_csv(buf.as_slice()).unwrap(), vec![s]);
    }

    #[test]
    fn csv_rejects_bad_mask_and_label() {
        let header = "scenario_id,dataset_id,model_id,citations,github_stars,mae,rmse,mape,mae_mask,rmse_mask,mape_mask,gate,label\n";
        let bad_mask = format!("{header}s,d,m,1,1,1,1,1,2,1,1,1,0.5\n");
        assert!(read_samples_csv(bad_mask.as_bytes()).is_err());
        let bad_label = format!("{header}s,d,m,1,1,1,1,1,1,1,1,true,1.5\n");
        assert!(read_samples_csv(bad_label.as_bytes()).is_err());
        let masked_nonzero = format!("{header}s,d,m,1,1,1,1,0.3,1,1,0,0,0.5\n");
        assert!(read_samples_csv(masked_nonzero.as_bytes()).is_err());
    }
}
