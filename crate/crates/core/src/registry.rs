//! Scenario, dataset and model registries with constraint matching and
//! dataset/candidate selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub type ConstraintMap = BTreeMap<String, String>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("invalid {entity} `{id}`: field `{field}` {reason}")]
    Validation {
        entity: &'static str,
        id: String,
        field: String,
        reason: String,
    },
    #[error("performance record ({scenario_id}, {dataset_id}, {model_id}) references unknown {kind} `{missing}`")]
    DanglingReference {
        scenario_id: String,
        dataset_id: String,
        model_id: String,
        kind: &'static str,
        missing: String,
    },
    #[error(
        "dataset constraint violated: no dataset serves scenario type `{scenario_type}` (scenario `{scenario_id}`)"
    )]
    DatasetConstraintViolation { scenario_id: String, scenario_type: String },
    #[error("model constraint violated: no model serves scenario type `{scenario_type}` (scenario `{scenario_id}`)")]
    ModelConstraintViolation { scenario_id: String, scenario_type: String },
    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },
    #[error("registry io: {0}")]
    Io(String),
    #[error("registry document malformed: {0}")]
    Malformed(String),
}

fn invalid(entity: &'static str, id: &str, field: &str, reason: impl Into<String>) -> RegistryError {
    RegistryError::Validation {
        entity,
        id: id.to_string(),
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub scenario_type: String,
    #[serde(default)]
    pub constraints: ConstraintMap,
}

impl Scenario {
    pub fn new(id: impl Into<String>, scenario_type: impl Into<String>, constraints: ConstraintMap) -> Self {
        Self {
            id: id.into(),
            scenario_type: scenario_type.into(),
            constraints,
        }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.id.trim().is_empty() {
            return Err(invalid("scenario", &self.id, "id", "must be nonempty"));
        }
        if self.scenario_type.trim().is_empty() {
            return Err(invalid("scenario", &self.id, "scenario_type", "must be nonempty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFeatures {
    pub downloads: i64,
    /// ISO-8601 interval `start/end`; an end of `..` or `present` is open.
    pub collection_time: String,
    pub location: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub dataset_type: String,
    /// Scenario types this dataset serves, in addition to `dataset_type` itself.
    #[serde(default)]
    pub serves_scenarios: Vec<String>,
    pub features: DatasetFeatures,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.id.trim().is_empty() {
            return Err(invalid("dataset", &self.id, "id", "must be nonempty"));
        }
        if self.dataset_type.trim().is_empty() {
            return Err(invalid("dataset", &self.id, "dataset_type", "must be nonempty"));
        }
        if self.features.downloads < 0 {
            return Err(invalid(
                "dataset",
                &self.id,
                "features.downloads",
                format!("must be >= 0, got {}", self.features.downloads),
            ));
        }
        collection_end(&self.features.collection_time)
            .map_err(|reason| invalid("dataset", &self.id, "features.collection_time", reason))?;
        Ok(())
    }

    pub fn serves(&self, scenario_type: &str) -> bool {
        type_matches(&self.dataset_type, &self.serves_scenarios, scenario_type)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFeatures {
    pub citations: i64,
    pub github_stars: i64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: String,
    pub model_type: String,
    #[serde(default)]
    pub serves_scenarios: Vec<String>,
    pub features: ModelFeatures,
    #[serde(default)]
    pub requirements: ConstraintMap,
}

impl Model {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.id.trim().is_empty() {
            return Err(invalid("model", &self.id, "id", "must be nonempty"));
        }
        if self.model_type.trim().is_empty() {
            return Err(invalid("model", &self.id, "model_type", "must be nonempty"));
        }
        if self.features.citations < 0 {
            return Err(invalid(
                "model",
                &self.id,
                "features.citations",
                format!("must be >= 0, got {}", self.features.citations),
            ));
        }
        if self.features.github_stars < 0 {
            return Err(invalid(
                "model",
                &self.id,
                "features.github_stars",
                format!("must be >= 0, got {}", self.features.github_stars),
            ));
        }
        Ok(())
    }

    pub fn serves(&self, scenario_type: &str) -> bool {
        type_matches(&self.model_type, &self.serves_scenarios, scenario_type)
    }
}

/// Fixed MAE / RMSE / MAPE schema; `None` is a masked-off metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub scenario_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub metrics: Metrics,
}

impl PerformanceRecord {
    fn label(&self) -> String {
        format!("{}/{}/{}", self.scenario_id, self.dataset_id, self.model_id)
    }

    /// Hard invariants only; see [`PerformanceRecord::lint`] for soft ones.
    pub fn validate(&self) -> Result<(), RegistryError> {
        let id = self.label();
        let checks = [
            ("metrics.mae", self.metrics.mae),
            ("metrics.rmse", self.metrics.rmse),
            ("metrics.mape", self.metrics.mape),
        ];
        for (field, value) in checks {
            if let Some(v) = value {
                if !v.is_finite() {
                    return Err(invalid("performance", &id, field, "must be finite"));
                }
                if v < 0.0 {
                    return Err(invalid("performance", &id, field, format!("must be >= 0, got {v}")));
                }
            }
        }
        if let Some(mape) = self.metrics.mape {
            if mape > 1.0 {
                return Err(invalid(
                    "performance",
                    &id,
                    "metrics.mape",
                    format!("is a fraction and must be <= 1, got {mape}"),
                ));
            }
        }
        Ok(())
    }

    pub fn lint(&self) -> Option<String> {
        match (self.metrics.mae, self.metrics.rmse) {
            (Some(mae), Some(rmse)) if rmse < mae => {
                Some(format!("performance {}: rmse {rmse} < mae {mae}", self.label()))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Entity {
    Scenario(Scenario),
    Dataset(Dataset),
    Model(Model),
    Performance(PerformanceRecord),
}

macro_rules! entity_from {
    ($($ty:ident => $variant:ident),*) => {
        $(impl From<$ty> for Entity {
            fn from(v: $ty) -> Self {
                Entity::$variant(v)
            }
        })*
    };
}

entity_from!(Scenario => Scenario, Dataset => Dataset, Model => Model, PerformanceRecord => Performance);

fn type_matches(own_type: &str, tags: &[String], scenario_type: &str) -> bool {
    own_type == scenario_type || tags.iter().any(|t| t == scenario_type)
}

/// True iff every requirement is present in the constraints with an equal
/// (whitespace-trimmed, case-sensitive) value.
pub fn match_constraints(constraints: &ConstraintMap, requirements: &ConstraintMap) -> bool {
    requirements
        .iter()
        .all(|(key, required)| constraints.get(key).is_some_and(|have| have.trim() == required.trim()))
}

/// Sortable end of a collection interval: `(year, month, day)`, open ends map
/// to the maximum.
pub(crate) fn collection_end(interval: &str) -> Result<(u32, u32, u32), String> {
    let interval = interval.trim();
    let end = match interval.split_once('/') {
        Some((_, end)) => end.trim(),
        None => interval,
    };
    if end.is_empty() || end == ".." || end.eq_ignore_ascii_case("present") {
        return Ok((u32::MAX, 12, 31));
    }
    let parts: Vec<&str> = end.split('-').collect();
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| format!("bad date component `{s}` in `{interval}`"))
    };
    let (y, m, d) = match parts.as_slice() {
        [y] => (num(y)?, 12, 31),
        [y, m] => (num(y)?, num(m)?, 31),
        [y, m, d] => (num(y)?, num(m)?, num(d)?),
        _ => return Err(format!("expected ISO-8601 date in `{interval}`")),
    };
    if !(1..=12).contains(&m) || !(1..=31).contains(&d) {
        return Err(format!("date out of range in `{interval}`"));
    }
    Ok((y, m, d))
}

/// Picks the type-matching dataset with the most downloads; ties go to the
/// most recent collection end, then the smallest id.
pub fn select_suitable_dataset<'a>(
    scenario: &Scenario,
    datasets: impl IntoIterator<Item = &'a Dataset>,
) -> Result<&'a Dataset, RegistryError> {
    datasets
        .into_iter()
        .filter(|d| d.serves(&scenario.scenario_type))
        .max_by(|a, b| compare_datasets(a, b))
        .ok_or_else(|| RegistryError::DatasetConstraintViolation {
            scenario_id: scenario.id.clone(),
            scenario_type: scenario.scenario_type.clone(),
        })
}

fn compare_datasets(a: &Dataset, b: &Dataset) -> Ordering {
    let end = |d: &Dataset| collection_end(&d.features.collection_time).unwrap_or((0, 0, 0));
    a.features
        .downloads
        .cmp(&b.features.downloads)
        .then_with(|| end(a).cmp(&end(b)))
        .then_with(|| b.id.cmp(&a.id))
}

/// All type-matching datasets in id order.
pub fn matching_datasets<'a>(
    scenario: &Scenario,
    datasets: impl IntoIterator<Item = &'a Dataset>,
) -> Result<Vec<&'a Dataset>, RegistryError> {
    let mut out: Vec<&Dataset> = datasets
        .into_iter()
        .filter(|d| d.serves(&scenario.scenario_type))
        .collect();
    if out.is_empty() {
        return Err(RegistryError::DatasetConstraintViolation {
            scenario_id: scenario.id.clone(),
            scenario_type: scenario.scenario_type.clone(),
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Models whose type matches the scenario type, in id order.
pub fn select_candidate_models<'a>(
    scenario: &Scenario,
    models: impl IntoIterator<Item = &'a Model>,
) -> Result<Vec<&'a Model>, RegistryError> {
    let mut out: Vec<&Model> = models
        .into_iter()
        .filter(|m| m.serves(&scenario.scenario_type))
        .collect();
    if out.is_empty() {
        return Err(RegistryError::ModelConstraintViolation {
            scenario_id: scenario.id.clone(),
            scenario_type: scenario.scenario_type.clone(),
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

type PerfKey = (String, String, String);

/// In-memory registry. Every successful mutation bumps `revision`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    scenarios: BTreeMap<String, Scenario>,
    datasets: BTreeMap<String, Dataset>,
    models: BTreeMap<String, Model>,
    performance: BTreeMap<PerfKey, PerformanceRecord>,
    revision: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryDocument {
    scenarios: Vec<Scenario>,
    datasets: Vec<Dataset>,
    models: Vec<Model>,
    performance: Vec<PerformanceRecord>,
    revision: u64,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn register(&mut self, entity: Entity) -> Result<(), RegistryError> {
        match entity {
            Entity::Scenario(s) => {
                s.validate()?;
                self.scenarios.insert(s.id.clone(), s);
            }
            Entity::Dataset(d) => {
                d.validate()?;
                self.datasets.insert(d.id.clone(), d);
            }
            Entity::Model(m) => {
                m.validate()?;
                self.models.insert(m.id.clone(), m);
            }
            Entity::Performance(p) => {
                p.validate()?;
                self.check_references(&p)?;
                let key = (p.scenario_id.clone(), p.dataset_id.clone(), p.model_id.clone());
                self.performance.insert(key, p);
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Snapshot-style registration: returns a new registry, leaving `self` untouched.
    pub fn with(&self, entity: Entity) -> Result<Registry, RegistryError> {
        let mut next = self.clone();
        next.register(entity)?;
        Ok(next)
    }

    fn check_references(&self, p: &PerformanceRecord) -> Result<(), RegistryError> {
        let dangling = |kind: &'static str, missing: &str| RegistryError::DanglingReference {
            scenario_id: p.scenario_id.clone(),
            dataset_id: p.dataset_id.clone(),
            model_id: p.model_id.clone(),
            kind,
            missing: missing.to_string(),
        };
        if !self.scenarios.contains_key(&p.scenario_id) {
            return Err(dangling("scenario", &p.scenario_id));
        }
        if !self.datasets.contains_key(&p.dataset_id) {
            return Err(dangling("dataset", &p.dataset_id));
        }
        if !self.models.contains_key(&p.model_id) {
            return Err(dangling("model", &p.model_id));
        }
        Ok(())
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.values()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &Dataset> {
        self.datasets.values()
    }

    pub fn models(&self) -> impl Iterator<Item = &Model> {
        self.models.values()
    }

    pub fn performance_records(&self) -> impl Iterator<Item = &PerformanceRecord> {
        self.performance.values()
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.get(id)
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.datasets.get(id)
    }

    pub fn model(&self, id: &str) -> Option<&Model> {
        self.models.get(id)
    }

    pub fn performance(&self, scenario_id: &str, dataset_id: &str, model_id: &str) -> Option<&PerformanceRecord> {
        self.performance
            .get(&(scenario_id.to_string(), dataset_id.to_string(), model_id.to_string()))
    }

    /// Re-checks every invariant, returning soft lint warnings on success.
    pub fn validate(&self) -> Result<Vec<String>, RegistryError> {
        for s in self.scenarios.values() {
            s.validate()?;
        }
        for d in self.datasets.values() {
            d.validate()?;
        }
        for m in self.models.values() {
            m.validate()?;
        }
        let mut warnings = Vec::new();
        for p in self.performance.values() {
            p.validate()?;
            self.check_references(p)?;
            warnings.extend(p.lint());
        }
        Ok(warnings)
    }

    /// Parses a registry document without validating it.
    pub fn from_json_unchecked(text: &str) -> Result<Registry, RegistryError> {
        let doc: RegistryDocument = serde_json::from_str(text).map_err(|e| RegistryError::Malformed(e.to_string()))?;
        let mut reg = Registry {
            revision: doc.revision,
            ..Registry::default()
        };
        for s in doc.scenarios {
            if reg.scenarios.insert(s.id.clone(), s.clone()).is_some() {
                return Err(invalid("scenario", &s.id, "id", "duplicated in document"));
            }
        }
        for d in doc.datasets {
            if reg.datasets.insert(d.id.clone(), d.clone()).is_some() {
                return Err(invalid("dataset", &d.id, "id", "duplicated in document"));
            }
        }
        for m in doc.models {
            if reg.models.insert(m.id.clone(), m.clone()).is_some() {
                return Err(invalid("model", &m.id, "id", "duplicated in document"));
            }
        }
        for p in doc.performance {
            let key = (p.scenario_id.clone(), p.dataset_id.clone(), p.model_id.clone());
            if reg.performance.insert(key, p.clone()).is_some() {
                return Err(invalid("performance", &p.label(), "model_id", "duplicated in document"));
            }
        }
        Ok(reg)
    }

    pub fn from_json(text: &str) -> Result<Registry, RegistryError> {
        let reg = Self::from_json_unchecked(text)?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn to_json(&self) -> String {
        let doc = RegistryDocument {
            scenarios: self.scenarios.values().cloned().collect(),
            datasets: self.datasets.values().cloned().collect(),
            models: self.models.values().cloned().collect(),
            performance: self.performance.values().cloned().collect(),
            revision: self.revision,
        };
        serde_json::to_string_pretty(&doc).expect("registry serializes")
    }

    pub fn load(path: &Path) -> Result<Registry, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))
    }
}
