//! Greedy scenario-to-model allocation and its top-k variant.
//!
//! A model may serve any number of scenarios, so the greedy loop (highest
//! scoring feasible triple first) settles every scenario on its own argmax.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{
    match_constraints, matching_datasets, select_candidate_models, select_suitable_dataset, Dataset, Model, Registry,
    Scenario,
};
use crate::scalar::Scalar;
use crate::scorer::{score_triple, Scored, ScorerError, TrainedScorer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    /// No performance record exists; the triple is infeasible rather than wrong.
    #[error("no performance record")]
    NoPerformance,
    #[error("{0}")]
    Failed(String),
}

impl From<ScorerError> for ScoreError {
    fn from(e: ScorerError) -> Self {
        match e {
            ScorerError::MissingPerformance { .. } => ScoreError::NoPerformance,
            other => ScoreError::Failed(other.to_string()),
        }
    }
}

/// Scores a (scenario, dataset, model) triple. Implementations must return
/// `Scored::GATED` when the model's requirements are not met.
pub trait ScoreFn: Sync {
    fn score(&self, scenario: &Scenario, dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError>;
}

impl<F> ScoreFn for F
where
    F: Fn(&Scenario, &Dataset, &Model) -> Result<Scored, ScoreError> + Sync,
{
    fn score(&self, scenario: &Scenario, dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError> {
        self(scenario, dataset, model)
    }
}

/// The trained attention scorer over a registry's performance records.
pub struct AttentionScoreFn<'a, T> {
    pub registry: &'a Registry,
    pub scorer: &'a TrainedScorer<T>,
}

impl<T: Scalar> ScoreFn for AttentionScoreFn<'_, T> {
    fn score(&self, scenario: &Scenario, dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError> {
        let perf = self.registry.performance(&scenario.id, &dataset.id, &model.id);
        Ok(score_triple(scenario, dataset, model, perf, self.scorer)?)
    }
}

/// Fixed scores keyed by `(scenario_id, model_id)`, gated like the network.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let table: ScoreTable = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for (s, row) in &table.scores {
            for (m, v) in row {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(format!("score for ({s}, {m}) must be finite and >= 0, got {v}"));
                }
            }
        }
        Ok(table)
    }
}

impl ScoreFn for ScoreTable {
    fn score(&self, scenario: &Scenario, _dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError> {
        if !match_constraints(&scenario.constraints, &model.requirements) {
            return Ok(Scored::GATED);
        }
        self.scores
            .get(&scenario.id)
            .and_then(|row| row.get(&model.id))
            .map(|&value| Scored { value, gated: false })
            .ok_or(ScoreError::NoPerformance)
    }
}

/// Wraps a score function and counts its invocations.
pub struct Counting<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F: ScoreFn> Counting<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(AtomicOrdering::Relaxed)
    }
}

impl<F: ScoreFn> ScoreFn for Counting<F> {
    fn score(&self, scenario: &Scenario, dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError> {
        self.calls.fetch_add(1, AtomicOrdering::Relaxed);
        self.inner.score(scenario, dataset, model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub scenario_id: String,
    pub dataset_id: String,
    pub model_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnassignedReason {
    DatasetConstraint,
    ModelConstraint,
    RequirementsUnmet,
    NoPerformance,
    ScoringFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unassigned {
    pub scenario_id: String,
    pub reason: UnassignedReason,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocOptions {
    /// Score every type-matching dataset instead of only the suitable one.
    pub search_datasets: bool,
}

/// Entries in the order they were added, plus per-scenario diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub entries: Vec<AllocationEntry>,
    pub unassigned: Vec<Unassigned>,
}

/// Per-scenario ranked lists, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub lists: BTreeMap<String, Vec<AllocationEntry>>,
    pub unassigned: Vec<Unassigned>,
}

struct Candidates<'a> {
    scenario: &'a Scenario,
    feasible: Vec<AllocationEntry>,
}

fn by_rank(a: &AllocationEntry, b: &AllocationEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.scenario_id.cmp(&b.scenario_id))
        .then_with(|| a.model_id.cmp(&b.model_id))
        .then_with(|| a.dataset_id.cmp(&b.dataset_id))
}

fn collect<'a, S: ScoreFn + ?Sized>(
    scenarios: &[&'a Scenario],
    datasets: &[&Dataset],
    models: &[&Model],
    score_fn: &S,
    opts: AllocOptions,
) -> (Vec<Candidates<'a>>, Vec<Unassigned>) {
    let mut out = Vec::new();
    let mut unassigned = Vec::new();
    for &scenario in scenarios {
        match candidates_for(scenario, datasets, models, score_fn, opts) {
            Ok(feasible) => out.push(Candidates { scenario, feasible }),
            Err(u) => unassigned.push(u),
        }
    }
    (out, unassigned)
}

fn candidates_for<S: ScoreFn + ?Sized>(
    scenario: &Scenario,
    datasets: &[&Dataset],
    models: &[&Model],
    score_fn: &S,
    opts: AllocOptions,
) -> Result<Vec<AllocationEntry>, Unassigned> {
    let fail = |reason, detail: String| Unassigned {
        scenario_id: scenario.id.clone(),
        reason,
        detail,
    };
    let chosen: Vec<&Dataset> = if opts.search_datasets {
        matching_datasets(scenario, datasets.iter().copied())
    } else {
        select_suitable_dataset(scenario, datasets.iter().copied()).map(|d| vec![d])
    }
    .map_err(|e| fail(UnassignedReason::DatasetConstraint, e.to_string()))?;
    let candidates = select_candidate_models(scenario, models.iter().copied())
        .map_err(|e| fail(UnassignedReason::ModelConstraint, e.to_string()))?;

    let mut feasible = Vec::new();
    let (mut gated, mut missing) = (0usize, 0usize);
    let mut failure = None;
    for dataset in &chosen {
        for model in &candidates {
            match score_fn.score(scenario, dataset, model) {
                Ok(s) if s.gated => gated += 1,
                Ok(s) if s.value.is_finite() && s.value >= 0.0 => feasible.push(AllocationEntry {
                    scenario_id: scenario.id.clone(),
                    dataset_id: dataset.id.clone(),
                    model_id: model.id.clone(),
                    score: s.value,
                }),
                Ok(s) => {
                    failure.get_or_insert_with(|| format!("model `{}` scored {}", model.id, s.value));
                }
                Err(ScoreError::NoPerformance) => missing += 1,
                Err(ScoreError::Failed(msg)) => {
                    failure.get_or_insert_with(|| format!("model `{}`: {msg}", model.id));
                }
            }
        }
    }
    if !feasible.is_empty() {
        return Ok(feasible);
    }
    Err(if let Some(msg) = failure {
        fail(UnassignedReason::ScoringFailed, msg)
    } else if missing > 0 {
        fail(
            UnassignedReason::NoPerformance,
            format!("{missing} ungated candidate(s) lack a performance record"),
        )
    } else {
        fail(
            UnassignedReason::RequirementsUnmet,
            format!("all {gated} candidate(s) have requirements the scenario does not meet"),
        )
    })
}

fn sorted_refs<'a, T: 'a>(items: impl IntoIterator<Item = &'a T>, id: impl Fn(&T) -> &str) -> Vec<&'a T> {
    let mut v: Vec<&T> = items.into_iter().collect();
    v.sort_by(|a, b| id(a).cmp(id(b)));
    v
}

/// Greedy allocation: repeatedly adds the best remaining feasible triple of
/// an unassigned scenario until none is left.
pub fn soma_allocate<'a, S: ScoreFn + ?Sized>(
    scenarios: impl IntoIterator<Item = &'a Scenario>,
    datasets: impl IntoIterator<Item = &'a Dataset>,
    models: impl IntoIterator<Item = &'a Model>,
    score_fn: &S,
    opts: AllocOptions,
) -> Allocation {
    let scenarios = sorted_refs(scenarios, |s| &s.id);
    let datasets = sorted_refs(datasets, |d| &d.id);
    let models = sorted_refs(models, |m| &m.id);
    let (cands, unassigned) = collect(&scenarios, &datasets, &models, score_fn, opts);

    let mut pool: Vec<AllocationEntry> = cands.into_iter().flat_map(|c| c.feasible).collect();
    pool.sort_by(by_rank);
    let mut done = BTreeSet::new();
    let mut entries = Vec::new();
    for e in pool {
        if done.insert(e.scenario_id.clone()) {
            entries.push(e);
        }
    }
    Allocation { entries, unassigned }
}

/// The `k` best feasible models per scenario. With dataset search each
/// model appears once, at its best dataset.
pub fn soma_topk<'a, S: ScoreFn + ?Sized>(
    scenarios: impl IntoIterator<Item = &'a Scenario>,
    datasets: impl IntoIterator<Item = &'a Dataset>,
    models: impl IntoIterator<Item = &'a Model>,
    score_fn: &S,
    k: usize,
    opts: AllocOptions,
) -> TopK {
    let scenarios = sorted_refs(scenarios, |s| &s.id);
    let datasets = sorted_refs(datasets, |d| &d.id);
    let models = sorted_refs(models, |m| &m.id);
    let (cands, unassigned) = collect(&scenarios, &datasets, &models, score_fn, opts);
    let mut lists = BTreeMap::new();
    for Candidates { scenario, mut feasible } in cands {
        feasible.sort_by(by_rank);
        let mut seen = BTreeSet::new();
        feasible.retain(|e| seen.insert(e.model_id.clone()));
        feasible.truncate(k);
        lists.insert(scenario.id.clone(), feasible);
    }
    TopK { lists, unassigned }
}

pub fn allocate_registry<S: ScoreFn + ?Sized>(registry: &Registry, score_fn: &S, opts: AllocOptions) -> Allocation {
    soma_allocate(
        registry.scenarios(),
        registry.datasets(),
        registry.models(),
        score_fn,
        opts,
    )
}

impl Allocation {
    pub fn total_score(&self) -> f64 {
        self.entries.iter().map(|e| e.score).sum()
    }

    pub fn get(&self, scenario_id: &str) -> Option<&AllocationEntry> {
        self.entries.iter().find(|e| e.scenario_id == scenario_id)
    }

    /// Entries and diagnostics ordered by scenario id.
    pub fn sorted(&self) -> Allocation {
        let mut out = self.clone();
        out.entries.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        out.unassigned.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        out
    }

    /// Re-checks capacity, dataset, model and requirement constraints.
    pub fn validate(&self, registry: &Registry) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(&e.scenario_id) {
                return Err(format!("scenario `{}` assigned twice", e.scenario_id));
            }
            let s = registry
                .scenario(&e.scenario_id)
                .ok_or_else(|| format!("unknown scenario `{}`", e.scenario_id))?;
            let d = registry
                .dataset(&e.dataset_id)
                .ok_or_else(|| format!("unknown dataset `{}`", e.dataset_id))?;
            let m = registry
                .model(&e.model_id)
                .ok_or_else(|| format!("unknown model `{}`", e.model_id))?;
            if !d.serves(&s.scenario_type) {
                return Err(format!("dataset `{}` does not serve `{}`", d.id, s.scenario_type));
            }
            if !m.serves(&s.scenario_type) {
                return Err(format!("model `{}` does not serve `{}`", m.id, s.scenario_type));
            }
            if !match_constraints(&s.constraints, &m.requirements) {
                return Err(format!("model `{}` requirements unmet by `{}`", m.id, s.id));
            }
            if !(e.score.is_finite() && e.score >= 0.0) {
                return Err(format!("entry for `{}` has score {}", s.id, e.score));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.sorted()).expect("allocation serializes");
        s.push('\n');
        s
    }

    /// Aligned text table with the scenario, dataset, model, its public
    /// features, metrics and score.
    pub fn render_table(&self, registry: &Registry) -> String {
        let header = [
            "scenario",
            "type",
            "dataset",
            "model",
            "citations",
            "stars",
            "mae",
            "rmse",
            "mape",
            "score",
        ];
        let mut rows: Vec<Vec<String>> = Vec::new();
        let sorted = self.sorted();
        let metric = |v: Option<f64>, pct: bool| match v {
            Some(x) if pct => format!("{:.2}%", x * 100.0),
            Some(x) => format!("{x:.2}"),
            None => "-".into(),
        };
        for e in &sorted.entries {
            let s_type = registry.scenario(&e.scenario_id).map(|s| s.scenario_type.clone());
            let m = registry.model(&e.model_id);
            let p = registry.performance(&e.scenario_id, &e.dataset_id, &e.model_id);
            rows.push(vec![
                e.scenario_id.clone(),
                s_type.unwrap_or_default(),
                e.dataset_id.clone(),
                e.model_id.clone(),
                m.map(|m| m.features.citations.to_string()).unwrap_or_default(),
                m.map(|m| m.features.github_stars.to_string()).unwrap_or_default(),
                metric(p.and_then(|p| p.metrics.mae), false),
                metric(p.and_then(|p| p.metrics.rmse), false),
                metric(p.and_then(|p| p.metrics.mape), true),
                format!("{:.6}", e.score),
            ]);
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let joined: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", joined.join("  ").trim_end());
        };
        line(&mut out, &header.map(String::from));
        line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
        for r in &rows {
            line(&mut out, r);
        }
        for u in &sorted.unassigned {
            let _ = writeln!(
                out,
                "unassigned {}: {} ({})",
                u.scenario_id,
                serde_json::to_value(&u.reason)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                u.detail
            );
        }
        out
    }
}
