use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    generate_synthetic, hit_at_k, split_records, validate_ratios, EvalError, Ratios, SynthConfig, SyntheticData,
};
use crate::allocator::{soma_topk, AllocOptions, AttentionScoreFn, ScoreError, ScoreFn};
use crate::baselines::{MfConfig, MfModel, Rating, SlopeOneModel};
use crate::mnemonic::scenario_key;
use crate::registry::{match_constraints, Dataset, Model, Scenario};
use crate::scalar::Scalar;
use crate::scorer::{train_scorer, Hyperparams, Scored};

pub const ATTENTION: &str = "attention";
pub const SLOPE_ONE: &str = "slope-one";
pub const MF: &str = "mf";
pub const TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    SlopeOne,
    Mf,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::SlopeOne => SLOPE_ONE,
            BaselineKind::Mf => MF,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub ratios: Ratios,
    /// `seed` is replaced by each trial's seed.
    pub hyper: Hyperparams,
    pub baselines: Vec<BaselineKind>,
    /// `seed` is replaced by each trial's seed.
    pub mf: MfConfig,
    pub synth: SynthConfig,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            ratios: [0.5, 0.1, 0.4],
            hyper: Hyperparams::default(),
            baselines: vec![BaselineKind::SlopeOne, BaselineKind::Mf],
            mf: MfConfig::default(),
            synth: SynthConfig::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.trials == 0 {
            return Err(EvalError::Config("trials must be >= 1".into()));
        }
        validate_ratios(self.ratios)?;
        self.hyper.validate()?;
        self.synth.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.master_seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HitRates {
    pub hit1: f64,
    pub hit3: f64,
    pub hit5: f64,
}

impl HitRates {
    fn mean<'a>(rows: impl Iterator<Item = &'a HitRates>) -> Option<HitRates> {
        let rows: Vec<&HitRates> = rows.collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(HitRates {
            hit1: rows.iter().map(|r| r.hit1).sum::<f64>() / n,
            hit3: rows.iter().map(|r| r.hit3).sum::<f64>() / n,
            hit5: rows.iter().map(|r| r.hit5).sum::<f64>() / n,
        })
    }

    pub fn is_monotone(&self) -> bool {
        self.hit1 <= self.hit3 && self.hit3 <= self.hit5
    }
}

/// One trial's ranked lists and hit rates per scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEval {
    pub test_scenarios: Vec<String>,
    pub ranked: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    pub hits: BTreeMap<String, HitRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// 1-based.
    pub trial: usize,
    pub seed: u64,
    pub test_scenarios: usize,
    pub scores: BTreeMap<String, HitRates>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Means over a run of consecutive trials; failed trials are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub first_trial: usize,
    pub last_trial: usize,
    pub completed: usize,
    pub scores: BTreeMap<String, HitRates>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuntimeStats {
    pub total: Duration,
    pub per_trial: Vec<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    /// Consecutive blocks of 10 trials.
    pub blocks: Vec<Block>,
    pub overall: Block,
    /// Wall-clock timings; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

struct BaselineScoreFn<P> {
    predict: P,
}

impl<P: Fn(&str, &str) -> f64 + Sync> ScoreFn for BaselineScoreFn<P> {
    fn score(&self, scenario: &Scenario, _dataset: &Dataset, model: &Model) -> Result<Scored, ScoreError> {
        if !match_constraints(&scenario.constraints, &model.requirements) {
            return Ok(Scored::GATED);
        }
        Ok(Scored {
            value: (self.predict)(&scenario_key(scenario), &model.id),
            gated: false,
        })
    }
}

fn rank<S: ScoreFn + ?Sized>(data: &SyntheticData, test: &[&Scenario], score_fn: &S) -> BTreeMap<String, Vec<String>> {
    let top = soma_topk(
        test.iter().copied(),
        data.registry.datasets(),
        data.registry.models(),
        score_fn,
        TOP_K,
        AllocOptions::default(),
    );
    let mut out: BTreeMap<String, Vec<String>> = test.iter().map(|s| (s.id.clone(), Vec::new())).collect();
    for (sid, list) in top.lists {
        out.insert(sid, list.into_iter().map(|e| e.model_id).collect());
    }
    out
}

/// Splits the scenarios of `data`, trains every scorer on the training
/// scenarios and ranks the candidates of the held-out ones.
pub fn evaluate_trial<T: Scalar>(
    data: &SyntheticData,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<TrialEval, EvalError> {
    let ids: Vec<String> = data.truth.keys().cloned().collect();
    let (train_ids, val_ids, test_ids) = split_records(&ids, config.ratios, seed)?;
    let (train_ids, val_ids): (BTreeSet<String>, BTreeSet<String>) =
        (train_ids.into_iter().collect(), val_ids.into_iter().collect());
    let pick = |set: &BTreeSet<String>| {
        data.samples
            .iter()
            .filter(|s| set.contains(&s.scenario_id))
            .cloned()
            .collect::<Vec<_>>()
    };
    let (train, val) = (pick(&train_ids), pick(&val_ids));
    let mut test_ids = test_ids;
    test_ids.sort();
    let test: Vec<&Scenario> = test_ids
        .iter()
        .map(|id| {
            data.registry
                .scenario(id)
                .ok_or_else(|| EvalError::MissingScenario(format!("`{id}` not in registry")))
        })
        .collect::<Result<_, _>>()?;
    let truth: BTreeMap<String, String> = test_ids.iter().map(|id| (id.clone(), data.truth[id].clone())).collect();

    let mut ranked = BTreeMap::new();
    let hyper = Hyperparams { seed, ..config.hyper };
    let (scorer, _) = train_scorer::<T>(&train, &val, &hyper)?;
    ranked.insert(
        ATTENTION.to_string(),
        rank(
            data,
            &test,
            &AttentionScoreFn {
                registry: &data.registry,
                scorer: &scorer,
            },
        ),
    );

    let ratings: Vec<Rating> = train
        .iter()
        .filter(|s| s.gate)
        .map(|s| {
            let scenario = data
                .registry
                .scenario(&s.scenario_id)
                .expect("sample scenario registered");
            Rating::new(scenario_key(scenario), s.model_id.clone(), s.label)
        })
        .collect();
    for kind in &config.baselines {
        let lists = match kind {
            BaselineKind::SlopeOne => {
                let m = SlopeOneModel::<T>::fit(&ratings);
                rank(
                    data,
                    &test,
                    &BaselineScoreFn {
                        predict: |c: &str, i: &str| m.predict(c, i).to_f64_lossy(),
                    },
                )
            }
            BaselineKind::Mf => {
                let m = MfModel::<T>::fit(&ratings, &MfConfig { seed, ..config.mf })?;
                rank(
                    data,
                    &test,
                    &BaselineScoreFn {
                        predict: |c: &str, i: &str| m.predict(c, i).to_f64_lossy(),
                    },
                )
            }
        };
        ranked.insert(kind.name().to_string(), lists);
    }

    let mut hits = BTreeMap::new();
    for (name, lists) in &ranked {
        hits.insert(
            name.clone(),
            HitRates {
                hit1: hit_at_k(lists, &truth, 1)?,
                hit3: hit_at_k(lists, &truth, 3)?,
                hit5: hit_at_k(lists, &truth, 5)?,
            },
        );
    }
    Ok(TrialEval {
        test_scenarios: test_ids,
        ranked,
        hits,
    })
}

fn block(trials: &[TrialResult], first: usize, last: usize) -> Block {
    let done: Vec<&TrialResult> = trials
        .iter()
        .filter(|t| t.error.is_none() && (first..=last).contains(&t.trial))
        .collect();
    let names: BTreeSet<&String> = done.iter().flat_map(|t| t.scores.keys()).collect();
    let scores = names
        .into_iter()
        .filter_map(|n| HitRates::mean(done.iter().filter_map(|t| t.scores.get(n))).map(|h| (n.clone(), h)))
        .collect();
    Block {
        first_trial: first,
        last_trial: last,
        completed: done.len(),
        scores,
    }
}

/// Runs `config.trials` independent trials with seeds `master_seed + i`.
/// A failing trial is recorded with its error and the run continues.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<Report, EvalError> {
    config.validate()?;
    let start = Instant::now();
    let mut trials = Vec::with_capacity(config.trials);
    let mut per_trial = Vec::with_capacity(config.trials);
    for i in 0..config.trials {
        let t0 = Instant::now();
        let seed = config.trial_seed(i);
        let outcome = generate_synthetic(&config.synth, seed).and_then(|d| evaluate_trial::<T>(&d, config, seed));
        trials.push(match outcome {
            Ok(eval) => TrialResult {
                trial: i + 1,
                seed,
                test_scenarios: eval.test_scenarios.len(),
                scores: eval.hits,
                error: None,
            },
            Err(e) => TrialResult {
                trial: i + 1,
                seed,
                test_scenarios: 0,
                scores: BTreeMap::new(),
                error: Some(e.to_string()),
            },
        });
        per_trial.push(t0.elapsed());
    }
    let blocks = (0..config.trials.div_ceil(10))
        .map(|b| block(&trials, b * 10 + 1, ((b + 1) * 10).min(config.trials)))
        .collect();
    let overall = block(&trials, 1, config.trials);
    Ok(Report {
        config: config.clone(),
        trials,
        blocks,
        overall,
        runtime: RuntimeStats {
            total: start.elapsed(),
            per_trial,
        },
    })
}

impl Report {
    /// Violated structural checks: rates outside `[0, 1]`, non-monotone
    /// Hit@k, or failed trials.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.trials {
            if let Some(e) = &t.error {
                out.push(format!("trial {} failed: {e}", t.trial));
            }
            for (name, h) in &t.scores {
                if [h.hit1, h.hit3, h.hit5].iter().any(|v| !(0.0..=1.0).contains(v)) {
                    out.push(format!("trial {} {name}: hit rate outside [0, 1]", t.trial));
                }
                if !h.is_monotone() {
                    out.push(format!("trial {} {name}: Hit@1 <= Hit@3 <= Hit@5 violated", t.trial));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let names: Vec<&String> = self.overall.scores.keys().collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(6).max(6);
        let section = |out: &mut String, title: String, b: &Block| {
            let _ = writeln!(out, "{title} ({} completed)", b.completed);
            let _ = writeln!(
                out,
                "  {:<width$}  {:>6}  {:>6}  {:>6}",
                "scorer", "hit@1", "hit@3", "hit@5"
            );
            for n in &names {
                if let Some(h) = b.scores.get(*n) {
                    let _ = writeln!(out, "  {n:<width$}  {:>6.4}  {:>6.4}  {:>6.4}", h.hit1, h.hit3, h.hit5);
                }
            }
        };
        if self.blocks.len() > 1 {
            for b in &self.blocks {
                section(&mut out, format!("Exp {}-{}", b.first_trial, b.last_trial), b);
            }
        }
        section(
            &mut out,
            format!("Exp {}-{}", self.overall.first_trial, self.overall.last_trial),
            &self.overall,
        );
        for t in &self.trials {
            if let Some(e) = &t.error {
                let _ = writeln!(out, "trial {} (seed {}) failed: {e}", t.trial, t.seed);
            }
        }
        out
    }
}
