//! Seeded synthetic benchmark with a planted utility rule.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::registry::{
    match_constraints, ConstraintMap, Dataset, DatasetFeatures, Metrics, Model, ModelFeatures, PerformanceRecord,
    Registry, Scenario,
};
use crate::scorer::{feature_vector, ScoreSample};

pub const SCENARIO_TYPES: [&str; 6] = [
    "traffic speed prediction",
    "road traffic flow prediction",
    "station-level bus passenger flow prediction",
    "ride-hailing demand prediction",
    "station-level subway passenger flow prediction",
    "taxi demand prediction",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_scenarios: usize,
    pub n_models_per_scenario: usize,
    /// Std of the Gaussian noise added to the planted utility.
    pub noise_sigma: f64,
    /// Weights on `[-z(mae), -z(rmse), -z(mape), z(log1p citations), z(log1p stars)]`.
    pub weights: [f64; 5],
    /// Probability that a model requires a realtime-latency scenario.
    pub requirement_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenarios: 60,
            n_models_per_scenario: 20,
            noise_sigma: 0.05,
            weights: [0.3, 0.15, 0.15, 0.2, 0.2],
            requirement_rate: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_scenarios == 0 || self.n_models_per_scenario == 0 {
            return Err(EvalError::Config("scenario and model counts must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(EvalError::Config("noise_sigma must be finite and >= 0".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(EvalError::Config("weights must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.requirement_rate) {
            return Err(EvalError::Config("requirement_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub registry: Registry,
    /// One sample per (scenario, candidate model), in scenario then model id order.
    pub samples: Vec<ScoreSample>,
    /// Planted utility per sample, aligned with `samples`.
    pub utility: Vec<f64>,
    /// Label argmax per scenario among ungated candidates.
    pub truth: BTreeMap<String, String>,
}

fn zscores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values
        .iter()
        .map(|v| if std == 0.0 { 0.0 } else { (v - mean) / std })
        .collect()
}

/// Models are drawn per scenario type with a latent skill that carries
/// across scenarios; each scenario perturbs it, so metrics are partly
/// scenario-specific. Among a scenario's `n` ungated candidates the one
/// ranked `r` by planted utility gets label `(n - r + 1) / n`; gated
/// candidates get label 0.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticData, EvalError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let citations = LogNormal::<f64>::new(5.0, 1.5).expect("valid lognormal");
    let stars = LogNormal::<f64>::new(4.0, 1.5).expect("valid lognormal");

    let mut registry = Registry::new();
    let mut skills: BTreeMap<String, f64> = BTreeMap::new();
    let mut pools: Vec<Vec<String>> = Vec::new();
    for (j, ty) in SCENARIO_TYPES.iter().enumerate() {
        registry.register(
            Dataset {
                id: format!("ds{j}"),
                dataset_type: ty.to_string(),
                serves_scenarios: vec![],
                features: DatasetFeatures {
                    downloads: rng.random_range(100..10_000),
                    collection_time: "2018-01-01/2018-12-31".into(),
                    location: "synthetic".into(),
                    extra: Default::default(),
                },
            }
            .into(),
        )?;
        let mut pool = Vec::new();
        for i in 0..config.n_models_per_scenario {
            let id = format!("t{j}-m{i:02}");
            let mut requirements = ConstraintMap::new();
            if rng.random_bool(config.requirement_rate) {
                requirements.insert("latency".into(), "realtime".into());
            }
            registry.register(
                Model {
                    id: id.clone(),
                    model_type: ty.to_string(),
                    serves_scenarios: vec![],
                    features: ModelFeatures {
                        citations: citations.sample(&mut rng).round() as i64,
                        github_stars: stars.sample(&mut rng).round() as i64,
                        extra: Default::default(),
                    },
                    requirements,
                }
                .into(),
            )?;
            skills.insert(id.clone(), std_normal.sample(&mut rng));
            pool.push(id);
        }
        pools.push(pool);
    }

    let mut scenarios = Vec::new();
    for i in 0..config.n_scenarios {
        let mut constraints = ConstraintMap::new();
        let latency = if rng.random_bool(0.5) { "realtime" } else { "batch" };
        constraints.insert("latency".into(), latency.into());
        constraints.insert("priority".into(), "performance".into());
        let s = Scenario::new(
            format!("s{i:03}"),
            SCENARIO_TYPES[i % SCENARIO_TYPES.len()],
            constraints,
        );
        registry.register(s.clone().into())?;
        scenarios.push(s);
    }

    let mut records = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let j = i % SCENARIO_TYPES.len();
        for id in &pools[j] {
            let q = 0.6 * skills[id] + 0.8 * std_normal.sample(&mut rng);
            let mae = 2.5 * (-0.25 * q + 0.05 * std_normal.sample(&mut rng)).exp();
            let rmse = mae * (1.6 + 0.2 * std_normal.sample(&mut rng).abs());
            let mape = (0.08 * (-0.25 * q + 0.1 * std_normal.sample(&mut rng)).exp()).min(1.0);
            let rec = PerformanceRecord {
                scenario_id: s.id.clone(),
                dataset_id: format!("ds{j}"),
                model_id: id.clone(),
                metrics: Metrics {
                    mae: Some(mae),
                    rmse: Some(rmse),
                    mape: Some(mape),
                },
            };
            registry.register(rec.clone().into())?;
            records.push(rec);
        }
    }

    let column = |f: &dyn Fn(&PerformanceRecord) -> f64| zscores(&records.iter().map(f).collect::<Vec<_>>());
    let model_of = |r: &PerformanceRecord| registry.model(&r.model_id).expect("model registered");
    let z = [
        column(&|r| -r.metrics.mae.unwrap_or(0.0)),
        column(&|r| -r.metrics.rmse.unwrap_or(0.0)),
        column(&|r| -r.metrics.mape.unwrap_or(0.0)),
        column(&|r| (model_of(r).features.citations as f64).ln_1p()),
        column(&|r| (model_of(r).features.github_stars as f64).ln_1p()),
    ];
    let utility: Vec<f64> = (0..records.len())
        .map(|k| {
            let planted: f64 = (0..5).map(|f| config.weights[f] * z[f][k]).sum();
            planted + config.noise_sigma * std_normal.sample(&mut rng)
        })
        .collect();

    let mut samples = Vec::with_capacity(records.len());
    let mut truth = BTreeMap::new();
    let per = config.n_models_per_scenario;
    for (i, s) in scenarios.iter().enumerate() {
        let span = i * per..(i + 1) * per;
        let gates: Vec<bool> = records[span.clone()]
            .iter()
            .map(|r| match_constraints(&s.constraints, &model_of(r).requirements))
            .collect();
        let mut order: Vec<usize> = (0..per).filter(|&k| gates[k]).collect();
        order.sort_by(|&a, &b| {
            utility[span.start + b]
                .total_cmp(&utility[span.start + a])
                .then_with(|| records[span.start + a].model_id.cmp(&records[span.start + b].model_id))
        });
        let n = order.len() as f64;
        let mut labels = vec![0.0; per];
        for (rank, &k) in order.iter().enumerate() {
            labels[k] = (n - rank as f64) / n;
        }
        if let Some(&best) = order.first() {
            truth.insert(s.id.clone(), records[span.start + best].model_id.clone());
        }
        for k in 0..per {
            let r = &records[span.start + k];
            samples.push(ScoreSample {
                scenario_id: s.id.clone(),
                dataset_id: r.dataset_id.clone(),
                model_id: r.model_id.clone(),
                features: feature_vector(model_of(r), r),
                label: labels[k],
                gate: gates[k],
            });
        }
    }
    Ok(SyntheticData {
        registry,
        samples,
        utility,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_only_noise_free_picks_min_mae() {
        let cfg = SynthConfig {
            n_scenarios: 12,
            noise_sigma: 0.0,
            weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg, 3).unwrap();
        for (sid, best) in &data.truth {
            let min = data
                .samples
                .iter()
                .filter(|s| &s.scenario_id == sid && s.gate)
                .min_by(|a, b| a.features[2].total_cmp(&b.features[2]))
                .unwrap();
            assert_eq!(&min.model_id, best);
        }
        assert_eq!(data.truth.len(), 12);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        assert_eq!(
            generate_synthetic(&cfg, 9).unwrap(),
            generate_synthetic(&cfg, 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(&cfg, 9).unwrap(),
            generate_synthetic(&cfg, 10).unwrap()
        );
    }

    #[test]
    fn samples_are_valid_and_labels_consistent() {
        let data = generate_synthetic(&SynthConfig::default(), 1).unwrap();
        assert_eq!(data.samples.len(), 60 * 20);
        assert!(
            data.registry.validate().unwrap().is_empty(),
            "rmse >= mae by construction"
        );
        for s in &data.samples {
            s.validate().unwrap();
            if !s.gate {
                assert_eq!(s.label, 0.0);
            }
            if s.label == 1.0 {
                assert_eq!(data.truth[&s.scenario_id], s.model_id);
            }
        }
        assert!(data.samples.iter().any(|s| !s.gate), "some candidates are gated");
    }
}
