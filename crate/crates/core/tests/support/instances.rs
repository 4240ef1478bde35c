//! Random allocation instances and an exhaustive reference allocator,
//! shared by the core and command-line test suites.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smap_core::allocator::ScoreTable;
use smap_core::registry::{ConstraintMap, Dataset, DatasetFeatures, Model, ModelFeatures, Scenario};

/// At most 8 scenarios, 5 datasets and 15 models over three types, with
/// coarse scores so ties occur.
pub struct Instance {
    pub scenarios: Vec<Scenario>,
    pub datasets: Vec<Dataset>,
    pub models: Vec<Model>,
    pub table: ScoreTable,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = ["a", "b", "c"];
    let ns = rng.random_range(1..=8);
    let nd = rng.random_range(1..=5);
    let nm = rng.random_range(1..=15);
    let scenarios: Vec<Scenario> = (0..ns)
        .map(|i| {
            let mut c = ConstraintMap::new();
            if rng.random_bool(0.5) {
                c.insert("latency".into(), ["realtime", "batch"][rng.random_range(0..2)].into());
            }
            Scenario::new(format!("s{i}"), types[rng.random_range(0..3)], c)
        })
        .collect();
    let datasets = (0..nd)
        .map(|i| Dataset {
            id: format!("d{i}"),
            dataset_type: types[rng.random_range(0..3)].into(),
            serves_scenarios: vec![],
            features: DatasetFeatures {
                downloads: rng.random_range(0..5),
                collection_time: format!("2010/{}", 2010 + rng.random_range(0..3)),
                location: String::new(),
                extra: Default::default(),
            },
        })
        .collect();
    let models: Vec<Model> = (0..nm)
        .map(|i| {
            let mut req = ConstraintMap::new();
            if rng.random_bool(0.2) {
                req.insert("latency".into(), "realtime".into());
            }
            Model {
                id: format!("m{i:02}"),
                model_type: types[rng.random_range(0..3)].into(),
                serves_scenarios: if rng.random_bool(0.3) {
                    vec![types[rng.random_range(0..3)].into()]
                } else {
                    vec![]
                },
                features: ModelFeatures {
                    citations: 0,
                    github_stars: 0,
                    extra: Default::default(),
                },
                requirements: req,
            }
        })
        .collect();
    let mut table = ScoreTable::default();
    for s in &scenarios {
        for m in &models {
            if rng.random_bool(0.9) {
                let v = rng.random_range(0..8) as f64 / 7.0;
                table.scores.entry(s.id.clone()).or_default().insert(m.id.clone(), v);
            }
        }
    }
    Instance {
        scenarios,
        datasets,
        models,
        table,
    }
}

/// Exhaustive per-scenario argmax with an explicit tie order.
pub fn brute_force(inst: &Instance) -> BTreeMap<String, (String, String, f64)> {
    let mut out = BTreeMap::new();
    for s in &inst.scenarios {
        // the suitable dataset, found by scanning every dataset
        let mut best_d: Option<&Dataset> = None;
        for d in &inst.datasets {
            if d.dataset_type != s.scenario_type && !d.serves_scenarios.contains(&s.scenario_type) {
                continue;
            }
            let end = |d: &Dataset| d.features.collection_time[5..].parse::<u32>().unwrap();
            let better = match best_d {
                None => true,
                Some(b) => {
                    (d.features.downloads, end(d), std::cmp::Reverse(&d.id))
                        > (b.features.downloads, end(b), std::cmp::Reverse(&b.id))
                }
            };
            if better {
                best_d = Some(d);
            }
        }
        let Some(d) = best_d else { continue };
        let mut best: Option<(String, f64)> = None;
        for m in &inst.models {
            if m.model_type != s.scenario_type && !m.serves_scenarios.contains(&s.scenario_type) {
                continue;
            }
            if m.requirements.iter().any(|(k, v)| s.constraints.get(k) != Some(v)) {
                continue;
            }
            let Some(&v) = inst.table.scores.get(&s.id).and_then(|r| r.get(&m.id)) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some((id, bv)) => v > *bv || (v == *bv && m.id < *id),
            };
            if better {
                best = Some((m.id.clone(), v));
            }
        }
        if let Some((m, v)) = best {
            out.insert(s.id.clone(), (d.id.clone(), m, v));
        }
    }
    out
}
