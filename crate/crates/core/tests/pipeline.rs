//! Cross-module properties: attention normalization, requirement gating
//! through allocation and ranking, memoized allocation, and experiment
//! invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smap_core::allocator::{soma_topk, AllocOptions, AttentionScoreFn, Counting};
use smap_core::eval::{
    evaluate_trial, generate_synthetic, run_experiment, ExperimentConfig, SynthConfig, SyntheticData,
};
use smap_core::mnemonic::{allocate_with_cache, MnemonicCenter};
use smap_core::registry::{match_constraints, ConstraintMap, Entity, Registry};
use smap_core::scorer::{score_triple, train_scorer, Hyperparams, ScorerParams, TrainedScorer};

fn small_hyper() -> Hyperparams {
    Hyperparams {
        heads: 2,
        head_dim: 2,
        hidden: 8,
        epochs: 2,
        ..Hyperparams::default()
    }
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        n_scenarios: 18,
        n_models_per_scenario: 6,
        ..SynthConfig::default()
    }
}

fn trained(data: &SyntheticData) -> TrainedScorer<f64> {
    train_scorer::<f64>(&data.samples, &[], &small_hyper()).unwrap().0
}

#[test]
fn softmax_rows_sum_to_one() {
    let hyper = Hyperparams {
        heads: 3,
        blocks: 2,
        head_dim: 4,
        ..small_hyper()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = 0;
    for pass in 0..1000 {
        let p = ScorerParams::<f64>::seeded(hyper.shape(), pass);
        let scale = if pass % 10 == 0 { 50.0 } else { 3.0 };
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-scale..scale)).collect();
        let trace = p.forward(&x).unwrap();
        for block in &trace.blocks {
            for head in &block.heads {
                for row in head.alpha.chunks(8) {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "pass {pass}: row sums to {sum}");
                    assert!(row.iter().all(|a| (0.0..=1.0).contains(a)));
                    rows += 1;
                }
            }
        }
    }
    assert_eq!(rows, 1000 * 2 * 3 * 8);
}

fn requirement_map() -> impl Strategy<Value = ConstraintMap> {
    prop::collection::btree_map(
        prop::sample::select(vec!["latency", "priority", "region"]).prop_map(String::from),
        prop::sample::select(vec!["realtime", "batch", "performance", "eu"]).prop_map(String::from),
        0..3,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gated_models_score_zero_and_never_rank(
        seed in 0u64..1000,
        reqs in prop::collection::vec(requirement_map(), 36),
    ) {
        let data = generate_synthetic(&small_synth(), seed).unwrap();
        let scorer = trained(&data);
        let mut registry = data.registry.clone();
        let models: Vec<_> = registry.models().cloned().collect();
        for (m, r) in models.into_iter().zip(reqs) {
            registry.register(Entity::Model(smap_core::registry::Model { requirements: r, ..m })).unwrap();
        }
        let score_fn = AttentionScoreFn { registry: &registry, scorer: &scorer };
        for s in registry.scenarios() {
            for m in registry.models() {
                for d in registry.datasets() {
                    if match_constraints(&s.constraints, &m.requirements) {
                        continue;
                    }
                    let got = score_triple(s, d, m, registry.performance(&s.id, &d.id, &m.id), &scorer).unwrap();
                    prop_assert!(got.gated);
                    prop_assert_eq!(got.value.to_bits(), 0.0f64.to_bits());
                }
            }
        }
        let top = soma_topk(registry.scenarios(), registry.datasets(), registry.models(), &score_fn, 5, AllocOptions::default());
        for list in top.lists.values() {
            for e in list {
                let s = registry.scenario(&e.scenario_id).unwrap();
                let m = registry.model(&e.model_id).unwrap();
                prop_assert!(match_constraints(&s.constraints, &m.requirements), "{} ranked for {}", e.model_id, e.scenario_id);
            }
        }
    }
}

#[test]
fn ranked_lists_in_trials_respect_requirements() {
    let data = generate_synthetic(&small_synth(), 9).unwrap();
    let gated = data.samples.iter().filter(|s| !s.gate).count();
    assert!(gated > 0, "fixture should contain gated candidates");
    let config = ExperimentConfig {
        hyper: small_hyper(),
        synth: small_synth(),
        ..ExperimentConfig::default()
    };
    let eval = evaluate_trial::<f64>(&data, &config, 9).unwrap();
    for lists in eval.ranked.values() {
        for (scenario, models) in lists {
            let s = data.registry.scenario(scenario).unwrap();
            for m in models {
                let m = data.registry.model(m).unwrap();
                assert!(match_constraints(&s.constraints, &m.requirements));
            }
        }
    }
}

fn cached_run(registry: &Registry, center: &mut MnemonicCenter, scorer: &TrainedScorer<f64>) -> (String, usize, usize) {
    let counted = Counting::new(AttentionScoreFn { registry, scorer });
    let out = allocate_with_cache(registry, center, &counted, AllocOptions::default()).unwrap();
    (out.allocation.to_json(), out.hits, counted.calls())
}

#[test]
fn rerun_is_served_from_memory_until_registry_changes() {
    let data = generate_synthetic(&small_synth(), 2).unwrap();
    let scorer = trained(&data);
    let registry = data.registry.clone();
    let mut center = MnemonicCenter::new();

    let (first, hits, calls) = cached_run(&registry, &mut center, &scorer);
    assert_eq!(hits, 0);
    assert!(calls > 0);

    // through the persisted form, as a second process would see it
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    center.persist(&path).unwrap();
    let mut reloaded = MnemonicCenter::load(&path).unwrap();
    let (second, hits, calls) = cached_run(&registry, &mut reloaded, &scorer);
    assert_eq!((hits, calls), (18, 0));
    assert_eq!(first, second);

    // any mutation bumps the revision and invalidates every entry
    let d = registry.datasets().next().unwrap().clone();
    let mutated = registry.with(Entity::Dataset(d)).unwrap();
    let (cold, _, cold_calls) = cached_run(&mutated, &mut MnemonicCenter::new(), &scorer);
    let (third, hits, calls) = cached_run(&mutated, &mut reloaded, &scorer);
    assert_eq!((hits, calls), (0, cold_calls));
    assert_eq!(third, cold);
}

#[test]
fn experiment_report_is_reproducible_and_monotone() {
    let config = ExperimentConfig {
        trials: 3,
        hyper: small_hyper(),
        synth: small_synth(),
        master_seed: 11,
        ..ExperimentConfig::default()
    };
    let a = run_experiment::<f32>(&config).unwrap();
    let b = run_experiment::<f32>(&config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.problems().is_empty(), "{:?}", a.problems());
    let mut seen = BTreeSet::new();
    for t in &a.trials {
        assert!(t.error.is_none());
        for (name, h) in &t.scores {
            assert!(h.hit1 <= h.hit3 && h.hit3 <= h.hit5, "{name} trial {}", t.trial);
            seen.insert(name.clone());
        }
    }
    assert_eq!(seen.len(), 3);
}
