//! Straight-line re-evaluation of the scorer from its tensor views, compared
//! with the flat-buffer implementation.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smap_core::registry::{
    ConstraintMap, Dataset, DatasetFeatures, Metrics, Model, ModelFeatures, PerformanceRecord, Scenario,
};
use smap_core::scorer::{
    attention_block_forward, embed_features, feature_vector, gradient_check, score_head, score_triple, FeatureStats,
    Projection, ScorerParams, Shape, TrainedScorer,
};

fn shape(heads: usize, head_dim: usize, blocks: usize, n_features: usize) -> Shape {
    Shape {
        n_features,
        heads,
        blocks,
        head_dim,
        hidden: 6,
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `b` may be empty (no bias).
fn matvec(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n_out = w.len() / x.len();
    (0..n_out)
        .map(|j| b.get(j).copied().unwrap_or(0.0) + (0..x.len()).map(|i| x[i] * w[i * n_out + j]).sum::<f64>())
        .collect()
}

fn oracle_embed(p: &ScorerParams<f64>, x: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            p.embed_weight(i)
                .iter()
                .zip(p.embed_bias(i))
                .map(|(w, b)| xi * w + b)
                .collect()
        })
        .collect()
}

fn oracle_fcn(p: &ScorerParams<f64>, block: usize, head: usize, proj: Projection, token: &[f64]) -> Vec<f64> {
    let f = p.fcn(block, head, proj);
    let hidden: Vec<f64> = matvec(token, f.w1, f.b1).into_iter().map(relu).collect();
    matvec(&hidden, f.w2, f.b2)
}

/// Returns the block output and `alpha[head][i][j]`.
fn oracle_block(p: &ScorerParams<f64>, block: usize, h: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let s = p.shape();
    let n = h.len();
    let mut out = vec![Vec::new(); n];
    let mut alphas = Vec::new();
    for head in 0..s.heads {
        let q: Vec<Vec<f64>> = h
            .iter()
            .map(|t| oracle_fcn(p, block, head, Projection::Query, t))
            .collect();
        let k: Vec<Vec<f64>> = h
            .iter()
            .map(|t| oracle_fcn(p, block, head, Projection::Key, t))
            .collect();
        let v: Vec<Vec<f64>> = h
            .iter()
            .map(|t| oracle_fcn(p, block, head, Projection::Value, t))
            .collect();
        let mut alpha = vec![vec![0.0; n]; n];
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (s.head_dim as f64).sqrt())
                .collect();
            let denom: f64 = scores.iter().map(|x| x.exp()).sum();
            for j in 0..n {
                alpha[i][j] = scores[j].exp() / denom;
            }
            for c in 0..s.head_dim {
                out[i].push((0..n).map(|j| alpha[i][j] * v[j][c]).sum());
            }
        }
        alphas.push(alpha);
    }
    (out, alphas)
}

fn oracle_head(p: &ScorerParams<f64>, h: &[Vec<f64>]) -> f64 {
    let flat: Vec<f64> = h.iter().flatten().copied().collect();
    let head = p.head();
    let hidden: Vec<f64> = matvec(&flat, head.w1, head.b1).into_iter().map(relu).collect();
    relu(head.b2 + hidden.iter().zip(head.w2).map(|(a, w)| a * w).sum::<f64>())
}

fn oracle_score(p: &ScorerParams<f64>, x: &[f64]) -> f64 {
    let mut h = oracle_embed(p, x);
    for block in 0..p.shape().blocks {
        h = oracle_block(p, block, &h).0;
    }
    oracle_head(p, &h)
}

fn random_input(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn flatten(h: &[Vec<f64>]) -> Vec<f64> {
    h.iter().flatten().copied().collect()
}

#[test]
fn embedding_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = ScorerParams::<f64>::seeded(shape(2, 3, 1, 8), 2);
    let x = random_input(&mut rng, 8);
    let got = embed_features(&p, &x).unwrap();
    let want = flatten(&oracle_embed(&p, &x));
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_block_matches_oracle_small() {
    // N_f = 3, K = 2, d = 2
    let p = ScorerParams::<f64>::seeded(shape(2, 2, 1, 3), 17);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h: Vec<Vec<f64>> = (0..3).map(|_| random_input(&mut rng, 4)).collect();
    let (got, trace) = attention_block_forward(&p, 0, &flatten(&h)).unwrap();
    let (want, alphas) = oracle_block(&p, 0, &h);
    for (a, b) in got.iter().zip(flatten(&want)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    for (head, alpha) in alphas.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                assert!((trace.heads[head].alpha[i * 3 + j] - alpha[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_token_attention_returns_its_values() {
    let p = ScorerParams::<f64>::seeded(shape(3, 2, 1, 1), 5);
    let h = vec![0.3, -0.7, 1.1, 0.2, 0.0, -0.4];
    let (got, trace) = attention_block_forward(&p, 0, &h).unwrap();
    let mut want = Vec::new();
    for head in 0..3 {
        assert_eq!(trace.heads[head].alpha, vec![1.0]);
        want.extend(oracle_fcn(&p, 0, head, Projection::Value, &h));
    }
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn head_matches_oracle_and_full_pipeline_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let p = ScorerParams::<f64>::seeded(shape(2, 2, 2, 8), seed);
        let h: Vec<Vec<f64>> = (0..8).map(|_| random_input(&mut rng, 4)).collect();
        let (_, _, got) = score_head(&p, &flatten(&h)).unwrap();
        assert!((got - oracle_head(&p, &h)).abs() < 1e-12);

        let x = random_input(&mut rng, 8);
        assert!((p.score(&x).unwrap() - oracle_score(&p, &x)).abs() < 1e-12);
    }
}

fn fixture() -> (Scenario, Dataset, Model, PerformanceRecord) {
    let scenario = Scenario::new(
        "s",
        "traffic speed prediction",
        [("latency".to_string(), "realtime".to_string())].into(),
    );
    let dataset = Dataset {
        id: "METR_LA".into(),
        dataset_type: "traffic speed prediction".into(),
        serves_scenarios: vec![],
        features: DatasetFeatures {
            downloads: 10,
            collection_time: "2012-03-01/2012-06-30".into(),
            location: "Los Angeles".into(),
            extra: BTreeMap::new(),
        },
    };
    let model = Model {
        id: "MTGNN".into(),
        model_type: "traffic speed prediction".into(),
        serves_scenarios: vec![],
        features: ModelFeatures {
            citations: 324,
            github_stars: 487,
            extra: BTreeMap::new(),
        },
        requirements: [("latency".to_string(), "realtime".to_string())].into(),
    };
    let perf = PerformanceRecord {
        scenario_id: "s".into(),
        dataset_id: "METR_LA".into(),
        model_id: "MTGNN".into(),
        metrics: Metrics {
            mae: Some(2.76),
            rmse: Some(5.34),
            mape: Some(0.0518),
        },
    };
    (scenario, dataset, model, perf)
}

fn fitted_stats() -> FeatureStats {
    FeatureStats::fit(&[
        [324.0, 487.0, 2.76, 5.34, 0.0518, 1.0, 1.0, 1.0],
        [37.0, 113.0, 3.01, 5.85, 0.082, 1.0, 1.0, 1.0],
        [1668.0, 662.0, 18.85, 30.0, 0.1309, 1.0, 1.0, 0.0],
    ])
    .unwrap()
}

#[test]
fn score_triple_end_to_end_matches_oracle() {
    let (s, d, m, perf) = fixture();
    let stats = fitted_stats();
    for seed in 0..20 {
        let scorer = TrainedScorer {
            params: ScorerParams::<f64>::seeded(shape(2, 2, 1, 8), seed),
            stats: stats.clone(),
        };
        let got = score_triple(&s, &d, &m, Some(&perf), &scorer).unwrap();
        assert!(!got.gated);
        // oracle: hand-applied log1p + z-score, then straight-line network
        let raw = feature_vector(&m, &perf);
        let x: Vec<f64> = (0..8)
            .map(|i| {
                let t = if i < 2 { raw[i].ln_1p() } else { raw[i] };
                if stats.stds[i] == 0.0 {
                    0.0
                } else {
                    (t - stats.means[i]) / stats.stds[i]
                }
            })
            .collect();
        assert!((got.value - oracle_score(&scorer.params, &x)).abs() < 1e-12);
    }
}

#[test]
fn score_triple_gates_and_zero_network() {
    let (s, d, mut m, perf) = fixture();
    let zero = TrainedScorer {
        params: ScorerParams::<f64>::zeros(shape(2, 2, 1, 8)),
        stats: fitted_stats(),
    };
    let got = score_triple(&s, &d, &m, Some(&perf), &zero).unwrap();
    assert_eq!((got.value, got.gated), (0.0, false));

    m.requirements = [("latency".to_string(), "batch".to_string())].into();
    let seeded = TrainedScorer {
        params: ScorerParams::<f64>::seeded(shape(2, 2, 1, 8), 3),
        stats: fitted_stats(),
    };
    let got = score_triple(&s, &d, &m, Some(&perf), &seeded).unwrap();
    assert_eq!((got.value, got.gated), (0.0, true));
    // the gate short-circuits before the missing record is noticed
    assert!(score_triple(&s, &d, &m, None, &seeded).unwrap().gated);

    m.requirements = ConstraintMap::new();
    assert!(score_triple(&s, &d, &m, None, &seeded).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s = shape(2, 2, 1, 8);
    let mut live = 0;
    for seed in 0..60 {
        if live == 6 {
            break;
        }
        let p = ScorerParams::<f64>::seeded(s, 100 + seed);
        let x = random_input(&mut rng, 8);
        let label = rng.random_range(0.0..1.0);
        if p.score(&x).unwrap() == 0.0 {
            continue;
        }
        live += 1;
        let err = gradient_check(&p, &x, label, 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
    assert!(live >= 5);
}

#[test]
fn gradient_check_in_flat_region_is_exact() {
    // zero weights with a negative output bias: strictly inside the ReLU clamp
    let mut p = ScorerParams::<f64>::zeros(shape(2, 2, 1, 8));
    *p.head_mut().3 = -1.0;
    assert_eq!(gradient_check(&p, &[0.5; 8], 0.7, 1e-5).unwrap(), 0.0);
}

#[test]
fn gradient_error_stable_across_step_sizes() {
    let p = ScorerParams::<f64>::seeded(shape(2, 2, 1, 8), 77);
    let x = [0.2, -1.0, 0.5, 0.7, -0.3, 0.0, 1.0, 0.4];
    let coarse = gradient_check(&p, &x, 0.4, 1e-3).unwrap();
    let fine = gradient_check(&p, &x, 0.4, 1e-5).unwrap();
    assert!(fine <= coarse * 10.0, "coarse {coarse}, fine {fine}");
}
