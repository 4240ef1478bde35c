use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Rating};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fixed L2 penalty on biases and factors.
    pub regularization: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            learning_rate: 0.01,
            epochs: 500,
            regularization: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
struct Side<T> {
    bias: T,
    factors: Vec<T>,
}

/// Biased matrix factorization fitted by SGD:
/// `r(c, m) ~ mu + b_c + b_m + p_c . q_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct MfModel<T> {
    rank: usize,
    global_mean: T,
    contexts: BTreeMap<String, Side<T>>,
    items: BTreeMap<String, Side<T>>,
    /// Training MSE after each epoch.
    #[serde(default)]
    history: Vec<f64>,
}

impl<T: Scalar> MfModel<T> {
    /// Context factors start at zero and item factors at N(0, 0.1), so an
    /// untrained model predicts exactly the global mean.
    pub fn fit(ratings: &[Rating], config: &MfConfig) -> Result<Self, BaselineError> {
        if config.rank == 0 {
            return Err(BaselineError::InvalidConfig("rank must be >= 1".into()));
        }
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(BaselineError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(config.regularization >= 0.0 && config.regularization.is_finite()) {
            return Err(BaselineError::InvalidConfig("regularization must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut contexts = BTreeMap::new();
        let mut items = BTreeMap::new();
        for r in ratings {
            contexts.entry(r.context.clone()).or_insert_with(|| Side {
                bias: T::zero(),
                factors: vec![T::zero(); config.rank],
            });
        }
        let item_ids: std::collections::BTreeSet<&String> = ratings.iter().map(|r| &r.item).collect();
        for id in item_ids {
            let factors = (0..config.rank).map(|_| T::lit(normal.sample(&mut rng))).collect();
            items.insert(
                id.clone(),
                Side {
                    bias: T::zero(),
                    factors,
                },
            );
        }
        let global_mean = if ratings.is_empty() {
            0.5
        } else {
            ratings.iter().map(|r| r.value).sum::<f64>() / ratings.len() as f64
        };
        let mut model = Self {
            rank: config.rank,
            global_mean: T::lit(global_mean),
            contexts,
            items,
            history: Vec::with_capacity(config.epochs),
        };

        let lr = T::lit(config.learning_rate);
        let reg = T::lit(config.regularization);
        let mut order: Vec<usize> = (0..ratings.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sse = 0.0;
            for &i in &order {
                let r = &ratings[i];
                let err = T::lit(r.value) - model.raw(&r.context, &r.item);
                sse += err.to_f64_lossy().powi(2);
                let c = model.contexts.get_mut(&r.context).expect("context indexed");
                let m = model.items.get_mut(&r.item).expect("item indexed");
                c.bias = c.bias + lr * (err - reg * c.bias);
                m.bias = m.bias + lr * (err - reg * m.bias);
                for k in 0..config.rank {
                    let (p, q) = (c.factors[k], m.factors[k]);
                    c.factors[k] = p + lr * (err * q - reg * p);
                    m.factors[k] = q + lr * (err * p - reg * q);
                }
            }
            let mse = sse / ratings.len().max(1) as f64;
            if !mse.is_finite() {
                return Err(BaselineError::NonFiniteLoss { epoch });
            }
            model.history.push(mse);
        }
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn global_mean(&self) -> T {
        self.global_mean
    }

    /// Per-epoch training MSE, measured during the pass.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    fn raw(&self, context: &str, item: &str) -> T {
        let c = self.contexts.get(context);
        let m = self.items.get(item);
        let mut out = self.global_mean;
        if let Some(c) = c {
            out = out + c.bias;
        }
        if let Some(m) = m {
            out = out + m.bias;
        }
        if let (Some(c), Some(m)) = (c, m) {
            for (p, q) in c.factors.iter().zip(&m.factors) {
                out = out + *p * *q;
            }
        }
        out
    }

    /// Unknown contexts fall back to `mu + b_m`; unknown items to `mu + b_c`.
    pub fn predict(&self, context: &str, item: &str) -> T {
        self.raw(context, item).max(T::zero()).min(T::one())
    }

    pub fn mse(&self, ratings: &[Rating]) -> f64 {
        if ratings.is_empty() {
            return 0.0;
        }
        ratings
            .iter()
            .map(|r| (r.value - self.raw(&r.context, &r.item).to_f64_lossy()).powi(2))
            .sum::<f64>()
            / ratings.len() as f64
    }
}
