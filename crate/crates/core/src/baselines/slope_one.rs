use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Rating;
use crate::scalar::Scalar;

/// Weighted Slope One. Deviations are stored once per unordered item pair
/// (`a < b`); the reverse direction is the negated view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Serialize + DeserializeOwned")]
pub struct SlopeOneModel<T> {
    /// context -> item -> mean rating
    ratings: BTreeMap<String, BTreeMap<String, T>>,
    /// a -> b -> (mean of r_a - r_b, co-rating count), for a < b
    deviations: BTreeMap<String, BTreeMap<String, (T, u32)>>,
    global_mean: T,
}

impl<T: Scalar> SlopeOneModel<T> {
    pub fn fit(ratings: &[Rating]) -> Self {
        let mut sums: BTreeMap<String, BTreeMap<String, (f64, u32)>> = BTreeMap::new();
        for r in ratings {
            let e = sums
                .entry(r.context.clone())
                .or_default()
                .entry(r.item.clone())
                .or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
        let per_context: BTreeMap<String, BTreeMap<String, f64>> = sums
            .into_iter()
            .map(|(c, items)| (c, items.into_iter().map(|(i, (s, n))| (i, s / n as f64)).collect()))
            .collect();

        let mut acc: BTreeMap<(String, String), (f64, u32)> = BTreeMap::new();
        for items in per_context.values() {
            let list: Vec<(&String, &f64)> = items.iter().collect();
            for (x, (a, ra)) in list.iter().enumerate() {
                for (b, rb) in &list[x + 1..] {
                    let e = acc.entry(((*a).clone(), (*b).clone())).or_insert((0.0, 0));
                    e.0 += **ra - **rb;
                    e.1 += 1;
                }
            }
        }
        let mut deviations: BTreeMap<String, BTreeMap<String, (T, u32)>> = BTreeMap::new();
        for ((a, b), (sum, n)) in acc {
            deviations.entry(a).or_default().insert(b, (T::lit(sum / n as f64), n));
        }
        let global_mean = if ratings.is_empty() {
            0.5
        } else {
            ratings.iter().map(|r| r.value).sum::<f64>() / ratings.len() as f64
        };
        Self {
            ratings: per_context
                .into_iter()
                .map(|(c, items)| (c, items.into_iter().map(|(i, v)| (i, T::lit(v))).collect()))
                .collect(),
            deviations,
            global_mean: T::lit(global_mean),
        }
    }

    pub fn global_mean(&self) -> T {
        self.global_mean
    }

    pub fn pair_count(&self) -> usize {
        self.deviations.values().map(|m| m.len()).sum()
    }

    /// Mean of `r_a - r_b` over contexts rating both, with the co-rating count.
    pub fn deviation(&self, a: &str, b: &str) -> Option<(T, u32)> {
        if a < b {
            self.deviations.get(a)?.get(b).copied()
        } else {
            self.deviations.get(b)?.get(a).map(|(d, n)| (-*d, *n))
        }
    }

    /// Count-weighted average of `rating(i) + dev(item, i)` over the
    /// context's other rated items; the global mean when none co-occur.
    /// Clamped to `[0, 1]`.
    pub fn predict(&self, context: &str, item: &str) -> T {
        let Some(rated) = self.ratings.get(context) else {
            return self.global_mean;
        };
        let mut num = T::zero();
        let mut den = T::zero();
        for (other, r) in rated {
            if other == item {
                continue;
            }
            if let Some((dev, n)) = self.deviation(item, other) {
                let w = T::lit(n as f64);
                num = num + (*r + dev) * w;
                den = den + w;
            }
        }
        if den == T::zero() {
            return self.global_mean;
        }
        (num / den).max(T::zero()).min(T::one())
    }
}
