use std::collections::BTreeMap;

use super::EvalError;

/// Fraction of scenarios whose ground-truth model is among the first `k`
/// entries of its ranked list.
pub fn hit_at_k(
    ranked: &BTreeMap<String, Vec<String>>,
    truth: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, EvalError> {
    if let Some(id) = ranked.keys().find(|id| !truth.contains_key(*id)) {
        return Err(EvalError::MissingScenario(format!("`{id}` has no ground truth")));
    }
    if let Some(id) = truth.keys().find(|id| !ranked.contains_key(*id)) {
        return Err(EvalError::MissingScenario(format!("`{id}` has no ranked list")));
    }
    if truth.is_empty() {
        return Err(EvalError::MissingScenario("no scenarios to evaluate".into()));
    }
    let hits = truth
        .iter()
        .filter(|(id, best)| ranked[*id].iter().take(k).any(|m| m == *best))
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lists(position: usize, n: usize) -> (BTreeMap<String, Vec<String>>, BTreeMap<String, String>) {
        let mut ranked = BTreeMap::new();
        let mut truth = BTreeMap::new();
        for s in 0..n {
            let mut list: Vec<String> = (0..5).map(|m| format!("other{m}")).collect();
            list[position] = "best".into();
            ranked.insert(format!("s{s}"), list);
            truth.insert(format!("s{s}"), "best".to_string());
        }
        (ranked, truth)
    }

    #[test]
    fn perfect_and_miss() {
        let (r, t) = lists(0, 3);
        assert_eq!(hit_at_k(&r, &t, 1).unwrap(), 1.0);
        let (r, t) = lists(3, 3);
        assert_eq!(hit_at_k(&r, &t, 3).unwrap(), 0.0);
        assert_eq!(hit_at_k(&r, &t, 5).unwrap(), 1.0);
    }

    #[test]
    fn eighty_one_of_hundred() {
        let mut ranked = BTreeMap::new();
        let mut truth = BTreeMap::new();
        for s in 0..100 {
            let id = format!("s{s:03}");
            let first = if s < 81 { "best" } else { "other" };
            ranked.insert(id.clone(), vec![first.to_string(), "x".into()]);
            truth.insert(id, "best".to_string());
        }
        assert_eq!(hit_at_k(&ranked, &truth, 1).unwrap(), 0.81);
    }

    #[test]
    fn missing_side_is_error() {
        let (mut r, t) = lists(0, 2);
        r.remove("s1");
        assert!(hit_at_k(&r, &t, 1).is_err());
        let (mut r, t) = lists(0, 2);
        r.insert("extra".into(), vec![]);
        assert!(hit_at_k(&r, &t, 1).is_err());
    }
}
