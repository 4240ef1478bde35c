use std::collections::BTreeMap;

use proptest::prelude::*;
use smap_core::allocator::{allocate_registry, soma_allocate, soma_topk, AllocOptions, ScoreFn};
use smap_core::fixtures::{traffic_registry, traffic_scores, TRAFFIC_EXPECTED};
use smap_core::registry::{select_candidate_models, select_suitable_dataset};

#[test]
fn traffic_allocation_matches_published_pairs() {
    let reg = traffic_registry();
    let alloc = allocate_registry(&reg, &traffic_scores(), AllocOptions::default()).sorted();
    assert!(alloc.unassigned.is_empty(), "{:?}", alloc.unassigned);
    let got: Vec<(&str, &str, &str)> = alloc
        .entries
        .iter()
        .map(|e| (e.scenario_id.as_str(), e.dataset_id.as_str(), e.model_id.as_str()))
        .collect();
    assert_eq!(got, TRAFFIC_EXPECTED);
    alloc.validate(&reg).unwrap();
}

#[test]
fn traffic_dataset_and_candidates() {
    let reg = traffic_registry();
    let ride = reg.scenario("ride-hailing-demand").unwrap();
    assert_eq!(select_suitable_dataset(ride, reg.datasets()).unwrap().id, "TaxiNYC");
    let speed = reg.scenario("traffic-speed").unwrap();
    let ids: Vec<&str> = select_candidate_models(speed, reg.models())
        .unwrap()
        .iter()
        .map(|m| m.id.as_str())
        .collect();
    assert_eq!(ids, ["GGRU", "GTS", "HGCN", "MTGNN", "STGNN"]);
}

#[test]
fn traffic_registry_round_trips() {
    let reg = traffic_registry();
    let again = smap_core::registry::Registry::from_json(&reg.to_json()).unwrap();
    assert_eq!(again, reg);
    assert!(reg.validate().unwrap().is_empty());
}

#[path = "support/instances.rs"]
mod instances;
use instances::{brute_force, random_instance};

#[test]
fn greedy_equals_brute_force_on_100_instances() {
    for seed in 0..100 {
        let inst = random_instance(seed);
        let alloc = soma_allocate(
            &inst.scenarios,
            &inst.datasets,
            &inst.models,
            &inst.table,
            AllocOptions::default(),
        );
        let got: BTreeMap<String, (String, String, f64)> = alloc
            .entries
            .iter()
            .map(|e| {
                (
                    e.scenario_id.clone(),
                    (e.dataset_id.clone(), e.model_id.clone(), e.score),
                )
            })
            .collect();
        assert_eq!(got, brute_force(&inst), "seed {seed}");
        assert_eq!(alloc.entries.len() + alloc.unassigned.len(), inst.scenarios.len());
    }
}

#[test]
fn topk_equals_sort_then_take() {
    for seed in 100..150 {
        let inst = random_instance(seed);
        let top = soma_topk(
            &inst.scenarios,
            &inst.datasets,
            &inst.models,
            &inst.table,
            3,
            AllocOptions::default(),
        );
        for (sid, list) in &top.lists {
            let s = inst.scenarios.iter().find(|s| &s.id == sid).unwrap();
            let d = inst.datasets.iter().find(|d| d.id == list[0].dataset_id).unwrap();
            let mut all: Vec<(f64, String)> = inst
                .models
                .iter()
                .filter(|m| m.serves(&s.scenario_type))
                .filter_map(|m| {
                    inst.table
                        .score(s, d, m)
                        .ok()
                        .filter(|x| !x.gated)
                        .map(|x| (x.value, m.id.clone()))
                })
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<String> = all.into_iter().take(3).map(|x| x.1).collect();
            let got: Vec<String> = list.iter().map(|e| e.model_id.clone()).collect();
            assert_eq!(got, want, "seed {seed} scenario {sid}");
        }
    }
}

proptest! {
    #[test]
    fn every_entry_revalidates(seed in any::<u64>()) {
        let inst = random_instance(seed);
        let mut reg = smap_core::registry::Registry::new();
        for s in &inst.scenarios { reg.register(s.clone().into()).unwrap(); }
        for d in &inst.datasets { reg.register(d.clone().into()).unwrap(); }
        for m in &inst.models { reg.register(m.clone().into()).unwrap(); }
        let alloc = allocate_registry(&reg, &inst.table, AllocOptions::default());
        prop_assert!(alloc.validate(&reg).is_ok());
        let alloc = allocate_registry(&reg, &inst.table, AllocOptions { search_datasets: true });
        prop_assert!(alloc.validate(&reg).is_ok());
    }
}
