//! The six-scenario traffic registry with its published per-scenario model
//! rankings, bundled for tests and demos.
//!
//! Download counts for the datasets are not published; the values here are
//! chosen so that the suitable-dataset rule picks the datasets the rankings
//! were reported on. MAPE is stored as a fraction.

use crate::allocator::ScoreTable;
use crate::registry::Registry;

pub const TRAFFIC_REGISTRY_JSON: &str = include_str!("../fixtures/traffic_registry.json");

/// Inverse-rank scores `(n - r + 1) / n`: the published optimal model
/// ranks first, the rest follow in listed order.
pub const TRAFFIC_SCORES_JSON: &str = include_str!("../fixtures/traffic_scores.json");

/// `(scenario id, dataset id, model id)` of the published optimal allocation.
pub const TRAFFIC_EXPECTED: [(&str, &str, &str); 6] = [
    ("bus-passenger-flow", "Bus Transaction Dataset", "ST-GCN"),
    ("ride-hailing-demand", "TaxiNYC", "DCRNN"),
    ("road-flow", "PEMSD4", "STGCN"),
    ("subway-passenger-flow", "Subway Transaction Dataset", "DCRNN"),
    ("taxi-demand", "TaxiNYC", "DCRNN"),
    ("traffic-speed", "METR_LA", "MTGNN"),
];

pub fn traffic_registry() -> Registry {
    Registry::from_json(TRAFFIC_REGISTRY_JSON).expect("bundled registry is valid")
}

pub fn traffic_scores() -> ScoreTable {
    ScoreTable::from_json(TRAFFIC_SCORES_JSON).expect("bundled score table is valid")
}
