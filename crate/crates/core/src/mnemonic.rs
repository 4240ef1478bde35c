//! Persistent memo of past scenario assignments.
//!
//! Entries are keyed by a fingerprint of the scenario's semantics (type and
//! constraints, not id) and are only trusted at the registry revision they
//! were stored under.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::allocator::{soma_allocate, AllocOptions, Allocation, AllocationEntry, ScoreFn, Unassigned};
use crate::registry::{Registry, Scenario};

const UNIT_SEP: u8 = 0x1f;
const RECORD_SEP: u8 = 0x1e;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MnemonicError {
    #[error("cache io: {0}")]
    Io(String),
    #[error("cache file malformed at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("invalid cache entry: {0}")]
    InvalidEntry(String),
}

/// SHA-256 hex of `type (RS key US value)*` with constraints in key order
/// and values trimmed.
pub fn scenario_key(scenario: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(scenario.scenario_type.as_bytes());
    for (k, v) in &scenario.constraints {
        h.update([RECORD_SEP]);
        h.update(k.as_bytes());
        h.update([UNIT_SEP]);
        h.update(v.trim().as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnemonicEntry {
    pub scenario_key: String,
    pub dataset_id: String,
    pub model_id: String,
    pub score: f64,
    pub registry_revision: u64,
    /// Unix seconds.
    pub stored_at: u64,
}

impl MnemonicEntry {
    pub fn validate(&self) -> Result<(), MnemonicError> {
        if self.scenario_key.is_empty() {
            return Err(MnemonicError::InvalidEntry("empty scenario_key".into()));
        }
        if !(self.score.is_finite() && self.score >= 0.0) {
            return Err(MnemonicError::InvalidEntry(format!(
                "score {} for key {} must be finite and >= 0",
                self.score, self.scenario_key
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lookup<'a> {
    Hit(&'a MnemonicEntry),
    Miss,
    /// Present but stored under a different registry revision.
    StaleMiss(&'a MnemonicEntry),
}

impl Lookup<'_> {
    pub fn hit(&self) -> Option<&MnemonicEntry> {
        match self {
            Lookup::Hit(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MnemonicCenter {
    entries: BTreeMap<String, MnemonicEntry>,
}

impl MnemonicCenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MnemonicEntry> {
        self.entries.values()
    }

    pub fn lookup(&self, key: &str, current_revision: u64) -> Lookup<'_> {
        match self.entries.get(key) {
            None => Lookup::Miss,
            Some(e) if e.registry_revision == current_revision => Lookup::Hit(e),
            Some(e) => Lookup::StaleMiss(e),
        }
    }

    /// Upsert; the latest entry for a key wins.
    pub fn store(&mut self, entry: MnemonicEntry) -> Result<(), MnemonicError> {
        entry.validate()?;
        self.entries.insert(entry.scenario_key.clone(), entry);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// One JSON object per line, ordered by key.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MnemonicError> {
        let mut center = Self::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() {
                let entry: MnemonicEntry = serde_json::from_str(body).map_err(|e| MnemonicError::Malformed {
                    offset,
                    reason: e.to_string(),
                })?;
                entry.validate().map_err(|e| MnemonicError::Malformed {
                    offset,
                    reason: e.to_string(),
                })?;
                center.entries.insert(entry.scenario_key.clone(), entry);
            }
            offset += line.len();
        }
        Ok(center)
    }

    /// A missing file is an empty center.
    pub fn load(path: &Path) -> Result<Self, MnemonicError> {
        match fs::read(path) {
            Ok(bytes) => {
                let text = String::from_utf8(bytes).map_err(|e| MnemonicError::Malformed {
                    offset: e.utf8_error().valid_up_to(),
                    reason: "invalid UTF-8".into(),
                })?;
                Self::from_jsonl(&text)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(MnemonicError::Io(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes a sibling temp file and renames it over `path`.
    pub fn persist(&self, path: &Path) -> Result<(), MnemonicError> {
        let io = |e: std::io::Error| MnemonicError::Io(format!("{}: {e}", path.display()));
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(format!(".tmp{}", std::process::id()));
        let tmp = path.with_file_name(tmp_name);
        {
            let mut f = fs::File::create(&tmp).map_err(io)?;
            f.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedAllocation {
    pub allocation: Allocation,
    /// Scenarios served from the center.
    pub hits: usize,
    pub stale: usize,
    pub total: usize,
}

/// Serves scenarios from the center where possible, allocates the rest and
/// records their assignments. The caller persists the center.
///
/// Scenarios sharing a key are one matching problem: among the misses only
/// the first of each key (in id order) is allocated and the others reuse its
/// result, so a cold run and a warm rerun agree.
pub fn allocate_with_cache<S: ScoreFn + ?Sized>(
    registry: &Registry,
    center: &mut MnemonicCenter,
    score_fn: &S,
    opts: AllocOptions,
) -> Result<CachedAllocation, MnemonicError> {
    let revision = registry.revision();
    let mut entries = Vec::new();
    let mut misses: BTreeMap<String, Vec<&Scenario>> = BTreeMap::new();
    let (mut hits, mut stale, mut total) = (0, 0, 0);
    for s in registry.scenarios() {
        total += 1;
        let key = scenario_key(s);
        match center.lookup(&key, revision) {
            Lookup::Hit(e) => {
                hits += 1;
                entries.push(AllocationEntry {
                    scenario_id: s.id.clone(),
                    dataset_id: e.dataset_id.clone(),
                    model_id: e.model_id.clone(),
                    score: e.score,
                });
            }
            Lookup::StaleMiss(_) => {
                stale += 1;
                misses.entry(key).or_default().push(s);
            }
            Lookup::Miss => misses.entry(key).or_default().push(s),
        }
    }
    let mut unassigned = Vec::new();
    if !misses.is_empty() {
        let leaders = misses.values().map(|group| group[0]);
        let fresh = soma_allocate(leaders, registry.datasets(), registry.models(), score_fn, opts);
        let now = unix_now();
        for (key, group) in &misses {
            let leader = &group[0].id;
            if let Some(e) = fresh.get(leader) {
                center.store(MnemonicEntry {
                    scenario_key: key.clone(),
                    dataset_id: e.dataset_id.clone(),
                    model_id: e.model_id.clone(),
                    score: e.score,
                    registry_revision: revision,
                    stored_at: now,
                })?;
                entries.extend(group.iter().map(|s| AllocationEntry {
                    scenario_id: s.id.clone(),
                    ..e.clone()
                }));
            } else if let Some(u) = fresh.unassigned.iter().find(|u| &u.scenario_id == leader) {
                unassigned.extend(group.iter().map(|s| Unassigned {
                    scenario_id: s.id.clone(),
                    ..u.clone()
                }));
            }
        }
    }
    let allocation = Allocation { entries, unassigned }.sorted();
    Ok(CachedAllocation {
        allocation,
        hits,
        stale,
        total,
    })
}
