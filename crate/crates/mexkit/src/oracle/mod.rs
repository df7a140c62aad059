//! The victim as a metered black box: response policies, query budgets,
//! input validation, a response cache and an append-only query log.

mod backend;
mod gate;
mod record;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use mexkit_core::{DegradedResponse, ProbabilityVector, ResponsePolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use backend::{NetworkVictim, VictimBackend};
pub use gate::{roughness, ValidityGate, VarianceGate};
pub use record::{decode_response, encode_response, input_id, Meter, QueryRecord};

use crate::error::{MexError, Result};

/// Query allowance: `batch_count * batch_size` cache misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub batch_count: usize,
    pub batch_size: usize,
    pub spent: usize,
}

impl Budget {
    pub fn new(batch_count: usize, batch_size: usize) -> Self {
        Self {
            batch_count,
            batch_size: batch_size.max(1),
            spent: 0,
        }
    }

    /// A budget of exactly `n` single queries.
    pub fn queries(n: usize) -> Self {
        Self::new(n, 1)
    }

    pub fn capacity(&self) -> usize {
        self.batch_count.saturating_mul(self.batch_size)
    }

    pub fn remaining(&self) -> usize {
        self.capacity() - self.spent
    }
}

/// Price of one cache miss per policy kind (`full`, `top1`, ...). Kinds not
/// listed cost `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub default: f64,
    pub per_policy: BTreeMap<String, f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            default: 1.0,
            per_policy: BTreeMap::new(),
        }
    }
}

impl CostModel {
    pub fn price(&self, policy: &ResponsePolicy) -> f64 {
        self.per_policy.get(policy.kind()).copied().unwrap_or(self.default)
    }
}

pub struct OracleConfig {
    pub attack: Budget,
    pub evaluation: Budget,
    pub costs: CostModel,
    pub gate: Option<Box<dyn ValidityGate>>,
    /// `label_map[v]` is the reported class for victim class `v`; scores of
    /// classes mapped together are summed.
    pub label_map: Option<Vec<usize>>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            attack: Budget::new(0, 64),
            evaluation: Budget::new(0, 64),
            costs: CostModel::default(),
            gate: None,
            label_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct CacheKey {
    input_id: String,
    policy: String,
    version: String,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    input_id: String,
    policy_kind: String,
    victim_version: String,
    classes: usize,
    response: Value,
}

struct State {
    attack: Budget,
    evaluation: Budget,
    cache: HashMap<CacheKey, DegradedResponse>,
    log: Vec<QueryRecord>,
    sink: Option<BufWriter<File>>,
    tick: u64,
    round: u64,
}

impl State {
    fn budget(&mut self, meter: Meter) -> &mut Budget {
        match meter {
            Meter::Attack => &mut self.attack,
            Meter::Evaluation => &mut self.evaluation,
        }
    }
}

/// Thread-safe metered front of a victim model.
///
/// A query holds the oracle's lock from the budget check through the
/// prediction to the cache and log update, so concurrent callers observe a
/// single serial order and the backend sees one prediction at a time.
pub struct Oracle {
    backend: RwLock<Option<Arc<dyn VictimBackend>>>,
    costs: CostModel,
    gate: Option<Box<dyn ValidityGate>>,
    label_map: Option<Vec<usize>>,
    state: Mutex<State>,
}

impl Oracle {
    pub fn new(backend: Arc<dyn VictimBackend>, cfg: OracleConfig) -> Self {
        let oracle = Self::unloaded(cfg);
        *oracle.backend.write().expect("fresh lock") = Some(backend);
        oracle
    }

    /// An oracle without a victim; queries fail with `ModelNotLoaded`
    /// until [`Oracle::load`] is called.
    pub fn unloaded(cfg: OracleConfig) -> Self {
        Self {
            backend: RwLock::new(None),
            costs: cfg.costs,
            gate: cfg.gate,
            label_map: cfg.label_map,
            state: Mutex::new(State {
                attack: cfg.attack,
                evaluation: cfg.evaluation,
                cache: HashMap::new(),
                log: Vec::new(),
                sink: None,
                tick: 0,
                round: 0,
            }),
        }
    }

    pub fn load(&self, backend: Arc<dyn VictimBackend>) {
        *self.backend.write().expect("backend lock") = Some(backend);
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn backend(&self) -> Result<Arc<dyn VictimBackend>> {
        self.backend
            .read()
            .expect("backend lock")
            .clone()
            .ok_or(MexError::ModelNotLoaded)
    }

    pub fn input_len(&self) -> Result<usize> {
        Ok(self.backend()?.input_len())
    }

    /// Classes in the reported label space.
    pub fn classes(&self) -> Result<usize> {
        let m = self.backend()?.num_classes();
        Ok(match &self.label_map {
            Some(map) => map.iter().max().map_or(0, |c| c + 1),
            None => m,
        })
    }

    pub fn victim_version(&self) -> Result<String> {
        Ok(self.backend()?.version().to_string())
    }

    fn map_labels(&self, p: ProbabilityVector) -> Result<ProbabilityVector> {
        match &self.label_map {
            None => Ok(p),
            Some(map) => {
                if map.len() != p.len() {
                    return Err(mexkit_core::Error::LabelSpaceMismatch {
                        expected: map.len(),
                        found: p.len(),
                    }
                    .into());
                }
                let mut out = vec![0.0; self.classes()?];
                for (v, s) in p.scores().iter().enumerate() {
                    out[map[v]] += s;
                }
                Ok(ProbabilityVector::normalize(&out)?)
            }
        }
    }

    /// Unmetered, unlogged victim prediction for one input.
    pub fn victim_predict(&self, input: &[f64]) -> Result<ProbabilityVector> {
        let backend = self.backend()?;
        if input.len() != backend.input_len() {
            return Err(MexError::InvalidInput {
                index: 0,
                reason: format!("expected {} features, got {}", backend.input_len(), input.len()),
            });
        }
        let p = backend.predict_batch(input)?.pop().expect("one row");
        self.map_labels(p)
    }

    /// Queries a flattened batch. All-or-nothing: on error nothing is
    /// billed, cached or logged.
    pub fn query(&self, inputs: &[f64], policy: &ResponsePolicy, meter: Meter) -> Result<Vec<QueryRecord>> {
        policy.validate()?;
        let backend = self.backend()?;
        let d = backend.input_len();
        if d == 0 || inputs.len() % d != 0 {
            return Err(MexError::InvalidInput {
                index: 0,
                reason: format!("batch length {} is not a multiple of {d}", inputs.len()),
            });
        }
        let rows: Vec<&[f64]> = inputs.chunks(d).collect();
        for (index, row) in rows.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(MexError::InvalidInput {
                    index,
                    reason: format!("non-finite feature {v}"),
                });
            }
            if let Some(gate) = &self.gate {
                gate.check(row)
                    .map_err(|reason| MexError::InvalidInput { index, reason })?;
            }
        }
        let ids: Vec<String> = rows.iter().map(|r| input_id(r)).collect();
        let policy_id = policy.identifier();
        let version = backend.version().to_string();
        let key = |id: &str| CacheKey {
            input_id: id.to_string(),
            policy: policy_id.clone(),
            version: version.clone(),
        };

        let mut st = self.state();
        let mut fresh: Vec<usize> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, id) in ids.iter().enumerate() {
            if !st.cache.contains_key(&key(id)) && seen.insert(id.as_str()) {
                fresh.push(i);
            }
        }
        let remaining = st.budget(meter).remaining();
        if fresh.len() > remaining {
            return Err(MexError::BudgetExhausted {
                requested: fresh.len(),
                remaining,
            });
        }
        if !fresh.is_empty() {
            let mut batch = Vec::with_capacity(fresh.len() * d);
            for &i in &fresh {
                batch.extend_from_slice(rows[i]);
            }
            let predictions = backend.predict_batch(&batch)?;
            let mut degraded = Vec::with_capacity(fresh.len());
            for p in predictions {
                degraded.push(policy.apply(&self.map_labels(p)?));
            }
            for (&i, r) in fresh.iter().zip(degraded) {
                st.cache.insert(key(&ids[i]), r);
            }
            st.budget(meter).spent += fresh.len();
        }
        let price = self.costs.price(policy);
        let round = st.round;
        let mut records = Vec::with_capacity(rows.len());
        let mut fresh_iter = fresh.iter().peekable();
        for (i, id) in ids.iter().enumerate() {
            let billed = fresh_iter.peek() == Some(&&i);
            if billed {
                fresh_iter.next();
            }
            st.tick += 1;
            records.push(QueryRecord {
                input_id: id.clone(),
                round,
                policy_kind: policy_id.clone(),
                response: st.cache[&key(id)].clone(),
                cost: if billed { price } else { 0.0 },
                timestamp: st.tick,
                meter,
            });
        }
        if let Some(sink) = st.sink.as_mut() {
            for r in &records {
                writeln!(sink, "{}", r.to_json_line()).map_err(|e| MexError::io("query log", e))?;
            }
            sink.flush().map_err(|e| MexError::io("query log", e))?;
        }
        st.log.extend(records.iter().cloned());
        Ok(records)
    }

    pub fn set_round(&self, round: u64) {
        self.state().round = round;
    }

    pub fn budget(&self, meter: Meter) -> Budget {
        *self.state().budget(meter)
    }

    pub fn set_budget(&self, meter: Meter, budget: Budget) {
        *self.state().budget(meter) = budget;
    }

    pub fn spent(&self, meter: Meter) -> usize {
        self.budget(meter).spent
    }

    pub fn remaining(&self, meter: Meter) -> usize {
        self.budget(meter).remaining()
    }

    pub fn log(&self) -> Vec<QueryRecord> {
        self.state().log.clone()
    }

    pub fn cache_len(&self) -> usize {
        self.state().cache.len()
    }

    /// Appends every future record to `path` as JSON lines.
    pub fn attach_log(&self, path: &Path) -> Result<()> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| MexError::io(path, e))?;
        self.state().sink = Some(BufWriter::new(f));
        Ok(())
    }

    /// Writes the cache as JSON lines, sorted by key.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let st = self.state();
        let mut entries: Vec<_> = st.cache.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = BufWriter::new(File::create(path).map_err(|e| MexError::io(path, e))?);
        for (k, r) in entries {
            let line = CacheLine {
                input_id: k.input_id.clone(),
                policy_kind: k.policy.clone(),
                victim_version: k.version.clone(),
                classes: r.classes(),
                response: encode_response(r),
            };
            writeln!(out, "{}", serde_json::to_string(&line).expect("cache lines serialize"))
                .map_err(|e| MexError::io(path, e))?;
        }
        out.flush().map_err(|e| MexError::io(path, e))
    }

    /// Merges cache entries from a file written by [`Oracle::save_cache`].
    pub fn load_cache(&self, path: &Path) -> Result<usize> {
        let f = File::open(path).map_err(|e| MexError::io(path, e))?;
        let mut loaded = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| MexError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let schema = |reason: String| MexError::SchemaViolation {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                reason,
            };
            let c: CacheLine = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
            let r = decode_response(&c.response, &c.policy_kind, c.classes).map_err(|e| schema(e.to_string()))?;
            loaded.push((
                CacheKey {
                    input_id: c.input_id,
                    policy: c.policy_kind,
                    version: c.victim_version,
                },
                r,
            ));
        }
        let count = loaded.len();
        self.state().cache.extend(loaded);
        Ok(count)
    }

    /// Copies all cache entries of `other` into this oracle.
    pub fn absorb_cache(&self, other: &Oracle) {
        let entries: Vec<_> = other.state().cache.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        self.state().cache.extend(entries);
    }
}
