use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::Result;
use crate::numerics::Mat;

use super::{Oracle, ProbVector};

#[derive(Debug, Default)]
struct LedgerInner {
    total: AtomicU64,
    phases: Mutex<PhaseState>,
}

#[derive(Debug, Default)]
struct PhaseState {
    current: Option<String>,
    counts: BTreeMap<String, u64>,
}

/// Shared, monotone count of oracle queries.
///
/// Clones share the same counter. Optional phase labels split the total
/// into sub-counters; once a phase is entered every later query is
/// attributed to the current phase.
#[derive(Debug, Clone, Default)]
pub struct QueryLedger {
    inner: Arc<LedgerInner>,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.inner.total.load(Ordering::SeqCst)
    }

    pub fn record(&self, n: u64) {
        if n == 0 {
            return;
        }
        let mut phases = self.inner.phases.lock().expect("ledger lock poisoned");
        self.inner.total.fetch_add(n, Ordering::SeqCst);
        if let Some(label) = phases.current.clone() {
            *phases.counts.entry(label).or_insert(0) += n;
        }
    }

    /// Attributes subsequent queries to `label`.
    pub fn enter_phase(&self, label: &str) {
        let mut phases = self.inner.phases.lock().expect("ledger lock poisoned");
        phases.counts.entry(label.to_string()).or_insert(0);
        phases.current = Some(label.to_string());
    }

    pub fn phase_counts(&self) -> BTreeMap<String, u64> {
        self.inner.phases.lock().expect("ledger lock poisoned").counts.clone()
    }
}

/// Transparent wrapper that records every query in a [`QueryLedger`].
#[derive(Debug, Clone)]
pub struct CountingOracle<O> {
    inner: O,
    ledger: QueryLedger,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O, ledger: QueryLedger) -> Self {
        Self { inner, ledger }
    }

    pub fn ledger(&self) -> &QueryLedger {
        &self.ledger
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

/// Wraps `inner` with a fresh ledger and returns both.
pub fn with_counter<O: Oracle>(inner: O) -> (CountingOracle<O>, QueryLedger) {
    let ledger = QueryLedger::new();
    (CountingOracle::new(inner, ledger.clone()), ledger)
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        let out = self.inner.query_probs(x);
        self.ledger.record(1);
        out
    }

    fn query_batch(&self, xs: &Mat) -> Result<Vec<ProbVector>> {
        let out = self.inner.query_batch(xs);
        self.ledger.record(xs.rows() as u64);
        out
    }
}
