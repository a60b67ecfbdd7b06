//! Bounded memories.
//!
//! [`DataOnlyMemory`] stores opaque items and hands them back wholesale
//! (`insert` / `get_all`). [`KeyValueMemory`] stores key/value rows and answers
//! top-k queries (`insert` / `retrieve`). Both evict through a [`PolicyState`].

use std::fmt;

use thiserror::Error;

use crate::kernels::{self, KernelError, Mask, Matrix};
use crate::layer::DistanceBias;
use crate::policies::{Observation, PolicyError, PolicyKind, PolicyState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("chunk of {incoming} entries exceeds memory capacity {capacity}")]
    Capacity { incoming: usize, capacity: usize },
    #[error("retrieve from an empty memory")]
    EmptyMemory,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Policy(PolicyError),
}

impl From<PolicyError> for MemoryError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Capacity { incoming, capacity } => {
                MemoryError::Capacity { incoming, capacity }
            }
            other => MemoryError::Policy(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metadata {
    pub position: u64,
    pub document_id: Option<u64>,
    pub epoch: Option<u32>,
}

impl Metadata {
    pub fn at(position: u64) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }
}

/// One stored position as seen from outside the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<V = Vec<f64>> {
    /// `None` for data-only memories.
    pub key: Option<Vec<f64>>,
    pub value: V,
    pub metadata: Metadata,
    pub insertion: u64,
    pub score: f64,
}

/// Entries removed by one `insert`, in eviction order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvictedBatch<V = Vec<f64>> {
    pub entries: Vec<MemoryEntry<V>>,
}

impl<V> EvictedBatch<V> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.metadata.position).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryCounters {
    pub inserted: u64,
    pub evictions: u64,
    pub retrievals: u64,
    /// Query-key similarity evaluations performed by `retrieve`.
    pub similarity_ops: u64,
}

#[derive(Debug, Clone)]
struct Slot<V> {
    key: Option<Vec<f64>>,
    value: V,
    metadata: Metadata,
}

/// Shared storage + policy bookkeeping. `slots[i]` and `policy.entries()[i]` describe the same entry.
#[derive(Debug, Clone)]
struct Store<V> {
    capacity: usize,
    slots: Vec<Slot<V>>,
    policy: PolicyState,
    counters: MemoryCounters,
}

impl<V: Clone> Store<V> {
    fn new(capacity: usize, policy: PolicyState) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::Capacity {
                incoming: 0,
                capacity,
            });
        }
        if let PolicyKind::AttentionSink { sink_size } = policy.kind() {
            if sink_size > capacity {
                return Err(PolicyError::Invalid(format!(
                    "sink size {sink_size} exceeds capacity {capacity}"
                ))
                .into());
            }
        }
        Ok(Self {
            capacity,
            slots: Vec::new(),
            policy,
            counters: MemoryCounters::default(),
        })
    }

    fn entry(&self, i: usize) -> MemoryEntry<V> {
        let slot = &self.slots[i];
        let stats = &self.policy.entries()[i];
        MemoryEntry {
            key: slot.key.clone(),
            value: slot.value.clone(),
            metadata: slot.metadata,
            insertion: stats.insertion,
            score: stats.score,
        }
    }

    fn insert(&mut self, incoming: Vec<Slot<V>>) -> Result<EvictedBatch<V>, MemoryError> {
        let n = incoming.len();
        if n > self.capacity {
            return Err(MemoryError::Capacity {
                incoming: n,
                capacity: self.capacity,
            });
        }
        let positions: Vec<u64> = incoming.iter().map(|s| s.metadata.position).collect();
        self.policy.admit(&positions);
        self.slots.extend(incoming);
        let victims = self.policy.select_evictions(self.capacity, n)?;
        let entries = victims.iter().map(|&i| self.entry(i)).collect();
        let mut sorted = victims.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        for i in sorted {
            self.slots.remove(i);
        }
        self.policy.remove(&victims);
        self.counters.inserted += n as u64;
        self.counters.evictions += victims.len() as u64;
        Ok(EvictedBatch { entries })
    }

    fn get_all(&self) -> Vec<MemoryEntry<V>> {
        (0..self.slots.len()).map(|i| self.entry(i)).collect()
    }
}

/// Memory that only supports bulk reads. Defaults to FIFO eviction.
#[derive(Debug, Clone)]
pub struct DataOnlyMemory<T> {
    store: Store<T>,
}

impl<T: Clone> DataOnlyMemory<T> {
    pub fn new(capacity: usize, policy: PolicyState) -> Result<Self, MemoryError> {
        Ok(Self {
            store: Store::new(capacity, policy)?,
        })
    }

    pub fn fifo(capacity: usize) -> Result<Self, MemoryError> {
        Self::new(capacity, PolicyState::new(PolicyKind::Fifo, 0.0)?)
    }

    pub fn capacity(&self) -> usize {
        self.store.capacity
    }

    pub fn len(&self) -> usize {
        self.store.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.slots.is_empty()
    }

    pub fn counters(&self) -> MemoryCounters {
        self.store.counters
    }

    pub fn insert(
        &mut self,
        items: impl IntoIterator<Item = (T, Metadata)>,
    ) -> Result<EvictedBatch<T>, MemoryError> {
        let slots = items
            .into_iter()
            .map(|(value, metadata)| Slot {
                key: None,
                value,
                metadata,
            })
            .collect();
        self.store.insert(slots)
    }

    /// All entries in insertion order. Nondestructive.
    pub fn get_all(&self) -> Vec<MemoryEntry<T>> {
        self.store.get_all()
    }

    /// Returns everything, like [`Self::get_all`], and leaves the memory empty.
    pub fn take_all(&mut self) -> Vec<MemoryEntry<T>> {
        let all = self.store.get_all();
        let idx: Vec<usize> = (0..all.len()).collect();
        self.store.slots.clear();
        self.store.policy.remove(&idx);
        all
    }
}

/// How raw dot products are turned into retrieval scores.
///
/// The token-level score of a query/key pair summed over `heads` is
/// `scale · (q · k) + heads · bias(q_pos, k_pos)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTransform {
    pub scale: f64,
    pub heads: usize,
    pub distance: Option<DistanceBias>,
}

impl Default for ScoreTransform {
    fn default() -> Self {
        Self {
            scale: 1.0,
            heads: 1,
            distance: None,
        }
    }
}

impl ScoreTransform {
    pub fn apply(&self, dot: f64, q_pos: u64, k_pos: u64) -> f64 {
        let scaled = if self.scale == 1.0 {
            dot
        } else {
            dot * self.scale
        };
        match self.distance {
            Some(bias) if bias.beta != 0.0 => {
                scaled + self.heads as f64 * bias.penalty(q_pos, k_pos)
            }
            _ => scaled,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalRequest<'a> {
    /// One row per (valid) query, same width as the stored keys.
    pub queries: &'a Matrix,
    pub positions: &'a [u64],
    pub k: usize,
    pub transform: ScoreTransform,
    /// Mask retrieved keys that lie after the query. Applied after top-k.
    pub causal: bool,
    /// Feed the transformed scores of attended pairs to the policy.
    pub report_usage: bool,
}

/// Top-k result, indexed by (query, rank).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedKV {
    pub query_positions: Vec<u64>,
    /// Per query: `rank × key_dim`.
    pub keys: Vec<Matrix>,
    /// Per query: `rank × value_dim`.
    pub values: Vec<Matrix>,
    /// `query × rank`, nonincreasing along each row.
    pub similarities: Matrix,
    /// `query × rank`; false where the causal mask hides the key.
    pub allowed: Mask,
    /// Source positions of the retrieved entries (the 2-d index set).
    pub positions: Vec<Vec<u64>>,
    pub metadata: Vec<Vec<Metadata>>,
    pub insertion: Vec<Vec<u64>>,
    /// Index of each retrieved entry inside the memory at retrieval time.
    pub entry_indices: Vec<Vec<usize>>,
    /// Memory size at retrieval time.
    pub memory_len: usize,
}

impl RetrievedKV {
    pub fn width(&self) -> usize {
        self.similarities.cols()
    }

    pub fn num_queries(&self) -> usize {
        self.query_positions.len()
    }
}

/// One line of the optional memory event log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: TraceKind,
    pub positions: Vec<u64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Insert,
    Evict,
    Retrieve,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TraceKind::Insert => "insert",
            TraceKind::Evict => "evict",
            TraceKind::Retrieve => "retrieve",
        };
        let positions: Vec<String> = self.positions.iter().map(|p| p.to_string()).collect();
        let scores: Vec<String> = self.scores.iter().map(|s| format!("{s:.6}")).collect();
        write!(
            f,
            "step={} event={} positions={} scores={}",
            self.step,
            kind,
            positions.join(","),
            scores.join(",")
        )
    }
}

#[derive(Debug, Clone)]
pub struct KeyValueMemory {
    store: Store<Vec<f64>>,
    key_dim: usize,
    value_dim: usize,
    step: u64,
    trace: Option<Vec<TraceEvent>>,
}

impl KeyValueMemory {
    pub fn new(
        capacity: usize,
        key_dim: usize,
        value_dim: usize,
        policy: PolicyState,
    ) -> Result<Self, MemoryError> {
        if key_dim == 0 {
            return Err(MemoryError::Dimension("key dimension is zero".into()));
        }
        Ok(Self {
            store: Store::new(capacity, policy)?,
            key_dim,
            value_dim,
            step: 0,
            trace: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.store.capacity
    }

    pub fn len(&self) -> usize {
        self.store.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.slots.is_empty()
    }

    pub fn policy(&self) -> &PolicyState {
        &self.store.policy
    }

    pub fn counters(&self) -> MemoryCounters {
        self.store.counters
    }

    pub fn positions(&self) -> Vec<u64> {
        self.store
            .slots
            .iter()
            .map(|s| s.metadata.position)
            .collect()
    }

    pub fn contains_position(&self, position: u64) -> bool {
        self.store
            .slots
            .iter()
            .any(|s| s.metadata.position == position)
    }

    /// Step number stamped on trace events.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn log(&mut self, kind: TraceKind, positions: Vec<u64>, scores: Vec<f64>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent {
                step: self.step,
                kind,
                positions,
                scores,
            });
        }
    }

    pub fn insert(
        &mut self,
        keys: &Matrix,
        values: &Matrix,
        metadata: &[Metadata],
    ) -> Result<EvictedBatch, MemoryError> {
        if keys.rows() != values.rows() || keys.rows() != metadata.len() {
            return Err(MemoryError::Dimension(format!(
                "{} keys, {} values, {} metadata",
                keys.rows(),
                values.rows(),
                metadata.len()
            )));
        }
        if keys.cols() != self.key_dim || values.cols() != self.value_dim {
            return Err(MemoryError::Dimension(format!(
                "expected key/value dims {}/{}, got {}/{}",
                self.key_dim,
                self.value_dim,
                keys.cols(),
                values.cols()
            )));
        }
        let slots = (0..keys.rows())
            .map(|r| Slot {
                key: Some(keys.row(r).to_vec()),
                value: values.row(r).to_vec(),
                metadata: metadata[r],
            })
            .collect();
        let initial = self.store.policy.initial_score();
        let evicted = self.store.insert(slots)?;
        if self.trace.is_some() {
            self.log(
                TraceKind::Insert,
                metadata.iter().map(|m| m.position).collect(),
                vec![initial; metadata.len()],
            );
            if !evicted.is_empty() {
                self.log(
                    TraceKind::Evict,
                    evicted.positions(),
                    evicted.entries.iter().map(|e| e.score).collect(),
                );
            }
        }
        Ok(evicted)
    }

    /// All entries in insertion order. Nondestructive.
    pub fn get_all(&self) -> Vec<MemoryEntry> {
        self.store.get_all()
    }

    fn key_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * self.key_dim);
        for s in &self.store.slots {
            data.extend_from_slice(s.key.as_deref().unwrap_or_default());
        }
        Matrix::from_vec(self.len(), self.key_dim, data).expect("uniform key width")
    }

    /// Top-`k` entries per query, by transformed dot similarity.
    pub fn retrieve(&mut self, req: &RetrievalRequest<'_>) -> Result<RetrievedKV, MemoryError> {
        if self.is_empty() {
            return Err(MemoryError::EmptyMemory);
        }
        if req.queries.cols() != self.key_dim {
            return Err(MemoryError::Dimension(format!(
                "query dim {} vs key dim {}",
                req.queries.cols(),
                self.key_dim
            )));
        }
        if req.positions.len() != req.queries.rows() {
            return Err(MemoryError::Dimension(format!(
                "{} queries but {} positions",
                req.queries.rows(),
                req.positions.len()
            )));
        }
        let n_q = req.queries.rows();
        let n_e = self.len();
        let mut scores = kernels::dot_similarity(req.queries, &self.key_matrix())?;
        for q in 0..n_q {
            let q_pos = req.positions[q];
            for (e, slot) in self.store.slots.iter().enumerate() {
                let s = req
                    .transform
                    .apply(scores.get(q, e), q_pos, slot.metadata.position);
                scores.set(q, e, s);
            }
        }
        self.store.counters.similarity_ops += (n_q * n_e) as u64;
        self.store.counters.retrievals += 1;

        let width = req.k.min(n_e);
        let mut out = RetrievedKV {
            query_positions: req.positions.to_vec(),
            keys: Vec::with_capacity(n_q),
            values: Vec::with_capacity(n_q),
            similarities: Matrix::zeros(n_q, width),
            allowed: Mask::filled(n_q, width, true),
            positions: Vec::with_capacity(n_q),
            metadata: Vec::with_capacity(n_q),
            insertion: Vec::with_capacity(n_q),
            entry_indices: Vec::with_capacity(n_q),
            memory_len: n_e,
        };
        let mut pair_mask = Mask::filled(n_q, n_e, false);
        for q in 0..n_q {
            let top = kernels::top_k(scores.row(q), req.k)?;
            let mut keys = Vec::with_capacity(width * self.key_dim);
            let mut values = Vec::with_capacity(width * self.value_dim);
            let mut positions = Vec::with_capacity(width);
            let mut metadata = Vec::with_capacity(width);
            let mut insertion = Vec::with_capacity(width);
            for (r, (&e, &s)) in top.indices.iter().zip(&top.values).enumerate() {
                let slot = &self.store.slots[e];
                keys.extend_from_slice(slot.key.as_deref().unwrap_or_default());
                values.extend_from_slice(&slot.value);
                positions.push(slot.metadata.position);
                metadata.push(slot.metadata);
                insertion.push(self.store.policy.entries()[e].insertion);
                out.similarities.set(q, r, s);
                let visible = !req.causal || slot.metadata.position <= req.positions[q];
                out.allowed.set(q, r, visible);
                pair_mask.set(q, e, visible);
            }
            out.keys.push(Matrix::from_vec(width, self.key_dim, keys)?);
            out.values
                .push(Matrix::from_vec(width, self.value_dim, values)?);
            out.positions.push(positions);
            out.metadata.push(metadata);
            out.insertion.push(insertion);
            out.entry_indices.push(top.indices);
        }

        if req.report_usage {
            let valid = vec![true; n_q];
            self.store.policy.observe_attention(&Observation {
                scores: &scores,
                pair_mask: &pair_mask,
                query_positions: req.positions,
                query_valid: &valid,
            })?;
        }
        if self.trace.is_some() {
            let mut hit: Vec<usize> = out.entry_indices.iter().flatten().copied().collect();
            hit.sort_unstable();
            hit.dedup();
            let positions = hit
                .iter()
                .map(|&e| self.store.slots[e].metadata.position)
                .collect();
            let scores = hit
                .iter()
                .map(|&e| self.store.policy.entries()[e].score)
                .collect();
            self.log(TraceKind::Retrieve, positions, scores);
        }
        Ok(out)
    }

    /// Feeds externally computed attention (e.g. post-softmax weights) to the policy.
    pub fn observe_attention(&mut self, obs: &Observation<'_>) -> Result<(), MemoryError> {
        self.store.policy.observe_attention(obs)?;
        Ok(())
    }
}
