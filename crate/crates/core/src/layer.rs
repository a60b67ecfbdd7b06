//! The wait-to-attend layer.
//!
//! Each [`AttendreLayer::step`] pushes the chunk's queries into a FIFO Q memory
//! and its valid keys/values into a policy-managed K/V memory. The queries that
//! fall out of the Q memory then retrieve their top-k keys, so every query sees
//! up to `N` positions that arrived after it. With `N = 0` the fresh queries are
//! used directly.

use thiserror::Error;

use crate::kernels::{self, KernelError, Mask, Matrix};
use crate::memory::{
    DataOnlyMemory, KeyValueMemory, MemoryError, Metadata, RetrievalRequest, RetrievedKV,
    ScoreTransform,
};
use crate::policies::{Observation, PolicyError, PolicyKind, PolicyState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("invalid layer config: {0}")]
    Config(String),
    #[error("malformed chunk: {0}")]
    Chunk(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<PolicyError> for LayerError {
    fn from(e: PolicyError) -> Self {
        LayerError::Memory(e.into())
    }
}

/// `|q_pos - k_pos|`, capped at `n_local`.
pub fn capped_distance(q_pos: u64, k_pos: u64, n_local: u64) -> u64 {
    q_pos.abs_diff(k_pos).min(n_local)
}

/// Additive per-head penalty `-beta · ln(1 + capped_distance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBias {
    pub n_local: u64,
    pub beta: f64,
}

impl DistanceBias {
    pub fn penalty(&self, q_pos: u64, k_pos: u64) -> f64 {
        -self.beta * (1.0 + capped_distance(q_pos, k_pos, self.n_local) as f64).ln()
    }
}

/// Which attention values drive LRA/LFA scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFeedback {
    /// Transformed similarities, before normalisation.
    #[default]
    PreSoftmax,
    /// Attention weights, summed over heads.
    PostSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttendreConfig {
    /// K/V memory capacity (M).
    pub kv_capacity: usize,
    /// Q memory capacity (N); 0 disables the delay.
    pub q_capacity: usize,
    /// Retrieval width (K).
    pub top_k: usize,
    /// Chunk length (S).
    pub chunk_len: usize,
    pub policy: PolicyKind,
    /// `c` in the initial score `μ - c·σ`.
    pub initial_offset: f64,
    pub heads: usize,
    pub head_dim: usize,
    /// Hide retrieved keys that come after the query.
    pub causal: bool,
    /// Multiply similarities by `1/sqrt(head_dim)`.
    pub scale_scores: bool,
    pub distance: Option<DistanceBias>,
    pub feedback: ScoreFeedback,
}

impl Default for AttendreConfig {
    fn default() -> Self {
        Self {
            kv_capacity: 256,
            q_capacity: 0,
            top_k: 256,
            chunk_len: 8,
            policy: PolicyKind::Fifo,
            initial_offset: 1.0,
            heads: 1,
            head_dim: 16,
            causal: false,
            scale_scores: false,
            distance: None,
            feedback: ScoreFeedback::PreSoftmax,
        }
    }
}

impl AttendreConfig {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        let fail = |m: String| Err(LayerError::Config(m));
        if self.heads == 0 || self.head_dim == 0 {
            return fail("heads and head_dim must be at least 1".into());
        }
        if self.chunk_len == 0 || self.top_k == 0 || self.kv_capacity == 0 {
            return fail("chunk length, top-k and K/V capacity must be at least 1".into());
        }
        if self.chunk_len > self.kv_capacity {
            return fail(format!(
                "chunk length {} exceeds K/V capacity {}",
                self.chunk_len, self.kv_capacity
            ));
        }
        if self.q_capacity > self.kv_capacity {
            return fail(format!(
                "Q capacity {} exceeds K/V capacity {}",
                self.q_capacity, self.kv_capacity
            ));
        }
        if self.q_capacity > 0 && self.q_capacity < self.chunk_len {
            return fail(format!(
                "Q capacity {} is smaller than one chunk ({})",
                self.q_capacity, self.chunk_len
            ));
        }
        if let Some(d) = self.distance {
            if !d.beta.is_finite() || d.beta < 0.0 {
                return fail(format!(
                    "distance penalty must be finite and >= 0, got {}",
                    d.beta
                ));
            }
        }
        self.policy.validate()?;
        Ok(())
    }

    fn score_scale(&self) -> f64 {
        if self.scale_scores {
            1.0 / (self.head_dim as f64).sqrt()
        } else {
            1.0
        }
    }

    fn transform(&self) -> ScoreTransform {
        ScoreTransform {
            scale: self.score_scale(),
            heads: self.heads,
            distance: self.distance,
        }
    }
}

/// One streaming step's inputs. Heads are laid out side by side in the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub positions: Vec<u64>,
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    /// `false` marks padding.
    pub valid: Vec<bool>,
}

impl Chunk {
    pub fn new(
        positions: Vec<u64>,
        queries: Matrix,
        keys: Matrix,
        values: Matrix,
        valid: Vec<bool>,
    ) -> Result<Self, LayerError> {
        let n = positions.len();
        if queries.rows() != n || keys.rows() != n || values.rows() != n || valid.len() != n {
            return Err(LayerError::Chunk(format!(
                "{n} positions but q/k/v/valid have {}/{}/{}/{} rows",
                queries.rows(),
                keys.rows(),
                values.rows(),
                valid.len()
            )));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LayerError::Chunk(
                "positions must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            positions,
            queries,
            keys,
            values,
            valid,
        })
    }

    /// All-invalid chunk at positions `start..start + len`.
    pub fn padding(start: u64, len: usize, width: usize) -> Self {
        Self {
            positions: (start..start + len as u64).collect(),
            queries: Matrix::zeros(len, width),
            keys: Matrix::zeros(len, width),
            values: Matrix::zeros(len, width),
            valid: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Outputs for the query slots released in one step (or by a flush).
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedOutput {
    /// Every released slot, padding included.
    pub positions: Vec<u64>,
    pub valid: Vec<bool>,
    /// One row per slot; padding rows and rows with nothing visible are zero.
    pub outputs: Matrix,
    /// `valid query × rank`, attention weights averaged over heads.
    pub attention: Matrix,
    /// Per valid query: no retrieved key was visible.
    pub flagged: Vec<bool>,
    /// `None` when no valid query was released or the K/V memory was empty.
    pub retrieval: Option<RetrievedKV>,
}

impl AttendedOutput {
    fn empty(width: usize) -> Self {
        Self {
            positions: Vec::new(),
            valid: Vec::new(),
            outputs: Matrix::zeros(0, width),
            attention: Matrix::zeros(0, 0),
            flagged: Vec::new(),
            retrieval: None,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn valid_positions(&self) -> Vec<u64> {
        self.positions
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(p, _)| *p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounters {
    pub steps: u64,
    pub flushes: u64,
    /// Slots pushed through `step`, padding included.
    pub input_slots: u64,
    pub valid_inputs: u64,
    /// Slots released by `step` or `flush`.
    pub output_slots: u64,
    pub valid_outputs: u64,
    pub similarity_ops: u64,
    pub retrievals: u64,
    /// Largest number of K/Vs attended by one query.
    pub max_attended_per_query: u64,
    pub attended_pairs: u64,
    pub kv_evictions: u64,
    pub q_evictions: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct QuerySlot {
    query: Vec<f64>,
    valid: bool,
}

#[derive(Debug, Clone)]
pub struct AttendreLayer {
    config: AttendreConfig,
    q_memory: Option<DataOnlyMemory<QuerySlot>>,
    kv_memory: KeyValueMemory,
    counters: LayerCounters,
    last_position: Option<u64>,
}

impl AttendreLayer {
    pub fn new(config: AttendreConfig) -> Result<Self, LayerError> {
        config.validate()?;
        let policy = PolicyState::new(config.policy, config.initial_offset)?;
        let width = config.width();
        let kv_memory = KeyValueMemory::new(config.kv_capacity, width, width, policy)?;
        let q_memory = if config.q_capacity > 0 {
            Some(DataOnlyMemory::fifo(config.q_capacity)?)
        } else {
            None
        };
        Ok(Self {
            config,
            q_memory,
            kv_memory,
            counters: LayerCounters::default(),
            last_position: None,
        })
    }

    pub fn config(&self) -> &AttendreConfig {
        &self.config
    }

    pub fn counters(&self) -> LayerCounters {
        self.counters
    }

    pub fn kv_memory(&self) -> &KeyValueMemory {
        &self.kv_memory
    }

    pub fn kv_memory_mut(&mut self) -> &mut KeyValueMemory {
        &mut self.kv_memory
    }

    /// Queries currently waiting in the Q memory.
    pub fn pending_queries(&self) -> usize {
        self.q_memory.as_ref().map_or(0, |q| q.len())
    }

    fn check_chunk(&self, chunk: &Chunk) -> Result<(), LayerError> {
        let width = self.config.width();
        if chunk.len() != self.config.chunk_len {
            return Err(LayerError::Chunk(format!(
                "chunk has {} slots, expected {}",
                chunk.len(),
                self.config.chunk_len
            )));
        }
        for (name, m) in [
            ("queries", &chunk.queries),
            ("keys", &chunk.keys),
            ("values", &chunk.values),
        ] {
            if m.shape() != (chunk.len(), width) {
                return Err(LayerError::Chunk(format!(
                    "{name} are {:?}, expected ({}, {width})",
                    m.shape(),
                    chunk.len()
                )));
            }
        }
        if chunk.valid.len() != chunk.len() {
            return Err(LayerError::Chunk("validity mask length differs".into()));
        }
        if chunk.positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LayerError::Chunk(
                "positions must be strictly increasing".into(),
            ));
        }
        if let (Some(last), Some(&first)) = (self.last_position, chunk.positions.first()) {
            if first <= last {
                return Err(LayerError::Chunk(format!(
                    "chunk starts at {first}, not after previous position {last}"
                )));
            }
        }
        Ok(())
    }

    /// Runs one streaming step. Returns `None` while the Q memory is still filling.
    pub fn step(&mut self, chunk: &Chunk) -> Result<Option<AttendedOutput>, LayerError> {
        self.check_chunk(chunk)?;
        self.kv_memory.set_step(self.counters.steps);

        let released = match self.q_memory.as_mut() {
            Some(q_memory) => {
                let items = (0..chunk.len()).map(|r| {
                    (
                        QuerySlot {
                            query: chunk.queries.row(r).to_vec(),
                            valid: chunk.valid[r],
                        },
                        Metadata::at(chunk.positions[r]),
                    )
                });
                let evicted = q_memory.insert(items)?;
                self.counters.q_evictions += evicted.len() as u64;
                if evicted.is_empty() {
                    None
                } else {
                    Some(
                        evicted
                            .entries
                            .into_iter()
                            .map(|e| (e.metadata.position, e.value))
                            .collect::<Vec<_>>(),
                    )
                }
            }
            None => Some(
                (0..chunk.len())
                    .map(|r| {
                        (
                            chunk.positions[r],
                            QuerySlot {
                                query: chunk.queries.row(r).to_vec(),
                                valid: chunk.valid[r],
                            },
                        )
                    })
                    .collect(),
            ),
        };

        let valid_rows: Vec<usize> = (0..chunk.len()).filter(|&r| chunk.valid[r]).collect();
        if !valid_rows.is_empty() {
            let meta: Vec<Metadata> = valid_rows
                .iter()
                .map(|&r| Metadata::at(chunk.positions[r]))
                .collect();
            let evicted = self.kv_memory.insert(
                &chunk.keys.select_rows(&valid_rows),
                &chunk.values.select_rows(&valid_rows),
                &meta,
            )?;
            self.counters.kv_evictions += evicted.len() as u64;
        }

        self.counters.steps += 1;
        self.counters.input_slots += chunk.len() as u64;
        self.counters.valid_inputs += valid_rows.len() as u64;
        self.last_position = chunk.positions.last().copied();

        match released {
            Some(slots) => Ok(Some(self.attend(slots)?)),
            None => Ok(None),
        }
    }

    /// Releases every waiting query in one batch. A second call returns an empty output.
    pub fn flush(&mut self) -> Result<AttendedOutput, LayerError> {
        let slots: Vec<(u64, QuerySlot)> = match self.q_memory.as_mut() {
            Some(q) => q
                .take_all()
                .into_iter()
                .map(|e| (e.metadata.position, e.value))
                .collect(),
            None => Vec::new(),
        };
        if slots.is_empty() {
            return Ok(AttendedOutput::empty(self.config.width()));
        }
        self.counters.flushes += 1;
        self.kv_memory.set_step(self.counters.steps);
        self.attend(slots)
    }

    fn attend(&mut self, slots: Vec<(u64, QuerySlot)>) -> Result<AttendedOutput, LayerError> {
        let cfg = &self.config;
        let width = cfg.width();
        let hd = cfg.head_dim;
        let positions: Vec<u64> = slots.iter().map(|s| s.0).collect();
        let valid: Vec<bool> = slots.iter().map(|s| s.1.valid).collect();
        let mut outputs = Matrix::zeros(slots.len(), width);
        let valid_rows: Vec<usize> = (0..slots.len()).filter(|&r| valid[r]).collect();

        self.counters.output_slots += slots.len() as u64;
        self.counters.valid_outputs += valid_rows.len() as u64;

        if valid_rows.is_empty() || self.kv_memory.is_empty() {
            return Ok(AttendedOutput {
                positions,
                valid,
                outputs,
                attention: Matrix::zeros(valid_rows.len(), 0),
                flagged: vec![true; valid_rows.len()],
                retrieval: None,
            });
        }

        let query_rows: Vec<&[f64]> = valid_rows
            .iter()
            .map(|&r| slots[r].1.query.as_slice())
            .collect();
        let queries = Matrix::from_rows(&query_rows)?;
        let query_positions: Vec<u64> = valid_rows.iter().map(|&r| positions[r]).collect();

        let before = self.kv_memory.counters();
        let retrieved = self.kv_memory.retrieve(&RetrievalRequest {
            queries: &queries,
            positions: &query_positions,
            k: cfg.top_k,
            transform: cfg.transform(),
            causal: cfg.causal,
            report_usage: cfg.feedback == ScoreFeedback::PreSoftmax,
        })?;
        let after = self.kv_memory.counters();
        self.counters.similarity_ops += after.similarity_ops - before.similarity_ops;
        self.counters.retrievals += after.retrievals - before.retrievals;

        let n_q = valid_rows.len();
        let rank = retrieved.width();
        self.counters.max_attended_per_query =
            self.counters.max_attended_per_query.max(rank as u64);
        self.counters.attended_pairs += (n_q * rank) as u64;

        let scale = cfg.score_scale();
        let mut attention = Matrix::zeros(n_q, rank);
        let mut flagged = vec![false; n_q];
        for h in 0..cfg.heads {
            let cols = h * hd..(h + 1) * hd;
            let mut scores = Matrix::zeros(n_q, rank);
            for s in 0..n_q {
                let q = &queries.row(s)[cols.clone()];
                for r in 0..rank {
                    let k = &retrieved.keys[s].row(r)[cols.clone()];
                    let mut v = kernels::dot(q, k) * scale;
                    if let Some(bias) = cfg.distance {
                        if bias.beta != 0.0 {
                            v += bias.penalty(query_positions[s], retrieved.positions[s][r]);
                        }
                    }
                    scores.set(s, r, v);
                }
            }
            let soft = kernels::masked_softmax(&scores, &retrieved.allowed)?;
            let head_values: Vec<Matrix> = retrieved
                .values
                .iter()
                .map(|v| v.column_block(h * hd, hd))
                .collect();
            let head_out = kernels::weighted_value_sum(&soft.weights, &head_values)?;
            for (s, &row) in valid_rows.iter().enumerate() {
                outputs.row_mut(row)[cols.clone()].copy_from_slice(head_out.row(s));
                flagged[s] |= soft.all_masked[s];
                for r in 0..rank {
                    let w = attention.get(s, r) + soft.weights.get(s, r) / cfg.heads as f64;
                    attention.set(s, r, w);
                }
            }
        }

        if cfg.feedback == ScoreFeedback::PostSoftmax {
            let n_e = retrieved.memory_len;
            let mut dense = Matrix::zeros(n_q, n_e);
            let mut mask = Mask::filled(n_q, n_e, false);
            for s in 0..n_q {
                for r in 0..rank {
                    if retrieved.allowed.get(s, r) {
                        let e = retrieved.entry_indices[s][r];
                        // head-summed weight
                        dense.set(s, e, attention.get(s, r) * cfg.heads as f64);
                        mask.set(s, e, true);
                    }
                }
            }
            let all_valid = vec![true; n_q];
            self.kv_memory.observe_attention(&Observation {
                scores: &dense,
                pair_mask: &mask,
                query_positions: &query_positions,
                query_valid: &all_valid,
            })?;
        }

        Ok(AttendedOutput {
            positions,
            valid,
            outputs,
            attention,
            flagged,
            retrieval: Some(retrieved),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dim(positions: &[u64], q: &[f64], k: &[f64], v: &[f64]) -> Chunk {
        let col = |x: &[f64]| Matrix::from_vec(x.len(), 1, x.to_vec()).unwrap();
        Chunk::new(
            positions.to_vec(),
            col(q),
            col(k),
            col(v),
            vec![true; positions.len()],
        )
        .unwrap()
    }

    #[test]
    fn capped_distance_cases() {
        assert_eq!(capped_distance(10, 8, 16), 2);
        assert_eq!(capped_distance(100, 0, 16), 16);
        assert_eq!(capped_distance(7, 7, 16), 0);
        assert_eq!(capped_distance(8, 10, 16), 2);
    }

    #[test]
    fn distance_penalty_uses_capped_distance() {
        let b = DistanceBias {
            n_local: 4,
            beta: 2.0,
        };
        assert_eq!(b.penalty(3, 3), 0.0);
        assert_eq!(b.penalty(100, 0), -2.0 * 5f64.ln());
        assert_eq!(b.penalty(100, 0), b.penalty(50, 0));
    }

    #[test]
    fn single_token_delay_hand_check() {
        let cfg = AttendreConfig {
            kv_capacity: 16,
            q_capacity: 1,
            top_k: 16,
            chunk_len: 1,
            head_dim: 1,
            ..Default::default()
        };
        let mut layer = AttendreLayer::new(cfg).unwrap();
        let (q0, k0, v0, k1, v1) = (0.7, 1.3, 2.0, -0.4, 5.0);
        assert!(layer
            .step(&one_dim(&[0], &[q0], &[k0], &[v0]))
            .unwrap()
            .is_none());
        let out = layer
            .step(&one_dim(&[1], &[0.1], &[k1], &[v1]))
            .unwrap()
            .unwrap();
        assert_eq!(out.positions, vec![0]);
        let (a, b) = ((q0 * k0).exp(), (q0 * k1).exp());
        let expect = (a * v0 + b * v1) / (a + b);
        assert!((out.outputs.get(0, 0) - expect).abs() < 1e-12);
        let r = out.retrieval.unwrap();
        let mut seen = r.positions[0].clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1]);

        let rest = layer.flush().unwrap();
        assert_eq!(rest.positions, vec![1]);
        assert!(layer.flush().unwrap().is_empty());
    }

    #[test]
    fn delayed_output_covers_future_positions() {
        let cfg = AttendreConfig {
            kv_capacity: 64,
            q_capacity: 4,
            top_k: 64,
            chunk_len: 2,
            head_dim: 1,
            ..Default::default()
        };
        let mut layer = AttendreLayer::new(cfg).unwrap();
        let mut emitted = Vec::new();
        for i in 0..4u64 {
            let p = [2 * i, 2 * i + 1];
            let out = layer
                .step(&one_dim(&p, &[1.0, 1.0], &[0.5, 0.5], &[1.0, 2.0]))
                .unwrap();
            emitted.push(out.map(|o| {
                let mut seen = o.retrieval.unwrap().positions[0].clone();
                seen.sort_unstable();
                (o.positions, seen)
            }));
        }
        assert!(emitted[0].is_none() && emitted[1].is_none());
        let (pos, seen) = emitted[2].clone().unwrap();
        assert_eq!(pos, vec![0, 1]);
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(emitted[3].clone().unwrap().0, vec![2, 3]);
    }

    #[test]
    fn no_delay_includes_current_chunk() {
        let cfg = AttendreConfig {
            kv_capacity: 8,
            top_k: 8,
            chunk_len: 2,
            head_dim: 1,
            ..Default::default()
        };
        let mut layer = AttendreLayer::new(cfg).unwrap();
        let out = layer
            .step(&one_dim(&[0, 1], &[1.0, 1.0], &[1.0, 2.0], &[3.0, 4.0]))
            .unwrap()
            .unwrap();
        assert_eq!(out.positions, vec![0, 1]);
        assert_eq!(out.retrieval.unwrap().width(), 2);
        assert!(layer.flush().unwrap().is_empty());
    }

    #[test]
    fn flush_after_single_short_chunk() {
        let cfg = AttendreConfig {
            kv_capacity: 16,
            q_capacity: 8,
            top_k: 16,
            chunk_len: 4,
            head_dim: 1,
            ..Default::default()
        };
        let mut layer = AttendreLayer::new(cfg).unwrap();
        let mut chunk = one_dim(&[0, 1, 2, 3], &[1.0; 4], &[1.0; 4], &[1.0; 4]);
        chunk.valid = vec![true, true, true, false];
        assert!(layer.step(&chunk).unwrap().is_none());
        let out = layer.flush().unwrap();
        assert_eq!(out.valid_positions(), vec![0, 1, 2]);
        assert_eq!(out.outputs.row(3), &[0.0]);
        assert_eq!(layer.kv_memory().len(), 3);
    }

    #[test]
    fn config_validation() {
        let ok = AttendreConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            AttendreConfig {
                top_k: 0,
                ..ok.clone()
            },
            AttendreConfig {
                chunk_len: 300,
                ..ok.clone()
            },
            AttendreConfig {
                q_capacity: 512,
                ..ok.clone()
            },
            AttendreConfig {
                q_capacity: 4,
                ..ok.clone()
            },
            AttendreConfig {
                heads: 0,
                ..ok.clone()
            },
        ] {
            assert!(
                matches!(bad.validate(), Err(LayerError::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn rejects_wrong_chunk_shape_and_order() {
        let cfg = AttendreConfig {
            kv_capacity: 8,
            top_k: 8,
            chunk_len: 2,
            head_dim: 1,
            ..Default::default()
        };
        let mut layer = AttendreLayer::new(cfg).unwrap();
        let short = one_dim(&[0], &[1.0], &[1.0], &[1.0]);
        assert!(matches!(layer.step(&short), Err(LayerError::Chunk(_))));
        layer
            .step(&one_dim(&[4, 5], &[1.0; 2], &[1.0; 2], &[1.0; 2]))
            .unwrap();
        let stale = one_dim(&[2, 3], &[1.0; 2], &[1.0; 2], &[1.0; 2]);
        assert!(matches!(layer.step(&stale), Err(LayerError::Chunk(_))));
    }
}
