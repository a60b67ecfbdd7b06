//! Eviction policies.
//!
//! A [`PolicyState`] mirrors the entries of one memory, in insertion order, and
//! keeps whatever bookkeeping its [`PolicyKind`] needs to rank them. The owning
//! memory calls [`PolicyState::admit`] for incoming entries, asks
//! [`PolicyState::select_evictions`] which ones to drop, and then calls
//! [`PolicyState::remove`] with the same indices.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernels::{Mask, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("query positions must be nondecreasing: {prev} followed by {next}")]
    Order { prev: u64, next: u64 },
    #[error("{incoming} incoming entries exceed capacity {capacity}")]
    Capacity { incoming: usize, capacity: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid policy: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Fifo,
    Lru,
    Lfu,
    /// FIFO, except the first `sink_size` insertions are never evicted.
    AttentionSink {
        sink_size: usize,
    },
    LraLast,
    LraMax,
    LraSum,
    /// Decayed running sum of attention, with decay rate `lambda` per position.
    Lfa {
        lambda: f64,
    },
}

impl PolicyKind {
    /// True for the policies ranked by attention scores.
    pub fn uses_scores(&self) -> bool {
        matches!(
            self,
            PolicyKind::LraLast | PolicyKind::LraMax | PolicyKind::LraSum | PolicyKind::Lfa { .. }
        )
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if let PolicyKind::Lfa { lambda } = self {
            if !lambda.is_finite() || *lambda < 0.0 {
                return Err(PolicyError::Invalid(format!(
                    "LFA decay must be finite and >= 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Fifo => write!(f, "fifo"),
            PolicyKind::Lru => write!(f, "lru"),
            PolicyKind::Lfu => write!(f, "lfu"),
            PolicyKind::AttentionSink { sink_size } => write!(f, "sink:{sink_size}"),
            PolicyKind::LraLast => write!(f, "lra_last"),
            PolicyKind::LraMax => write!(f, "lra_max"),
            PolicyKind::LraSum => write!(f, "lra_sum"),
            PolicyKind::Lfa { lambda } => write!(f, "lfa:{lambda}"),
        }
    }
}

/// Drops the low mantissa bits so that scores differing only by rounding error
/// rank as ties and fall back to insertion order.
fn rank_score(x: f64) -> f64 {
    const DROP: u32 = 16;
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits();
    let half = 1u64 << (DROP - 1);
    f64::from_bits((bits + half) & !((1u64 << DROP) - 1))
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let bad = |msg: &str| PolicyError::Invalid(format!("{s}: {msg}"));
        let kind = match (name, arg) {
            ("fifo" | "mt", None) => PolicyKind::Fifo,
            ("lru", None) => PolicyKind::Lru,
            ("lfu", None) => PolicyKind::Lfu,
            ("sink" | "as", None) => PolicyKind::AttentionSink { sink_size: 4 },
            ("sink" | "as", Some(a)) => PolicyKind::AttentionSink {
                sink_size: a.parse().map_err(|_| bad("sink size must be a count"))?,
            },
            ("lra_last", None) => PolicyKind::LraLast,
            ("lra_max", None) => PolicyKind::LraMax,
            ("lra_sum", None) => PolicyKind::LraSum,
            ("lfa", None) => PolicyKind::Lfa { lambda: 0.0 },
            ("lfa", Some(a)) => PolicyKind::Lfa {
                lambda: a.parse().map_err(|_| bad("decay must be a number"))?,
            },
            _ => return Err(bad("unknown policy")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Mean and population standard deviation of the current per-entry scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
}

impl ScoreStats {
    pub fn from_scores(scores: impl IntoIterator<Item = f64>) -> Option<Self> {
        let scores: Vec<f64> = scores.into_iter().collect();
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }

    /// `mean - offset * std`
    pub fn initial_score(&self, offset: f64) -> f64 {
        self.mean - offset * self.std
    }
}

/// Bookkeeping for one stored entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryStats {
    pub insertion: u64,
    pub position: u64,
    pub score: f64,
    /// Position of the latest query that retrieved this entry (its own position until then).
    pub last_used: u64,
    /// Number of steps in which the entry was retrieved.
    pub use_count: u64,
}

/// Attention feedback from one retrieval step.
///
/// `scores` is `queries × entries`, already summed over heads. Only pairs with
/// `pair_mask` set count as attended; rows of invalid queries must be fully masked.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub scores: &'a Matrix,
    pub pair_mask: &'a Mask,
    pub query_positions: &'a [u64],
    pub query_valid: &'a [bool],
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    initial_offset: f64,
    entries: Vec<EntryStats>,
    next_insertion: u64,
    i_max: Option<u64>,
    i_prev_max: Option<u64>,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, initial_offset: f64) -> Result<Self, PolicyError> {
        kind.validate()?;
        if !initial_offset.is_finite() {
            return Err(PolicyError::Invalid(format!(
                "initial score offset must be finite, got {initial_offset}"
            )));
        }
        Ok(Self {
            kind,
            initial_offset,
            entries: Vec::new(),
            next_insertion: 0,
            i_max: None,
            i_prev_max: None,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn initial_offset(&self) -> f64 {
        self.initial_offset
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EntryStats] {
        &self.entries
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Maximum query position observed so far.
    pub fn i_max(&self) -> Option<u64> {
        self.i_max
    }

    /// Maximum query position as of the previous observation.
    pub fn i_prev_max(&self) -> Option<u64> {
        self.i_prev_max
    }

    pub fn stats(&self) -> Option<ScoreStats> {
        ScoreStats::from_scores(self.entries.iter().map(|e| e.score))
    }

    /// Score given to new entries: `μ - c·σ` over the entries currently held, or 0 when empty.
    pub fn initial_score(&self) -> f64 {
        self.stats()
            .map(|s| s.initial_score(self.initial_offset))
            .unwrap_or(0.0)
    }

    /// Registers incoming entries at the tail and returns their indices.
    ///
    /// All entries of one call share the initial score computed before any of them is added.
    pub fn admit(&mut self, positions: &[u64]) -> std::ops::Range<usize> {
        let start = self.entries.len();
        let score = self.initial_score();
        for &position in positions {
            self.entries.push(EntryStats {
                insertion: self.next_insertion,
                position,
                score,
                last_used: position,
                use_count: 0,
            });
            self.next_insertion += 1;
        }
        start..self.entries.len()
    }

    pub fn observe_attention(&mut self, obs: &Observation<'_>) -> Result<(), PolicyError> {
        let n_queries = obs.query_positions.len();
        if obs.query_valid.len() != n_queries
            || obs.scores.shape() != (n_queries, self.entries.len())
            || obs.pair_mask.shape() != obs.scores.shape()
        {
            return Err(PolicyError::Dimension(format!(
                "scores {:?}, mask {:?}, {} positions, {} validity flags, {} entries",
                obs.scores.shape(),
                obs.pair_mask.shape(),
                n_queries,
                obs.query_valid.len(),
                self.entries.len()
            )));
        }
        let valid: Vec<usize> = (0..n_queries).filter(|&q| obs.query_valid[q]).collect();
        for w in valid.windows(2) {
            let (prev, next) = (obs.query_positions[w[0]], obs.query_positions[w[1]]);
            if next < prev {
                return Err(PolicyError::Order { prev, next });
            }
        }
        let Some(&last) = valid.last() else {
            return Ok(());
        };
        let step_max = obs.query_positions[last];
        let prev_max = self.i_max;
        let i_max = prev_max.map_or(step_max, |p| p.max(step_max));

        let attended = |q: usize, e: usize| obs.query_valid[q] && obs.pair_mask.get(q, e);

        match self.kind {
            PolicyKind::Fifo | PolicyKind::AttentionSink { .. } => {}
            PolicyKind::Lru => {
                for (e, entry) in self.entries.iter_mut().enumerate() {
                    if let Some(q) = valid.iter().rev().find(|&&q| attended(q, e)) {
                        entry.last_used = entry.last_used.max(obs.query_positions[*q]);
                    }
                }
            }
            PolicyKind::Lfu => {
                for (e, entry) in self.entries.iter_mut().enumerate() {
                    if valid.iter().any(|&q| attended(q, e)) {
                        entry.use_count += 1;
                    }
                }
            }
            PolicyKind::LraLast => {
                for (e, entry) in self.entries.iter_mut().enumerate() {
                    if attended(last, e) {
                        entry.score = obs.scores.get(last, e);
                    }
                }
            }
            PolicyKind::LraMax | PolicyKind::LraSum => {
                let is_max = self.kind == PolicyKind::LraMax;
                for (e, entry) in self.entries.iter_mut().enumerate() {
                    let mut seen = false;
                    let mut acc = if is_max { f64::NEG_INFINITY } else { 0.0 };
                    for &q in valid.iter().filter(|&&q| attended(q, e)) {
                        let s = obs.scores.get(q, e);
                        acc = if is_max { acc.max(s) } else { acc + s };
                        seen = true;
                    }
                    if seen {
                        entry.score = acc;
                    }
                }
            }
            PolicyKind::Lfa { lambda } => {
                let carry = match prev_max {
                    Some(p) => (lambda * (p as f64 - i_max as f64)).exp(),
                    None => 1.0,
                };
                let query_decay: Vec<f64> = obs
                    .query_positions
                    .iter()
                    .map(|&i| (lambda * (i as f64 - i_max as f64)).exp())
                    .collect();
                for (e, entry) in self.entries.iter_mut().enumerate() {
                    let fresh: f64 = valid
                        .iter()
                        .filter(|&&q| attended(q, e))
                        .map(|&q| obs.scores.get(q, e) * query_decay[q])
                        .sum();
                    entry.score = entry.score * carry + fresh;
                }
            }
        }

        self.i_prev_max = prev_max;
        self.i_max = Some(i_max);
        Ok(())
    }

    /// Indices (into [`Self::entries`]) to evict, in eviction order.
    ///
    /// The last `n_incoming` entries are the ones just admitted; they are
    /// candidates like any other. Exactly `max(0, len - capacity)` indices are returned.
    pub fn select_evictions(
        &self,
        capacity: usize,
        n_incoming: usize,
    ) -> Result<Vec<usize>, PolicyError> {
        if n_incoming > capacity {
            return Err(PolicyError::Capacity {
                incoming: n_incoming,
                capacity,
            });
        }
        let overflow = self.entries.len().saturating_sub(capacity);
        if overflow == 0 {
            return Ok(Vec::new());
        }
        let mut candidates: Vec<usize> = match self.kind {
            PolicyKind::AttentionSink { sink_size } => (0..self.entries.len())
                .filter(|&i| self.entries[i].insertion >= sink_size as u64)
                .collect(),
            _ => (0..self.entries.len()).collect(),
        };
        if candidates.len() < overflow {
            return Err(PolicyError::Capacity {
                incoming: n_incoming,
                capacity,
            });
        }
        let key = |i: usize| -> f64 {
            let e = &self.entries[i];
            match self.kind {
                PolicyKind::Fifo | PolicyKind::AttentionSink { .. } => e.insertion as f64,
                PolicyKind::Lru => e.last_used as f64,
                PolicyKind::Lfu => e.use_count as f64,
                _ => rank_score(e.score),
            }
        };
        candidates.sort_by(|&a, &b| {
            key(a)
                .total_cmp(&key(b))
                .then(self.entries[a].insertion.cmp(&self.entries[b].insertion))
        });
        candidates.truncate(overflow);
        Ok(candidates)
    }

    /// Drops the entries at `indices` (any order, no duplicates).
    pub fn remove(&mut self, indices: &[usize]) {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        for i in sorted {
            self.entries.remove(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lra(kind: PolicyKind, scores: &[f64]) -> PolicyState {
        let mut p = PolicyState::new(kind, 1.0).unwrap();
        p.admit(&(0..scores.len() as u64).collect::<Vec<_>>());
        for (e, s) in p.entries.iter_mut().zip(scores) {
            e.score = *s;
        }
        p
    }

    fn observe(p: &mut PolicyState, rows: &[&[f64]], positions: &[u64]) {
        let scores = Matrix::from_rows(rows).unwrap();
        let mask = Mask::filled(scores.rows(), scores.cols(), true);
        let valid = vec![true; positions.len()];
        p.observe_attention(&Observation {
            scores: &scores,
            pair_mask: &mask,
            query_positions: positions,
            query_valid: &valid,
        })
        .unwrap();
    }

    #[test]
    fn initial_score_cases() {
        let p = lra(PolicyKind::LraSum, &[1.0, 2.0, 3.0]);
        let expect = 2.0 - (2.0f64 / 3.0).sqrt();
        assert!((p.initial_score() - expect).abs() < 1e-12);
        assert!((p.initial_score() - 1.1835).abs() < 1e-4);

        let empty = PolicyState::new(PolicyKind::LraSum, 1.0).unwrap();
        assert_eq!(empty.initial_score(), 0.0);

        let mut flat = lra(PolicyKind::LraSum, &[5.0, 5.0, 5.0]);
        flat.initial_offset = 2.0;
        assert_eq!(flat.initial_score(), 5.0);
    }

    #[test]
    fn lra_last_takes_last_valid_row() {
        let mut p = lra(PolicyKind::LraLast, &[0.0, 0.0]);
        observe(&mut p, &[&[0.2, 0.8], &[0.6, 0.4]], &[10, 11]);
        assert_eq!(p.scores(), vec![0.6, 0.4]);
    }

    #[test]
    fn lra_last_skips_invalid_trailing_query() {
        let mut p = lra(PolicyKind::LraLast, &[0.0, 0.0]);
        let scores = Matrix::from_rows(&[[0.2, 0.8], [0.6, 0.4]]).unwrap();
        let mut mask = Mask::filled(2, 2, true);
        mask.set(1, 0, false);
        mask.set(1, 1, false);
        p.observe_attention(&Observation {
            scores: &scores,
            pair_mask: &mask,
            query_positions: &[10, 11],
            query_valid: &[true, false],
        })
        .unwrap();
        assert_eq!(p.scores(), vec![0.2, 0.8]);
    }

    #[test]
    fn lra_max_and_sum_pool_over_queries() {
        let mut p = lra(PolicyKind::LraMax, &[0.0, 0.0]);
        observe(&mut p, &[&[0.2, 0.8], &[0.6, 0.4]], &[1, 2]);
        assert_eq!(p.scores(), vec![0.6, 0.8]);
        let mut p = lra(PolicyKind::LraSum, &[0.0, 0.0]);
        observe(&mut p, &[&[0.25, 0.75], &[0.5, 0.5]], &[1, 2]);
        assert_eq!(p.scores(), vec![0.75, 1.25]);
    }

    #[test]
    fn unattended_lra_entry_keeps_score() {
        let mut p = lra(PolicyKind::LraSum, &[3.0, 4.0]);
        let scores = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let mut mask = Mask::filled(1, 2, true);
        mask.set(0, 1, false);
        p.observe_attention(&Observation {
            scores: &scores,
            pair_mask: &mask,
            query_positions: &[5],
            query_valid: &[true],
        })
        .unwrap();
        assert_eq!(p.scores(), vec![1.0, 4.0]);
    }

    #[test]
    fn lfa_zero_adds_column_sums() {
        let mut p = lra(PolicyKind::Lfa { lambda: 0.0 }, &[1.0, 0.5]);
        p.i_max = Some(3);
        observe(&mut p, &[&[0.3, 0.7], &[0.5, 0.5]], &[4, 5]);
        let s = p.scores();
        assert!((s[0] - 1.8).abs() < 1e-12 && (s[1] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn lfa_decays_previous_aggregate() {
        let mut p = lra(PolicyKind::Lfa { lambda: 0.001 }, &[1.0]);
        p.i_max = Some(8);
        observe(&mut p, &[&[0.0]], &[10]);
        assert!((p.scores()[0] - 0.998002).abs() < 1e-6);
        assert!((p.scores()[0] - (-0.002f64).exp()).abs() < 1e-15);
        assert_eq!(p.i_prev_max(), Some(8));
        assert_eq!(p.i_max(), Some(10));
    }

    #[test]
    fn lfa_decays_pairwise_scores_by_query_age() {
        let mut p = lra(PolicyKind::Lfa { lambda: 0.5 }, &[0.0]);
        observe(&mut p, &[&[1.0], &[1.0]], &[4, 6]);
        let expect = (-1.0f64).exp() + 1.0;
        assert!((p.scores()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn lru_and_lfu_track_usage() {
        let mut p = PolicyState::new(PolicyKind::Lru, 1.0).unwrap();
        p.admit(&[0, 1]);
        let scores = Matrix::zeros(2, 2);
        let mut mask = Mask::filled(2, 2, false);
        mask.set(0, 0, true);
        mask.set(1, 0, true);
        let obs = Observation {
            scores: &scores,
            pair_mask: &mask,
            query_positions: &[7, 9],
            query_valid: &[true, true],
        };
        p.observe_attention(&obs).unwrap();
        assert_eq!(p.entries[0].last_used, 9);
        assert_eq!(p.entries[1].last_used, 1);
        assert_eq!(p.select_evictions(1, 0).unwrap(), vec![1]);

        let mut p = PolicyState::new(PolicyKind::Lfu, 1.0).unwrap();
        p.admit(&[0, 1]);
        p.observe_attention(&obs).unwrap();
        p.observe_attention(&obs).unwrap();
        // used by two queries per step, counted once per step
        assert_eq!(p.entries[0].use_count, 2);
        assert_eq!(p.entries[1].use_count, 0);
        assert_eq!(p.select_evictions(1, 0).unwrap(), vec![1]);
    }

    #[test]
    fn out_of_order_queries_rejected() {
        let mut p = lra(PolicyKind::LraSum, &[0.0]);
        let scores = Matrix::zeros(2, 1);
        let mask = Mask::filled(2, 1, true);
        let err = p
            .observe_attention(&Observation {
                scores: &scores,
                pair_mask: &mask,
                query_positions: &[5, 4],
                query_valid: &[true, true],
            })
            .unwrap_err();
        assert_eq!(err, PolicyError::Order { prev: 5, next: 4 });
    }

    #[test]
    fn fifo_and_sink_selection() {
        let mut p = PolicyState::new(PolicyKind::Fifo, 1.0).unwrap();
        p.admit(&[0, 1, 2]);
        p.admit(&[3]);
        assert_eq!(p.select_evictions(3, 1).unwrap(), vec![0]);

        let mut p = PolicyState::new(PolicyKind::AttentionSink { sink_size: 1 }, 1.0).unwrap();
        p.admit(&[0, 1, 2]);
        p.admit(&[3]);
        assert_eq!(p.select_evictions(3, 1).unwrap(), vec![1]);
    }

    #[test]
    fn lra_tie_goes_to_oldest() {
        let mut p = lra(PolicyKind::LraSum, &[0.1, 0.9, 0.1]);
        p.admit(&[3]);
        p.entries[3].score = 5.0;
        assert_eq!(p.select_evictions(3, 1).unwrap(), vec![0]);
    }

    #[test]
    fn rank_score_merges_rounding_noise_only() {
        assert_eq!(rank_score(0.5), rank_score(0.49999999999999994));
        assert_eq!(rank_score(-1.0), rank_score(-1.0000000000000002));
        assert!(rank_score(0.5) > rank_score(0.4999999));
        assert!(rank_score(-0.5) < rank_score(-0.4999999));
        assert_eq!(rank_score(0.0), 0.0);
    }

    #[test]
    fn capacity_error_for_oversized_chunk() {
        let p = PolicyState::new(PolicyKind::Fifo, 1.0).unwrap();
        assert_eq!(
            p.select_evictions(2, 4),
            Err(PolicyError::Capacity {
                incoming: 4,
                capacity: 2
            })
        );
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "fifo",
            "lru",
            "lfu",
            "sink:4",
            "lra_last",
            "lra_max",
            "lra_sum",
            "lfa:0.001",
        ] {
            assert_eq!(s.parse::<PolicyKind>().unwrap().to_string(), s);
        }
        assert!("lfa:-1".parse::<PolicyKind>().is_err());
        assert!("bogus".parse::<PolicyKind>().is_err());
    }
}
