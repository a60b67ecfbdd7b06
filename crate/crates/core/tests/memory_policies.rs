mod common;

use attendre::memory::{RetrievalRequest, ScoreTransform};
use attendre::policies::{Observation, PolicyState};
use attendre::{KeyValueMemory, Mask, Matrix, MemoryError, Metadata, PolicyKind};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[derive(Debug, Clone)]
enum Op {
    Insert(usize),
    Retrieve { queries: usize, k: usize },
}

fn ops(capacity: usize) -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (1..=capacity).prop_map(Op::Insert),
            1 => (1usize..4, 1usize..6).prop_map(|(queries, k)| Op::Retrieve { queries, k }),
        ],
        1..40,
    )
}

fn any_policy() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(vec![
        PolicyKind::Fifo,
        PolicyKind::Lru,
        PolicyKind::Lfu,
        PolicyKind::AttentionSink { sink_size: 4 },
        PolicyKind::LraLast,
        PolicyKind::LraMax,
        PolicyKind::LraSum,
        PolicyKind::Lfa { lambda: 0.0 },
        PolicyKind::Lfa { lambda: 0.05 },
    ])
}

/// Replays `ops`, returning evicted insertion counters in eviction order.
fn replay(policy: PolicyKind, capacity: usize, ops: &[Op], seed: u64) -> Vec<u64> {
    let mut r = rng(seed);
    let mut mem =
        KeyValueMemory::new(capacity, 3, 2, PolicyState::new(policy, 1.0).unwrap()).unwrap();
    let mut next = 0u64;
    let mut evicted = Vec::new();
    for op in ops {
        match *op {
            Op::Insert(n) => {
                let meta: Vec<Metadata> = (next..next + n as u64).map(Metadata::at).collect();
                next += n as u64;
                let out = mem
                    .insert(
                        &random_matrix(n, 3, &mut r),
                        &random_matrix(n, 2, &mut r),
                        &meta,
                    )
                    .unwrap();
                assert!(mem.len() <= capacity, "{} > {capacity}", mem.len());
                evicted.extend(out.entries.iter().map(|e| e.insertion));
                assert_eq!(out.len(), out.entries.len());
            }
            Op::Retrieve { queries, k } => {
                let q = random_matrix(queries, 3, &mut r);
                let positions = vec![next; queries];
                let res = mem.retrieve(&RetrievalRequest {
                    queries: &q,
                    positions: &positions,
                    k,
                    transform: ScoreTransform::default(),
                    causal: r.gen(),
                    report_usage: true,
                });
                match res {
                    Ok(kv) => {
                        assert_eq!(kv.width(), k.min(mem.len()));
                        for row in 0..queries {
                            let sims: Vec<f64> = (0..kv.width())
                                .map(|c| kv.similarities.get(row, c))
                                .collect();
                            assert!(sims.windows(2).all(|w| w[0] >= w[1]));
                        }
                    }
                    Err(MemoryError::EmptyMemory) => assert!(mem.is_empty()),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }
    assert_eq!(mem.counters().evictions, evicted.len() as u64);
    evicted
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn size_never_exceeds_capacity(policy in any_policy(), capacity in 4usize..12, ops in ops(4), seed in any::<u64>()) {
        replay(policy, capacity, &ops, seed);
    }

    #[test]
    fn fifo_evicts_in_insertion_order(capacity in 1usize..10, ops in ops(1), seed in any::<u64>()) {
        let evicted = replay(PolicyKind::Fifo, capacity, &ops, seed);
        prop_assert_eq!(evicted.clone(), (0..evicted.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn sink_keeps_first_four(capacity in 5usize..12, ops in ops(1), seed in any::<u64>()) {
        let evicted = replay(PolicyKind::AttentionSink { sink_size: 4 }, capacity, &ops, seed);
        prop_assert!(evicted.iter().all(|&i| i >= 4), "{:?}", evicted);
        // Past the sink it is plain FIFO.
        prop_assert!(evicted.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rank_order_ignores_score_shift_with_zero_offset(
        steps in prop::collection::vec((1usize..3, prop::collection::vec(-2.0f64..2.0, 8)), 1..12),
        shift in -5.0f64..5.0,
    ) {
        // With c = 0 every new entry gets the mean score; adding a constant to all
        // feedback shifts every score (attended or not) by the same amount, so
        // eviction choices do not change.
        let run = |offset: f64| {
            let mut p = PolicyState::new(PolicyKind::LraLast, 0.0).unwrap();
            let mut evicted = Vec::new();
            let mut pos = 0u64;
            for (n_new, raw) in &steps {
                let range = p.admit(&(pos..pos + *n_new as u64).collect::<Vec<_>>());
                pos += *n_new as u64;
                let victims = p.select_evictions(4, range.len()).unwrap();
                evicted.extend(victims.iter().map(|&i| p.entries()[i].insertion));
                p.remove(&victims);
                let len = p.len();
                let scores = Matrix::from_vec(1, len, raw[..len].iter().map(|x| x + offset).collect()).unwrap();
                let mask = Mask::filled(1, len, true);
                p.observe_attention(&Observation {
                    scores: &scores,
                    pair_mask: &mask,
                    query_positions: &[pos],
                    query_valid: &[true],
                }).unwrap();
            }
            evicted
        };
        prop_assert_eq!(run(0.0), run(shift));
    }
}

/// Random observation over `len` entries with some pairs masked out.
fn random_observation(
    len: usize,
    queries: usize,
    r: &mut rand_chacha::ChaCha8Rng,
) -> (Matrix, Mask) {
    let scores = random_matrix(queries, len, r);
    let mut mask = Mask::filled(queries, len, false);
    for q in 0..queries {
        for e in 0..len {
            mask.set(q, e, r.gen_bool(0.7));
        }
    }
    (scores, mask)
}

#[test]
fn lfa_zero_accumulates_lra_sum_step_scores() {
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let mut lfa = PolicyState::new(PolicyKind::Lfa { lambda: 0.0 }, 1.0).unwrap();
        let mut lra = PolicyState::new(PolicyKind::LraSum, 1.0).unwrap();
        let mut base: Vec<f64> = Vec::new();
        let mut cumulative: Vec<f64> = Vec::new();
        let mut pos = 0u64;
        for _ in 0..r.gen_range(1..15) {
            let n_new = r.gen_range(0..3usize);
            let new: Vec<u64> = (pos..pos + n_new as u64).collect();
            lfa.admit(&new);
            lra.admit(&new);
            let known = base.len();
            base.extend_from_slice(&lfa.scores()[known..]);
            cumulative.resize(lfa.len(), 0.0);
            pos += n_new as u64;
            if lfa.is_empty() {
                continue;
            }
            let queries = r.gen_range(1..4);
            let (scores, mask) = random_observation(lfa.len(), queries, &mut r);
            let positions: Vec<u64> = (0..queries as u64).map(|i| pos + i).collect();
            let valid = vec![true; queries];
            let obs = Observation {
                scores: &scores,
                pair_mask: &mask,
                query_positions: &positions,
                query_valid: &valid,
            };
            lfa.observe_attention(&obs).unwrap();
            lra.observe_attention(&obs).unwrap();
            for e in 0..lfa.len() {
                let step: f64 = (0..queries)
                    .filter(|&q| mask.get(q, e))
                    .map(|q| scores.get(q, e))
                    .sum();
                cumulative[e] += step;
                if (0..queries).any(|q| mask.get(q, e)) {
                    assert!((lra.scores()[e] - step).abs() <= 1e-12);
                }
                let aggregate = lfa.scores()[e] - base[e];
                assert!(
                    (aggregate - cumulative[e]).abs() <= 1e-9,
                    "seed {seed} entry {e}: {aggregate} vs {}",
                    cumulative[e]
                );
            }
            pos += queries as u64;
        }
    }
}

#[test]
fn lfa_decay_without_attention() {
    let lambda = 0.001;
    for (first, second) in [(0u64, 1u64), (3, 10), (7, 1007), (100, 100)] {
        let mut p = PolicyState::new(PolicyKind::Lfa { lambda }, 1.0).unwrap();
        p.admit(&[0, 1]);
        let scores = Matrix::from_rows(&[[0.7, -0.3]]).unwrap();
        p.observe_attention(&Observation {
            scores: &scores,
            pair_mask: &Mask::filled(1, 2, true),
            query_positions: &[first],
            query_valid: &[true],
        })
        .unwrap();
        let before = p.scores();
        p.observe_attention(&Observation {
            scores: &Matrix::zeros(1, 2),
            pair_mask: &Mask::filled(1, 2, false),
            query_positions: &[second],
            query_valid: &[true],
        })
        .unwrap();
        let factor = (-lambda * (second - first) as f64).exp();
        for (b, a) in before.iter().zip(p.scores()) {
            assert!((a - factor * b).abs() <= 1e-12);
        }
        assert_eq!(p.i_prev_max(), Some(first));
        assert_eq!(p.i_max(), Some(second));
    }
}

#[test]
fn out_of_order_queries_are_rejected() {
    let mut p = PolicyState::new(PolicyKind::LraSum, 1.0).unwrap();
    p.admit(&[0]);
    let err = p.observe_attention(&Observation {
        scores: &Matrix::zeros(2, 1),
        pair_mask: &Mask::filled(2, 1, true),
        query_positions: &[5, 3],
        query_valid: &[true, true],
    });
    assert!(err.is_err());
}
