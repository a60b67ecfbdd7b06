#![allow(dead_code)]

use attendre::harness::{DrainMode, Projection, StackConfig};
use attendre::{AttendreConfig, Mask, Matrix, PolicyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Largest per-row `‖a - b‖∞ / ‖b‖∞` (denominator floored at 1e-12).
pub fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    (0..a.rows())
        .map(|r| {
            let diff = a
                .row(r)
                .iter()
                .zip(b.row(r))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let scale = b
                .row(r)
                .iter()
                .map(|y| y.abs())
                .fold(0.0, f64::max)
                .max(1e-12);
            diff / scale
        })
        .fold(0.0, f64::max)
}

/// What a layer with Q capacity `n` and chunk length `s` lets slot `q` see
/// when the memories are unbounded: every slot of the chunk that pushes `q`
/// out of the Q memory, and everything before it.
pub fn delayed_mask(total: usize, s: usize, n: usize) -> Mask {
    Mask::from_fn(total, total, |q, k| k < total.min(s * ((q + n) / s + 1)))
}

pub fn layer(
    s: usize,
    n: usize,
    m: usize,
    k: usize,
    heads: usize,
    head_dim: usize,
) -> AttendreConfig {
    AttendreConfig {
        kv_capacity: m,
        q_capacity: n,
        top_k: k,
        chunk_len: s,
        policy: PolicyKind::Fifo,
        heads,
        head_dim,
        ..AttendreConfig::default()
    }
}

pub fn stack(
    layers: usize,
    layer: AttendreConfig,
    drain_mode: DrainMode,
    seed: u64,
) -> StackConfig {
    StackConfig {
        layers,
        layer,
        drain_mode,
        projection: Projection::Random { seed },
    }
}
