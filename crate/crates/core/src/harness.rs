//! Model-level wiring: time-shifted layer stacks, the encoder-decoder variant
//! with an encoder output memory, and the dense attention oracle.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kernels::{self, KernelError, Mask, Matrix};
use crate::layer::{
    AttendedOutput, AttendreConfig, AttendreLayer, Chunk, LayerCounters, LayerError,
};
use crate::memory::{DataOnlyMemory, MemoryError, Metadata};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("misaligned stream: {0}")]
    Alignment(String),
    #[error("out of order: {0}")]
    Order(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// How a stack terminates a shifted stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrainMode {
    /// Release each layer's waiting queries in one oversized batch.
    #[default]
    Flush,
    /// Feed `N·L` padding tokens through the stack.
    Drain,
}

/// Q/K/V projections applied to each layer's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `q = k = v = x`.
    Identity,
    /// Fixed random maps, one set per layer, derived from `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub layers: usize,
    pub layer: AttendreConfig,
    pub drain_mode: DrainMode,
    pub projection: Projection,
}

impl StackConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.layers == 0 {
            return Err(HarnessError::Config(
                "a stack needs at least one layer".into(),
            ));
        }
        self.layer.validate()?;
        if self.drain_mode == DrainMode::Drain
            && !self.layer.q_capacity.is_multiple_of(self.layer.chunk_len)
        {
            return Err(HarnessError::Config(format!(
                "draining needs Q capacity {} to be a multiple of chunk length {}",
                self.layer.q_capacity, self.layer.chunk_len
            )));
        }
        Ok(())
    }
}

/// One chunk of hidden states entering a stack.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenChunk {
    pub positions: Vec<u64>,
    pub hidden: Matrix,
    pub valid: Vec<bool>,
}

impl HiddenChunk {
    /// Splits `hidden` (one row per position, starting at position 0) into chunks of
    /// `chunk_len`, padding the last one.
    pub fn split(hidden: &Matrix, chunk_len: usize) -> Vec<HiddenChunk> {
        let total = hidden.rows();
        let n_chunks = total.div_ceil(chunk_len).max(1);
        (0..n_chunks)
            .map(|c| {
                let start = c * chunk_len;
                let mut m = Matrix::zeros(chunk_len, hidden.cols());
                let mut valid = vec![false; chunk_len];
                for r in 0..chunk_len {
                    if start + r < total {
                        m.row_mut(r).copy_from_slice(hidden.row(start + r));
                        valid[r] = true;
                    }
                }
                HiddenChunk {
                    positions: (start as u64..(start + chunk_len) as u64).collect(),
                    hidden: m,
                    valid,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjections {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

impl LayerProjections {
    /// Uniform entries with variance `1/width`, so activations keep their scale.
    pub fn random(width: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (3.0 / width as f64).sqrt();
        let mut draw = || {
            let data = (0..width * width)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Matrix::from_vec(width, width, data).expect("square")
        };
        Self {
            query: draw(),
            key: draw(),
            value: draw(),
        }
    }

    pub fn for_stack(projection: Projection, layers: usize, width: usize) -> Vec<Option<Self>> {
        match projection {
            Projection::Identity => vec![None; layers],
            Projection::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..layers)
                    .map(|_| Some(Self::random(width, &mut rng)))
                    .collect()
            }
        }
    }
}

fn project(
    p: Option<&LayerProjections>,
    x: &Matrix,
) -> Result<(Matrix, Matrix, Matrix), KernelError> {
    match p {
        None => Ok((x.clone(), x.clone(), x.clone())),
        Some(p) => Ok((x.matmul(&p.query)?, x.matmul(&p.key)?, x.matmul(&p.value)?)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub chunks: u64,
    pub input_slots: u64,
    pub output_slots: u64,
    pub similarity_ops: u64,
    pub attended_pairs: u64,
    pub max_attended_per_query: u64,
    pub kv_evictions: u64,
    pub q_evictions: u64,
    pub retrievals: u64,
}

impl From<LayerCounters> for LayerStats {
    fn from(c: LayerCounters) -> Self {
        Self {
            chunks: c.steps,
            input_slots: c.input_slots,
            output_slots: c.output_slots,
            similarity_ops: c.similarity_ops,
            attended_pairs: c.attended_pairs,
            max_attended_per_query: c.max_attended_per_query,
            kv_evictions: c.kv_evictions,
            q_evictions: c.q_evictions,
            retrievals: c.retrievals,
        }
    }
}

impl LayerStats {
    /// Checks `sim ops ≤ (C·S + N)·M`, `attended ≤ (C·S + N)·K` and `≤ K` per query.
    pub fn within_bounds(&self, cfg: &AttendreConfig) -> bool {
        let slots = self.chunks as u128 * cfg.chunk_len as u128 + cfg.q_capacity as u128;
        self.similarity_ops as u128 <= slots * cfg.kv_capacity as u128
            && self.attended_pairs as u128 <= slots * cfg.top_k as u128
            && self.max_attended_per_query <= cfg.top_k as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamStats {
    /// Input chunks, drain padding excluded.
    pub chunks: u64,
    pub similarity_ops: u64,
    /// Evictions keyed by `<memory>:<policy>`.
    pub evictions: BTreeMap<String, u64>,
    /// Padding tokens appended to drain the stack.
    pub padding_tokens: u64,
    /// Slots held back by the Q memories and never emitted (the `N·L` shift).
    pub trimmed_positions: u64,
    pub layers: Vec<LayerStats>,
}

impl StreamStats {
    pub fn within_bounds(&self, cfg: &AttendreConfig) -> bool {
        self.layers.iter().all(|l| l.within_bounds(cfg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackOutput {
    /// Valid output positions in emission order.
    pub positions: Vec<u64>,
    /// One row per entry of `positions`.
    pub outputs: Matrix,
    pub stats: StreamStats,
}

#[derive(Debug, Clone)]
struct PendingSlot {
    position: u64,
    hidden: Vec<f64>,
    valid: bool,
}

/// A stack of wait-to-attend layers fed one chunk at a time.
#[derive(Debug)]
pub struct LayerStack {
    config: StackConfig,
    layers: Vec<AttendreLayer>,
    projections: Vec<Option<LayerProjections>>,
    buffers: Vec<VecDeque<PendingSlot>>,
    out_positions: Vec<u64>,
    out_rows: Vec<Vec<f64>>,
    chunks: u64,
    padding_tokens: u64,
    next_position: Option<u64>,
    finished: bool,
}

impl LayerStack {
    pub fn new(config: StackConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|_| AttendreLayer::new(config.layer.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let projections =
            LayerProjections::for_stack(config.projection, config.layers, config.layer.width());
        Ok(Self {
            buffers: vec![VecDeque::new(); config.layers],
            config,
            layers,
            projections,
            out_positions: Vec::new(),
            out_rows: Vec::new(),
            chunks: 0,
            padding_tokens: 0,
            next_position: None,
            finished: false,
        })
    }

    pub fn layers(&self) -> &[AttendreLayer] {
        &self.layers
    }

    pub fn push(&mut self, chunk: &HiddenChunk) -> Result<(), HarnessError> {
        if self.finished {
            return Err(HarnessError::Order("stack already finished".into()));
        }
        let s = self.config.layer.chunk_len;
        let width = self.config.layer.width();
        if chunk.positions.len() != s
            || chunk.valid.len() != s
            || chunk.hidden.shape() != (s, width)
        {
            return Err(HarnessError::Alignment(format!(
                "chunk of {} positions / {:?} hidden, expected {s} x {width}",
                chunk.positions.len(),
                chunk.hidden.shape()
            )));
        }
        let start = self.next_position.unwrap_or(chunk.positions[0]);
        if chunk
            .positions
            .iter()
            .enumerate()
            .any(|(i, &p)| p != start + i as u64)
        {
            return Err(HarnessError::Alignment(format!(
                "expected contiguous positions from {start}, got {:?}",
                chunk.positions
            )));
        }
        self.next_position = Some(start + s as u64);
        self.chunks += 1;
        let slots = (0..s).map(|r| PendingSlot {
            position: chunk.positions[r],
            hidden: chunk.hidden.row(r).to_vec(),
            valid: chunk.valid[r],
        });
        self.feed(0, slots.collect())
    }

    fn feed(&mut self, level: usize, slots: Vec<PendingSlot>) -> Result<(), HarnessError> {
        if level == self.layers.len() {
            for slot in slots.into_iter().filter(|s| s.valid) {
                self.out_positions.push(slot.position);
                self.out_rows.push(slot.hidden);
            }
            return Ok(());
        }
        self.buffers[level].extend(slots);
        let s = self.config.layer.chunk_len;
        while self.buffers[level].len() >= s {
            let batch: Vec<PendingSlot> = self.buffers[level].drain(..s).collect();
            if let Some(out) = self.step_layer(level, &batch)? {
                self.feed(level + 1, released(out))?;
            }
        }
        Ok(())
    }

    fn step_layer(
        &mut self,
        level: usize,
        batch: &[PendingSlot],
    ) -> Result<Option<AttendedOutput>, HarnessError> {
        let rows: Vec<&[f64]> = batch.iter().map(|p| p.hidden.as_slice()).collect();
        let hidden = Matrix::from_rows(&rows)?;
        let (q, k, v) = project(self.projections[level].as_ref(), &hidden)?;
        let chunk = Chunk::new(
            batch.iter().map(|p| p.position).collect(),
            q,
            k,
            v,
            batch.iter().map(|p| p.valid).collect(),
        )?;
        Ok(self.layers[level].step(&chunk)?)
    }

    /// Terminates the stream according to the drain mode and returns all outputs.
    pub fn finish(mut self) -> Result<StackOutput, HarnessError> {
        self.finished = true;
        let cfg = self.config.layer.clone();
        let s = cfg.chunk_len;
        let width = cfg.width();
        match self.config.drain_mode {
            DrainMode::Drain => {
                let pad = cfg.q_capacity * self.config.layers;
                let mut next = self.next_position.unwrap_or(0);
                for _ in 0..pad / s {
                    let chunk = Chunk::padding(next, s, width);
                    next += s as u64;
                    let slots = chunk
                        .positions
                        .iter()
                        .map(|&position| PendingSlot {
                            position,
                            hidden: vec![0.0; width],
                            valid: false,
                        })
                        .collect();
                    self.feed(0, slots)?;
                }
                self.padding_tokens = pad as u64;
                if self.buffers.iter().any(|b| !b.is_empty()) {
                    return Err(HarnessError::Alignment(
                        "slots left between layers after draining".into(),
                    ));
                }
            }
            DrainMode::Flush => {
                for level in 0..self.layers.len() {
                    if !self.buffers[level].is_empty() {
                        let last = self.buffers[level].back().map(|p| p.position).unwrap_or(0);
                        let missing = s - self.buffers[level].len();
                        let pad = (1..=missing as u64).map(|i| PendingSlot {
                            position: last + i,
                            hidden: vec![0.0; width],
                            valid: false,
                        });
                        self.buffers[level].extend(pad);
                        let batch: Vec<PendingSlot> = self.buffers[level].drain(..).collect();
                        if let Some(out) = self.step_layer(level, &batch)? {
                            self.feed(level + 1, released(out))?;
                        }
                    }
                    let out = self.layers[level].flush()?;
                    self.feed(level + 1, released(out))?;
                }
            }
        }

        let layers: Vec<LayerStats> = self.layers.iter().map(|l| l.counters().into()).collect();
        let trimmed = layers.iter().map(|l| l.input_slots - l.output_slots).sum();
        let mut evictions = BTreeMap::new();
        for (i, l) in layers.iter().enumerate() {
            *evictions
                .entry(format!("kv{i}:{}", cfg.policy))
                .or_insert(0) += l.kv_evictions;
            *evictions.entry(format!("q{i}:fifo")).or_insert(0) += l.q_evictions;
        }
        let outputs = Matrix::from_rows(&self.out_rows)?;
        let outputs = if self.out_rows.is_empty() {
            Matrix::zeros(0, width)
        } else {
            outputs
        };
        Ok(StackOutput {
            positions: self.out_positions,
            outputs,
            stats: StreamStats {
                chunks: self.chunks,
                similarity_ops: layers.iter().map(|l| l.similarity_ops).sum(),
                evictions,
                padding_tokens: self.padding_tokens,
                trimmed_positions: trimmed,
                layers,
            },
        })
    }
}

fn released(out: AttendedOutput) -> Vec<PendingSlot> {
    (0..out.positions.len())
        .map(|r| PendingSlot {
            position: out.positions[r],
            hidden: out.outputs.row(r).to_vec(),
            valid: out.valid[r],
        })
        .collect()
}

/// Runs a whole chunk stream through a fresh stack.
pub fn run_stack(
    config: &StackConfig,
    stream: &[HiddenChunk],
) -> Result<StackOutput, HarnessError> {
    let mut stack = LayerStack::new(config.clone())?;
    for chunk in stream {
        stack.push(chunk)?;
    }
    stack.finish()
}

/// Attention pattern for [`dense_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Causal,
    Bidirectional,
    /// The first `n` positions see each other; later ones are causal.
    Prefix(usize),
}

pub fn attention_mask(kind: MaskKind, len: usize) -> Mask {
    Mask::from_fn(len, len, |q, k| match kind {
        MaskKind::Causal => k <= q,
        MaskKind::Bidirectional => true,
        MaskKind::Prefix(n) => k <= q || (q < n && k < n),
    })
}

/// Full softmax attention in one pass, per head, with no memory involved.
pub fn dense_oracle(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    mask: &Mask,
    heads: usize,
) -> Result<Matrix, HarnessError> {
    let (n_q, width) = queries.shape();
    if keys.cols() != width || values.cols() != width || keys.rows() != values.rows() {
        return Err(HarnessError::Dimension(format!(
            "q {:?}, k {:?}, v {:?}",
            queries.shape(),
            keys.shape(),
            values.shape()
        )));
    }
    if mask.shape() != (n_q, keys.rows()) {
        return Err(HarnessError::Dimension(format!(
            "mask {:?} for {n_q} queries and {} keys",
            mask.shape(),
            keys.rows()
        )));
    }
    if heads == 0 || width % heads != 0 {
        return Err(HarnessError::Dimension(format!(
            "{width} columns do not split into {heads} heads"
        )));
    }
    let hd = width / heads;
    let mut out = Matrix::zeros(n_q, width);
    for h in 0..heads {
        let q = queries.column_block(h * hd, hd);
        let k = keys.column_block(h * hd, hd);
        let v = values.column_block(h * hd, hd);
        let soft = kernels::masked_softmax(&kernels::dot_similarity(&q, &k)?, mask)?;
        let o = soft.weights.matmul(&v)?;
        for r in 0..n_q {
            out.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(o.row(r));
        }
    }
    Ok(out)
}

/// Dense reference for a stack with unbounded memories: every layer applies
/// [`dense_oracle`] with `mask` to the projected hidden states.
pub fn dense_stack_oracle(
    config: &StackConfig,
    hidden: &Matrix,
    mask: &Mask,
) -> Result<Matrix, HarnessError> {
    let projections =
        LayerProjections::for_stack(config.projection, config.layers, config.layer.width());
    let mut x = hidden.clone();
    for p in &projections {
        let (q, k, v) = project(p.as_ref(), &x)?;
        x = dense_oracle(&q, &k, &v, mask, config.layer.heads)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderConfig {
    pub encoder: StackConfig,
    /// Encoder output memory capacity (O).
    pub output_capacity: usize,
    /// Decoder queries handled per step.
    pub decoder_chunk: usize,
}

/// Encoder stack whose outputs land in a FIFO data-only memory that the
/// decoder reads wholesale through cross attention.
#[derive(Debug)]
pub struct EncoderDecoder {
    config: EncoderDecoderConfig,
    memory: DataOnlyMemory<Vec<f64>>,
    encoded: Option<StreamStats>,
}

impl EncoderDecoder {
    pub fn new(config: EncoderDecoderConfig) -> Result<Self, HarnessError> {
        config.encoder.validate()?;
        if config.output_capacity == 0 || config.decoder_chunk == 0 {
            return Err(HarnessError::Config(
                "encoder output capacity and decoder chunk must be at least 1".into(),
            ));
        }
        Ok(Self {
            memory: DataOnlyMemory::fifo(config.output_capacity)?,
            config,
            encoded: None,
        })
    }

    /// Runs the encoder to completion (drain or flush included) and fills the output memory.
    pub fn encode(&mut self, stream: &[HiddenChunk]) -> Result<&StreamStats, HarnessError> {
        if self.encoded.is_some() {
            return Err(HarnessError::Order("encoder already ran".into()));
        }
        let out = run_stack(&self.config.encoder, stream)?;
        let s = self
            .config
            .encoder
            .layer
            .chunk_len
            .min(self.config.output_capacity);
        let items: Vec<(Vec<f64>, Metadata)> = out
            .positions
            .iter()
            .enumerate()
            .map(|(r, &p)| (out.outputs.row(r).to_vec(), Metadata::at(p)))
            .collect();
        for group in items.chunks(s) {
            self.memory.insert(group.iter().cloned())?;
        }
        Ok(self.encoded.insert(out.stats))
    }

    pub fn memory_positions(&self) -> Vec<u64> {
        self.memory
            .get_all()
            .iter()
            .map(|e| e.metadata.position)
            .collect()
    }

    /// Cross attention of each decoder query over the whole encoder output memory.
    pub fn decode(&self, queries: &Matrix) -> Result<Matrix, HarnessError> {
        if self.encoded.is_none() {
            return Err(HarnessError::Order(
                "decode called before encoding finished".into(),
            ));
        }
        let width = self.config.encoder.layer.width();
        if queries.cols() != width {
            return Err(HarnessError::Dimension(format!(
                "decoder queries have {} columns, encoder outputs {width}",
                queries.cols()
            )));
        }
        let entries = self.memory.get_all();
        let rows: Vec<&[f64]> = entries.iter().map(|e| e.value.as_slice()).collect();
        let encoded = Matrix::from_rows(&rows)?;
        let mut parts = Vec::new();
        let idx: Vec<usize> = (0..queries.rows()).collect();
        for step in idx.chunks(self.config.decoder_chunk) {
            let q = queries.select_rows(step);
            if encoded.rows() == 0 {
                parts.push(Matrix::zeros(q.rows(), width));
                continue;
            }
            let mask = Mask::filled(q.rows(), encoded.rows(), true);
            parts.push(dense_oracle(
                &q,
                &encoded,
                &encoded,
                &mask,
                self.config.encoder.layer.heads,
            )?);
        }
        if parts.is_empty() {
            return Ok(Matrix::zeros(0, width));
        }
        Ok(Matrix::vstack(&parts)?)
    }
}

pub fn run_encoder_decoder(
    config: &EncoderDecoderConfig,
    stream: &[HiddenChunk],
    decoder_queries: &Matrix,
) -> Result<Matrix, HarnessError> {
    let mut model = EncoderDecoder::new(config.clone())?;
    model.encode(stream)?;
    model.decode(decoder_queries)
}
