//! Synthetic retention benchmarks.
//!
//! A task plants a few "distinguished" key/value positions in the first chunk
//! of a random stream. A sweep runs one wait-to-attend layer per
//! (policy, M, N) cell over seeded task instances and reports how often the
//! distinguished positions survive in the K/V memory, and how much attention
//! the final query puts on them.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kernels::{self, Mask, Matrix};
use crate::layer::{
    AttendedOutput, AttendreConfig, AttendreLayer, Chunk, DistanceBias, LayerError, ScoreFeedback,
};
use crate::memory::TraceEvent;
use crate::policies::PolicyKind;

/// Written as the first line of every CSV report.
pub const CSV_SCHEMA: &str = "# attendre-sweep csv v1; metrics are retention rate and attention mass on synthetic tasks, not exact-match accuracy";

pub const CSV_COLUMNS: [&str; 11] = [
    "policy",
    "M",
    "N",
    "K",
    "S",
    "task",
    "trials",
    "retention_rate",
    "final_attention_mass",
    "sim_ops",
    "evictions",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Distinguished keys in chunk 0 that every query attends strongly.
    Needle,
    /// Distinguished keys at the very start; only the final probe query looks for them.
    QuestionFirst,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Needle => "needle",
            TaskKind::QuestionFirst => "question_first",
        })
    }
}

impl FromStr for TaskKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "needle" => Ok(TaskKind::Needle),
            "question_first" | "question-first" => Ok(TaskKind::QuestionFirst),
            other => Err(config_err(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    /// Sequence length in tokens.
    pub length: usize,
    pub chunk_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Number of distinguished positions.
    pub needles: usize,
    /// Minimum dense attention mass every planted query puts on the distinguished keys.
    pub mass: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            length: 128,
            chunk_len: 4,
            heads: 1,
            head_dim: 16,
            needles: 1,
            mass: 0.8,
        }
    }
}

/// Amplitude of the uniform noise in non-planted coordinates.
const NOISE: f64 = 0.25;

impl TaskParams {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.length == 0 || self.chunk_len == 0 || self.heads == 0 || self.head_dim == 0 {
            return Err(config_err(
                "length, chunk, heads and head_dim must be at least 1",
            ));
        }
        if self.needles == 0 || self.needles > self.chunk_len.min(self.length) {
            return Err(config_err(format!(
                "needles must be between 1 and min(chunk, length) = {}, got {}",
                self.chunk_len.min(self.length),
                self.needles
            )));
        }
        if !(self.mass > 0.0 && self.mass < 1.0) {
            return Err(config_err(format!(
                "mass must lie in (0, 1), got {}",
                self.mass
            )));
        }
        Ok(())
    }

    /// Largest possible |q·k| between noise coordinates in one head.
    fn noise_bound(&self) -> f64 {
        (self.head_dim - 1) as f64 * NOISE * NOISE
    }

    /// Per-head similarity between a planted query and a distinguished key.
    ///
    /// Chosen so that, even if every other key scores the noise bound, a planted
    /// query attending the whole sequence puts at least `mass` on the distinguished keys.
    pub fn planted_similarity(&self) -> f64 {
        let others = (self.length - self.needles).max(1) as f64;
        let odds = self.mass / (1.0 - self.mass) * others / self.needles as f64;
        self.noise_bound() + odds.ln().max(0.0) + 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub params: TaskParams,
    pub chunks: Vec<Chunk>,
    /// Positions of the planted keys, all inside chunk 0.
    pub distinguished: Vec<u64>,
    /// Last valid position; its query is planted in both task kinds.
    pub probe: u64,
}

impl TaskInstance {
    fn flat(&self, pick: impl Fn(&Chunk) -> &Matrix) -> Matrix {
        let width = self.params.heads * self.params.head_dim;
        let mut rows = Vec::new();
        for c in &self.chunks {
            for r in 0..c.len() {
                if c.valid[r] {
                    rows.push(pick(c).row(r).to_vec());
                }
            }
        }
        Matrix::from_rows(&rows).unwrap_or_else(|_| Matrix::zeros(0, width))
    }

    /// Dense, bidirectional attention mass on the distinguished keys, averaged
    /// over heads, for every valid query in order.
    pub fn dense_needle_mass(&self) -> Vec<f64> {
        let q = self.flat(|c| &c.queries);
        let k = self.flat(|c| &c.keys);
        let hd = self.params.head_dim;
        let n = q.rows();
        let mask = Mask::filled(n, n, true);
        let mut mass = vec![0.0; n];
        for h in 0..self.params.heads {
            let scores =
                kernels::dot_similarity(&q.column_block(h * hd, hd), &k.column_block(h * hd, hd))
                    .expect("same width");
            let w = kernels::masked_softmax(&scores, &mask)
                .expect("same shape")
                .weights;
            for (s, m) in mass.iter_mut().enumerate() {
                let on: f64 = self
                    .distinguished
                    .iter()
                    .map(|&p| w.get(s, p as usize))
                    .sum();
                *m += on / self.params.heads as f64;
            }
        }
        mass
    }
}

/// Builds a seeded task instance.
pub fn generate_task(
    kind: TaskKind,
    params: &TaskParams,
    seed: u64,
) -> Result<TaskInstance, BenchError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, s, hd) = (params.length, params.chunk_len, params.head_dim);
    let width = params.heads * hd;
    let first_chunk = s.min(t);
    let distinguished: Vec<u64> = match kind {
        TaskKind::QuestionFirst => (0..params.needles as u64).collect(),
        TaskKind::Needle => {
            let start = rng.gen_range(0..=first_chunk - params.needles) as u64;
            (start..start + params.needles as u64).collect()
        }
    };
    let probe = (t - 1) as u64;
    let amplitude = params.planted_similarity().sqrt();

    let n_chunks = t.div_ceil(s);
    let mut chunks = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let mut q = Matrix::zeros(s, width);
        let mut k = Matrix::zeros(s, width);
        let mut v = Matrix::zeros(s, width);
        let mut valid = vec![false; s];
        for r in 0..s {
            let pos = (c * s + r) as u64;
            if pos as usize >= t {
                continue;
            }
            valid[r] = true;
            let is_needle = distinguished.contains(&pos);
            let planted_query = match kind {
                TaskKind::Needle => true,
                TaskKind::QuestionFirst => pos == probe,
            };
            for h in 0..params.heads {
                let base = h * hd;
                for d in 0..hd {
                    let col = base + d;
                    let (qv, kv) = if d == 0 {
                        (
                            if planted_query { amplitude } else { 0.0 },
                            if is_needle { amplitude } else { 0.0 },
                        )
                    } else {
                        (
                            rng.gen_range(-NOISE..=NOISE),
                            if is_needle {
                                0.0
                            } else {
                                rng.gen_range(-NOISE..=NOISE)
                            },
                        )
                    };
                    q.set(r, col, qv);
                    k.set(r, col, kv);
                    v.set(r, col, rng.gen_range(-1.0..1.0));
                }
            }
        }
        let positions = ((c * s) as u64..((c + 1) * s) as u64).collect();
        chunks.push(Chunk::new(positions, q, k, v, valid)?);
    }
    Ok(TaskInstance {
        kind,
        params: params.clone(),
        chunks,
        distinguished,
        probe,
    })
}

/// How Q memory sizes are paired with K/V memory sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QSizes {
    /// `N = M / 2`.
    Half,
    /// One value for all M, or one per M.
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub policies: Vec<PolicyKind>,
    pub m_values: Vec<usize>,
    pub n_values: QSizes,
    pub top_k: usize,
    pub chunk_len: usize,
    pub task: TaskKind,
    pub length: usize,
    pub trials: usize,
    pub seed: u64,
    pub initial_offset: f64,
    pub heads: usize,
    pub head_dim: usize,
    pub needles: usize,
    pub mass: f64,
    pub causal: bool,
    pub feedback: ScoreFeedback,
    pub n_local: u64,
    pub beta: f64,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            policies: vec![
                PolicyKind::Fifo,
                PolicyKind::AttentionSink { sink_size: 4 },
                PolicyKind::LraLast,
                PolicyKind::LraMax,
                PolicyKind::LraSum,
                PolicyKind::Lfa { lambda: 0.0 },
                PolicyKind::Lfa { lambda: 0.001 },
            ],
            m_values: vec![16, 32, 64],
            n_values: QSizes::List(vec![0]),
            top_k: 16,
            chunk_len: 4,
            task: TaskKind::Needle,
            length: 128,
            trials: 20,
            seed: 0,
            initial_offset: 1.0,
            heads: 1,
            head_dim: 16,
            needles: 1,
            mass: 0.8,
            causal: false,
            feedback: ScoreFeedback::PreSoftmax,
            n_local: 512,
            beta: 0.0,
            out: None,
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, BenchError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| config_err(format!("{key}: cannot parse `{s}`")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, BenchError> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse `{}`", value.trim())))
}

impl SweepConfig {
    /// Sets one `key = value` entry, using the same keys as [`Self::dump`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), BenchError> {
        let value = value.trim();
        match key.trim() {
            "policies" | "policy" => {
                self.policies = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<PolicyKind>()
                            .map_err(|e| config_err(e.to_string()))
                    })
                    .collect::<Result<_, _>>()?
            }
            "m" => self.m_values = parse_list("m", value)?,
            "n" => {
                self.n_values = if value.eq_ignore_ascii_case("half") {
                    QSizes::Half
                } else {
                    QSizes::List(parse_list("n", value)?)
                }
            }
            "k" => self.top_k = parse_one("k", value)?,
            "chunk" => self.chunk_len = parse_one("chunk", value)?,
            "task" => self.task = value.parse()?,
            "length" => self.length = parse_one("length", value)?,
            "trials" => self.trials = parse_one("trials", value)?,
            "seed" => self.seed = parse_one("seed", value)?,
            "initial_offset" => self.initial_offset = parse_one("initial_offset", value)?,
            "heads" => self.heads = parse_one("heads", value)?,
            "head_dim" => self.head_dim = parse_one("head_dim", value)?,
            "needles" => self.needles = parse_one("needles", value)?,
            "mass" => self.mass = parse_one("mass", value)?,
            "causal" => self.causal = parse_one("causal", value)?,
            "feedback" => {
                self.feedback = match value {
                    "pre" | "pre_softmax" => ScoreFeedback::PreSoftmax,
                    "post" | "post_softmax" => ScoreFeedback::PostSoftmax,
                    other => {
                        return Err(config_err(format!(
                            "feedback: expected pre or post, got `{other}`"
                        )))
                    }
                }
            }
            "n_local" => self.n_local = parse_one("n_local", value)?,
            "beta" => self.beta = parse_one("beta", value)?,
            "out" => {
                self.out = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            other => return Err(config_err(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), BenchError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
            self.set(key, value)
                .map_err(|e| config_err(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// The config as a file [`Self::apply_text`] reads back unchanged.
    pub fn dump(&self) -> String {
        let n = match &self.n_values {
            QSizes::Half => "half".to_string(),
            QSizes::List(v) => join(v),
        };
        let feedback = match self.feedback {
            ScoreFeedback::PreSoftmax => "pre",
            ScoreFeedback::PostSoftmax => "post",
        };
        let out = self
            .out
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        format!(
            "policies = {}\nm = {}\nn = {n}\nk = {}\nchunk = {}\ntask = {}\nlength = {}\ntrials = {}\nseed = {}\n\
             initial_offset = {}\nheads = {}\nhead_dim = {}\nneedles = {}\nmass = {}\ncausal = {}\n\
             feedback = {feedback}\nn_local = {}\nbeta = {}\nout = {out}\n",
            join(&self.policies),
            join(&self.m_values),
            self.top_k,
            self.chunk_len,
            self.task,
            self.length,
            self.trials,
            self.seed,
            self.initial_offset,
            self.heads,
            self.head_dim,
            self.needles,
            self.mass,
            self.causal,
            self.n_local,
            self.beta,
        )
    }

    /// The (M, N) cells of the sweep.
    pub fn pairs(&self) -> Result<Vec<(usize, usize)>, BenchError> {
        let pairs: Vec<(usize, usize)> = match &self.n_values {
            QSizes::Half => self.m_values.iter().map(|&m| (m, m / 2)).collect(),
            QSizes::List(n) if n.len() == 1 => self.m_values.iter().map(|&m| (m, n[0])).collect(),
            QSizes::List(n) if n.len() == self.m_values.len() => self
                .m_values
                .iter()
                .copied()
                .zip(n.iter().copied())
                .collect(),
            QSizes::List(n) => {
                return Err(config_err(format!(
                    "{} N values cannot be paired with {} M values",
                    n.len(),
                    self.m_values.len()
                )))
            }
        };
        for &(m, n) in &pairs {
            if n != 0 && n >= m {
                return Err(config_err(format!(
                    "N must be 0 or smaller than M, got M={m} N={n}"
                )));
            }
        }
        Ok(pairs)
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            length: self.length,
            chunk_len: self.chunk_len,
            heads: self.heads,
            head_dim: self.head_dim,
            needles: self.needles,
            mass: self.mass,
        }
    }

    pub fn layer_config(&self, policy: PolicyKind, m: usize, n: usize) -> AttendreConfig {
        AttendreConfig {
            kv_capacity: m,
            q_capacity: n,
            top_k: self.top_k,
            chunk_len: self.chunk_len,
            policy,
            initial_offset: self.initial_offset,
            heads: self.heads,
            head_dim: self.head_dim,
            causal: self.causal,
            scale_scores: false,
            distance: (self.beta != 0.0).then_some(DistanceBias {
                n_local: self.n_local,
                beta: self.beta,
            }),
            feedback: self.feedback,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.policies.is_empty() || self.m_values.is_empty() {
            return Err(config_err("need at least one policy and one M value"));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        self.task_params().validate()?;
        for (m, n) in self.pairs()? {
            for &p in &self.policies {
                self.layer_config(p, m, n)
                    .validate()
                    .map_err(|e| config_err(format!("M={m} N={n} {p}: {e}")))?;
                if let PolicyKind::AttentionSink { sink_size } = p {
                    if sink_size > m {
                        return Err(config_err(format!("sink size {sink_size} exceeds M={m}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Seed of the task instance used by trial `trial`; shared by every cell.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        rng.gen()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub retained: bool,
    pub final_attention_mass: f64,
    pub similarity_ops: u64,
    pub evictions: u64,
    pub within_bounds: bool,
    pub trace: Vec<TraceEvent>,
}

/// Attention mass the probe query puts on the distinguished positions.
fn probe_mass(out: &AttendedOutput, task: &TaskInstance) -> Option<f64> {
    let retrieval = out.retrieval.as_ref()?;
    let row = retrieval
        .query_positions
        .iter()
        .position(|&p| p == task.probe)?;
    Some(
        retrieval.positions[row]
            .iter()
            .enumerate()
            .filter(|(_, p)| task.distinguished.contains(p))
            .map(|(r, _)| out.attention.get(row, r))
            .sum(),
    )
}

pub fn run_trial(
    config: &AttendreConfig,
    task: &TaskInstance,
    trace: bool,
) -> Result<TrialResult, BenchError> {
    let mut layer = AttendreLayer::new(config.clone())?;
    if trace {
        layer.kv_memory_mut().enable_trace();
    }
    let mut mass = None;
    for chunk in &task.chunks {
        if let Some(out) = layer.step(chunk)? {
            mass = probe_mass(&out, task).or(mass);
        }
    }
    let out = layer.flush()?;
    mass = probe_mass(&out, task).or(mass);

    let retained = task
        .distinguished
        .iter()
        .all(|&p| layer.kv_memory().contains_position(p));
    let counters = layer.counters();
    let stats = crate::harness::LayerStats::from(counters);
    Ok(TrialResult {
        retained,
        final_attention_mass: mass.unwrap_or(0.0),
        similarity_ops: counters.similarity_ops,
        evictions: counters.kv_evictions,
        within_bounds: stats.within_bounds(config),
        trace: layer.kv_memory_mut().take_trace(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub policy: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub task: String,
    pub trials: usize,
    pub retention_rate: f64,
    pub final_attention_mass: f64,
    pub sim_ops: u64,
    pub evictions: u64,
    #[serde(skip)]
    pub within_bounds: bool,
    #[serde(skip)]
    order: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub seed: u64,
    pub cells: Vec<CellReport>,
}

fn run_cell(
    config: &SweepConfig,
    tasks: &[TaskInstance],
    order: (usize, usize),
    policy: PolicyKind,
    (m, n): (usize, usize),
) -> Result<CellReport, BenchError> {
    let layer = config.layer_config(policy, m, n);
    let mut retained = 0usize;
    let mut mass = 0.0;
    let mut sim_ops = 0;
    let mut evictions = 0;
    let mut within_bounds = true;
    for task in tasks {
        let r = run_trial(&layer, task, false)?;
        retained += r.retained as usize;
        mass += r.final_attention_mass;
        sim_ops += r.similarity_ops;
        evictions += r.evictions;
        within_bounds &= r.within_bounds;
    }
    let trials = tasks.len();
    Ok(CellReport {
        policy: policy.to_string(),
        m,
        n,
        k: config.top_k,
        s: config.chunk_len,
        task: config.task.to_string(),
        trials,
        retention_rate: retained as f64 / trials as f64,
        final_attention_mass: mass / trials as f64,
        sim_ops,
        evictions,
        within_bounds,
        order,
    })
}

/// Runs every (policy, M, N) cell. Cells run on separate threads; rows come back
/// sorted by policy then pair, in config order.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport, BenchError> {
    config.validate()?;
    let pairs = config.pairs()?;
    let params = config.task_params();
    let tasks = (0..config.trials)
        .map(|t| generate_task(config.task, &params, config.trial_seed(t)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut cells = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .policies
            .iter()
            .enumerate()
            .flat_map(|(pi, &policy)| {
                pairs
                    .iter()
                    .enumerate()
                    .map(move |(ci, &pair)| (pi, ci, policy, pair))
            })
            .map(|(pi, ci, policy, pair)| {
                let tasks = &tasks;
                scope.spawn(move || run_cell(config, tasks, (pi, ci), policy, pair))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep cell panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    cells.sort_by_key(|c| c.order);
    Ok(SweepReport {
        schema: CSV_SCHEMA,
        seed: config.seed,
        cells,
    })
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), BenchError> {
        writeln!(w, "{CSV_SCHEMA}").map_err(|source| BenchError::Io {
            path: PathBuf::from("<csv>"),
            source,
        })?;
        let mut csv = csv::Writer::from_writer(w);
        for cell in &self.cells {
            csv.serialize(cell)?;
        }
        csv.flush().map_err(|source| BenchError::Io {
            path: PathBuf::from("<csv>"),
            source,
        })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, BenchError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Writes the CSV to `path` and a JSON summary next to it (`.json` extension).
    pub fn write_files(&self, path: &Path) -> Result<PathBuf, BenchError> {
        let io_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| BenchError::Io { path: p, source }
        };
        fs::write(path, self.to_csv_string()?).map_err(io_err(path))?;
        let json_path = path.with_extension("json");
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;
        Ok(json_path)
    }

    pub fn all_within_bounds(&self) -> bool {
        self.cells.iter().all(|c| c.within_bounds)
    }
}

/// Event log of the first cell's first trial.
pub fn run_trace(config: &SweepConfig) -> Result<Vec<String>, BenchError> {
    config.validate()?;
    let (m, n) = config.pairs()?[0];
    let policy = config.policies[0];
    let task = generate_task(config.task, &config.task_params(), config.trial_seed(0))?;
    let result = run_trial(&config.layer_config(policy, m, n), &task, true)?;
    let mut lines = vec![format!(
        "# trace policy={policy} M={m} N={n} K={} S={} task={} distinguished={}",
        config.top_k,
        config.chunk_len,
        config.task,
        join(&task.distinguished)
    )];
    lines.extend(result.trace.iter().map(|e| e.to_string()));
    Ok(lines)
}
