//! Streaming attention over bounded memories.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: dense numeric building blocks (similarity, masked softmax, top-k).
//! - [`policies`]: eviction policies (FIFO, LRU, LFU, attention sink, LRA, LFA).
//! - [`memory`]: data-only and key-value memories backed by a policy.
//! - [`layer`]: the wait-to-attend layer (Q memory + K/V memory).
//! - [`harness`]: time-shifted layer stacks, encoder-decoder wiring and the dense oracle.
//! - [`bench`]: synthetic retention tasks, policy sweeps and CSV/JSON reporting.

#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod harness;
pub mod kernels;
pub mod layer;
pub mod memory;
pub mod policies;

pub use kernels::{KernelError, Mask, Matrix};
pub use layer::{AttendedOutput, AttendreConfig, AttendreLayer, Chunk, LayerError};
pub use memory::{DataOnlyMemory, KeyValueMemory, MemoryError, Metadata, RetrievedKV};
pub use policies::{PolicyError, PolicyKind, PolicyState};
