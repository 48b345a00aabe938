//! Contextualized knowledge graph embeddings.
//!
//! Entities and relations of a knowledge graph are embedded per input
//! context rather than as single static vectors: an edge (s, r, o) or a
//! multi-hop path (s, r_1, ..., r_k, o) is treated as a token sequence, one
//! entity slot is replaced by a mask token, and a Transformer encoder is
//! trained to recover it. The same masked-prediction form serves training,
//! link prediction, and path query answering.
//!
//! Crate layout:
//! - [`kg`] — vocabularies, triple/path datasets, adjacency and candidate
//!   indexes
//! - [`sampler`] — random-walk path generation
//! - [`tensor`] — dense tensors plus the reverse-mode gradient tape
//! - [`model`] — the encoder network, prediction head, and loss
//! - [`train`] — Adam, the warmup/decay schedule, epoch loop, model
//!   selection
//! - [`eval`] — filtered link-prediction and path-query metrics
//! - [`checkpoint`] — binary parameter serialization
//! - [`config`] — flat key=value run configuration

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod sampler;
pub mod tensor;
pub mod train;

pub use error::{CokeError, Result};

/// Cap the worker threads used by op-internal parallelism. Results do not
/// depend on the thread count (output elements are partitioned, never
/// reduced across threads); this only bounds CPU use. No-op after any
/// parallel work has already run.
pub fn set_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}
