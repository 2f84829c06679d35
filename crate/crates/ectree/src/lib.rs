//! Erasure-coded hash trees over a content-addressed chunk store.
//!
//! Files are split into 4 KiB chunks addressed by content hash and assembled
//! into a hash tree whose intermediate nodes pack child references. Each
//! batch of siblings carries systematic Reed-Solomon parities sized by a
//! binomial error model, so any `m` of `m + k` chunks recover the batch.
//! Singleton root chunks are replicated through mined single-owner chunks
//! that land in balanced address-prefix neighbourhoods. A deterministic
//! store simulator and four retrieval strategies measure availability and
//! latency under chunk loss.
//!
//! Modules map onto the pipeline:
//!
//! - [`chunk`]: chunks, addresses, references, proximity, SOC layout
//! - [`rs`]: the GF(2^8) systematic Reed-Solomon codec
//! - [`plan`]: binomial math, security levels, parity tables
//! - [`tree`]: the chunker/joiner building and reading erasure-coded trees
//! - [`replica`]: dispersed-replica mining and selection
//! - [`store`]: chunk source trait, memory/disk stores, fault simulator
//! - [`retrieve`]: batch retrieval strategies and experiment runner

pub mod chunk;
pub mod plan;
pub mod replica;
pub mod retrieve;
pub mod rs;
pub mod store;
pub mod tree;

use thiserror::Error as ThisError;

pub use chunk::{Address, Chunk, Reference, SocChunk};
pub use plan::{ParityPlan, SecurityLevel};
pub use retrieve::{BatchOutcome, RetrievalStrategy, StrategyKind};
pub use store::{ChunkSource, MemStore, SimConfig, SimStore};
pub use tree::TreeManifest;

/// Errors across the codec, planner, stores and retrieval paths.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("payload of {0} bytes exceeds the 4096-byte chunk limit")]
    PayloadTooLarge(usize),

    #[error("bad {what} length: expected {expected}, got {got}")]
    BadLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid hex: {0}")]
    BadHex(String),

    #[error("unknown security level '{0}'")]
    UnknownLevel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no parity count within the 128-chunk budget covers {chunks} chunks")]
    NoFeasibleParities { chunks: usize },

    #[error("invalid shard geometry: {0}")]
    ShardGeometry(String),

    #[error("shard lengths differ within one batch")]
    ShardLengthMismatch,

    #[error("singular decode matrix: shard bookkeeping is corrupt")]
    SingularMatrix,

    #[error("batch unrecoverable: {available} of {needed} required chunks available")]
    UnrecoverableBatch { available: usize, needed: usize },

    #[error("chunk {0} not found")]
    NotFound(Address),

    #[error("chunk fetched for {expected} hashes to {actual}")]
    AddressMismatch { expected: Address, actual: Address },

    #[error("malformed chunk: {0}")]
    MalformedChunk(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
