//! Topic-based clustering and pruned search over a pseudonymized keyword index.
//!
//! The library turns a document corpus into an inverted index keyed by
//! deterministic pseudonyms of the extracted keywords, estimates how many
//! topic clusters the index needs from co-occurrence statistics alone,
//! partitions the tokens into clusters, keeps the clusters up to date under
//! batch or streaming document arrivals, and serves keyword search that only
//! touches the clusters whose plaintext abstracts match the query.

pub mod abstracts;
pub mod centers;
pub mod distribute;
pub mod dynamics;
pub mod index;
pub mod matrix;
pub mod metrics;
pub mod search;

pub use abstracts::{build_abstracts, load_embeddings, prune, Abstract, SimilarityProvider};
pub use centers::{centrality, choose_centers, uniqueness};
pub use distribute::{assign_tokens, Cluster, ClusterSet, Strategy};
pub use dynamics::{
    compute_theta, fd_bootstrap, fd_step, recluster_decision, sd_update, AssignmentMap,
    ClusterState, ReclusterDecision, UpdateConfig, UpdateReport, CHI2_THRESHOLD,
};
pub use index::{
    build_index, extract_keywords, merge_batch, pseudonymize, CentralIndex, DocId, Document,
    EncToken, Keymap, Keyword, TempIndex,
};
pub use matrix::{estimate_k, trim_tokens, KEstimate, MatrixBundle};
pub use search::{search, SearchResult};

/// Errors surfaced by the library. All of them indicate bad input data or
/// inconsistent on-disk artifacts, not programming bugs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pseudonymization key must not be empty")]
    EmptyKey,
    #[error("duplicate doc_id `{0}` in corpus")]
    DuplicateDocId(String),
    #[error("index contains no tokens")]
    EmptyIndex,
    #[error("token `{0}` not present in index")]
    UnknownToken(String),
    #[error("matrix row {0} sums to zero, cannot row-normalize")]
    ZeroRow(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no existing clusters: {0}")]
    NoClusters(String),
    #[error("abstract needs at least 2 terms to score coherency")]
    AbstractTooSmall,
    #[error("keymap has no plaintext for token `{0}`")]
    MissingKeymapEntry(String),
    #[error("embedding file `{path}`: {reason}")]
    BadEmbeddings { path: String, reason: String },
    #[error("{0}")]
    BadInput(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
