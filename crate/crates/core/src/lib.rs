//! Hybrid dense/symbolic memory for long dialogues.
//!
//! Utterances are stored as [`MemoryEntry`] values carrying entities with
//! coreference ids, dependency triples, discourse labels and a unit-norm
//! embedding. A [`MemoryStore`] indexes them twice: an HNSW graph over the
//! embeddings and an inverted index over the symbolic features. Retrieval
//! pools candidates from both and ranks them with a weighted fusion score.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, persistence and
//! the command line live in the `anchormem` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod annotate;
pub mod corpus;
pub mod dense;
pub mod dialogue;
pub mod engine;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod prompt;
pub mod store;
pub mod symbolic;
pub mod tune;

pub use annotate::{toy_annotate, toy_embed, Annotation, ToyAnnotator};
pub use dense::{HnswIndex, HnswParams};
pub use dialogue::{AnnotatedDialogue, EmbeddingPolicy, Session, Turn};
pub use engine::{retrieve, DenseMode, DiscourseMode, RetrievalConfig};
pub use model::{
    normalize_embedding, validate_entry, DependencyTriple, DiscourseLabel, Embedding, EntityMention, EntryId,
    FusionWeights, GoldInfo, MemoryEntry, Query, RankedResult,
};
pub use prompt::serialize_context;
pub use store::MemoryStore;
pub use tune::tune_weights;
