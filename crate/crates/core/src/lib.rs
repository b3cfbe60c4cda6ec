//! Generative model identification by weighted kernel mean embeddings.
//!
//! Each registered model carries a specification: embeddings of images it
//! generated, paired index-by-index with embeddings of the prompts that
//! produced them. A user describes what they want with one image embedding
//! and a prompt embedding. Models are ranked by the squared RKHS distance
//! between the query's kernel embedding and the model's image mean
//! embedding, with each image weighted by the cosine similarity between its
//! prompt and the query prompt.
//!
//! ```
//! use gmi_core::{build_requirement, build_spec, identify, Embedding, Metadata,
//!                PromptProvenance, PromptRecord, ScoringStrategy, StrategyKind};
//!
//! let e = |v: &[f64]| Embedding::new(v.to_vec()).unwrap();
//! let spec = build_spec("m", vec![e(&[0.0, 1.0])], vec![PromptRecord::from(e(&[1.0]))],
//!                       Metadata::new(), 10).unwrap();
//! let req = build_requirement(e(&[0.0, 1.0]), e(&[1.0]), PromptProvenance::User, None).unwrap();
//! let ranking = identify(&[spec], &req, &ScoringStrategy::new(StrategyKind::WeightedProposal)).unwrap();
//! assert_eq!(ranking.entries[0].distance, 0.0);
//! ```

pub mod bench;
pub mod embedding;
pub mod error;
pub mod identify;
pub mod kernel;
pub mod reduced_set;
pub mod requirement;
pub mod spec;

pub use embedding::Embedding;
pub use error::{Error, Result};
pub use identify::{
    identify, score_one, top_k, Identifier, IndexedSpec, RankedEntry, ScoredRanking, ScoringStrategy,
    StrategyKind,
};
pub use kernel::{
    cosine_similarity, prompt_weighted_score, rbf_kernel, uniform_mmd_sq, weighted_mmd_sq, KernelParams,
    DEFAULT_GAMMA, GAMMA_GRID,
};
pub use reduced_set::{reduce, reduction_error, ReduceOptions, ReducedSet};
pub use requirement::{
    build_requirement, deserialize_requirement, serialize_requirement, PromptProvenance, Requirement,
};
pub use spec::{
    build_spec, deserialize_spec, deserialize_spec_any, deserialize_spec_stream, serialize_spec,
    serialize_spec_stream, Metadata, ModelSpec, PromptRecord, Schema, SPEC_FORMAT_VERSION,
};
