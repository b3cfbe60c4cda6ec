//! Persistent model registry for generative model identification, with an
//! HTTP service on top.
//!
//! Specifications are stored one JSON document per model under a root
//! directory, next to a manifest that fixes the embedding schema and the
//! insertion order. Score caches are built when a model is submitted.

pub mod error;
pub mod http;
pub mod store;

pub use error::{RegistryError, Result};
pub use http::{router, serve, IdentifyRequest, IdentifyResponse};
pub use store::{default_warm_strategies, ModelSummary, Registry, SubmitMode, Submitted};
