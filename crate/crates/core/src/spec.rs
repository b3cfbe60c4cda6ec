//! Model specifications: index-aligned generated-image and prompt embeddings
//! plus metadata, with their JSON document and JSON-lines wire formats.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::embedding::{common_dim, Embedding};
use crate::error::{Error, Result};

/// Highest `spec_version` this build reads and the one it writes.
pub const SPEC_FORMAT_VERSION: u64 = 1;

pub type Metadata = BTreeMap<String, Value>;

/// Declared embedding dimensions shared by every model in a registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub image_dim: usize,
    pub prompt_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    /// Kept for audit only; may be withheld.
    pub text: Option<String>,
    pub embedding: Embedding,
}

impl PromptRecord {
    pub fn new(text: Option<String>, embedding: Embedding) -> Self {
        PromptRecord { text, embedding }
    }
}

impl From<Embedding> for PromptRecord {
    fn from(embedding: Embedding) -> Self {
        PromptRecord { text: None, embedding }
    }
}

/// A validated, immutable model specification. Entry `i` of the prompt list
/// is the prompt that generated image `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    model_id: String,
    images: Vec<Embedding>,
    prompts: Vec<PromptRecord>,
    prompt_embeddings: Vec<Embedding>,
    metadata: Metadata,
    download_count: u64,
    created_at: Option<u64>,
    spec_version: u64,
}

pub fn build_spec(
    model_id: impl Into<String>,
    images: Vec<Embedding>,
    prompts: Vec<PromptRecord>,
    metadata: Metadata,
    download_count: u64,
) -> Result<ModelSpec> {
    let model_id = model_id.into();
    if model_id.is_empty() {
        return Err(Error::InvalidSpec("model_id must not be empty".into()));
    }
    if images.is_empty() {
        return Err(Error::Empty("image embeddings"));
    }
    if images.len() != prompts.len() {
        return Err(Error::LengthMismatch {
            what: "images vs prompts",
            left: images.len(),
            right: prompts.len(),
        });
    }
    common_dim(&images, "image embeddings")?;
    let prompt_embeddings: Vec<Embedding> = prompts.iter().map(|p| p.embedding.clone()).collect();
    common_dim(&prompt_embeddings, "prompt embeddings")?;
    Ok(ModelSpec {
        model_id,
        images,
        prompts,
        prompt_embeddings,
        metadata,
        download_count,
        created_at: None,
        spec_version: SPEC_FORMAT_VERSION,
    })
}

impl ModelSpec {
    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn images(&self) -> &[Embedding] {
        &self.images
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn prompt_embeddings(&self) -> &[Embedding] {
        &self.prompt_embeddings
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn download_count(&self) -> u64 {
        self.download_count
    }

    pub fn created_at(&self) -> Option<u64> {
        self.created_at
    }

    pub fn spec_version(&self) -> u64 {
        self.spec_version
    }

    /// Number of (image, prompt) pairs.
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn schema(&self) -> Schema {
        Schema { image_dim: self.images[0].dim(), prompt_dim: self.prompt_embeddings[0].dim() }
    }

    /// Returns a copy stamped with a creation time (seconds since the epoch).
    pub fn with_created_at(mut self, secs: u64) -> Self {
        self.created_at = Some(secs);
        self
    }

    /// Stored floats, roughly the on-disk footprint in 8-byte words.
    pub fn storage_words(&self) -> usize {
        let s = self.schema();
        self.len() * (s.image_dim + s.prompt_dim)
    }

    /// Hex SHA-256 over the canonical JSON document.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(serialize_spec(self));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SpecDocument {
    spec_version: u64,
    model_id: String,
    download_count: u64,
    #[serde(default)]
    metadata: Metadata,
    image_dim: usize,
    prompt_dim: usize,
    images: Vec<Embedding>,
    prompts: Vec<PromptRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct StreamHeader {
    spec_version: u64,
    model_id: String,
    download_count: u64,
    #[serde(default)]
    metadata: Metadata,
    image_dim: usize,
    prompt_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    image: Embedding,
    prompt: PromptRecord,
}

#[derive(Deserialize)]
struct VersionProbe {
    spec_version: u64,
}

fn check_version(found: u64) -> Result<()> {
    if (1..=SPEC_FORMAT_VERSION).contains(&found) {
        Ok(())
    } else {
        Err(Error::UnsupportedVersion { found, supported: SPEC_FORMAT_VERSION })
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    model_id: String,
    download_count: u64,
    metadata: Metadata,
    image_dim: usize,
    prompt_dim: usize,
    images: Vec<Embedding>,
    prompts: Vec<PromptRecord>,
    created_at: Option<u64>,
    spec_version: u64,
) -> Result<ModelSpec> {
    let mut spec = build_spec(model_id, images, prompts, metadata, download_count)?;
    let schema = spec.schema();
    if schema.image_dim != image_dim {
        return Err(Error::InvalidSpec(format!(
            "image_dim is {image_dim} but embeddings have {}",
            schema.image_dim
        )));
    }
    if schema.prompt_dim != prompt_dim {
        return Err(Error::InvalidSpec(format!(
            "prompt_dim is {prompt_dim} but embeddings have {}",
            schema.prompt_dim
        )));
    }
    spec.created_at = created_at;
    spec.spec_version = spec_version;
    Ok(spec)
}

pub fn serialize_spec(spec: &ModelSpec) -> Vec<u8> {
    let schema = spec.schema();
    let doc = SpecDocument {
        spec_version: spec.spec_version,
        model_id: spec.model_id.clone(),
        download_count: spec.download_count,
        metadata: spec.metadata.clone(),
        image_dim: schema.image_dim,
        prompt_dim: schema.prompt_dim,
        images: spec.images.clone(),
        prompts: spec.prompts.clone(),
        created_at: spec.created_at,
    };
    serde_json::to_vec(&doc).expect("spec documents always serialize")
}

/// Parses a single JSON spec document.
pub fn deserialize_spec(bytes: &[u8]) -> Result<ModelSpec> {
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(|e| Error::from_json(&e, bytes))?;
    check_version(probe.spec_version)?;
    let doc: SpecDocument = serde_json::from_slice(bytes).map_err(|e| Error::from_json(&e, bytes))?;
    assemble(
        doc.model_id,
        doc.download_count,
        doc.metadata,
        doc.image_dim,
        doc.prompt_dim,
        doc.images,
        doc.prompts,
        doc.created_at,
        doc.spec_version,
    )
}

/// JSON-lines form: a header object, then one `{"image", "prompt"}` object per line.
pub fn serialize_spec_stream(spec: &ModelSpec) -> Vec<u8> {
    let schema = spec.schema();
    let header = StreamHeader {
        spec_version: spec.spec_version,
        model_id: spec.model_id.clone(),
        download_count: spec.download_count,
        metadata: spec.metadata.clone(),
        image_dim: schema.image_dim,
        prompt_dim: schema.prompt_dim,
        created_at: spec.created_at,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (image, prompt) in spec.images.iter().zip(&spec.prompts) {
        let rec = StreamRecord { image: image.clone(), prompt: prompt.clone() };
        serde_json::to_writer(&mut out, &rec).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let mut start = 0;
    bytes
        .split(|&b| b == b'\n')
        .map(move |line| {
            let at = start;
            start += line.len() + 1;
            (at, line)
        })
        .filter(|(_, line)| line.iter().any(|b| !b.is_ascii_whitespace()))
}

fn parse_line<'a, T: Deserialize<'a>>(offset: usize, line: &'a [u8]) -> Result<T> {
    serde_json::from_slice(line).map_err(|e| match Error::from_json(&e, line) {
        Error::Parse { offset: o, message } => Error::Parse { offset: offset + o, message },
        other => other,
    })
}

pub fn deserialize_spec_stream(bytes: &[u8]) -> Result<ModelSpec> {
    let mut it = lines(bytes);
    let (offset, first) = it.next().ok_or(Error::Parse { offset: 0, message: "empty spec stream".into() })?;
    let probe: VersionProbe = parse_line(offset, first)?;
    check_version(probe.spec_version)?;
    let header: StreamHeader = parse_line(offset, first)?;
    let mut images = Vec::new();
    let mut prompts = Vec::new();
    for (offset, line) in it {
        let rec: StreamRecord = parse_line(offset, line)?;
        images.push(rec.image);
        prompts.push(rec.prompt);
    }
    assemble(
        header.model_id,
        header.download_count,
        header.metadata,
        header.image_dim,
        header.prompt_dim,
        images,
        prompts,
        header.created_at,
        header.spec_version,
    )
}

/// Accepts either wire form; the stream form is recognised by a first line
/// that is a complete object without an `images` field.
pub fn deserialize_spec_any(bytes: &[u8]) -> Result<ModelSpec> {
    match deserialize_spec(bytes) {
        Ok(spec) => Ok(spec),
        Err(doc_err) => {
            let looks_like_stream = lines(bytes).next().is_some_and(|(_, first)| {
                serde_json::from_slice::<serde_json::Map<String, Value>>(first)
                    .is_ok_and(|obj| !obj.contains_key("images"))
            });
            if looks_like_stream {
                deserialize_spec_stream(bytes)
            } else {
                Err(doc_err)
            }
        }
    }
}
