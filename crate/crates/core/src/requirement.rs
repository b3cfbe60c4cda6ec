//! User requirements: one image embedding plus a prompt embedding that was
//! either inferred from the image or supplied by the user.

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::spec::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptProvenance {
    /// Produced by an image interrogator.
    Pseudo,
    /// Supplied by the user.
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RequirementDocument", into = "RequirementDocument")]
pub struct Requirement {
    image_embedding: Embedding,
    prompt_embedding: Embedding,
    prompt_provenance: PromptProvenance,
    prompt_text: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RequirementDocument {
    image_embedding: Embedding,
    prompt_embedding: Embedding,
    prompt_provenance: PromptProvenance,
    #[serde(default)]
    prompt_text: Option<String>,
}

impl TryFrom<RequirementDocument> for Requirement {
    type Error = Error;

    fn try_from(doc: RequirementDocument) -> Result<Self> {
        build_requirement(doc.image_embedding, doc.prompt_embedding, doc.prompt_provenance, doc.prompt_text)
    }
}

impl From<Requirement> for RequirementDocument {
    fn from(r: Requirement) -> Self {
        RequirementDocument {
            image_embedding: r.image_embedding,
            prompt_embedding: r.prompt_embedding,
            prompt_provenance: r.prompt_provenance,
            prompt_text: r.prompt_text,
        }
    }
}

pub fn build_requirement(
    image_embedding: Embedding,
    prompt_embedding: Embedding,
    prompt_provenance: PromptProvenance,
    prompt_text: Option<String>,
) -> Result<Requirement> {
    if prompt_embedding.norm() == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(Requirement { image_embedding, prompt_embedding, prompt_provenance, prompt_text })
}

impl Requirement {
    pub fn image_embedding(&self) -> &Embedding {
        &self.image_embedding
    }

    pub fn prompt_embedding(&self) -> &Embedding {
        &self.prompt_embedding
    }

    pub fn provenance(&self) -> PromptProvenance {
        self.prompt_provenance
    }

    pub fn prompt_text(&self) -> Option<&str> {
        self.prompt_text.as_deref()
    }

    pub fn validate_against(&self, schema: Schema) -> Result<()> {
        if self.image_embedding.dim() != schema.image_dim {
            return Err(Error::DimensionMismatch {
                expected: schema.image_dim,
                found: self.image_embedding.dim(),
            });
        }
        if self.prompt_embedding.dim() != schema.prompt_dim {
            return Err(Error::DimensionMismatch {
                expected: schema.prompt_dim,
                found: self.prompt_embedding.dim(),
            });
        }
        Ok(())
    }
}

pub fn serialize_requirement(req: &Requirement) -> Vec<u8> {
    serde_json::to_vec(req).expect("requirements always serialize")
}

pub fn deserialize_requirement(bytes: &[u8]) -> Result<Requirement> {
    let doc: RequirementDocument = serde_json::from_slice(bytes).map_err(|e| Error::from_json(&e, bytes))?;
    Requirement::try_from(doc)
}
