//! Surrogate backend selection: bundled toy models or an external adapter.

use cmbd_core::surrogate::{
    CandidateOracle, DifferentiableImageEmbedder, ImageEmbedder, LexiconOracle, RegionProposer,
    TextEmbedder, ToyImageEmbedder, ToyRegionProposer, ToyTextEmbedder,
};
use cmbd_core::Error as CoreError;

use crate::errors::{CliError, Result};
use crate::runcfg::RunConfig;
use crate::surrogate_ext::{ExternalSurrogate, COMMAND_ENV};

pub enum Backend {
    Toy {
        image: ToyImageEmbedder,
        text: ToyTextEmbedder,
        proposer: ToyRegionProposer,
        oracle: LexiconOracle,
    },
    External(ExternalSurrogate),
}

impl Backend {
    pub fn from_config(config: &RunConfig) -> Result<Backend> {
        match config.surrogate.backend.as_str() {
            "toy" => Ok(Backend::Toy {
                image: ToyImageEmbedder::new(config.surrogate.image_seed),
                text: ToyTextEmbedder::new(config.surrogate.text_seed),
                proposer: ToyRegionProposer,
                oracle: LexiconOracle,
            }),
            "external" => {
                let command = std::env::var(COMMAND_ENV)
                    .ok()
                    .filter(|c| !c.trim().is_empty())
                    .or_else(|| config.surrogate.command.clone());
                let command = command.ok_or_else(|| {
                    CliError::Core(CoreError::Validation(format!(
                        "external backend needs surrogate.command or ${COMMAND_ENV}"
                    )))
                })?;
                Ok(Backend::External(ExternalSurrogate::spawn(&command)?))
            }
            other => Err(CliError::Core(CoreError::Validation(format!(
                "unknown surrogate backend {other:?}"
            )))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Toy { .. } => "toy",
            Backend::External(_) => "external",
        }
    }

    pub fn image_embedder(&self) -> &dyn ImageEmbedder {
        match self {
            Backend::Toy { image, .. } => image,
            Backend::External(ext) => ext,
        }
    }

    pub fn text_embedder(&self) -> &dyn TextEmbedder {
        match self {
            Backend::Toy { text, .. } => text,
            Backend::External(ext) => ext,
        }
    }

    pub fn region_proposer(&self) -> &dyn RegionProposer {
        match self {
            Backend::Toy { proposer, .. } => proposer,
            Backend::External(ext) => ext,
        }
    }

    pub fn candidate_oracle(&self) -> &dyn CandidateOracle {
        match self {
            Backend::Toy { oracle, .. } => oracle,
            Backend::External(ext) => ext,
        }
    }

    /// Visual trigger training needs gradients through the image embedder,
    /// which a black-box adapter cannot supply.
    pub fn differentiable_image_embedder(&self) -> Result<&dyn DifferentiableImageEmbedder> {
        match self {
            Backend::Toy { image, .. } => Ok(image),
            Backend::External(_) => Err(CliError::Core(CoreError::Backend(
                "the external surrogate adapter cannot backpropagate through its embeddings; \
                 visual trigger training needs surrogate.backend = \"toy\""
                    .into(),
            ))),
        }
    }
}
