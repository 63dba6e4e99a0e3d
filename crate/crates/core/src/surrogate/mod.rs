//! Surrogate feature extractors and the pluggable backend interface.
//!
//! Mining and trigger synthesis only ever talk to surrogates through the
//! traits defined here: image/text embedders producing fixed-width real
//! vectors, a region proposer, and a candidate oracle for word replacements.
//! The bundled toy implementations are fully deterministic and cheap enough
//! for desk-scale runs; real models can be attached out of process through
//! the adapter in the companion crate.

mod lexicon;
mod stopwords;
mod toy;

pub use lexicon::{synonyms, LEXICON};
pub use stopwords::{is_stop_token, is_stop_word, STOP_WORDS};
pub use toy::{LexiconOracle, ToyImageEmbedder, ToyRegionProposer, ToyTextEmbedder};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::text::TextSample;

/// A fixed-width real feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wraps values produced by trusted in-process code.
    pub fn new(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    /// Wraps values from an untrusted backend, rejecting non-finite entries.
    pub fn checked(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Backend(format!(
                "embedding contains non-finite value {bad}"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine similarity in `[-1, 1]`; either vector having zero norm yields 0.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    assert_eq!(a.dim(), b.dim(), "embedding dimensions must agree");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0)
}

/// A rectangular region proposal in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionProposal {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl RegionProposal {
    /// Area in whole pixels.
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// True when the box lies within an `h x w` canvas and has positive area.
    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.height >= 1
            && self.width >= 1
            && self.top + self.height <= h
            && self.left + self.width <= w
    }

    /// Intersection-over-union with another box.
    pub fn iou(&self, other: &RegionProposal) -> f64 {
        let top = self.top.max(other.top);
        let left = self.left.max(other.left);
        let bottom = (self.top + self.height).min(other.top + other.height);
        let right = (self.left + self.width).min(other.left + other.width);
        if bottom <= top || right <= left {
            return 0.0;
        }
        let inter = ((bottom - top) * (right - left)) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        inter / union
    }
}

/// Replacement candidates for one token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub position: usize,
    pub original: String,
    pub words: Vec<String>,
}

impl CandidateSet {
    /// Filters raw candidates: stop words, the original word itself, and
    /// duplicates are dropped; at most `max` survivors are kept in order.
    pub fn build<'a, I>(position: usize, original: &str, raw: I, max: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words: Vec<String> = Vec::new();
        for w in raw {
            if words.len() >= max {
                break;
            }
            if is_stop_token(w) || w == original || words.iter().any(|x| x == w) {
                continue;
            }
            words.push(w.to_string());
        }
        CandidateSet {
            position,
            original: original.to_string(),
            words,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Maps an image to a feature vector.
pub trait ImageEmbedder {
    /// Output dimensionality, constant for the lifetime of the backend.
    fn dim(&self) -> usize;

    fn embed_image(&self, image: &ImageSample) -> Result<Embedding>;

    /// Batch variant; must equal per-item calls exactly.
    fn embed_images(&self, images: &[ImageSample]) -> Result<Vec<Embedding>> {
        images.iter().map(|img| self.embed_image(img)).collect()
    }

    /// Stable digest of backend state, used to assert weights stay frozen.
    fn fingerprint(&self) -> u64;
}

/// Maps a token sequence to a feature vector.
pub trait TextEmbedder {
    fn dim(&self) -> usize;

    fn embed_text(&self, text: &TextSample) -> Result<Embedding>;

    /// Batch variant; must equal per-item calls exactly.
    fn embed_texts(&self, texts: &[TextSample]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    /// Stable digest of backend state, used to assert weights stay frozen.
    fn fingerprint(&self) -> u64;
}

/// An image embedder that can also backpropagate through itself.
///
/// Required by visual trigger training, where the feature loss differentiates
/// the embedding with respect to input pixels.
pub trait DifferentiableImageEmbedder: ImageEmbedder {
    /// Vector-Jacobian product: given `upstream` (gradient with respect to
    /// the embedding), returns the gradient with respect to pixels, laid out
    /// like [`ImageSample::data`].
    fn embed_image_vjp(&self, image: &ImageSample, upstream: &[f64]) -> Vec<f64>;
}

/// Proposes candidate regions for mining.
pub trait RegionProposer {
    /// Returns at most `max_regions` boxes, all within image bounds.
    fn propose_regions(
        &self,
        image: &ImageSample,
        max_regions: usize,
    ) -> Result<Vec<RegionProposal>>;
}

/// Supplies replacement candidates for a masked token position.
pub trait CandidateOracle {
    /// Candidates for `text[position]`, already filtered per
    /// [`CandidateSet::build`]; errors if `position` is out of range.
    fn mask_candidates(
        &self,
        text: &TextSample,
        position: usize,
        max_candidates: usize,
    ) -> Result<CandidateSet>;
}
