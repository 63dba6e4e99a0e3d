//! Toy surrogate backends: deterministic, seeded, desk-scale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{ImageSample, CHANNELS};
use crate::rng::{fnv1a, mix, DetRng};
use crate::surrogate::{
    lexicon, stopwords, CandidateOracle, CandidateSet, DifferentiableImageEmbedder, Embedding,
    ImageEmbedder, RegionProposal, RegionProposer, TextEmbedder,
};
use crate::text::TextSample;

/// Default embedding width shared by the toy backends.
pub const TOY_DIM: usize = 64;

const TILE_FEATURES: usize = 4;

/// Image embedder built from per-tile color means and gradient energy over a
/// fixed grid, mixed by a seeded random projection.
///
/// The feature map is smooth in the pixels, so the embedder can be
/// differentiated exactly for trigger training.
#[derive(Debug, Clone)]
pub struct ToyImageEmbedder {
    grid: usize,
    dim: usize,
    projection: Vec<f64>,
    seed: u64,
}

impl ToyImageEmbedder {
    /// Standard configuration: 4x4 tile grid projected to 64 dimensions.
    pub fn new(seed: u64) -> Self {
        ToyImageEmbedder::with_shape(seed, 4, TOY_DIM)
    }

    /// Custom grid and output width.
    pub fn with_shape(seed: u64, grid: usize, dim: usize) -> Self {
        assert!(grid >= 1 && dim >= 1);
        let raw_len = grid * grid * TILE_FEATURES;
        let scale = libm::sqrt(3.0 / raw_len as f64);
        let mut rng = DetRng::derive(seed, "toy-image-projection");
        let projection = (0..dim * raw_len)
            .map(|_| rng.range_f64(-scale, scale))
            .collect();
        ToyImageEmbedder {
            grid,
            dim,
            projection,
            seed,
        }
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn check_dims(&self, image: &ImageSample) -> Result<()> {
        if image.height() < self.grid || image.width() < self.grid {
            return Err(Error::Validation(format!(
                "image {}x{} smaller than the {}x{} feature grid",
                image.height(),
                image.width(),
                self.grid,
                self.grid
            )));
        }
        Ok(())
    }

    fn tile_bounds(&self, extent: usize, g: usize) -> (usize, usize) {
        (extent * g / self.grid, extent * (g + 1) / self.grid)
    }

    /// Raw per-tile features: `[mean_r, mean_g, mean_b, gradient_energy]`
    /// for each tile in row-major order.
    fn raw_features(&self, image: &ImageSample) -> Vec<f64> {
        let mut raw = Vec::with_capacity(self.grid * self.grid * TILE_FEATURES);
        for gy in 0..self.grid {
            let (r0, r1) = self.tile_bounds(image.height(), gy);
            for gx in 0..self.grid {
                let (c0, c1) = self.tile_bounds(image.width(), gx);
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                for c in 0..CHANNELS {
                    let mut sum = 0.0;
                    for y in r0..r1 {
                        for x in c0..c1 {
                            sum += image.get(c, y, x);
                        }
                    }
                    raw.push(sum / count);
                }
                raw.push(tile_energy(image, r0, r1, c0, c1));
            }
        }
        raw
    }
}

/// Mean squared difference of horizontally and vertically adjacent pixels
/// within a tile, summed over channels; zero for single-pixel tiles.
fn tile_energy(image: &ImageSample, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let h = r1 - r0;
    let w = c1 - c0;
    let pairs = (CHANNELS * (h * w.saturating_sub(1) + h.saturating_sub(1) * w)) as f64;
    if pairs == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for c in 0..CHANNELS {
        for y in r0..r1 {
            for x in c0..c1 {
                if x + 1 < c1 {
                    let d = image.get(c, y, x + 1) - image.get(c, y, x);
                    sum += d * d;
                }
                if y + 1 < r1 {
                    let d = image.get(c, y + 1, x) - image.get(c, y, x);
                    sum += d * d;
                }
            }
        }
    }
    sum / pairs
}

impl ImageEmbedder for ToyImageEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, image: &ImageSample) -> Result<Embedding> {
        self.check_dims(image)?;
        let raw = self.raw_features(image);
        let mut out = vec![0.0; self.dim];
        for (d, slot) in out.iter_mut().enumerate() {
            let row = &self.projection[d * raw.len()..(d + 1) * raw.len()];
            *slot = row.iter().zip(raw.iter()).map(|(p, r)| p * r).sum();
        }
        Ok(Embedding::new(out))
    }

    fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.projection.len() * 8 + 24);
        bytes.extend_from_slice(&(self.grid as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        for p in &self.projection {
            bytes.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }
}

impl DifferentiableImageEmbedder for ToyImageEmbedder {
    fn embed_image_vjp(&self, image: &ImageSample, upstream: &[f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), self.dim, "upstream gradient width mismatch");
        let raw_len = self.grid * self.grid * TILE_FEATURES;
        let mut d_raw = vec![0.0; raw_len];
        for (d, up) in upstream.iter().enumerate() {
            let row = &self.projection[d * raw_len..(d + 1) * raw_len];
            for (slot, p) in d_raw.iter_mut().zip(row.iter()) {
                *slot += up * p;
            }
        }

        let mut d_pixels = vec![0.0; CHANNELS * image.pixels()];
        let h = image.height();
        let w = image.width();
        let idx = |c: usize, y: usize, x: usize| (c * h + y) * w + x;
        let mut feature = 0;
        for gy in 0..self.grid {
            let (r0, r1) = self.tile_bounds(h, gy);
            for gx in 0..self.grid {
                let (c0, c1) = self.tile_bounds(w, gx);
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                for c in 0..CHANNELS {
                    let g = d_raw[feature] / count;
                    feature += 1;
                    for y in r0..r1 {
                        for x in c0..c1 {
                            d_pixels[idx(c, y, x)] += g;
                        }
                    }
                }
                let d_energy = d_raw[feature];
                feature += 1;
                let th = r1 - r0;
                let tw = c1 - c0;
                let pairs =
                    (CHANNELS * (th * tw.saturating_sub(1) + th.saturating_sub(1) * tw)) as f64;
                if pairs > 0.0 {
                    let scale = 2.0 * d_energy / pairs;
                    for c in 0..CHANNELS {
                        for y in r0..r1 {
                            for x in c0..c1 {
                                if x + 1 < c1 {
                                    let d = image.get(c, y, x + 1) - image.get(c, y, x);
                                    d_pixels[idx(c, y, x + 1)] += scale * d;
                                    d_pixels[idx(c, y, x)] -= scale * d;
                                }
                                if y + 1 < r1 {
                                    let d = image.get(c, y + 1, x) - image.get(c, y, x);
                                    d_pixels[idx(c, y + 1, x)] += scale * d;
                                    d_pixels[idx(c, y, x)] -= scale * d;
                                }
                            }
                        }
                    }
                }
            }
        }
        d_pixels
    }
}

/// Text embedder: hashed bag of words with positional decay.
///
/// Each non-stop-word token contributes a seeded unit vector weighted by
/// `decay^position`; stop words and punctuation contribute nothing. A text
/// with no content words embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct ToyTextEmbedder {
    dim: usize,
    decay: f64,
    seed: u64,
}

impl ToyTextEmbedder {
    pub fn new(seed: u64) -> Self {
        ToyTextEmbedder {
            dim: TOY_DIM,
            decay: 0.95,
            seed,
        }
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut rng = DetRng::seed(mix(self.seed, word));
        let mut v: Vec<f64> = (0..self.dim).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl TextEmbedder for ToyTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &TextSample) -> Result<Embedding> {
        let mut acc = vec![0.0; self.dim];
        let mut weight = 1.0;
        for token in text.tokens() {
            if !stopwords::is_stop_token(token) {
                let v = self.word_vector(token);
                for (slot, x) in acc.iter_mut().zip(v.iter()) {
                    *slot += weight * x;
                }
            }
            weight *= self.decay;
        }
        Ok(Embedding::new(acc))
    }

    fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(24);
        bytes.extend_from_slice(&(self.dim as u64).to_le_bytes());
        bytes.extend_from_slice(&self.decay.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        fnv1a(&bytes)
    }
}

/// Region proposer returning fixed grid tiles: the 4x4 grid first, then the
/// coarser 2x2 grid, truncated to the requested count.
#[derive(Debug, Clone, Default)]
pub struct ToyRegionProposer;

impl ToyRegionProposer {
    const GRIDS: [usize; 2] = [4, 2];
}

impl RegionProposer for ToyRegionProposer {
    fn propose_regions(
        &self,
        image: &ImageSample,
        max_regions: usize,
    ) -> Result<Vec<RegionProposal>> {
        if max_regions == 0 {
            return Err(Error::Validation(
                String::from("max_regions must be at least 1"),
            ));
        }
        let finest = *Self::GRIDS.iter().max().unwrap();
        if image.height() < finest || image.width() < finest {
            return Err(Error::Validation(format!(
                "image {}x{} smaller than the {}x{} proposal grid",
                image.height(),
                image.width(),
                finest,
                finest
            )));
        }
        let mut boxes = Vec::new();
        for grid in Self::GRIDS {
            for gy in 0..grid {
                let top = image.height() * gy / grid;
                let bottom = image.height() * (gy + 1) / grid;
                for gx in 0..grid {
                    let left = image.width() * gx / grid;
                    let right = image.width() * (gx + 1) / grid;
                    boxes.push(RegionProposal {
                        top,
                        left,
                        height: bottom - top,
                        width: right - left,
                    });
                    if boxes.len() == max_regions {
                        return Ok(boxes);
                    }
                }
            }
        }
        Ok(boxes)
    }
}

/// Candidate oracle backed by the bundled synonym lexicon.
#[derive(Debug, Clone, Default)]
pub struct LexiconOracle;

impl CandidateOracle for LexiconOracle {
    fn mask_candidates(
        &self,
        text: &TextSample,
        position: usize,
        max_candidates: usize,
    ) -> Result<CandidateSet> {
        let Some(word) = text.tokens().get(position) else {
            return Err(Error::Validation(format!(
                "candidate position {position} out of range for {} tokens",
                text.len()
            )));
        };
        let raw = lexicon::synonyms(word);
        Ok(CandidateSet::build(
            position,
            word,
            raw.iter().copied(),
            max_candidates,
        ))
    }
}
