//! Cross-modal mining: find the image regions and caption words that carry
//! the shared semantics of a pair.
//!
//! Each candidate region (word) is scored by occluding it and measuring the
//! remaining cross-modal agreement; low agreement after occlusion means the
//! component mattered. Regions are then combined under a pixel budget by an
//! exact 0/1 knapsack, words by a top-k cut over non-stop-word positions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{ImageSample, PixelMask, CHANNELS};
use crate::surrogate::{
    cosine_similarity, is_stop_token, ImageEmbedder, RegionProposal, TextEmbedder,
};
use crate::text::TextSample;

/// Token inserted when probing word importance.
pub const MASK_TOKEN: &str = "[MASK]";

/// A region proposal with its cross-modal importance score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRegion {
    pub region: RegionProposal,
    /// `1 - cos(masked-image embedding, text embedding)`; in `[0, 2]`.
    pub importance: f64,
}

/// Union of the selected regions, within the pixel budget.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantMask {
    pub mask: PixelMask,
    /// Selected regions in ascending original-proposal order.
    pub selected: Vec<ScoredRegion>,
    /// True when not even a single proposal fits the budget.
    pub budget_infeasible: bool,
}

/// Per-token importance scores with stop-word flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenImportance {
    pub scores: Vec<f64>,
    pub stop: Vec<bool>,
}

/// Keyword positions chosen for substitution, most important first.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSelection {
    /// Token positions sorted by descending score (ties: lower index first).
    pub positions: Vec<usize>,
    /// Scores matching `positions`.
    pub scores: Vec<f64>,
    /// True when the text has no non-stop-word token to substitute.
    pub unpoisonable: bool,
}

impl KeywordSelection {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Scores every region by occluding it with `fill` and measuring
/// `1 - cos(embedding of the occluded image, text embedding)`.
pub fn visual_importance(
    image: &ImageSample,
    text: &TextSample,
    regions: &[RegionProposal],
    image_embedder: &dyn ImageEmbedder,
    text_embedder: &dyn TextEmbedder,
    fill: [f64; CHANNELS],
) -> Result<Vec<ScoredRegion>> {
    if regions.is_empty() {
        return Err(Error::Validation(String::from(
            "no regions to score; the proposer returned an empty list",
        )));
    }
    for (i, r) in regions.iter().enumerate() {
        if !r.fits(image.height(), image.width()) {
            return Err(Error::Validation(format!(
                "region {i} ({r:?}) exceeds the {}x{} image",
                image.height(),
                image.width()
            )));
        }
    }
    let text_emb = text_embedder.embed_text(text)?;
    let mut scored = Vec::with_capacity(regions.len());
    for r in regions {
        let mut occluded = image.clone();
        occluded.fill_region(r.top, r.left, r.height, r.width, fill);
        let emb = image_embedder.embed_image(&occluded)?;
        scored.push(ScoredRegion {
            region: *r,
            importance: 1.0 - cosine_similarity(&emb, &text_emb),
        });
    }
    Ok(scored)
}

/// Drops near-duplicate proposals: when two overlap with IoU strictly above
/// `iou_threshold`, only the higher-scoring one survives (ties: lower index).
/// Returns surviving indices in ascending order.
pub fn dedup_regions(scored: &[ScoredRegion], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .importance
            .total_cmp(&scored[a].importance)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let candidate = &scored[idx].region;
        if kept
            .iter()
            .all(|&k| candidate.iou(&scored[k].region) <= iou_threshold)
        {
            kept.push(idx);
        }
    }
    kept.sort_unstable();
    kept
}

/// Selects the subset of regions maximizing total importance under the pixel
/// budget `floor(budget_fraction * H * W)` via 0/1 knapsack over box areas.
///
/// Near-duplicate proposals (IoU > 0.9) are removed first, keeping the
/// higher-scoring box. Since the union area never exceeds the sum of box
/// areas, the returned mask respects the budget too. Value ties prefer the
/// smaller selection.
pub fn select_regions_dp(
    scored: &[ScoredRegion],
    image_dims: (usize, usize),
    budget_fraction: f64,
) -> Result<InvariantMask> {
    if scored.is_empty() {
        return Err(Error::Validation(String::from(
            "no scored regions to select from",
        )));
    }
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "budget fraction must be in (0, 1], got {budget_fraction}"
        )));
    }
    let (h, w) = image_dims;
    let capacity = libm::floor(budget_fraction * (h * w) as f64) as usize;

    let survivors = dedup_regions(scored, 0.9);
    let items: Vec<(usize, f64)> = survivors
        .iter()
        .map(|&i| (scored[i].region.area(), scored[i].importance))
        .collect();

    if !items.iter().any(|&(area, _)| area <= capacity) {
        return Ok(InvariantMask {
            mask: PixelMask::empty(h, w),
            selected: Vec::new(),
            budget_infeasible: true,
        });
    }

    // Sums accumulate item by item in ascending index order, so an
    // exhaustive enumeration folding the same way reproduces the maximum
    // value bit for bit.
    let mut value = vec![0.0f64; capacity + 1];
    let mut take = vec![false; items.len() * (capacity + 1)];
    for (i, &(area, importance)) in items.iter().enumerate() {
        let prev = value.clone();
        for j in area..=capacity {
            let candidate = prev[j - area] + importance;
            if candidate > prev[j] {
                value[j] = candidate;
                take[i * (capacity + 1) + j] = true;
            }
        }
    }

    let mut chosen: Vec<usize> = Vec::new();
    let mut j = capacity;
    for i in (0..items.len()).rev() {
        if take[i * (capacity + 1) + j] {
            chosen.push(survivors[i]);
            j -= items[i].0;
        }
    }
    chosen.reverse();

    let mut mask = PixelMask::empty(h, w);
    let mut selected = Vec::with_capacity(chosen.len());
    for idx in chosen {
        let s = scored[idx].clone();
        let r = &s.region;
        mask.set_region(r.top, r.left, r.height, r.width);
        selected.push(s);
    }
    debug_assert!(mask.popcount() <= capacity);
    Ok(InvariantMask {
        mask,
        selected,
        budget_infeasible: false,
    })
}

/// Scores every token by replacing it with [`MASK_TOKEN`] and measuring
/// `1 - cos(image embedding, embedding of the masked text)`.
pub fn textual_importance(
    text: &TextSample,
    image: &ImageSample,
    image_embedder: &dyn ImageEmbedder,
    text_embedder: &dyn TextEmbedder,
) -> Result<TokenImportance> {
    if text.is_empty() {
        return Err(Error::Validation(String::from(
            "cannot score an empty token list",
        )));
    }
    let image_emb = image_embedder.embed_image(image)?;
    let mut scores = Vec::with_capacity(text.len());
    let mut stop = Vec::with_capacity(text.len());
    for (i, token) in text.tokens().iter().enumerate() {
        let mut masked: Vec<String> = text.tokens().to_vec();
        masked[i] = String::from(MASK_TOKEN);
        let emb = text_embedder.embed_text(&TextSample::from_tokens_for_analysis(masked))?;
        scores.push(1.0 - cosine_similarity(&image_emb, &emb));
        stop.push(is_stop_token(token));
    }
    Ok(TokenImportance { scores, stop })
}

/// Picks the top-scoring non-stop-word positions, at most
/// `max(1, floor(ratio * L))` of them (L counts every token).
pub fn select_keywords(
    scores: &[f64],
    text: &TextSample,
    ratio: f64,
) -> Result<KeywordSelection> {
    if scores.len() != text.len() {
        return Err(Error::Validation(format!(
            "got {} scores for {} tokens",
            scores.len(),
            text.len()
        )));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Validation(format!(
            "keyword ratio must be in (0, 1], got {ratio}"
        )));
    }
    let mut eligible: Vec<usize> = (0..text.len())
        .filter(|&i| !is_stop_token(&text.tokens()[i]))
        .collect();
    if eligible.is_empty() {
        return Ok(KeywordSelection {
            positions: Vec::new(),
            scores: Vec::new(),
            unpoisonable: true,
        });
    }
    let cap = libm::floor(ratio * text.len() as f64) as usize;
    let count = eligible.len().min(cap.max(1));
    eligible.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    eligible.truncate(count);
    let picked_scores = eligible.iter().map(|&i| scores[i]).collect();
    Ok(KeywordSelection {
        positions: eligible,
        scores: picked_scores,
        unpoisonable: false,
    })
}
