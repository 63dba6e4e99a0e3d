//! Retrieval and stealthiness metrics.
//!
//! Retrieval quality is average precision over ranked relevance lists;
//! image stealthiness is MSE/PSNR/SSIM on the 0-255 scale; text
//! stealthiness is embedding cosine. The same AP machinery serves both
//! benign accuracy (label-share relevance) and attack success (target-label
//! relevance) — only the relevance definition changes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{ImageSample, CHANNELS};
use crate::surrogate::{cosine_similarity, TextEmbedder};
use crate::text::TextSample;

/// Average precision over the top `k` of one ranked relevance list.
///
/// The denominator is the number of relevant items within the top `k`
/// (retrieval AP@k convention); no relevant item means 0. An empty list
/// scores 0.
pub fn average_precision(relevances: &[bool], k: usize) -> Result<f64> {
    if relevances.is_empty() {
        return Ok(0.0);
    }
    if k == 0 || k > relevances.len() {
        return Err(Error::Validation(format!(
            "k must lie in 1..={}, got {k}",
            relevances.len()
        )));
    }
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, &rel) in relevances.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        Ok(0.0)
    } else {
        Ok(precision_sum / hits as f64)
    }
}

/// Mean AP over queries; each list is capped at `min(k, its length)`.
pub fn map_at_k(per_query_relevance: &[Vec<bool>], k: usize) -> Result<f64> {
    if per_query_relevance.is_empty() {
        return Err(Error::Validation(String::from(
            "mean average precision needs at least one query",
        )));
    }
    if k == 0 {
        return Err(Error::Validation(String::from("k must be at least 1")));
    }
    let mut sum = 0.0;
    for rel in per_query_relevance {
        let eff = k.min(rel.len());
        sum += if eff == 0 {
            0.0
        } else {
            average_precision(rel, eff)?
        };
    }
    Ok(sum / per_query_relevance.len() as f64)
}

/// Pixel-level stealthiness of a poisoned image, on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageQuality {
    /// Peak signal-to-noise ratio in dB; infinite for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

const PEAK: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// MSE, PSNR and SSIM between two images of the same dims.
///
/// SSIM uses the standard 11x11 Gaussian window (sigma 1.5) over valid
/// positions, per channel, averaged; on images smaller than the window the
/// largest odd window that fits is used instead.
pub fn image_quality(clean: &ImageSample, poisoned: &ImageSample) -> Result<ImageQuality> {
    if !clean.same_shape(poisoned) {
        return Err(Error::Validation(format!(
            "image dims differ: {}x{} vs {}x{}",
            clean.height(),
            clean.width(),
            poisoned.height(),
            poisoned.width()
        )));
    }
    let mse = clean
        .data()
        .iter()
        .zip(poisoned.data())
        .map(|(a, b)| {
            let d = (a - b) * PEAK;
            d * d
        })
        .sum::<f64>()
        / clean.data().len() as f64;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * libm::log10(PEAK * PEAK / mse)
    };
    Ok(ImageQuality {
        psnr,
        ssim: ssim(clean, poisoned),
        mse,
    })
}

fn gaussian_kernel(window: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - half;
            libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn ssim(a: &ImageSample, b: &ImageSample) -> f64 {
    let h = a.height();
    let w = a.width();
    let mut window = SSIM_WINDOW.min(h.min(w));
    if window % 2 == 0 {
        window -= 1;
    }
    let kernel = gaussian_kernel(window);
    let c1 = (SSIM_K1 * PEAK) * (SSIM_K1 * PEAK);
    let c2 = (SSIM_K2 * PEAK) * (SSIM_K2 * PEAK);
    let oh = h - window + 1;
    let ow = w - window + 1;
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let mut channel_sum = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        let weight = kernel[ky] * kernel[kx];
                        let va = a.get(c, y + ky, x + kx) * PEAK;
                        let vb = b.get(c, y + ky, x + kx) * PEAK;
                        mu_a += weight * va;
                        mu_b += weight * vb;
                        aa += weight * va * va;
                        bb += weight * vb * vb;
                        ab += weight * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                channel_sum += numerator / denominator;
            }
        }
        total += channel_sum / (oh * ow) as f64;
    }
    total / CHANNELS as f64
}

/// Cosine similarity of two sentence embeddings.
pub fn semantic_similarity(
    a: &TextSample,
    b: &TextSample,
    embedder: &dyn TextEmbedder,
) -> Result<f64> {
    Ok(cosine_similarity(
        &embedder.embed_text(a)?,
        &embedder.embed_text(b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use crate::surrogate::ToyTextEmbedder;
    use alloc::vec;

    fn noisy_image(h: usize, w: usize, seed: u64) -> ImageSample {
        let mut rng = DetRng::seed(seed);
        let data = (0..CHANNELS * h * w).map(|_| rng.unit_f64()).collect();
        ImageSample::from_data(h, w, data).unwrap()
    }

    #[test]
    fn ap_basic_cases() {
        assert_eq!(average_precision(&[true, true, true], 3).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, false, false], 3).unwrap(), 0.0);
        let ap = average_precision(&[true, false, true], 3).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[], 1).unwrap(), 0.0);
        assert!(average_precision(&[true], 2).is_err());
        assert!(average_precision(&[true], 0).is_err());
    }

    #[test]
    fn ap_ignores_items_beyond_k() {
        let ap = average_precision(&[true, false, true, true], 2).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn irrelevant_item_on_top_never_raises_ap() {
        let mut rng = DetRng::seed(4);
        for _ in 0..200 {
            let n = 1 + rng.index(8);
            let rel: Vec<bool> = (0..n).map(|_| rng.index(2) == 0).collect();
            let k = 1 + rng.index(n);
            let base = average_precision(&rel, k).unwrap();
            let mut pushed = vec![false];
            pushed.extend_from_slice(&rel);
            let after = average_precision(&pushed, (k + 1).min(pushed.len())).unwrap();
            assert!(after <= base + 1e-12, "rel {rel:?} k {k}");
        }
    }

    #[test]
    fn map_averages_and_validates() {
        let q = vec![vec![true, false], vec![false, true]];
        let m = map_at_k(&q, 2).unwrap();
        assert!((m - 0.75).abs() < 1e-12);
        assert!(map_at_k(&[], 2).is_err());
        assert!(map_at_k(&q, 0).is_err());
    }

    #[test]
    fn map_caps_k_at_list_length() {
        let q = vec![vec![true, false, true]];
        assert_eq!(map_at_k(&q, 5000).unwrap(), map_at_k(&q, 3).unwrap());
    }

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = noisy_image(16, 16, 1);
        let q = image_quality(&img, &img).unwrap();
        assert_eq!(q.mse, 0.0);
        assert!(q.psnr.is_infinite());
        assert_eq!(q.ssim, 1.0);
    }

    #[test]
    fn uniform_one_level_shift_gives_unit_mse() {
        let img = noisy_image(8, 8, 2);
        let base_data: Vec<f64> = img.data().iter().map(|v| v * 0.9).collect();
        let base = ImageSample::from_data(8, 8, base_data).unwrap();
        let up_data: Vec<f64> = base.data().iter().map(|v| v + 1.0 / 255.0).collect();
        let up = ImageSample::from_data(8, 8, up_data).unwrap();
        let q = image_quality(&base, &up).unwrap();
        assert!((q.mse - 1.0).abs() < 1e-9);
    }

    #[test]
    fn black_vs_white_is_zero_db() {
        let black = ImageSample::filled(12, 12, [0.0; 3]);
        let white = ImageSample::filled(12, 12, [1.0; 3]);
        let q = image_quality(&black, &white).unwrap();
        assert!((q.mse - 255.0 * 255.0).abs() < 1e-9);
        assert!(q.psnr.abs() < 1e-12);
    }

    #[test]
    fn mse_is_symmetric() {
        let a = noisy_image(10, 10, 3);
        let b = noisy_image(10, 10, 4);
        let qa = image_quality(&a, &b).unwrap();
        let qb = image_quality(&b, &a).unwrap();
        assert_eq!(qa.mse, qb.mse);
        assert_eq!(qa.psnr, qb.psnr);
    }

    #[test]
    fn ssim_handles_tiny_images() {
        let a = noisy_image(4, 4, 5);
        let q = image_quality(&a, &a).unwrap();
        assert_eq!(q.ssim, 1.0);
        let b = noisy_image(4, 4, 6);
        let q = image_quality(&a, &b).unwrap();
        assert!(q.ssim < 1.0 && q.ssim >= -1.0);
    }

    #[test]
    fn quality_rejects_dim_mismatch() {
        let a = noisy_image(8, 8, 7);
        let b = noisy_image(4, 4, 8);
        assert!(image_quality(&a, &b).is_err());
    }

    #[test]
    fn semantic_similarity_identity_and_orthogonal() {
        let e = ToyTextEmbedder::new(9);
        let a = TextSample::new("a red cat").unwrap();
        let same = semantic_similarity(&a, &a, &e).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let b = TextSample::new("on the of").unwrap();
        assert_eq!(semantic_similarity(&a, &b, &e).unwrap(), 0.0);
    }
}
