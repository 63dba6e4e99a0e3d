//! Invisible visual trigger: an encoder-decoder generator turns an explicit
//! patch trigger into a bounded perturbation confined to the mined mask.
//!
//! The generator sees the clean image concatenated with its mask channel and
//! emits a 3-channel perturbation in [-0.5, 0.5]; adding and clamping yields
//! the poisoned image. Training balances four terms: reconstruction (stay
//! close to the clean pixels), region (no energy outside the mask),
//! adversarial (fool a patch-level discriminator), and feature (match the
//! surrogate embedding of the explicit patch reference).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{ImageSample, PixelMask, CHANNELS};
use crate::nn::{
    lrelu_backward, lrelu_forward, sigmoid, softplus, tanh_backward, tanh_forward,
    upsample2_backward, upsample2_forward, Adam, Conv2d, Feat, ParamBuilder,
};
use crate::rng::{mix, DetRng};
use crate::surrogate::{cosine_similarity, DifferentiableImageEmbedder, Embedding};

const LRELU_SLOPE: f64 = 0.2;
/// The generator head bounds each perturbation entry to this magnitude.
pub const DELTA_BOUND: f64 = 0.5;

/// Explicit patch trigger: a small patch and where it sits on the image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTrigger {
    patch: ImageSample,
    top: usize,
    left: usize,
    placement: PixelMask,
}

impl PatchTrigger {
    /// Places `patch` at (`top`, `left`) on `image_h` x `image_w` images.
    pub fn new(
        patch: ImageSample,
        image_h: usize,
        image_w: usize,
        top: usize,
        left: usize,
    ) -> Result<Self> {
        if top + patch.height() > image_h || left + patch.width() > image_w {
            return Err(Error::Validation(format!(
                "{}x{} patch at ({top}, {left}) exceeds the {image_h}x{image_w} image",
                patch.height(),
                patch.width()
            )));
        }
        let mut placement = PixelMask::empty(image_h, image_w);
        placement.set_region(top, left, patch.height(), patch.width());
        Ok(PatchTrigger {
            patch,
            top,
            left,
            placement,
        })
    }

    /// White/black checkerboard of `size` x `size` pixels (cells of `cell`
    /// pixels) in the bottom-right corner.
    pub fn checker(image_h: usize, image_w: usize, size: usize, cell: usize) -> Result<Self> {
        if size > image_h || size > image_w {
            return Err(Error::Validation(format!(
                "{size}x{size} patch exceeds the {image_h}x{image_w} image"
            )));
        }
        PatchTrigger::checker_at(image_h, image_w, size, cell, image_h - size, image_w - size)
    }

    /// Checkerboard with an explicit placement.
    pub fn checker_at(
        image_h: usize,
        image_w: usize,
        size: usize,
        cell: usize,
        top: usize,
        left: usize,
    ) -> Result<Self> {
        if size == 0 || cell == 0 {
            return Err(Error::Validation(String::from(
                "patch size and cell must be positive",
            )));
        }
        let mut patch = ImageSample::filled(size, size, [0.0; CHANNELS]);
        for y in 0..size {
            for x in 0..size {
                if (y / cell + x / cell) % 2 == 0 {
                    for c in 0..CHANNELS {
                        patch.set(c, y, x, 1.0);
                    }
                }
            }
        }
        PatchTrigger::new(patch, image_h, image_w, top, left)
    }

    /// Checker trigger covering about 1% of the image area (22x22 on a
    /// 224x224 image), never smaller than 2x2.
    pub fn default_for(image_h: usize, image_w: usize) -> Result<Self> {
        let side = libm::round(image_h.min(image_w) as f64 * 22.0 / 224.0) as usize;
        PatchTrigger::checker(image_h, image_w, side.max(2), 2)
    }

    pub fn patch(&self) -> &ImageSample {
        &self.patch
    }

    pub fn placement(&self) -> (usize, usize) {
        (self.top, self.left)
    }

    pub fn placement_mask(&self) -> &PixelMask {
        &self.placement
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.placement.height(), self.placement.width())
    }
}

/// Pastes the explicit patch onto the image: the reference look the
/// invisible trigger must imitate in feature space.
pub fn compose_reference(image: &ImageSample, trigger: &PatchTrigger) -> Result<ImageSample> {
    if trigger.image_dims() != (image.height(), image.width()) {
        return Err(Error::Validation(format!(
            "trigger built for {:?} images, got {}x{}",
            trigger.image_dims(),
            image.height(),
            image.width()
        )));
    }
    let mut out = image.clone();
    for y in 0..trigger.patch.height() {
        for x in 0..trigger.patch.width() {
            for c in 0..CHANNELS {
                out.set(c, trigger.top + y, trigger.left + x, trigger.patch.get(c, y, x));
            }
        }
    }
    Ok(out)
}

/// Hyper-parameters of trigger training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerTrainConfig {
    /// Weight of the region loss.
    pub alpha: f64,
    /// Weight of the adversarial loss.
    pub beta: f64,
    /// Weight of the feature loss.
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TriggerTrainConfig {
    fn default() -> Self {
        TriggerTrainConfig {
            alpha: 5.0,
            beta: 5e-3,
            gamma: 1.0,
            learning_rate: 5e-5,
            epochs: 200,
            batch_size: 64,
        }
    }
}

impl TriggerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0
            || self.beta <= 0.0
            || self.gamma <= 0.0
            || self.learning_rate <= 0.0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::Validation(String::from(
                "trigger training hyper-parameters must all be positive",
            )));
        }
        Ok(())
    }
}

/// Width configuration of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub bottleneck_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 8,
            bottleneck_channels: 32,
        }
    }
}

const GEN_IN_CHANNELS: usize = CHANNELS + 1;

#[derive(Debug, Clone, Copy)]
struct GenLayers {
    enc1: Conv2d,
    enc2: Conv2d,
    enc3: Conv2d,
    dec2: Conv2d,
    dec1: Conv2d,
    head: Conv2d,
}

fn gen_layers(cfg: GeneratorConfig, b: &mut ParamBuilder) -> GenLayers {
    let c = cfg.base_channels;
    let bt = cfg.bottleneck_channels;
    GenLayers {
        enc1: b.conv(GEN_IN_CHANNELS, c, 3, 1, 1),
        enc2: b.conv(c, 2 * c, 3, 2, 1),
        enc3: b.conv(2 * c, bt, 3, 2, 1),
        dec2: b.conv(bt + 2 * c, 2 * c, 3, 1, 1),
        dec1: b.conv(2 * c + c, c, 3, 1, 1),
        head: b.conv(c, CHANNELS, 3, 1, 1),
    }
}

/// Intermediate activations of one generator forward pass, kept for the
/// backward pass.
pub struct GenCache {
    input: Feat,
    e1_pre: Feat,
    e1: Feat,
    e2_pre: Feat,
    e2: Feat,
    e3_pre: Feat,
    cat2: Feat,
    d2_pre: Feat,
    cat1: Feat,
    d1_pre: Feat,
    d1: Feat,
    head_tanh: Feat,
}

/// Encoder-decoder perturbation generator with skip connections.
///
/// Input: 4 channels (image plus mask), height and width divisible by 4.
/// Output: 3-channel perturbation bounded to [-0.5, 0.5].
#[derive(Debug, Clone)]
pub struct GeneratorNet {
    config: GeneratorConfig,
    layers: GenLayers,
    pub params: Vec<f64>,
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut b = ParamBuilder::new(mix(seed, "generator-init"));
        let layers = gen_layers(config, &mut b);
        GeneratorNet {
            config,
            layers,
            params: b.finish(),
        }
    }

    /// Rebuilds a generator from stored parameters.
    pub fn with_params(config: GeneratorConfig, params: Vec<f64>) -> Result<Self> {
        let template = GeneratorNet::new(config, 0);
        if params.len() != template.params.len() {
            return Err(Error::Validation(format!(
                "expected {} generator parameters, got {}",
                template.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation(String::from(
                "generator parameters must be finite",
            )));
        }
        Ok(GeneratorNet {
            config: template.config,
            layers: template.layers,
            params,
        })
    }

    pub fn config(&self) -> GeneratorConfig {
        self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Forward pass; the returned perturbation has `CHANNELS` channels and
    /// the input's spatial dims.
    pub fn forward(&self, input: &Feat) -> (Feat, GenCache) {
        assert_eq!(input.c, GEN_IN_CHANNELS, "generator input must be image+mask");
        assert!(
            input.h % 4 == 0 && input.w % 4 == 0,
            "generator needs dims divisible by 4"
        );
        let l = &self.layers;
        let p = &self.params;
        let e1_pre = l.enc1.forward(p, input);
        let e1 = lrelu_forward(&e1_pre, LRELU_SLOPE);
        let e2_pre = l.enc2.forward(p, &e1);
        let e2 = lrelu_forward(&e2_pre, LRELU_SLOPE);
        let e3_pre = l.enc3.forward(p, &e2);
        let e3 = lrelu_forward(&e3_pre, LRELU_SLOPE);
        let cat2 = upsample2_forward(&e3).concat_channels(&e2);
        let d2_pre = l.dec2.forward(p, &cat2);
        let d2 = lrelu_forward(&d2_pre, LRELU_SLOPE);
        let cat1 = upsample2_forward(&d2).concat_channels(&e1);
        let d1_pre = l.dec1.forward(p, &cat1);
        let d1 = lrelu_forward(&d1_pre, LRELU_SLOPE);
        let head_pre = l.head.forward(p, &d1);
        let head_tanh = tanh_forward(&head_pre);
        let mut delta = head_tanh.clone();
        for v in &mut delta.data {
            *v *= DELTA_BOUND;
        }
        let cache = GenCache {
            input: input.clone(),
            e1_pre,
            e1,
            e2_pre,
            e2,
            e3_pre,
            cat2,
            d2_pre,
            cat1,
            d1_pre,
            d1,
            head_tanh,
        };
        (delta, cache)
    }

    /// Accumulates parameter gradients for `d_delta` into `grads`.
    pub fn backward(&self, cache: &GenCache, d_delta: &Feat, grads: &mut [f64]) {
        let l = &self.layers;
        let p = &self.params;
        let mut d_head_tanh = d_delta.clone();
        for v in &mut d_head_tanh.data {
            *v *= DELTA_BOUND;
        }
        let d_head_pre = tanh_backward(&cache.head_tanh, &d_head_tanh);
        let d_d1 = l.head.backward(p, &cache.d1, &d_head_pre, grads);
        let d_d1_pre = lrelu_backward(&cache.d1_pre, &d_d1, LRELU_SLOPE);
        let d_cat1 = l.dec1.backward(p, &cache.cat1, &d_d1_pre, grads);
        let (d_u1, d_e1_skip) = d_cat1.split_channels(2 * self.config.base_channels);
        let d_d2 = upsample2_backward(&d_u1);
        let d_d2_pre = lrelu_backward(&cache.d2_pre, &d_d2, LRELU_SLOPE);
        let d_cat2 = l.dec2.backward(p, &cache.cat2, &d_d2_pre, grads);
        let (d_u2, d_e2_skip) = d_cat2.split_channels(self.config.bottleneck_channels);
        let d_e3 = upsample2_backward(&d_u2);
        let d_e3_pre = lrelu_backward(&cache.e3_pre, &d_e3, LRELU_SLOPE);
        let mut d_e2 = l.enc3.backward(p, &cache.e2, &d_e3_pre, grads);
        for (a, b) in d_e2.data.iter_mut().zip(d_e2_skip.data.iter()) {
            *a += b;
        }
        let d_e2_pre = lrelu_backward(&cache.e2_pre, &d_e2, LRELU_SLOPE);
        let mut d_e1 = l.enc2.backward(p, &cache.e1, &d_e2_pre, grads);
        for (a, b) in d_e1.data.iter_mut().zip(d_e1_skip.data.iter()) {
            *a += b;
        }
        let d_e1_pre = lrelu_backward(&cache.e1_pre, &d_e1, LRELU_SLOPE);
        let _ = l.enc1.backward(p, &cache.input, &d_e1_pre, grads);
    }
}

/// Width configuration of the patch discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { base_channels: 8 }
    }
}

#[derive(Debug, Clone, Copy)]
struct DiscLayers {
    c1: Conv2d,
    c2: Conv2d,
    head: Conv2d,
}

pub struct DiscCache {
    input: Feat,
    a1_pre: Feat,
    a1: Feat,
    a2_pre: Feat,
    a2: Feat,
    logits: Feat,
}

/// Patch-level real/fake classifier: a grid of logits whose receptive field
/// is a quarter of the image side; the scalar decision averages the grid.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    config: DiscriminatorConfig,
    layers: DiscLayers,
    pub params: Vec<f64>,
}

impl DiscriminatorNet {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let c = config.base_channels;
        let mut b = ParamBuilder::new(mix(seed, "discriminator-init"));
        let layers = DiscLayers {
            c1: b.conv(CHANNELS, c, 4, 2, 1),
            c2: b.conv(c, 2 * c, 3, 2, 1),
            head: b.conv(2 * c, 1, 1, 1, 0),
        };
        DiscriminatorNet {
            config,
            layers,
            params: b.finish(),
        }
    }

    pub fn with_params(config: DiscriminatorConfig, params: Vec<f64>) -> Result<Self> {
        let template = DiscriminatorNet::new(config, 0);
        if params.len() != template.params.len() {
            return Err(Error::Validation(format!(
                "expected {} discriminator parameters, got {}",
                template.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation(String::from(
                "discriminator parameters must be finite",
            )));
        }
        Ok(DiscriminatorNet {
            config: template.config,
            layers: template.layers,
            params,
        })
    }

    pub fn config(&self) -> DiscriminatorConfig {
        self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Returns the mean logit and the cache for backprop.
    pub fn forward(&self, image: &Feat) -> (f64, DiscCache) {
        let l = &self.layers;
        let p = &self.params;
        let a1_pre = l.c1.forward(p, image);
        let a1 = lrelu_forward(&a1_pre, LRELU_SLOPE);
        let a2_pre = l.c2.forward(p, &a1);
        let a2 = lrelu_forward(&a2_pre, LRELU_SLOPE);
        let logits = l.head.forward(p, &a2);
        let mean = logits.data.iter().sum::<f64>() / logits.len() as f64;
        (
            mean,
            DiscCache {
                input: image.clone(),
                a1_pre,
                a1,
                a2_pre,
                a2,
                logits,
            },
        )
    }

    /// Backprop from the mean logit; returns the input-image gradient.
    pub fn backward(&self, cache: &DiscCache, d_mean: f64, grads: &mut [f64]) -> Feat {
        let l = &self.layers;
        let p = &self.params;
        let n = cache.logits.len() as f64;
        let d_logits = Feat {
            c: cache.logits.c,
            h: cache.logits.h,
            w: cache.logits.w,
            data: vec![d_mean / n; cache.logits.len()],
        };
        let d_a2 = l.head.backward(p, &cache.a2, &d_logits, grads);
        let d_a2_pre = lrelu_backward(&cache.a2_pre, &d_a2, LRELU_SLOPE);
        let d_a1 = l.c2.backward(p, &cache.a1, &d_a2_pre, grads);
        let d_a1_pre = lrelu_backward(&cache.a1_pre, &d_a1, LRELU_SLOPE);
        l.c1.backward(p, &cache.input, &d_a1_pre, grads)
    }
}

/// Builds the 4-channel generator input from an image and its mask.
pub fn generator_input(image: &ImageSample, mask: &PixelMask) -> Feat {
    let mask_feat = Feat {
        c: 1,
        h: mask.height(),
        w: mask.width(),
        data: mask.to_f64(),
    };
    Feat::from_image(image).concat_channels(&mask_feat)
}

fn check_generator_dims(image: &ImageSample, mask: &PixelMask) -> Result<()> {
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(Error::Validation(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    if image.height() % 4 != 0 || image.width() % 4 != 0 {
        return Err(Error::Validation(format!(
            "generator needs dims divisible by 4, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Runs the generator and adds the perturbation: returns the clamped
/// poisoned image and the pre-clamp perturbation.
pub fn apply_perturbation(
    generator: &GeneratorNet,
    image: &ImageSample,
    mask: &PixelMask,
) -> Result<(ImageSample, Feat)> {
    check_generator_dims(image, mask)?;
    let (delta, _) = generator.forward(&generator_input(image, mask));
    if delta.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(String::from(
            "generator produced a non-finite perturbation",
        )));
    }
    let data: Vec<f64> = image
        .data()
        .iter()
        .zip(delta.data.iter())
        .map(|(x, d)| (x + d).clamp(0.0, 1.0))
        .collect();
    let poisoned = ImageSample::from_data(image.height(), image.width(), data)?;
    Ok((poisoned, delta))
}

/// Poisoned image only; see [`apply_perturbation`].
pub fn poison_image(
    generator: &GeneratorNet,
    image: &ImageSample,
    mask: &PixelMask,
) -> Result<ImageSample> {
    apply_perturbation(generator, image, mask).map(|(poisoned, _)| poisoned)
}

/// All loss terms of one (image, poisoned) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean squared pixel difference between poisoned and clean.
    pub rec: f64,
    /// Mean squared perturbation outside the mask.
    pub reg: f64,
    /// Discriminator cross-entropy (real vs poisoned).
    pub adv_d: f64,
    /// Non-saturating generator term `-log D(poisoned)`.
    pub adv_g: f64,
    /// `1 - cos` between poisoned and reference embeddings.
    pub fea: f64,
    /// `rec + alpha*reg + beta*adv_g + gamma*fea`.
    pub total: f64,
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

fn region_loss(delta: &Feat, mask: &PixelMask) -> f64 {
    let hw = mask.height() * mask.width();
    let mut sum = 0.0;
    for (i, d) in delta.data.iter().enumerate() {
        if !mask.bits()[i % hw] {
            sum += d * d;
        }
    }
    sum / delta.len() as f64
}

fn feature_loss(poisoned: &Embedding, reference: &Embedding) -> f64 {
    1.0 - cosine_similarity(poisoned, reference)
}

/// Scores one poisoned sample against its clean image and patch reference.
///
/// The discriminator and embedder are read-only here; `total` combines the
/// generator-side terms with the configured weights.
#[allow(clippy::too_many_arguments)]
pub fn compute_losses(
    image: &ImageSample,
    poisoned: &ImageSample,
    delta: &Feat,
    mask: &PixelMask,
    reference: &ImageSample,
    disc: &DiscriminatorNet,
    embedder: &dyn DifferentiableImageEmbedder,
    config: &TriggerTrainConfig,
) -> Result<LossBreakdown> {
    config.validate()?;
    if !image.same_shape(poisoned) || !image.same_shape(reference) {
        return Err(Error::Validation(String::from(
            "image, poisoned and reference must share dims",
        )));
    }
    let rec = mean_sq_diff(poisoned.data(), image.data());
    let reg = region_loss(delta, mask);
    let (z_real, _) = disc.forward(&Feat::from_image(image));
    let (z_fake, _) = disc.forward(&Feat::from_image(poisoned));
    let adv_d = softplus(-z_real) + softplus(z_fake);
    let adv_g = softplus(-z_fake);
    let fea = feature_loss(
        &embedder.embed_image(poisoned)?,
        &embedder.embed_image(reference)?,
    );
    let total = rec + config.alpha * reg + config.beta * adv_g + config.gamma * fea;
    Ok(LossBreakdown {
        rec,
        reg,
        adv_d,
        adv_g,
        fea,
        total,
    })
}

/// Generator-side loss terms of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLoss {
    pub rec: f64,
    pub reg: f64,
    pub adv_g: f64,
    pub fea: f64,
    pub total: f64,
}

/// Computes one sample's generator loss and accumulates the gradient of
/// `total` w.r.t. the generator parameters into `grads`.
///
/// This is the exact code path the training loop takes for every sample.
pub fn sample_loss_and_gradient(
    generator: &GeneratorNet,
    disc: &DiscriminatorNet,
    embedder: &dyn DifferentiableImageEmbedder,
    image: &ImageSample,
    mask: &PixelMask,
    reference: &ImageSample,
    config: &TriggerTrainConfig,
    grads: &mut [f64],
) -> Result<GeneratorLoss> {
    check_generator_dims(image, mask)?;
    let (delta, cache) = generator.forward(&generator_input(image, mask));
    let n = delta.len() as f64;

    let mut poisoned_data = Vec::with_capacity(delta.len());
    let mut pass = Vec::with_capacity(delta.len());
    for (x, d) in image.data().iter().zip(delta.data.iter()) {
        let pre = x + d;
        poisoned_data.push(pre.clamp(0.0, 1.0));
        pass.push(pre > 0.0 && pre < 1.0);
    }
    let poisoned = ImageSample::from_data(image.height(), image.width(), poisoned_data)?;

    let rec = mean_sq_diff(poisoned.data(), image.data());
    let reg = region_loss(&delta, mask);

    let (z_fake, disc_cache) = disc.forward(&Feat::from_image(&poisoned));
    let adv_g = softplus(-z_fake);

    let emb_poisoned = embedder.embed_image(&poisoned)?;
    let emb_reference = embedder.embed_image(reference)?;
    let fea = feature_loss(&emb_poisoned, &emb_reference);

    let total = rec + config.alpha * reg + config.beta * adv_g + config.gamma * fea;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite sample loss: rec={rec} reg={reg} adv_g={adv_g} fea={fea}"
        )));
    }

    // Gradient w.r.t. the poisoned pixels: adversarial and feature terms.
    let mut scratch = vec![0.0; disc.params.len()];
    let d_poisoned_adv = disc.backward(&disc_cache, -sigmoid(-z_fake), &mut scratch);

    let u = emb_poisoned.values();
    let v = emb_reference.values();
    let norm_u = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
    let norm_v = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let d_poisoned_fea = if norm_u > 0.0 && norm_v > 0.0 {
        let cos = cosine_similarity(&emb_poisoned, &emb_reference);
        let upstream: Vec<f64> = u
            .iter()
            .zip(v)
            .map(|(&uk, &vk)| -(vk / (norm_u * norm_v) - cos * uk / (norm_u * norm_u)))
            .collect();
        embedder.embed_image_vjp(&poisoned, &upstream)
    } else {
        vec![0.0; delta.len()]
    };

    // Gradient w.r.t. delta: rec and reg act here directly; the poisoned-
    // pixel terms pass through the clamp only where it is not saturated.
    let hw = mask.height() * mask.width();
    let mut d_delta = Feat::zeros(delta.c, delta.h, delta.w);
    for i in 0..delta.len() {
        let mut g = 0.0;
        if pass[i] {
            g += 2.0 / n * (poisoned.data()[i] - image.data()[i]);
            g += config.beta * d_poisoned_adv.data[i] + config.gamma * d_poisoned_fea[i];
        }
        if !mask.bits()[i % hw] {
            g += config.alpha * 2.0 / n * delta.data[i];
        }
        d_delta.data[i] = g;
    }
    generator.backward(&cache, &d_delta, grads);

    Ok(GeneratorLoss {
        rec,
        reg,
        adv_g,
        fea,
        total,
    })
}

/// Computes one sample's discriminator cross-entropy and accumulates its
/// gradient into `grads`.
pub fn disc_loss_and_gradient(
    disc: &DiscriminatorNet,
    real: &ImageSample,
    fake: &ImageSample,
    grads: &mut [f64],
) -> f64 {
    let (z_real, cache_real) = disc.forward(&Feat::from_image(real));
    let (z_fake, cache_fake) = disc.forward(&Feat::from_image(fake));
    let loss = softplus(-z_real) + softplus(z_fake);
    disc.backward(&cache_real, -sigmoid(-z_real), grads);
    disc.backward(&cache_fake, sigmoid(z_fake), grads);
    loss
}

/// One epoch's mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken this epoch (per network).
    pub steps: usize,
    pub rec: f64,
    pub reg: f64,
    pub adv_d: f64,
    pub adv_g: f64,
    pub fea: f64,
    /// Recombined from the means: `rec + a*reg + b*adv_g + g*fea`.
    pub total: f64,
}

/// A trained generator/discriminator pair with its training log.
pub struct TriggerTraining {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub log: Vec<EpochLog>,
}

/// Adversarial training of the perturbation generator.
///
/// Per batch: one discriminator step (splitting real from poisoned), then
/// one generator step on the combined objective. Batches are drawn in a
/// seed-determined order; the whole run is bit-reproducible. The embedder is
/// never updated.
#[allow(clippy::too_many_arguments)]
pub fn train_trigger_generator(
    train: &[(ImageSample, PixelMask)],
    trigger: &PatchTrigger,
    embedder: &dyn DifferentiableImageEmbedder,
    gen_config: GeneratorConfig,
    disc_config: DiscriminatorConfig,
    config: &TriggerTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TriggerTraining> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation(String::from(
            "trigger training needs at least one image",
        )));
    }
    let mut references = Vec::with_capacity(train.len());
    for (image, mask) in train {
        check_generator_dims(image, mask)?;
        references.push(compose_reference(image, trigger)?);
    }
    let embedder_before = embedder.fingerprint();

    let mut generator = GeneratorNet::new(gen_config, mix(seed, "gen"));
    let mut disc = DiscriminatorNet::new(disc_config, mix(seed, "disc"));
    let mut adam_g = Adam::new(config.learning_rate, generator.params.len());
    let mut adam_d = Adam::new(config.learning_rate, disc.params.len());
    let mut shuffle_rng = DetRng::derive(seed, "trigger-batches");
    let mut g_grads = vec![0.0; generator.params.len()];
    let mut d_grads = vec![0.0; disc.params.len()];

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut sums = [0.0f64; 5]; // rec, reg, adv_d, adv_g, fea
        let mut steps = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let b = batch.len() as f64;

            // Discriminator step on the generator's current output.
            let mut poisoned_batch = Vec::with_capacity(batch.len());
            for &i in batch {
                let (image, mask) = &train[i];
                let (poisoned, _) = apply_perturbation(&generator, image, mask).map_err(|e| {
                    Error::Numeric(format!(
                        "epoch {epoch} batch {batch_no} sample {i}: {e}"
                    ))
                })?;
                poisoned_batch.push(poisoned);
            }
            for g in &mut d_grads {
                *g = 0.0;
            }
            for (&i, poisoned) in batch.iter().zip(&poisoned_batch) {
                let adv_d = disc_loss_and_gradient(&disc, &train[i].0, poisoned, &mut d_grads);
                if !adv_d.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite discriminator loss at epoch {epoch} batch {batch_no} \
                         (samples {batch:?})"
                    )));
                }
                sums[2] += adv_d;
            }
            for g in &mut d_grads {
                *g /= b;
            }
            adam_d.step(&mut disc.params, &d_grads);

            // Generator step against the updated discriminator.
            for g in &mut g_grads {
                *g = 0.0;
            }
            for &i in batch {
                let (image, mask) = &train[i];
                let loss = sample_loss_and_gradient(
                    &generator,
                    &disc,
                    embedder,
                    image,
                    mask,
                    &references[i],
                    config,
                    &mut g_grads,
                )
                .map_err(|e| {
                    Error::Numeric(format!(
                        "epoch {epoch} batch {batch_no} sample {i} (batch {batch:?}): {e}"
                    ))
                })?;
                sums[0] += loss.rec;
                sums[1] += loss.reg;
                sums[3] += loss.adv_g;
                sums[4] += loss.fea;
            }
            for g in &mut g_grads {
                *g /= b;
            }
            adam_g.step(&mut generator.params, &g_grads);
            steps += 1;
        }
        let n = train.len() as f64;
        let (rec, reg, adv_d, adv_g, fea) =
            (sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n);
        let entry = EpochLog {
            epoch,
            steps,
            rec,
            reg,
            adv_d,
            adv_g,
            fea,
            total: rec + config.alpha * reg + config.beta * adv_g + config.gamma * fea,
        };
        log.push(entry);
        on_epoch(&entry);
    }
    debug_assert_eq!(embedder.fingerprint(), embedder_before);
    Ok(TriggerTraining {
        generator,
        discriminator: disc,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{ImageEmbedder, ToyImageEmbedder};

    fn noisy_image(h: usize, w: usize, seed: u64) -> ImageSample {
        let mut rng = DetRng::seed(seed);
        let data = (0..CHANNELS * h * w).map(|_| rng.unit_f64()).collect();
        ImageSample::from_data(h, w, data).unwrap()
    }

    fn corner_mask(h: usize, w: usize, size: usize) -> PixelMask {
        let mut m = PixelMask::empty(h, w);
        m.set_region(0, 0, size, size);
        m
    }

    #[test]
    fn patch_trigger_placement() {
        let t = PatchTrigger::checker(32, 32, 8, 2).unwrap();
        assert_eq!(t.placement(), (24, 24));
        assert_eq!(t.placement_mask().popcount(), 64);
        assert!(PatchTrigger::checker(8, 8, 9, 2).is_err());
        let d = PatchTrigger::default_for(224, 224).unwrap();
        assert_eq!(d.patch().height(), 22);
        assert_eq!(d.placement(), (202, 202));
    }

    #[test]
    fn compose_reference_blends_patch() {
        let image = noisy_image(4, 4, 1);
        let patch = ImageSample::filled(2, 2, [1.0, 0.0, 0.5]);
        let t = PatchTrigger::new(patch, 4, 4, 0, 0).unwrap();
        let out = compose_reference(&image, &t).unwrap();
        for c in 0..CHANNELS {
            for y in 0..4 {
                for x in 0..4 {
                    if y < 2 && x < 2 {
                        assert_eq!(out.get(c, y, x), [1.0, 0.0, 0.5][c]);
                    } else {
                        assert_eq!(out.get(c, y, x), image.get(c, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn compose_reference_full_cover_equals_patch() {
        let image = noisy_image(4, 4, 2);
        let patch = noisy_image(4, 4, 3);
        let t = PatchTrigger::new(patch.clone(), 4, 4, 0, 0).unwrap();
        let out = compose_reference(&image, &t).unwrap();
        assert_eq!(out.data(), patch.data());
    }

    #[test]
    fn compose_reference_rejects_dim_mismatch() {
        let t = PatchTrigger::checker(32, 32, 8, 2).unwrap();
        assert!(compose_reference(&noisy_image(16, 16, 1), &t).is_err());
    }

    #[test]
    fn zeroed_head_is_identity() {
        let mut g = GeneratorNet::new(GeneratorConfig::default(), 1);
        let head = g.layers.head;
        for v in head.weight.of_mut(&mut g.params) {
            *v = 0.0;
        }
        let image = noisy_image(8, 8, 4);
        let mask = corner_mask(8, 8, 4);
        let (poisoned, delta) = apply_perturbation(&g, &image, &mask).unwrap();
        assert!(delta.data.iter().all(|&d| d == 0.0));
        assert_eq!(poisoned.data(), image.data());
    }

    #[test]
    fn apply_perturbation_is_deterministic_and_bounded() {
        let g = GeneratorNet::new(GeneratorConfig::default(), 2);
        let image = noisy_image(8, 8, 5);
        let mask = corner_mask(8, 8, 4);
        let (p1, d1) = apply_perturbation(&g, &image, &mask).unwrap();
        let (p2, d2) = apply_perturbation(&g, &image, &mask).unwrap();
        assert_eq!(p1.data(), p2.data());
        assert_eq!(d1.data, d2.data);
        assert!(d1.data.iter().all(|d| d.abs() <= DELTA_BOUND));
        assert!(p1.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn apply_perturbation_validates_dims() {
        let g = GeneratorNet::new(GeneratorConfig::default(), 2);
        let image = noisy_image(8, 8, 5);
        assert!(apply_perturbation(&g, &image, &corner_mask(4, 4, 2)).is_err());
        let odd = noisy_image(6, 6, 5);
        assert!(apply_perturbation(&g, &odd, &corner_mask(6, 6, 2)).is_err());
    }

    #[test]
    fn generator_param_counts() {
        assert_eq!(
            GeneratorNet::new(GeneratorConfig::default(), 0).param_count(),
            14987
        );
        let fixture = GeneratorConfig {
            base_channels: 2,
            bottleneck_channels: 6,
        };
        assert_eq!(GeneratorNet::new(fixture, 0).param_count(), 903);
        assert_eq!(
            DiscriminatorNet::new(DiscriminatorConfig::default(), 0).param_count(),
            1577
        );
    }

    #[test]
    fn zero_delta_losses_vanish() {
        let image = noisy_image(8, 8, 6);
        let mask = corner_mask(8, 8, 4);
        let disc = DiscriminatorNet::new(DiscriminatorConfig::default(), 3);
        let embedder = ToyImageEmbedder::with_shape(1, 2, 8);
        let delta = Feat::zeros(CHANNELS, 8, 8);
        let losses = compute_losses(
            &image,
            &image,
            &delta,
            &mask,
            &image,
            &disc,
            &embedder,
            &TriggerTrainConfig::default(),
        )
        .unwrap();
        assert_eq!(losses.rec, 0.0);
        assert_eq!(losses.reg, 0.0);
        assert!(losses.fea.abs() < 1e-12);
    }

    #[test]
    fn delta_inside_mask_has_zero_region_loss() {
        let mut delta = Feat::zeros(CHANNELS, 8, 8);
        let mask = corner_mask(8, 8, 4);
        for c in 0..CHANNELS {
            for y in 0..4 {
                for x in 0..4 {
                    *delta.at_mut(c, y, x) = 0.3;
                }
            }
        }
        assert_eq!(region_loss(&delta, &mask), 0.0);
        *delta.at_mut(0, 7, 7) = 0.1;
        assert!(region_loss(&delta, &mask) > 0.0);
    }

    #[test]
    fn loss_total_identity() {
        let g = GeneratorNet::new(GeneratorConfig::default(), 7);
        let image = noisy_image(8, 8, 8);
        let mask = corner_mask(8, 8, 4);
        let (poisoned, delta) = apply_perturbation(&g, &image, &mask).unwrap();
        let disc = DiscriminatorNet::new(DiscriminatorConfig::default(), 9);
        let embedder = ToyImageEmbedder::with_shape(2, 2, 8);
        let cfg = TriggerTrainConfig::default();
        let l = compute_losses(&image, &poisoned, &delta, &mask, &image, &disc, &embedder, &cfg)
            .unwrap();
        let recombined = l.rec + cfg.alpha * l.reg + cfg.beta * l.adv_g + cfg.gamma * l.fea;
        assert!((l.total - recombined).abs() < 1e-10);
    }

    #[test]
    fn one_epoch_two_images_one_step() {
        let train = vec![
            (noisy_image(8, 8, 10), corner_mask(8, 8, 4)),
            (noisy_image(8, 8, 11), corner_mask(8, 8, 4)),
        ];
        let trigger = PatchTrigger::checker(8, 8, 2, 1).unwrap();
        let embedder = ToyImageEmbedder::with_shape(3, 2, 8);
        let cfg = TriggerTrainConfig {
            epochs: 1,
            ..TriggerTrainConfig::default()
        };
        let fixture = GeneratorConfig {
            base_channels: 2,
            bottleneck_channels: 6,
        };
        let out = train_trigger_generator(
            &train,
            &trigger,
            &embedder,
            fixture,
            DiscriminatorConfig { base_channels: 2 },
            &cfg,
            1,
            |_| {},
        )
        .unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].steps, 1);
        assert_eq!(out.log[0].epoch, 1);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let train = vec![
            (noisy_image(8, 8, 12), corner_mask(8, 8, 4)),
            (noisy_image(8, 8, 13), corner_mask(8, 8, 4)),
            (noisy_image(8, 8, 14), corner_mask(8, 8, 4)),
        ];
        let trigger = PatchTrigger::checker(8, 8, 2, 1).unwrap();
        let embedder = ToyImageEmbedder::with_shape(3, 2, 8);
        let cfg = TriggerTrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            ..TriggerTrainConfig::default()
        };
        let fixture = GeneratorConfig {
            base_channels: 2,
            bottleneck_channels: 6,
        };
        let run = |seed| {
            train_trigger_generator(
                &train,
                &trigger,
                &embedder,
                fixture,
                DiscriminatorConfig { base_channels: 2 },
                &cfg,
                seed,
                |_| {},
            )
            .unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.log, b.log);
        assert_eq!(a.generator.params, b.generator.params);
        let c = run(6);
        assert_ne!(a.log, c.log);
        assert_eq!(embedder.fingerprint(), ToyImageEmbedder::with_shape(3, 2, 8).fingerprint());
    }

    #[test]
    fn epoch_log_total_identity() {
        let train = vec![(noisy_image(8, 8, 15), corner_mask(8, 8, 4))];
        let trigger = PatchTrigger::checker(8, 8, 2, 1).unwrap();
        let embedder = ToyImageEmbedder::with_shape(3, 2, 8);
        let cfg = TriggerTrainConfig {
            epochs: 2,
            ..TriggerTrainConfig::default()
        };
        let fixture = GeneratorConfig {
            base_channels: 2,
            bottleneck_channels: 6,
        };
        let out = train_trigger_generator(
            &train,
            &trigger,
            &embedder,
            fixture,
            DiscriminatorConfig { base_channels: 2 },
            &cfg,
            2,
            |_| {},
        )
        .unwrap();
        for e in &out.log {
            let rhs = e.rec + cfg.alpha * e.reg + cfg.beta * e.adv_g + cfg.gamma * e.fea;
            assert!((e.total - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn poison_image_matches_apply() {
        let g = GeneratorNet::new(GeneratorConfig::default(), 3);
        let image = noisy_image(8, 8, 16);
        let mask = corner_mask(8, 8, 4);
        let (p, _) = apply_perturbation(&g, &image, &mask).unwrap();
        assert_eq!(poison_image(&g, &image, &mask).unwrap().data(), p.data());
    }

    #[test]
    fn with_params_roundtrip_and_validation() {
        let g = GeneratorNet::new(GeneratorConfig::default(), 4);
        let rebuilt = GeneratorNet::with_params(g.config(), g.params.clone()).unwrap();
        assert_eq!(rebuilt.params, g.params);
        assert!(GeneratorNet::with_params(g.config(), vec![0.0; 3]).is_err());
        let d = DiscriminatorNet::new(DiscriminatorConfig::default(), 4);
        assert!(DiscriminatorNet::with_params(d.config(), vec![0.1; d.param_count()]).is_ok());
        assert!(DiscriminatorNet::with_params(d.config(), vec![f64::NAN; d.param_count()]).is_err());
    }
}
