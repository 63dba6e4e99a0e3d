//! Desk-scale two-tower retrieval victim and the attack report built on it.
//!
//! The victim maps fixed surrogate features of each modality through a
//! small MLP tower into a shared space; training combines a bidirectional
//! label-aware contrastive term (in-batch items with overlapping labels are
//! positives) with a multi-hot label head. Retrieval ranks by common-space
//! cosine. The report aggregates benign accuracy, attack success, and
//! stealthiness in one place.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::label::LabelVector;
use crate::metrics::{image_quality, map_at_k, semantic_similarity};
use crate::nn::{Adam, Linear, ParamBuilder};
use crate::poisoner::AttackScenario;
use crate::rng::{mix, DetRng};
use crate::surrogate::{ImageEmbedder, TextEmbedder};

/// Hyperparameters of the toy victim.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimConfig {
    pub hidden_dim: usize,
    /// Shared embedding dimension both towers map into.
    pub common_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// Weight of the label-classification term.
    pub label_loss_weight: f64,
    pub seed: u64,
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig {
            hidden_dim: 64,
            common_dim: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 0.1,
            label_loss_weight: 1.0,
            seed: 0,
        }
    }
}

impl VictimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.common_dim == 0 {
            return Err(Error::Validation(String::from(
                "victim tower dimensions must be positive",
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(String::from(
                "victim epochs and batch size must be positive",
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "victim {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.label_loss_weight >= 0.0 && self.label_loss_weight.is_finite()) {
            return Err(Error::Validation(format!(
                "victim label_loss_weight must be non-negative, got {}",
                self.label_loss_weight
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Tower {
    l1: Linear,
    l2: Linear,
}

impl Tower {
    fn forward(&self, params: &[f64], input: &[f64]) -> TowerCache {
        let h_pre = self.l1.forward(params, input);
        let h: Vec<f64> = h_pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = self.l2.forward(params, &h);
        TowerCache { h_pre, h, out }
    }

    fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        cache: &TowerCache,
        grad_out: &[f64],
        grads: &mut [f64],
    ) {
        let grad_h = self.l2.backward(params, &cache.h, grad_out, grads);
        let grad_h_pre: Vec<f64> = grad_h
            .iter()
            .zip(&cache.h_pre)
            .map(|(&g, &pre)| if pre > 0.0 { g } else { 0.0 })
            .collect();
        self.l1.backward(params, input, &grad_h_pre, grads);
    }
}

struct TowerCache {
    h_pre: Vec<f64>,
    h: Vec<f64>,
    out: Vec<f64>,
}

/// Two MLP towers into a shared space plus a shared label head.
#[derive(Debug, Clone)]
pub struct ToyVictim {
    config: VictimConfig,
    image_dim: usize,
    text_dim: usize,
    categories: usize,
    image_tower: Tower,
    text_tower: Tower,
    cls: Linear,
    pub params: Vec<f64>,
}

impl ToyVictim {
    pub fn new(
        config: VictimConfig,
        image_dim: usize,
        text_dim: usize,
        categories: usize,
    ) -> Result<Self> {
        config.validate()?;
        if image_dim == 0 || text_dim == 0 || categories == 0 {
            return Err(Error::Validation(String::from(
                "victim feature dims and category count must be positive",
            )));
        }
        let mut b = ParamBuilder::new(mix(config.seed, "victim-init"));
        let image_tower = Tower {
            l1: b.linear(image_dim, config.hidden_dim),
            l2: b.linear(config.hidden_dim, config.common_dim),
        };
        let text_tower = Tower {
            l1: b.linear(text_dim, config.hidden_dim),
            l2: b.linear(config.hidden_dim, config.common_dim),
        };
        let cls = b.linear(config.common_dim, categories);
        Ok(ToyVictim {
            config,
            image_dim,
            text_dim,
            categories,
            image_tower,
            text_tower,
            cls,
            params: b.finish(),
        })
    }

    /// Rebuilds a victim around checkpointed parameters.
    pub fn with_params(
        config: VictimConfig,
        image_dim: usize,
        text_dim: usize,
        categories: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut v = ToyVictim::new(config, image_dim, text_dim, categories)?;
        if params.len() != v.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, architecture needs {}",
                params.len(),
                v.params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "checkpoint contains non-finite parameter {bad}"
            )));
        }
        v.params = params;
        Ok(v)
    }

    pub fn config(&self) -> &VictimConfig {
        &self.config
    }

    pub fn image_dim(&self) -> usize {
        self.image_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Common-space embedding of pre-extracted image features.
    pub fn embed_image_features(&self, features: &[f64]) -> Vec<f64> {
        self.image_tower.forward(&self.params, features).out
    }

    /// Common-space embedding of pre-extracted text features.
    pub fn embed_text_features(&self, features: &[f64]) -> Vec<f64> {
        self.text_tower.forward(&self.params, features).out
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

fn normalized(v: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(v);
    if n == 0.0 {
        (vec![0.0; v.len()], 0.0)
    } else {
        (v.iter().map(|x| x / n).collect(), n)
    }
}

/// VJP of `u -> u / ||u||`; zero-norm inputs get a zero gradient.
fn normalize_vjp(unit: &[f64], n: f64, grad_unit: &[f64]) -> Vec<f64> {
    if n == 0.0 {
        return vec![0.0; unit.len()];
    }
    let dot: f64 = unit.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
    unit.iter()
        .zip(grad_unit)
        .map(|(&u, &g)| (g - u * dot) / n)
        .collect()
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>())
}

/// Contrastive + label loss means of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VictimEpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub contrastive: f64,
    pub label: f64,
    pub total: f64,
}

/// Trained victim plus its per-epoch loss curve.
#[derive(Debug)]
pub struct VictimTraining {
    pub victim: ToyVictim,
    pub log: Vec<VictimEpochLog>,
}

struct BatchLosses {
    contrastive: f64,
    label: f64,
}

fn batch_step(
    victim: &ToyVictim,
    batch: &[(usize, &Vec<f64>, &Vec<f64>, &LabelVector)],
    grads: &mut [f64],
) -> BatchLosses {
    let b = batch.len();
    let params = &victim.params;
    let tau = victim.config.temperature;
    let cats = victim.categories as f64;
    let img_caches: Vec<TowerCache> = batch
        .iter()
        .map(|(_, img, _, _)| victim.image_tower.forward(params, img))
        .collect();
    let txt_caches: Vec<TowerCache> = batch
        .iter()
        .map(|(_, _, txt, _)| victim.text_tower.forward(params, txt))
        .collect();
    let img_units: Vec<(Vec<f64>, f64)> = img_caches.iter().map(|c| normalized(&c.out)).collect();
    let txt_units: Vec<(Vec<f64>, f64)> = txt_caches.iter().map(|c| normalized(&c.out)).collect();

    // In-batch similarity matrix, image rows x text columns.
    let mut sim = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            let dot: f64 = img_units[i]
                .0
                .iter()
                .zip(&txt_units[j].0)
                .map(|(a, c)| a * c)
                .sum();
            sim[i * b + j] = dot / tau;
        }
    }
    // Label-aware positives: item j is a positive for anchor i when their
    // label sets intersect. The diagonal is always positive (an instance
    // shares its own labels), so every anchor has at least one.
    let mut positive = vec![false; b * b];
    for i in 0..b {
        for j in 0..b {
            positive[i * b + j] = i == j || batch[i].3.intersects(batch[j].3);
        }
    }

    // Multi-positive contrastive, averaged over each anchor's positives and
    // over both retrieval directions.
    let mut contrastive = 0.0;
    let mut g_sim = vec![0.0; b * b];
    for i in 0..b {
        let row = &sim[i * b..(i + 1) * b];
        let lse = logsumexp(row);
        let npos = (0..b).filter(|&j| positive[i * b + j]).count() as f64;
        for j in 0..b {
            let pos = positive[i * b + j];
            if pos {
                contrastive += (lse - row[j]) / npos;
            }
            let p = libm::exp(row[j] - lse);
            let target = if pos { 1.0 / npos } else { 0.0 };
            g_sim[i * b + j] += (p - target) / (2.0 * b as f64);
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|r| sim[r * b + j]).collect();
        let lse = logsumexp(&col);
        let npos = (0..b).filter(|&i| positive[i * b + j]).count() as f64;
        for i in 0..b {
            let pos = positive[i * b + j];
            if pos {
                contrastive += (lse - col[i]) / npos;
            }
            let q = libm::exp(col[i] - lse);
            let target = if pos { 1.0 / npos } else { 0.0 };
            g_sim[i * b + j] += (q - target) / (2.0 * b as f64);
        }
    }
    contrastive /= 2.0 * b as f64;

    let mut label = 0.0;
    let mut grad_img_out = vec![vec![0.0; victim.config.common_dim]; b];
    let mut grad_txt_out = vec![vec![0.0; victim.config.common_dim]; b];

    // Contrastive gradient through the normalization.
    for i in 0..b {
        let mut g_unit = vec![0.0; victim.config.common_dim];
        for j in 0..b {
            let coeff = g_sim[i * b + j] / tau;
            for (gu, &t) in g_unit.iter_mut().zip(&txt_units[j].0) {
                *gu += coeff * t;
            }
        }
        grad_img_out[i] = normalize_vjp(&img_units[i].0, img_units[i].1, &g_unit);
    }
    for j in 0..b {
        let mut g_unit = vec![0.0; victim.config.common_dim];
        for i in 0..b {
            let coeff = g_sim[i * b + j] / tau;
            for (gu, &s) in g_unit.iter_mut().zip(&img_units[i].0) {
                *gu += coeff * s;
            }
        }
        let g = normalize_vjp(&txt_units[j].0, txt_units[j].1, &g_unit);
        for (acc, v) in grad_txt_out[j].iter_mut().zip(g) {
            *acc += v;
        }
    }

    // Label head on both towers' outputs, multi-hot BCE.
    let w = victim.config.label_loss_weight;
    let denom = 2.0 * b as f64 * cats;
    for i in 0..b {
        let y = batch[i].3.to_f64();
        for (cache, grad_out) in [
            (&img_caches[i], &mut grad_img_out[i]),
            (&txt_caches[i], &mut grad_txt_out[i]),
        ] {
            let logits = victim.cls.forward(params, &cache.out);
            let mut g_logits = vec![0.0; logits.len()];
            for c in 0..logits.len() {
                let z = logits[c];
                label += y[c] * crate::nn::softplus(-z) + (1.0 - y[c]) * crate::nn::softplus(z);
                g_logits[c] = w * (crate::nn::sigmoid(z) - y[c]) / denom;
            }
            let g_in = victim.cls.backward(params, &cache.out, &g_logits, grads);
            for (acc, v) in grad_out.iter_mut().zip(g_in) {
                *acc += v;
            }
        }
    }
    let label_mean = label / denom;

    for i in 0..b {
        victim.image_tower.backward(
            params,
            batch[i].1,
            &img_caches[i],
            &grad_img_out[i],
            grads,
        );
        victim.text_tower.backward(
            params,
            batch[i].2,
            &txt_caches[i],
            &grad_txt_out[i],
            grads,
        );
    }
    BatchLosses {
        contrastive,
        label: label_mean,
    }
}

/// Trains the toy victim on surrogate features of `train`.
///
/// Features are extracted once up front; training is then pure ndarray
/// arithmetic and bit-reproducible for a given seed. A non-finite loss
/// aborts with the epoch and batch in the error.
pub fn train_toy_victim(
    train: &Dataset,
    image_embedder: &dyn ImageEmbedder,
    text_embedder: &dyn TextEmbedder,
    config: &VictimConfig,
    mut on_epoch: impl FnMut(&VictimEpochLog),
) -> Result<VictimTraining> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation(String::from(
            "victim training set is empty",
        )));
    }
    let n = train.len();
    let mut image_feats = Vec::with_capacity(n);
    let mut text_feats = Vec::with_capacity(n);
    for inst in &train.instances {
        image_feats.push(checked_features(
            image_embedder.embed_image(&inst.image)?.values(),
            "image",
            &inst.id,
        )?);
        text_feats.push(checked_features(
            text_embedder.embed_text(&inst.text)?.values(),
            "text",
            &inst.id,
        )?);
    }
    let mut victim = ToyVictim::new(
        config.clone(),
        image_embedder.dim(),
        text_embedder.dim(),
        train.categories,
    )?;
    let mut adam = Adam::new(config.learning_rate, victim.params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = DetRng::derive(config.seed, "victim-batches");
    let mut grads = vec![0.0; victim.params.len()];
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut steps = 0usize;
        let mut con_sum = 0.0;
        let mut lab_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(usize, &Vec<f64>, &Vec<f64>, &LabelVector)> = chunk
                .iter()
                .map(|&i| (i, &image_feats[i], &text_feats[i], &train.instances[i].label))
                .collect();
            grads.iter_mut().for_each(|g| *g = 0.0);
            let losses = batch_step(&victim, &batch, &mut grads);
            if !losses.contrastive.is_finite() || !losses.label.is_finite() {
                return Err(Error::Numeric(format!(
                    "victim loss diverged at epoch {epoch}, batch {batch_idx}: \
                     contrastive {}, label {}",
                    losses.contrastive, losses.label
                )));
            }
            adam.step(&mut victim.params, &grads);
            steps += 1;
            con_sum += losses.contrastive * chunk.len() as f64;
            lab_sum += losses.label * chunk.len() as f64;
        }
        let contrastive = con_sum / n as f64;
        let label = lab_sum / n as f64;
        let entry = VictimEpochLog {
            epoch,
            steps,
            contrastive,
            label,
            total: contrastive + config.label_loss_weight * label,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(VictimTraining { victim, log })
}

fn checked_features(values: &[f64], modality: &str, id: &str) -> Result<Vec<f64>> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Backend(format!(
            "non-finite {modality} feature {bad} for instance {id:?}"
        )));
    }
    Ok(values.to_vec())
}

/// One instance's surrogate features plus its label, ready for retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub image_features: Vec<f64>,
    pub text_features: Vec<f64>,
    pub label: LabelVector,
}

/// Extracts surrogate features for every instance of a dataset.
pub fn embed_dataset(
    dataset: &Dataset,
    image_embedder: &dyn ImageEmbedder,
    text_embedder: &dyn TextEmbedder,
) -> Result<Vec<EvalItem>> {
    dataset
        .instances
        .iter()
        .map(|inst| {
            Ok(EvalItem {
                id: inst.id.clone(),
                image_features: checked_features(
                    image_embedder.embed_image(&inst.image)?.values(),
                    "image",
                    &inst.id,
                )?,
                text_features: checked_features(
                    text_embedder.embed_text(&inst.text)?.values(),
                    "text",
                    &inst.id,
                )?,
                label: inst.label.clone(),
            })
        })
        .collect()
}

/// Retrieval direction: which modality queries which.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

fn common_embedding(victim: &ToyVictim, item: &EvalItem, image_side: bool) -> Vec<f64> {
    if image_side {
        victim.embed_image_features(&item.image_features)
    } else {
        victim.embed_text_features(&item.text_features)
    }
}

/// Mean AP@k under an arbitrary relevance predicate.
///
/// The database is ranked per query by common-space cosine, ties broken
/// by database id ascending.
pub fn retrieval_map(
    victim: &ToyVictim,
    queries: &[EvalItem],
    database: &[EvalItem],
    direction: Direction,
    k: usize,
    mut relevant: impl FnMut(&EvalItem, &EvalItem) -> bool,
) -> Result<f64> {
    if database.is_empty() {
        return Err(Error::Validation(String::from(
            "retrieval database is empty",
        )));
    }
    let query_is_image = direction == Direction::ImageToText;
    let db_embs: Vec<(Vec<f64>, f64)> = database
        .iter()
        .map(|item| normalized(&common_embedding(victim, item, !query_is_image)))
        .collect();
    let mut lists = Vec::with_capacity(queries.len());
    for q in queries {
        let (q_unit, _) = normalized(&common_embedding(victim, q, query_is_image));
        let scores: Vec<f64> = db_embs
            .iter()
            .map(|(d_unit, _)| q_unit.iter().zip(d_unit).map(|(a, b)| a * b).sum())
            .collect();
        let mut order: Vec<usize> = (0..database.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| database[a].id.cmp(&database[b].id))
        });
        lists.push(
            order
                .iter()
                .map(|&i| relevant(q, &database[i]))
                .collect::<Vec<bool>>(),
        );
    }
    map_at_k(&lists, k)
}

/// Label-share MAP@k: a database item is relevant iff labels intersect.
pub fn benign_map(
    victim: &ToyVictim,
    queries: &[EvalItem],
    database: &[EvalItem],
    direction: Direction,
    k: usize,
) -> Result<f64> {
    retrieval_map(victim, queries, database, direction, k, |q, d| {
        q.label.intersects(&d.label)
    })
}

/// Target-label t-MAP@k: a database item is relevant iff it carries the
/// target label.
pub fn targeted_map(
    victim: &ToyVictim,
    queries: &[EvalItem],
    database: &[EvalItem],
    direction: Direction,
    k: usize,
    target: &LabelVector,
) -> Result<f64> {
    retrieval_map(victim, queries, database, direction, k, |_, d| {
        d.label.intersects(target)
    })
}

/// Benign accuracy, attack success, and stealthiness in one summary.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub scenario: AttackScenario,
    pub k: usize,
    pub ba_i2t: f64,
    pub ba_t2i: f64,
    pub ba_avg: f64,
    /// t-MAP of triggered queries in the scenario's attack direction.
    pub asr: f64,
    pub psnr_avg: f64,
    pub ssim_avg: f64,
    pub mse_avg: f64,
    pub sbert_avg: f64,
    /// Set when a dual-key attack was scored with the image-query
    /// convention because retrieval has no joint-query protocol.
    pub dual_key_scored_as_v2l: bool,
}

/// Evaluates a victim against clean and triggered copies of the query set.
///
/// Benign accuracy uses the clean queries with label-share relevance in
/// both directions; attack success is the t-MAP of the triggered queries
/// in the direction the scenario attacks (image queries for V2L and
/// dual-key, text queries for L2V). Stealth aggregates compare each
/// triggered query against its clean original. Triggered queries must
/// differ from clean ones only in the modality the scenario poisons.
pub fn attack_report(
    victim: &ToyVictim,
    clean_queries: &Dataset,
    triggered_queries: &Dataset,
    database: &Dataset,
    scenario: AttackScenario,
    target: &LabelVector,
    k: usize,
    image_embedder: &dyn ImageEmbedder,
    text_embedder: &dyn TextEmbedder,
) -> Result<AttackReport> {
    if victim.image_dim() != image_embedder.dim() || victim.text_dim() != text_embedder.dim() {
        return Err(Error::Validation(format!(
            "victim was trained on {}-d image / {}-d text features, embedders give {} / {}",
            victim.image_dim(),
            victim.text_dim(),
            image_embedder.dim(),
            text_embedder.dim()
        )));
    }
    if clean_queries.len() != triggered_queries.len() {
        return Err(Error::Validation(format!(
            "clean and triggered query sets differ in size: {} vs {}",
            clean_queries.len(),
            triggered_queries.len()
        )));
    }
    if k == 0 {
        return Err(Error::Validation(String::from("k must be at least 1")));
    }
    for (c, t) in clean_queries
        .instances
        .iter()
        .zip(&triggered_queries.instances)
    {
        if c.id != t.id {
            return Err(Error::Validation(format!(
                "query sets are misaligned: {:?} vs {:?}",
                c.id, t.id
            )));
        }
        if !scenario.poisons_text() && c.text != t.text {
            return Err(Error::Validation(format!(
                "scenario {} leaves text clean but triggered query {:?} differs in text",
                scenario.name(),
                c.id
            )));
        }
        if !scenario.poisons_images() && c.image != t.image {
            return Err(Error::Validation(format!(
                "scenario {} leaves images clean but triggered query {:?} differs in image",
                scenario.name(),
                c.id
            )));
        }
    }
    let clean_items = embed_dataset(clean_queries, image_embedder, text_embedder)?;
    let triggered_items = embed_dataset(triggered_queries, image_embedder, text_embedder)?;
    let db_items = embed_dataset(database, image_embedder, text_embedder)?;

    let ba_i2t = benign_map(victim, &clean_items, &db_items, Direction::ImageToText, k)?;
    let ba_t2i = benign_map(victim, &clean_items, &db_items, Direction::TextToImage, k)?;
    let attack_direction = match scenario {
        AttackScenario::V2L | AttackScenario::DualKey => Direction::ImageToText,
        AttackScenario::L2V => Direction::TextToImage,
    };
    let asr = targeted_map(
        victim,
        &triggered_items,
        &db_items,
        attack_direction,
        k,
        target,
    )?;

    let n = clean_queries.len() as f64;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut sbert_sum = 0.0;
    for (c, t) in clean_queries
        .instances
        .iter()
        .zip(&triggered_queries.instances)
    {
        let q = image_quality(&c.image, &t.image)?;
        psnr_sum += q.psnr;
        ssim_sum += q.ssim;
        mse_sum += q.mse;
        sbert_sum += semantic_similarity(&c.text, &t.text, text_embedder)?;
    }
    Ok(AttackReport {
        scenario,
        k,
        ba_i2t,
        ba_t2i,
        ba_avg: (ba_i2t + ba_t2i) / 2.0,
        asr,
        psnr_avg: psnr_sum / n,
        ssim_avg: ssim_sum / n,
        mse_avg: mse_sum / n,
        sbert_avg: sbert_sum / n,
        dual_key_scored_as_v2l: scenario == AttackScenario::DualKey,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PairedInstance;
    use crate::image::ImageSample;
    use crate::surrogate::{ToyImageEmbedder, ToyTextEmbedder};
    use crate::text::TextSample;
    use alloc::string::ToString;

    const CLASS_WORDS: [&str; 4] = ["cat", "dog", "car", "boat"];
    const CLASS_FILLS: [[f64; 3]; 4] = [
        [0.9, 0.1, 0.1],
        [0.1, 0.9, 0.1],
        [0.1, 0.1, 0.9],
        [0.8, 0.8, 0.1],
    ];

    fn classed_instance(id: &str, class: usize, noise_seed: u64) -> PairedInstance {
        let mut rng = DetRng::seed(noise_seed);
        let mut image = ImageSample::filled(8, 8, CLASS_FILLS[class]);
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    let v = image.get(c, y, x) + rng.range_f64(-0.05, 0.05);
                    image.set(c, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        PairedInstance {
            id: id.to_string(),
            image,
            text: TextSample::new(&format!("a small {} near the water .", CLASS_WORDS[class]))
                .unwrap(),
            label: LabelVector::single(4, class).unwrap(),
        }
    }

    fn classed_dataset(n: usize, seed: u64) -> Dataset {
        Dataset {
            instances: (0..n)
                .map(|i| classed_instance(&format!("cx{i:03}"), i % 4, mix(seed, &format!("{i}"))))
                .collect(),
            categories: 4,
            split: None,
        }
    }

    fn embedders() -> (ToyImageEmbedder, ToyTextEmbedder) {
        (ToyImageEmbedder::new(5), ToyTextEmbedder::new(5))
    }

    fn quick_config() -> VictimConfig {
        VictimConfig {
            epochs: 12,
            batch_size: 16,
            seed: 7,
            ..VictimConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = VictimConfig::default();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        c = VictimConfig::default();
        c.epochs = 0;
        assert!(c.validate().is_err());
        c = VictimConfig::default();
        c.label_loss_weight = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let train = classed_dataset(32, 1);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 3,
            ..quick_config()
        };
        let a = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let b = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        assert_eq!(a.victim.params, b.victim.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn one_epoch_logs_expected_steps() {
        let train = classed_dataset(32, 2);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 1,
            batch_size: 8,
            ..quick_config()
        };
        let mut seen = Vec::new();
        let out = train_toy_victim(&train, &ie, &te, &config, |e| seen.push(*e)).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].steps, 4);
        assert_eq!(seen, out.log);
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let train = Dataset {
            instances: Vec::new(),
            categories: 4,
            split: None,
        };
        let (ie, te) = embedders();
        assert!(train_toy_victim(&train, &ie, &te, &quick_config(), |_| {}).is_err());
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let train = classed_dataset(48, 3);
        let (ie, te) = embedders();
        let out = train_toy_victim(&train, &ie, &te, &quick_config(), |_| {}).unwrap();
        let first = out.log.first().unwrap().total;
        let last = out.log.last().unwrap().total;
        assert!(last < first, "loss should drop: {first} -> {last}");
    }

    #[test]
    fn victim_gradients_match_finite_differences() {
        let train = classed_dataset(6, 9);
        let (ie, te) = embedders();
        let config = VictimConfig {
            hidden_dim: 5,
            common_dim: 4,
            batch_size: 6,
            seed: 3,
            ..VictimConfig::default()
        };
        let items = embed_dataset(&train, &ie, &te).unwrap();
        let victim = ToyVictim::new(config.clone(), ie.dim(), te.dim(), 4).unwrap();
        let batch: Vec<(usize, &Vec<f64>, &Vec<f64>, &LabelVector)> = items
            .iter()
            .enumerate()
            .map(|(i, it)| (i, &it.image_features, &it.text_features, &it.label))
            .collect();
        let mut grads = vec![0.0; victim.param_count()];
        let losses = batch_step(&victim, &batch, &mut grads);
        let total = |v: &ToyVictim| {
            let mut scratch = vec![0.0; v.param_count()];
            let l = batch_step(v, &batch, &mut scratch);
            l.contrastive + config.label_loss_weight * l.label
        };
        assert!(losses.contrastive.is_finite());
        let h = 1e-6;
        let mut rng = DetRng::seed(17);
        for _ in 0..40 {
            let p = rng.index(victim.param_count());
            let mut plus = victim.clone();
            plus.params[p] += h;
            let mut minus = victim.clone();
            minus.params[p] -= h;
            let fd = (total(&plus) - total(&minus)) / (2.0 * h);
            assert!(
                (grads[p] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {p}: analytic {} vs fd {fd}",
                grads[p]
            );
        }
    }

    #[test]
    fn trained_victim_beats_shuffled_control() {
        let train = classed_dataset(64, 4);
        let queries = classed_dataset(16, 5);
        let (ie, te) = embedders();
        let config = quick_config();
        let trained = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        // Control: break the label and pairing structure so retrieval can
        // learn nothing; its MAP estimates the label-prior baseline.
        let mut shuffled = train.clone();
        let mut labels: Vec<LabelVector> =
            shuffled.instances.iter().map(|i| i.label.clone()).collect();
        DetRng::seed(99).shuffle(&mut labels);
        let mut texts: Vec<TextSample> =
            shuffled.instances.iter().map(|i| i.text.clone()).collect();
        DetRng::seed(101).shuffle(&mut texts);
        for ((inst, label), text) in shuffled.instances.iter_mut().zip(labels).zip(texts) {
            inst.label = label;
            inst.text = text;
        }
        let control = train_toy_victim(&shuffled, &ie, &te, &config, |_| {}).unwrap();
        let q_items = embed_dataset(&queries, &ie, &te).unwrap();
        let db_items = embed_dataset(&train, &ie, &te).unwrap();
        let good = benign_map(
            &trained.victim,
            &q_items,
            &db_items,
            Direction::ImageToText,
            10,
        )
        .unwrap();
        let bad = benign_map(
            &control.victim,
            &q_items,
            &db_items,
            Direction::ImageToText,
            10,
        )
        .unwrap();
        assert!(
            good > bad + 0.2,
            "trained MAP {good} should clear control MAP {bad}"
        );
        assert!(good > 0.5, "trained MAP {good} should be well above prior");
    }

    #[test]
    fn nan_features_are_rejected_at_extraction() {
        struct NanEmbedder;
        impl ImageEmbedder for NanEmbedder {
            fn dim(&self) -> usize {
                4
            }
            fn embed_image(&self, _: &ImageSample) -> Result<crate::surrogate::Embedding> {
                Ok(crate::surrogate::Embedding::new(vec![f64::NAN; 4]))
            }
            fn fingerprint(&self) -> u64 {
                0
            }
        }
        let train = classed_dataset(8, 6);
        let (_, te) = embedders();
        let err = train_toy_victim(&train, &NanEmbedder, &te, &quick_config(), |_| {}).unwrap_err();
        let Error::Backend(msg) = err else {
            panic!("expected backend error");
        };
        assert!(msg.contains(&train.instances[0].id));
    }

    #[test]
    fn divergence_aborts_with_epoch_diagnostics() {
        let train = classed_dataset(8, 6);
        let (ie, te) = embedders();
        let config = VictimConfig {
            learning_rate: 1e200,
            epochs: 2,
            batch_size: 4,
            ..quick_config()
        };
        let err = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap_err();
        let Error::Numeric(msg) = err else {
            panic!("expected numeric error");
        };
        assert!(msg.contains("epoch"), "got: {msg}");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_behavior() {
        let train = classed_dataset(16, 7);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 2,
            ..quick_config()
        };
        let out = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let restored = ToyVictim::with_params(
            config,
            ie.dim(),
            te.dim(),
            4,
            out.victim.params.clone(),
        )
        .unwrap();
        let feats = embed_dataset(&train, &ie, &te).unwrap();
        assert_eq!(
            out.victim.embed_image_features(&feats[0].image_features),
            restored.embed_image_features(&feats[0].image_features)
        );
        assert!(ToyVictim::with_params(
            restored.config().clone(),
            ie.dim(),
            te.dim(),
            4,
            vec![0.0; 3]
        )
        .is_err());
    }

    #[test]
    fn all_target_database_gives_perfect_targeted_map() {
        let train = classed_dataset(16, 8);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 1,
            ..quick_config()
        };
        let out = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let mut db = classed_dataset(12, 9);
        let target = LabelVector::single(4, 2).unwrap();
        for inst in &mut db.instances {
            inst.label = target.clone();
        }
        let q_items = embed_dataset(&train, &ie, &te).unwrap();
        let db_items = embed_dataset(&db, &ie, &te).unwrap();
        let t = targeted_map(
            &out.victim,
            &q_items,
            &db_items,
            Direction::ImageToText,
            5,
            &target,
        )
        .unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn ranking_ties_break_by_database_id() {
        let config = VictimConfig {
            epochs: 1,
            ..quick_config()
        };
        let victim = ToyVictim::new(config, 4, 4, 2).unwrap();
        let item = |id: &str, label: usize| EvalItem {
            id: id.to_string(),
            image_features: vec![1.0, 0.0, 0.0, 0.0],
            text_features: vec![1.0, 0.0, 0.0, 0.0],
            label: LabelVector::single(2, label).unwrap(),
        };
        // Identical features force equal scores; ids must decide the order.
        let queries = vec![item("q", 0)];
        let db = vec![item("b", 1), item("a", 0), item("c", 1)];
        let m = retrieval_map(
            &victim,
            &queries,
            &db,
            Direction::ImageToText,
            3,
            |q, d| q.label.intersects(&d.label),
        )
        .unwrap();
        // Tie-broken order is a, b, c; only "a" is relevant and ranks first.
        assert_eq!(m, 1.0);
    }

    #[test]
    fn report_flags_misaligned_or_inconsistent_queries() {
        let train = classed_dataset(16, 10);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 1,
            ..quick_config()
        };
        let out = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let queries = classed_dataset(8, 11);
        let mut triggered = queries.clone();
        triggered.instances[0].text = TextSample::new("a tampered caption .").unwrap();
        let target = LabelVector::single(4, 1).unwrap();
        let err = attack_report(
            &out.victim,
            &queries,
            &triggered,
            &train,
            AttackScenario::V2L,
            &target,
            5,
            &ie,
            &te,
        )
        .unwrap_err();
        let Error::Validation(msg) = err else {
            panic!("expected validation error");
        };
        assert!(msg.contains("text"));
    }

    #[test]
    fn report_on_identical_queries_is_fully_benign() {
        let train = classed_dataset(24, 12);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 4,
            ..quick_config()
        };
        let out = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let queries = classed_dataset(8, 13);
        let target = LabelVector::single(4, 0).unwrap();
        let report = attack_report(
            &out.victim,
            &queries,
            &queries,
            &train,
            AttackScenario::V2L,
            &target,
            5,
            &ie,
            &te,
        )
        .unwrap();
        assert!(report.psnr_avg.is_infinite());
        assert_eq!(report.ssim_avg, 1.0);
        assert_eq!(report.mse_avg, 0.0);
        assert!((report.sbert_avg - 1.0).abs() < 1e-12);
        assert!((report.ba_avg - (report.ba_i2t + report.ba_t2i) / 2.0).abs() < 1e-15);
        assert!(!report.dual_key_scored_as_v2l);
        assert!(report.asr >= 0.0 && report.asr <= 1.0);
    }

    #[test]
    fn target_absent_from_database_zeroes_asr() {
        let train = classed_dataset(16, 14);
        let (ie, te) = embedders();
        let config = VictimConfig {
            epochs: 1,
            ..quick_config()
        };
        let out = train_toy_victim(&train, &ie, &te, &config, |_| {}).unwrap();
        let queries = classed_dataset(4, 15);
        let mut db = classed_dataset(12, 16);
        for inst in &mut db.instances {
            inst.label = LabelVector::single(4, 0).unwrap();
        }
        let target = LabelVector::single(4, 3).unwrap();
        let report = attack_report(
            &out.victim,
            &queries,
            &queries,
            &db,
            AttackScenario::L2V,
            &target,
            5,
            &ie,
            &te,
        )
        .unwrap();
        assert_eq!(report.asr, 0.0);
    }
}
