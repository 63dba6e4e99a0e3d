//! Scenario-aware training-set poisoning.
//!
//! A plan draws victims uniformly without replacement; applying it swaps
//! each victim's image and/or text for the triggered version, replaces its
//! label with the target, and leaves everything else bit-identical. Victims
//! whose text cannot carry a trigger are transparently resampled from the
//! rest of the shuffled permutation so the poisoned count stays exact.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::PixelMask;
use crate::label::LabelVector;
use crate::mining::KeywordSelection;
use crate::rng::DetRng;
use crate::surrogate::{CandidateOracle, TextEmbedder};
use crate::text::TextSample;
use crate::textual_trigger::{greedy_substitute, SubstitutionTrace, TextPoisonConfig};
use crate::visual_trigger::{poison_image, GeneratorNet};

/// Which modality carries the trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackScenario {
    /// Poison images; the backdoor fires on triggered image queries.
    V2L,
    /// Poison texts; the backdoor fires on triggered text queries.
    L2V,
    /// Poison both modalities of the same victim instances.
    DualKey,
}

impl AttackScenario {
    pub fn poisons_images(self) -> bool {
        matches!(self, AttackScenario::V2L | AttackScenario::DualKey)
    }

    pub fn poisons_text(self) -> bool {
        matches!(self, AttackScenario::L2V | AttackScenario::DualKey)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackScenario::V2L => "v2l",
            AttackScenario::L2V => "l2v",
            AttackScenario::DualKey => "dual-key",
        }
    }
}

/// Modality actually poisoned in one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoisonModality {
    Image,
    Text,
    Both,
}

impl PoisonModality {
    pub fn name(self) -> &'static str {
        match self {
            PoisonModality::Image => "image",
            PoisonModality::Text => "text",
            PoisonModality::Both => "both",
        }
    }
}

/// A deterministic choice of victims plus the fallback pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonPlan {
    pub target_label: LabelVector,
    pub ratio: f64,
    pub seed: u64,
    pub scenario: AttackScenario,
    /// Victims in draw order, `floor(ratio * N)` of them.
    pub victim_ids: Vec<String>,
    /// Rest of the shuffled permutation, consumed on fallback.
    pub reserve_ids: Vec<String>,
}

/// Per-instance mining output the poisoner consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningArtifacts {
    pub mask: PixelMask,
    pub keywords: KeywordSelection,
}

/// Provenance of one poisoned instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonRecord {
    pub id: String,
    pub modality: PoisonModality,
    pub original_label: LabelVector,
    pub assigned_label: LabelVector,
    /// Mask applied to the image, when the image was poisoned.
    pub mask: Option<PixelMask>,
    /// Substitution trace, when the text was poisoned.
    pub trace: Option<SubstitutionTrace>,
    /// Id of the unpoisonable victim this instance replaced, if any.
    pub fallback_of: Option<String>,
}

/// Draws `floor(ratio * N)` victims uniformly without replacement.
///
/// The draw shuffles the sorted id list, so the plan depends only on the
/// id set and the seed, not on manifest ordering. Instances already
/// labeled with the target stay eligible.
pub fn plan_poison(
    train: &Dataset,
    target: &LabelVector,
    ratio: f64,
    scenario: AttackScenario,
    seed: u64,
) -> Result<PoisonPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!(
            "poison ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if target.count() != 1 {
        return Err(Error::Validation(format!(
            "target label must have exactly one bit set, got {}",
            target.count()
        )));
    }
    if target.categories() != train.categories {
        return Err(Error::Validation(format!(
            "target label width {} does not match dataset categories {}",
            target.categories(),
            train.categories
        )));
    }
    let count = (ratio * train.len() as f64) as usize;
    if count == 0 {
        return Err(Error::Validation(format!(
            "ratio too small for dataset: floor({ratio} * {}) = 0",
            train.len()
        )));
    }
    let mut ids: Vec<String> = train.instances.iter().map(|i| i.id.clone()).collect();
    ids.sort_unstable();
    let mut rng = DetRng::derive(seed, "poison-victims");
    rng.shuffle(&mut ids);
    let reserve_ids = ids.split_off(count);
    Ok(PoisonPlan {
        target_label: target.clone(),
        ratio,
        seed,
        scenario,
        victim_ids: ids,
        reserve_ids,
    })
}

/// Replaces the whole label with the single-bit target.
pub fn flip_label(y: &LabelVector, target: &LabelVector) -> Result<LabelVector> {
    if target.count() != 1 {
        return Err(Error::Validation(format!(
            "target label must have exactly one bit set, got {}",
            target.count()
        )));
    }
    if target.categories() != y.categories() {
        return Err(Error::Validation(format!(
            "label widths differ: {} vs {}",
            y.categories(),
            target.categories()
        )));
    }
    Ok(target.clone())
}

enum Poisoned {
    Done {
        image: Option<crate::image::ImageSample>,
        text: Option<(TextSample, SubstitutionTrace)>,
    },
    Unpoisonable,
}

fn poison_one(
    plan: &PoisonPlan,
    train: &Dataset,
    id: &str,
    artifacts: &BTreeMap<String, MiningArtifacts>,
    generator: Option<&GeneratorNet>,
    text_config: &TextPoisonConfig,
    text_embedder: &dyn TextEmbedder,
    oracle: &dyn CandidateOracle,
) -> Result<Poisoned> {
    let pos = train
        .position(id)
        .ok_or_else(|| Error::Validation(format!("victim id {id:?} not found in train split")))?;
    let instance = &train.instances[pos];
    let art = artifacts.get(id).ok_or_else(|| {
        Error::Validation(format!("mining artifacts missing for victim {id:?}"))
    })?;
    let text = if plan.scenario.poisons_text() {
        if art.keywords.is_empty() {
            return Ok(Poisoned::Unpoisonable);
        }
        Some(greedy_substitute(
            &instance.text,
            &art.keywords,
            text_config,
            text_embedder,
            oracle,
        )?)
    } else {
        None
    };
    let image = if plan.scenario.poisons_images() {
        let generator = generator.ok_or_else(|| {
            Error::Validation(String::from(
                "scenario poisons images but no trained generator was supplied",
            ))
        })?;
        Some(poison_image(generator, &instance.image, &art.mask)?)
    } else {
        None
    };
    Ok(Poisoned::Done { image, text })
}

/// Applies a plan, producing the mixed training set and its provenance.
///
/// Non-victims come through bit-identical and in the original order; the
/// record list is sorted by id and always has exactly `|victim_ids|`
/// entries. An unpoisonable victim (text scenario, no keywords) is skipped
/// and the next unused id from the reserve pool takes its place; running
/// out of reserves is an error.
pub fn apply_poison(
    plan: &PoisonPlan,
    train: &Dataset,
    artifacts: &BTreeMap<String, MiningArtifacts>,
    generator: Option<&GeneratorNet>,
    text_config: &TextPoisonConfig,
    text_embedder: &dyn TextEmbedder,
    oracle: &dyn CandidateOracle,
) -> Result<(Dataset, Vec<PoisonRecord>)> {
    text_config.validate()?;
    if plan.scenario.poisons_images() && generator.is_none() {
        return Err(Error::Validation(String::from(
            "scenario poisons images but no trained generator was supplied",
        )));
    }
    let modality = match plan.scenario {
        AttackScenario::V2L => PoisonModality::Image,
        AttackScenario::L2V => PoisonModality::Text,
        AttackScenario::DualKey => PoisonModality::Both,
    };
    let mut poisoned = train.clone();
    let mut records: Vec<PoisonRecord> = Vec::with_capacity(plan.victim_ids.len());
    let mut reserves = plan.reserve_ids.iter();
    let mut queue: Vec<(String, Option<String>)> = plan
        .victim_ids
        .iter()
        .map(|id| (id.clone(), None))
        .collect();
    let mut next = 0usize;
    while next < queue.len() {
        let (id, fallback_of) = queue[next].clone();
        next += 1;
        match poison_one(
            plan,
            train,
            &id,
            artifacts,
            generator,
            text_config,
            text_embedder,
            oracle,
        )? {
            Poisoned::Done { image, text } => {
                let pos = train.position(&id).expect("checked by poison_one");
                let instance = &mut poisoned.instances[pos];
                let mut mask_used = None;
                if let Some(img) = image {
                    instance.image = img;
                    mask_used = Some(artifacts[&id].mask.clone());
                }
                let mut trace_used = None;
                if let Some((new_text, trace)) = text {
                    instance.text = new_text;
                    trace_used = Some(trace);
                }
                let original_label = instance.label.clone();
                instance.label = flip_label(&instance.label, &plan.target_label)?;
                records.push(PoisonRecord {
                    id: id.clone(),
                    modality,
                    original_label,
                    assigned_label: plan.target_label.clone(),
                    mask: mask_used,
                    trace: trace_used,
                    fallback_of,
                });
            }
            Poisoned::Unpoisonable => {
                let replacement = reserves.next().ok_or_else(|| {
                    Error::Validation(format!(
                        "victim {id:?} is unpoisonable and the reserve pool is exhausted"
                    ))
                })?;
                queue.push((replacement.clone(), Some(id)));
            }
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((poisoned, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PairedInstance;
    use crate::image::ImageSample;
    use crate::surrogate::{LexiconOracle, ToyTextEmbedder};
    use crate::visual_trigger::GeneratorConfig;
    use alloc::string::ToString;

    fn instance(id: &str, text: &str, label_bit: usize, categories: usize) -> PairedInstance {
        let mut rng = DetRng::derive(7, id);
        let data = (0..3 * 8 * 8).map(|_| rng.unit_f64()).collect();
        PairedInstance {
            id: id.to_string(),
            image: ImageSample::from_data(8, 8, data).unwrap(),
            text: TextSample::new(text).unwrap(),
            label: LabelVector::single(categories, label_bit).unwrap(),
        }
    }

    fn toy_train(n: usize) -> Dataset {
        let categories = 4;
        let instances = (0..n)
            .map(|i| {
                instance(
                    &format!("inst{i:03}"),
                    "a big cat sits on the mat .",
                    i % categories,
                    categories,
                )
            })
            .collect();
        Dataset {
            instances,
            categories,
            split: None,
        }
    }

    fn toy_artifacts(train: &Dataset) -> BTreeMap<String, MiningArtifacts> {
        train
            .instances
            .iter()
            .map(|inst| {
                let mut mask = PixelMask::empty(8, 8);
                mask.set_region(2, 2, 3, 3);
                let keywords = keyword_selection_for(&inst.text);
                (inst.id.clone(), MiningArtifacts { mask, keywords })
            })
            .collect()
    }

    fn keyword_selection_for(text: &TextSample) -> KeywordSelection {
        let positions: Vec<usize> = text
            .tokens()
            .iter()
            .enumerate()
            .filter(|(_, t)| !crate::surrogate::is_stop_token(t))
            .map(|(i, _)| i)
            .take(2)
            .collect();
        let unpoisonable = positions.is_empty();
        KeywordSelection {
            scores: positions.iter().map(|_| 0.5).collect(),
            positions,
            unpoisonable,
        }
    }

    fn target(bit: usize) -> LabelVector {
        LabelVector::single(4, bit).unwrap()
    }

    fn text_stack() -> (TextPoisonConfig, ToyTextEmbedder, LexiconOracle) {
        let config = TextPoisonConfig {
            s_target: 1.0,
            ..TextPoisonConfig::default()
        };
        (config, ToyTextEmbedder::new(11), LexiconOracle)
    }

    fn trained_generator() -> GeneratorNet {
        GeneratorNet::new(
            GeneratorConfig {
                base_channels: 2,
                bottleneck_channels: 6,
            },
            99,
        )
    }

    #[test]
    fn plan_draws_expected_count() {
        let train = toy_train(200);
        let plan = plan_poison(&train, &target(0), 0.05, AttackScenario::V2L, 3).unwrap();
        assert_eq!(plan.victim_ids.len(), 10);
        assert_eq!(plan.reserve_ids.len(), 190);
        let mut all: Vec<&String> = plan.victim_ids.iter().chain(&plan.reserve_ids).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 200);
    }

    #[test]
    fn plan_is_deterministic_per_seed() {
        let train = toy_train(60);
        let a = plan_poison(&train, &target(1), 0.1, AttackScenario::L2V, 5).unwrap();
        let b = plan_poison(&train, &target(1), 0.1, AttackScenario::L2V, 5).unwrap();
        assert_eq!(a, b);
        let c = plan_poison(&train, &target(1), 0.1, AttackScenario::L2V, 6).unwrap();
        assert_ne!(a.victim_ids, c.victim_ids);
    }

    #[test]
    fn plan_ignores_manifest_order() {
        let train = toy_train(40);
        let mut reversed = train.clone();
        reversed.instances.reverse();
        let a = plan_poison(&train, &target(0), 0.1, AttackScenario::V2L, 9).unwrap();
        let b = plan_poison(&reversed, &target(0), 0.1, AttackScenario::V2L, 9).unwrap();
        assert_eq!(a.victim_ids, b.victim_ids);
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        let train = toy_train(200);
        assert!(plan_poison(&train, &target(0), 0.001, AttackScenario::V2L, 1).is_err());
        assert!(plan_poison(&train, &target(0), 0.0, AttackScenario::V2L, 1).is_err());
        assert!(plan_poison(&train, &target(0), 1.0, AttackScenario::V2L, 1).is_err());
        let multi = LabelVector::from_indices(4, &[0, 2]).unwrap();
        assert!(plan_poison(&train, &multi, 0.05, AttackScenario::V2L, 1).is_err());
        let wrong_width = LabelVector::single(5, 0).unwrap();
        assert!(plan_poison(&train, &wrong_width, 0.05, AttackScenario::V2L, 1).is_err());
    }

    #[test]
    fn flip_label_replaces_whole_vector() {
        let y = LabelVector::from_indices(3, &[0, 2]).unwrap();
        let t = LabelVector::single(3, 1).unwrap();
        let flipped = flip_label(&y, &t).unwrap();
        assert_eq!(flipped, t);
        assert_eq!(flip_label(&t, &t).unwrap(), t);
        assert_eq!(flipped.count(), 1);
        let wide = LabelVector::single(4, 1).unwrap();
        assert!(flip_label(&y, &wide).is_err());
    }

    #[test]
    fn v2l_poisons_images_only() {
        let train = toy_train(40);
        let artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(2), 0.1, AttackScenario::V2L, 21).unwrap();
        let (config, embedder, oracle) = text_stack();
        let generator = trained_generator();
        let (poisoned, records) = apply_poison(
            &plan,
            &train,
            &artifacts,
            Some(&generator),
            &config,
            &embedder,
            &oracle,
        )
        .unwrap();
        assert_eq!(poisoned.len(), train.len());
        assert_eq!(records.len(), 4);
        assert!(records.windows(2).all(|w| w[0].id < w[1].id));
        for r in &records {
            assert_eq!(r.modality, PoisonModality::Image);
            assert!(r.mask.is_some());
            assert!(r.trace.is_none());
            assert_eq!(r.assigned_label, target(2));
            let pos = train.position(&r.id).unwrap();
            assert_eq!(poisoned.instances[pos].text, train.instances[pos].text);
            assert_eq!(poisoned.instances[pos].label, target(2));
        }
        for (before, after) in train.instances.iter().zip(&poisoned.instances) {
            assert_eq!(before.id, after.id);
            if !plan.victim_ids.contains(&before.id) {
                assert_eq!(before, after);
            } else {
                assert_ne!(before.image, after.image);
            }
        }
    }

    #[test]
    fn l2v_poisons_text_only() {
        let train = toy_train(30);
        let artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(0), 0.1, AttackScenario::L2V, 8).unwrap();
        let (config, embedder, oracle) = text_stack();
        let (poisoned, records) =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap();
        assert_eq!(records.len(), 3);
        for r in &records {
            assert_eq!(r.modality, PoisonModality::Text);
            assert!(r.mask.is_none());
            assert!(r.trace.is_some());
            let pos = train.position(&r.id).unwrap();
            assert_eq!(poisoned.instances[pos].image, train.instances[pos].image);
            assert_ne!(poisoned.instances[pos].text, train.instances[pos].text);
        }
    }

    #[test]
    fn dual_key_touches_both_modalities() {
        let train = toy_train(30);
        let artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(3), 0.2, AttackScenario::DualKey, 2).unwrap();
        let (config, embedder, oracle) = text_stack();
        let generator = trained_generator();
        let (poisoned, records) = apply_poison(
            &plan,
            &train,
            &artifacts,
            Some(&generator),
            &config,
            &embedder,
            &oracle,
        )
        .unwrap();
        assert_eq!(records.len(), 6);
        for r in &records {
            assert_eq!(r.modality, PoisonModality::Both);
            assert!(r.mask.is_some());
            assert!(r.trace.is_some());
            let pos = train.position(&r.id).unwrap();
            assert_ne!(poisoned.instances[pos].image, train.instances[pos].image);
            assert_ne!(poisoned.instances[pos].text, train.instances[pos].text);
        }
    }

    #[test]
    fn missing_generator_is_rejected() {
        let train = toy_train(30);
        let artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(0), 0.1, AttackScenario::V2L, 4).unwrap();
        let (config, embedder, oracle) = text_stack();
        let err =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn missing_artifacts_are_rejected() {
        let train = toy_train(30);
        let mut artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(0), 0.1, AttackScenario::L2V, 4).unwrap();
        artifacts.remove(&plan.victim_ids[0]);
        let (config, embedder, oracle) = text_stack();
        let err =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap_err();
        let Error::Validation(msg) = err else {
            panic!("expected validation error");
        };
        assert!(msg.contains(&plan.victim_ids[0]));
    }

    #[test]
    fn unpoisonable_victim_falls_back_to_reserve() {
        let mut train = toy_train(30);
        let plan = plan_poison(&train, &target(1), 0.1, AttackScenario::L2V, 13).unwrap();
        let stop_only = &plan.victim_ids[1];
        let pos = train.position(stop_only).unwrap();
        train.instances[pos].text = TextSample::new("on the of and").unwrap();
        let artifacts = toy_artifacts(&train);
        assert!(artifacts[stop_only].keywords.unpoisonable);
        let (config, embedder, oracle) = text_stack();
        let (poisoned, records) =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap();
        assert_eq!(records.len(), plan.victim_ids.len());
        assert!(records.iter().all(|r| r.id != *stop_only));
        let fallback = records
            .iter()
            .find(|r| r.fallback_of.as_deref() == Some(stop_only.as_str()))
            .expect("replacement record");
        assert_eq!(fallback.id, plan.reserve_ids[0]);
        let skipped = train.position(stop_only).unwrap();
        assert_eq!(train.instances[skipped], poisoned.instances[skipped]);
    }

    #[test]
    fn reserve_exhaustion_is_an_error() {
        let mut train = toy_train(12);
        for inst in &mut train.instances {
            inst.text = TextSample::new("on the of and").unwrap();
        }
        let artifacts = toy_artifacts(&train);
        let mut plan = plan_poison(&train, &target(0), 0.25, AttackScenario::L2V, 14).unwrap();
        plan.reserve_ids.clear();
        let (config, embedder, oracle) = text_stack();
        let err =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap_err();
        let Error::Validation(msg) = err else {
            panic!("expected validation error");
        };
        assert!(msg.contains("exhausted"));
    }

    #[test]
    fn victims_already_on_target_are_eligible_and_flipped() {
        let train = toy_train(40);
        let artifacts = toy_artifacts(&train);
        let plan = plan_poison(&train, &target(0), 0.2, AttackScenario::L2V, 1).unwrap();
        let on_target: Vec<&String> = plan
            .victim_ids
            .iter()
            .filter(|id| {
                let pos = train.position(id).unwrap();
                train.instances[pos].label == target(0)
            })
            .collect();
        assert!(!on_target.is_empty(), "seed should catch a target-labeled victim");
        let (config, embedder, oracle) = text_stack();
        let (poisoned, _) =
            apply_poison(&plan, &train, &artifacts, None, &config, &embedder, &oracle).unwrap();
        for id in on_target {
            let pos = train.position(id).unwrap();
            assert_eq!(poisoned.instances[pos].label, target(0));
            assert_ne!(poisoned.instances[pos].text, train.instances[pos].text);
        }
    }
}
