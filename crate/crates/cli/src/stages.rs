//! The pipeline stages behind each subcommand.
//!
//! Every stage works out of one run directory, reads the previous stages'
//! artifacts by path convention, writes only its own subdirectory, and
//! starts by writing (or checking) the resolved config snapshot. Missing
//! inputs name the stage that produces them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cmbd_core::dataset::{Dataset, Split};
use cmbd_core::image::PixelMask;
use cmbd_core::mining::{select_keywords, select_regions_dp, textual_importance, visual_importance};
use cmbd_core::poisoner::{
    apply_poison, plan_poison, AttackScenario, MiningArtifacts, PoisonRecord,
};
use cmbd_core::textual_trigger::greedy_substitute;
use cmbd_core::victim::{train_toy_victim, attack_report, AttackReport, ToyVictim};
use cmbd_core::visual_trigger::{
    poison_image, train_trigger_generator, GeneratorNet, PatchTrigger,
};
use cmbd_core::LabelVector;
use serde_json::json;

use crate::backend::Backend;
use crate::checkpoint;
use crate::errors::{CliError, Result};
use crate::manifest;
use crate::report::{self, ReportMeta};
use crate::runcfg::RunConfig;
use crate::sidecar::{self, MinedInstance};
use crate::toyset;

/// Path conventions inside a run directory.
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> RunPaths {
        RunPaths {
            root: root.to_path_buf(),
        }
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        self.root.join("data").join(split.name())
    }

    pub fn split_manifest(&self, split: Split) -> PathBuf {
        self.split_dir(split).join("manifest.jsonl")
    }

    pub fn sidecar(&self, split: Split) -> PathBuf {
        self.root.join("mine").join(format!("{}.jsonl", split.name()))
    }

    pub fn generator(&self) -> PathBuf {
        self.root.join("trigger").join("generator.ckpt")
    }

    pub fn discriminator(&self) -> PathBuf {
        self.root.join("trigger").join("discriminator.ckpt")
    }

    pub fn trigger_log(&self) -> PathBuf {
        self.root.join("trigger").join("log.jsonl")
    }

    pub fn poison_dir(&self, target: usize) -> PathBuf {
        self.root.join("poison").join(format!("target_{target}"))
    }

    pub fn victim_ckpt(&self, target: usize) -> PathBuf {
        self.root
            .join("victim")
            .join(format!("target_{target}"))
            .join("victim.ckpt")
    }

    pub fn victim_log(&self, target: usize) -> PathBuf {
        self.root
            .join("victim")
            .join(format!("target_{target}"))
            .join("log.jsonl")
    }

    pub fn clean_victim_ckpt(&self) -> PathBuf {
        self.root.join("victim").join("clean.ckpt")
    }

    pub fn clean_victim_log(&self) -> PathBuf {
        self.root.join("victim").join("clean_log.jsonl")
    }

    pub fn eval_dir(&self, target: usize) -> PathBuf {
        self.root.join("evaluate").join(format!("target_{target}"))
    }

    pub fn aggregate(&self) -> PathBuf {
        self.root.join("evaluate").join("aggregate.txt")
    }
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingStage {
            artifact: path.display().to_string(),
            stage: produced_by.to_string(),
        })
    }
}

fn validation(msg: String) -> CliError {
    CliError::Core(cmbd_core::Error::Validation(msg))
}

fn target_label(config: &RunConfig, categories: usize, target: usize) -> Result<LabelVector> {
    if target >= categories {
        return Err(validation(format!(
            "attack.targets entry {target} is out of range for {categories} categories"
        )));
    }
    let _ = config;
    LabelVector::single(categories, target).map_err(CliError::from)
}

fn load_split(paths: &RunPaths, split: Split) -> Result<Dataset> {
    require(&paths.split_manifest(split), "mine")?;
    manifest::load_dataset(&paths.split_manifest(split))
}

fn mine_split(
    split: &Dataset,
    backend: &Backend,
    config: &RunConfig,
    fill: [f64; 3],
) -> Result<BTreeMap<String, MinedInstance>> {
    let image_embedder = backend.image_embedder();
    let text_embedder = backend.text_embedder();
    let proposer = backend.region_proposer();
    let mut mined = BTreeMap::new();
    for inst in &split.instances {
        let regions = proposer.propose_regions(&inst.image, config.mining.max_regions)?;
        let scored = visual_importance(
            &inst.image,
            &inst.text,
            &regions,
            image_embedder,
            text_embedder,
            fill,
        )?;
        let selection = select_regions_dp(
            &scored,
            (inst.image.height(), inst.image.width()),
            config.mining.pixel_budget,
        )?;
        let token_scores = textual_importance(&inst.text, &inst.image, image_embedder, text_embedder)?;
        let keywords = select_keywords(&token_scores.scores, &inst.text, config.mining.keyword_budget)?;
        let mined_inst = MinedInstance {
            selected_boxes: selection
                .selected
                .iter()
                .map(|s| [s.region.top, s.region.left, s.region.height, s.region.width])
                .collect(),
            importances: selection.selected.iter().map(|s| s.importance).collect(),
            budget_infeasible: selection.budget_infeasible,
            artifacts: MiningArtifacts {
                mask: selection.mask,
                keywords,
            },
        };
        mined.insert(inst.id.clone(), mined_inst);
    }
    Ok(mined)
}

pub fn cmd_mine(config: &RunConfig, run_dir: &Path) -> Result<()> {
    config.write_snapshot(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let backend = Backend::from_config(config)?;

    let dataset = match &config.dataset.source {
        Some(source) => manifest::load_dataset(source)?,
        None => toyset::generate_toy_dataset(config.dataset.toy_size, config.dataset.toy_seed),
    };
    let n = dataset.len();
    let (train, query, retrieval) = cmbd_core::dataset::split_dataset(
        dataset,
        config.split_fractions(),
        config.dataset.split_seed,
    )?;
    println!(
        "dataset: {n} instances -> {} train / {} query / {} retrieval",
        train.len(),
        query.len(),
        retrieval.len()
    );
    manifest::save_dataset(&paths.split_dir(Split::Train), &train)?;
    manifest::save_dataset(&paths.split_dir(Split::Query), &query)?;
    manifest::save_dataset(&paths.split_dir(Split::Retrieval), &retrieval)?;

    // Occlusion fill: the training set's per-channel mean, a frozen
    // preprocessing constant shared by every split.
    let mut fill = [0.0; 3];
    for inst in &train.instances {
        let means = inst.image.channel_means();
        for c in 0..3 {
            fill[c] += means[c];
        }
    }
    for f in fill.iter_mut() {
        *f /= train.len().max(1) as f64;
    }

    for (split, data) in [(Split::Train, &train), (Split::Query, &query)] {
        let mined = mine_split(data, &backend, config, fill)?;
        let masked: usize = mined
            .values()
            .map(|m| m.artifacts.mask.popcount())
            .sum();
        let pixels: usize = data.len() * train.instances[0].image.pixels();
        let infeasible = mined.values().filter(|m| m.budget_infeasible).count();
        let unpoisonable = mined
            .values()
            .filter(|m| m.artifacts.keywords.unpoisonable)
            .count();
        sidecar::save_sidecar(&paths.sidecar(split), &mined)?;
        println!(
            "mined {}: {} instances, mask coverage {:.1}%, {infeasible} infeasible, \
             {unpoisonable} without keywords",
            split.name(),
            mined.len(),
            100.0 * masked as f64 / pixels.max(1) as f64,
        );
    }
    Ok(())
}

fn write_jsonl(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io_at("creating", parent, e))?;
    }
    let mut out = Vec::new();
    for line in lines {
        writeln!(out, "{line}").unwrap();
    }
    fs::write(path, out).map_err(|e| CliError::io_at("writing", path, e))
}

pub fn cmd_train_trigger(config: &RunConfig, run_dir: &Path) -> Result<()> {
    config.write_snapshot(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let backend = Backend::from_config(config)?;
    let embedder = backend.differentiable_image_embedder()?;

    let train = load_split(&paths, Split::Train)?;
    require(&paths.sidecar(Split::Train), "mine")?;
    let mined = sidecar::load_sidecar(&paths.sidecar(Split::Train))?;

    let mut pairs: Vec<(cmbd_core::ImageSample, PixelMask)> = Vec::new();
    for inst in &train.instances {
        let mask = mined
            .get(&inst.id)
            .ok_or_else(|| {
                CliError::Format(format!(
                    "mining sidecar lacks instance {:?}; re-run `mine`",
                    inst.id
                ))
            })?
            .artifacts
            .mask
            .clone();
        pairs.push((inst.image.clone(), mask));
    }
    if config.trigger.sample_limit > 0 {
        pairs.truncate(config.trigger.sample_limit);
    }
    let (h, w) = (train.instances[0].image.height(), train.instances[0].image.width());
    let patch = build_patch(config, h, w)?;

    let train_config = config.trigger_train_config();
    let every = (train_config.epochs / 10).max(1);
    let mut log_lines = Vec::new();
    let training = train_trigger_generator(
        &pairs,
        &patch,
        embedder,
        config.generator_config(),
        config.discriminator_config(),
        &train_config,
        config.trigger.seed,
        |log| {
            if log.epoch % every == 0 || log.epoch + 1 == train_config.epochs {
                println!(
                    "trigger epoch {:>4}: rec={:.5} reg={:.5} adv_d={:.4} adv_g={:.4} fea={:.4} total={:.5}",
                    log.epoch, log.rec, log.reg, log.adv_d, log.adv_g, log.fea, log.total
                );
            }
            log_lines.push(json!({
                "epoch": log.epoch,
                "steps": log.steps,
                "rec": log.rec,
                "reg": log.reg,
                "adv_d": log.adv_d,
                "adv_g": log.adv_g,
                "fea": log.fea,
                "total": log.total,
            }));
        },
    )?;
    checkpoint::save_generator(&paths.generator(), &training.generator)?;
    checkpoint::save_discriminator(&paths.discriminator(), &training.discriminator)?;
    write_jsonl(&paths.trigger_log(), &log_lines)?;
    println!(
        "trigger generator trained on {} images ({} epochs); saved to {}",
        pairs.len(),
        train_config.epochs,
        paths.generator().display()
    );
    Ok(())
}

/// Builds the visible reference patch from the trigger section: explicit
/// size centers by default, no size falls back to the corner default.
fn build_patch(config: &RunConfig, h: usize, w: usize) -> Result<PatchTrigger> {
    let patch = match config.trigger.patch_size {
        Some(size) => {
            let top = config.trigger.patch_top.unwrap_or(h.saturating_sub(size) / 2);
            let left = config.trigger.patch_left.unwrap_or(w.saturating_sub(size) / 2);
            match config.trigger.patch_style.as_str() {
                "solid" => PatchTrigger::new(
                    cmbd_core::ImageSample::filled(size, size, config.trigger.patch_color),
                    h,
                    w,
                    top,
                    left,
                )?,
                _ => PatchTrigger::checker_at(h, w, size, config.trigger.patch_cell, top, left)?,
            }
        }
        None => PatchTrigger::default_for(h, w)?,
    };
    Ok(patch)
}

fn artifacts_of(mined: &BTreeMap<String, MinedInstance>) -> BTreeMap<String, MiningArtifacts> {
    mined
        .iter()
        .map(|(id, m)| (id.clone(), m.artifacts.clone()))
        .collect()
}

fn trace_lines(records: &[PoisonRecord]) -> Vec<serde_json::Value> {
    records
        .iter()
        .filter_map(|record| {
            record.trace.as_ref().map(|trace| {
                json!({
                    "id": record.id,
                    "s_best": trace.s_best,
                    "terminated_early": trace.terminated_early,
                    "steps": trace
                        .steps
                        .iter()
                        .map(|s| {
                            json!({
                                "position": s.position,
                                "original": s.original,
                                "chosen": s.chosen,
                                "score_after": s.score_after,
                            })
                        })
                        .collect::<Vec<_>>(),
                })
            })
        })
        .collect()
}

pub fn cmd_poison(config: &RunConfig, run_dir: &Path) -> Result<()> {
    config.write_snapshot(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let scenario = config.scenario()?;
    let backend = Backend::from_config(config)?;

    let train = load_split(&paths, Split::Train)?;
    require(&paths.sidecar(Split::Train), "mine")?;
    let mined = sidecar::load_sidecar(&paths.sidecar(Split::Train))?;
    let artifacts = artifacts_of(&mined);

    let generator = if scenario.poisons_images() {
        require(&paths.generator(), "train-trigger")?;
        Some(checkpoint::load_generator(&paths.generator())?)
    } else {
        None
    };
    let text_config = config.text_poison_config();

    for &target in &config.attack.targets {
        let label = target_label(config, train.categories, target)?;
        let plan = plan_poison(&train, &label, config.attack.ratio, scenario, config.attack.seed)?;
        let (poisoned, records) = apply_poison(
            &plan,
            &train,
            &artifacts,
            generator.as_ref(),
            &text_config,
            backend.text_embedder(),
            backend.candidate_oracle(),
        )?;
        let dir = paths.poison_dir(target);
        manifest::save_poisoned_dataset(&dir, &poisoned, &records)?;
        let plan_path = dir.join("plan.json");
        let plan_doc = json!({
            "scenario": scenario.name(),
            "target": target,
            "ratio": plan.ratio,
            "seed": plan.seed,
            "victim_ids": plan.victim_ids,
            "reserve_ids": plan.reserve_ids,
        });
        fs::write(&plan_path, serde_json::to_string_pretty(&plan_doc).unwrap())
            .map_err(|e| CliError::io_at("writing", &plan_path, e))?;
        write_jsonl(&dir.join("traces.jsonl"), &trace_lines(&records))?;
        let fallbacks = records.iter().filter(|r| r.fallback_of.is_some()).count();
        println!(
            "poisoned target {target}: {} of {} instances ({}), {fallbacks} fallback substitutions",
            records.len(),
            train.len(),
            scenario.name(),
        );
    }
    Ok(())
}

fn train_one_victim(
    train: &Dataset,
    backend: &Backend,
    config: &RunConfig,
    ckpt: &Path,
    log_path: &Path,
    label: &str,
) -> Result<ToyVictim> {
    let victim_config = config.victim_config();
    let every = (victim_config.epochs / 5).max(1);
    let mut log_lines = Vec::new();
    let training = train_toy_victim(
        train,
        backend.image_embedder(),
        backend.text_embedder(),
        &victim_config,
        |log| {
            if log.epoch % every == 0 || log.epoch + 1 == victim_config.epochs {
                println!(
                    "victim[{label}] epoch {:>3}: contrastive={:.4} label={:.4} total={:.4}",
                    log.epoch, log.contrastive, log.label, log.total
                );
            }
            log_lines.push(json!({
                "epoch": log.epoch,
                "steps": log.steps,
                "contrastive": log.contrastive,
                "label": log.label,
                "total": log.total,
            }));
        },
    )?;
    checkpoint::save_victim(ckpt, &training.victim)?;
    write_jsonl(log_path, &log_lines)?;
    Ok(training.victim)
}

pub fn cmd_train_victim(config: &RunConfig, run_dir: &Path) -> Result<()> {
    config.write_snapshot(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let backend = Backend::from_config(config)?;

    let clean_train = load_split(&paths, Split::Train)?;
    if !paths.clean_victim_ckpt().exists() {
        train_one_victim(
            &clean_train,
            &backend,
            config,
            &paths.clean_victim_ckpt(),
            &paths.clean_victim_log(),
            "clean",
        )?;
        println!("clean victim saved to {}", paths.clean_victim_ckpt().display());
    }

    for &target in &config.attack.targets {
        let poisoned_manifest = paths.poison_dir(target).join("manifest.jsonl");
        require(&poisoned_manifest, "poison")?;
        let poisoned = manifest::load_dataset(&poisoned_manifest)?;
        train_one_victim(
            &poisoned,
            &backend,
            config,
            &paths.victim_ckpt(target),
            &paths.victim_log(target),
            &format!("target {target}"),
        )?;
        println!(
            "poisoned victim for target {target} saved to {}",
            paths.victim_ckpt(target).display()
        );
    }
    Ok(())
}

/// Applies the trained triggers to every query instance, leaving the
/// untouched modality bit-identical. Returns the triggered set and how many
/// texts had no substitutable keyword.
fn build_triggered_queries(
    clean: &Dataset,
    scenario: AttackScenario,
    generator: Option<&GeneratorNet>,
    mined: &BTreeMap<String, MinedInstance>,
    config: &RunConfig,
    backend: &Backend,
) -> Result<(Dataset, usize)> {
    let text_config = config.text_poison_config();
    let mut triggered = clean.clone();
    let mut untriggered_texts = 0;
    for inst in &mut triggered.instances {
        let mined_inst = mined.get(&inst.id).ok_or_else(|| {
            CliError::Format(format!(
                "query sidecar lacks instance {:?}; re-run `mine`",
                inst.id
            ))
        })?;
        if scenario.poisons_images() {
            let generator = generator.expect("generator loaded for image scenarios");
            let poisoned = poison_image(generator, &inst.image, &mined_inst.artifacts.mask)?;
            // Quantize like the poisoned training images that went through
            // PNG, so queries carry the same trigger distribution.
            inst.image = poisoned.quantized();
        }
        if scenario.poisons_text() {
            if mined_inst.artifacts.keywords.unpoisonable {
                untriggered_texts += 1;
            } else {
                let (text, _) = greedy_substitute(
                    &inst.text,
                    &mined_inst.artifacts.keywords,
                    &text_config,
                    backend.text_embedder(),
                    backend.candidate_oracle(),
                )?;
                inst.text = text;
            }
        }
    }
    Ok((triggered, untriggered_texts))
}

pub fn cmd_evaluate(config: &RunConfig, run_dir: &Path) -> Result<()> {
    config.write_snapshot(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let scenario = config.scenario()?;
    let backend = Backend::from_config(config)?;

    let queries = load_split(&paths, Split::Query)?;
    let retrieval = load_split(&paths, Split::Retrieval)?;
    require(&paths.sidecar(Split::Query), "mine")?;
    let mined = sidecar::load_sidecar(&paths.sidecar(Split::Query))?;
    let generator = if scenario.poisons_images() {
        require(&paths.generator(), "train-trigger")?;
        Some(checkpoint::load_generator(&paths.generator())?)
    } else {
        None
    };
    require(&paths.clean_victim_ckpt(), "train-victim")?;
    let clean_victim = checkpoint::load_victim(&paths.clean_victim_ckpt())?;

    let (triggered, untriggered_texts) = build_triggered_queries(
        &queries,
        scenario,
        generator.as_ref(),
        &mined,
        config,
        &backend,
    )?;

    let mut report_paths = Vec::new();
    for &target in &config.attack.targets {
        let label = target_label(config, queries.categories, target)?;
        require(&paths.victim_ckpt(target), "train-victim")?;
        let victim = checkpoint::load_victim(&paths.victim_ckpt(target))?;
        let meta = ReportMeta {
            target,
            queries: queries.len(),
            database: retrieval.len(),
            untriggered_texts,
        };
        let attacked: AttackReport = attack_report(
            &victim,
            &queries,
            &triggered,
            &retrieval,
            scenario,
            &label,
            config.eval.k,
            backend.image_embedder(),
            backend.text_embedder(),
        )?;
        let baseline: AttackReport = attack_report(
            &clean_victim,
            &queries,
            &triggered,
            &retrieval,
            scenario,
            &label,
            config.eval.k,
            backend.image_embedder(),
            backend.text_embedder(),
        )?;
        let dir = paths.eval_dir(target);
        report::write_report(&dir.join("report.txt"), &attacked, &meta)?;
        report::write_report(&dir.join("baseline.txt"), &baseline, &meta)?;
        report_paths.push(dir.join("report.txt"));
        println!("target {target} (k = {}):", config.eval.k);
        print!(
            "{}",
            report::render_table(&[
                ("  poisoned victim", &attacked),
                ("  clean victim", &baseline),
            ])
        );
    }
    if report_paths.len() > 1 {
        let aggregate = report::aggregate_reports(&report_paths)?;
        fs::write(paths.aggregate(), &aggregate)
            .map_err(|e| CliError::io_at("writing", &paths.aggregate(), e))?;
        println!("aggregate over {} targets:\n{aggregate}", report_paths.len());
    }
    Ok(())
}

pub fn cmd_pipeline(config: &RunConfig, run_dir: &Path) -> Result<()> {
    let scenario = config.scenario()?;
    println!("== mine ==");
    cmd_mine(config, run_dir)?;
    if scenario.poisons_images() {
        println!("== train-trigger ==");
        cmd_train_trigger(config, run_dir)?;
    }
    println!("== poison ==");
    cmd_poison(config, run_dir)?;
    println!("== train-victim ==");
    cmd_train_victim(config, run_dir)?;
    println!("== evaluate ==");
    cmd_evaluate(config, run_dir)?;
    Ok(())
}
