//! The run configuration file: one TOML document driving every stage.
//!
//! Every field has a default, so a minimal config only names the attack
//! scenario and target labels. The first stage executed in a run directory
//! writes back the fully resolved document as `config.resolved.toml`;
//! later stages refuse to run if their configuration differs from that
//! snapshot, and a run can be reproduced from the snapshot alone.

use std::fs;
use std::path::{Path, PathBuf};

use cmbd_core::dataset::SplitFractions;
use cmbd_core::poisoner::AttackScenario;
use cmbd_core::textual_trigger::TextPoisonConfig;
use cmbd_core::victim::VictimConfig;
use cmbd_core::visual_trigger::{
    DiscriminatorConfig, GeneratorConfig, TriggerTrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::errors::{CliError, Result};

pub const SNAPSHOT_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub attack: AttackSection,
    pub mining: MiningSection,
    pub trigger: TriggerSection,
    pub text: TextSection,
    pub victim: VictimSection,
    pub eval: EvalSection,
    pub surrogate: SurrogateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSection::default(),
            attack: AttackSection::default(),
            mining: MiningSection::default(),
            trigger: TriggerSection::default(),
            text: TextSection::default(),
            victim: VictimSection::default(),
            eval: EvalSection::default(),
            surrogate: SurrogateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Path to an existing manifest; omitted means the bundled toy set.
    pub source: Option<PathBuf>,
    pub toy_size: usize,
    pub toy_seed: u64,
    /// Train, query, retrieval fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: None,
            toy_size: crate::toyset::TOY_DEFAULT_SIZE,
            toy_seed: 11,
            split: [0.8, 0.1, 0.1],
            split_seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// `v2l`, `l2v`, or `dual-key`.
    pub scenario: String,
    /// Target label indices; several entries mean sequential sub-runs with
    /// an aggregated report.
    pub targets: Vec<usize>,
    /// Pollution ratio: fraction of training instances to poison.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            scenario: "v2l".to_string(),
            targets: vec![0],
            ratio: 0.05,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    /// Fraction of image area the invariant mask may cover.
    pub pixel_budget: f64,
    /// Fraction of token count eligible as keywords.
    pub keyword_budget: f64,
    pub max_regions: usize,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            pixel_budget: 0.30,
            keyword_budget: 0.40,
            max_regions: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub base_channels: usize,
    pub bottleneck_channels: usize,
    pub disc_channels: usize,
    pub seed: u64,
    /// Reference patch side length; omitted scales the standard patch to
    /// the image.
    pub patch_size: Option<usize>,
    pub patch_cell: usize,
    /// Patch placement; omitted centers an explicitly sized patch and puts
    /// the default-sized one in the bottom-right corner.
    pub patch_top: Option<usize>,
    pub patch_left: Option<usize>,
    /// Reference patch look: "checker" texture or a "solid" color block.
    pub patch_style: String,
    /// Fill color of a solid patch.
    pub patch_color: [f64; 3],
    /// Cap on training images; 0 means the whole split.
    pub sample_limit: usize,
}

impl Default for TriggerSection {
    fn default() -> Self {
        let t = TriggerTrainConfig::default();
        let g = GeneratorConfig::default();
        TriggerSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            alpha: t.alpha,
            beta: t.beta,
            gamma: t.gamma,
            base_channels: g.base_channels,
            bottleneck_channels: g.bottleneck_channels,
            disc_channels: DiscriminatorConfig::default().base_channels,
            seed: 19,
            patch_size: None,
            patch_cell: 2,
            patch_top: None,
            patch_left: None,
            patch_style: String::from("checker"),
            patch_color: [1.0, 1.0, 1.0],
            sample_limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextSection {
    pub rare_word: String,
    pub max_candidates: usize,
    pub s_target: f64,
    pub seed_score_with_original: bool,
}

impl Default for TextSection {
    fn default() -> Self {
        let t = TextPoisonConfig::default();
        TextSection {
            rare_word: t.rare_word,
            max_candidates: t.max_candidates,
            s_target: t.s_target,
            seed_score_with_original: t.seed_score_with_original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimSection {
    pub hidden_dim: usize,
    pub common_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub label_loss_weight: f64,
    pub seed: u64,
}

impl Default for VictimSection {
    fn default() -> Self {
        let v = VictimConfig::default();
        VictimSection {
            hidden_dim: v.hidden_dim,
            common_dim: v.common_dim,
            epochs: v.epochs,
            batch_size: v.batch_size,
            learning_rate: v.learning_rate,
            temperature: v.temperature,
            label_loss_weight: v.label_loss_weight,
            seed: v.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Ranking depth for MAP and t-MAP.
    pub k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { k: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    /// `toy` or `external`.
    pub backend: String,
    pub image_seed: u64,
    pub text_seed: u64,
    /// Adapter command line for the external backend; the
    /// `CMBD_SURROGATE_CMD` environment variable takes precedence.
    pub command: Option<String>,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            backend: "toy".to_string(),
            image_seed: 5,
            text_seed: 7,
            command: None,
        }
    }
}

fn validation(msg: String) -> CliError {
    CliError::Core(cmbd_core::Error::Validation(msg))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::io_at("opening", path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        if self.attack.targets.is_empty() {
            return Err(validation("attack.targets must name at least one label".into()));
        }
        if !(self.attack.ratio > 0.0 && self.attack.ratio < 1.0) {
            return Err(validation(format!(
                "attack.ratio must lie in (0, 1), got {}",
                self.attack.ratio
            )));
        }
        self.split_fractions().validate()?;
        if !(self.mining.pixel_budget > 0.0 && self.mining.pixel_budget <= 1.0) {
            return Err(validation(format!(
                "mining.pixel_budget must lie in (0, 1], got {}",
                self.mining.pixel_budget
            )));
        }
        if !(self.mining.keyword_budget > 0.0 && self.mining.keyword_budget <= 1.0) {
            return Err(validation(format!(
                "mining.keyword_budget must lie in (0, 1], got {}",
                self.mining.keyword_budget
            )));
        }
        if self.mining.max_regions == 0 {
            return Err(validation("mining.max_regions must be positive".into()));
        }
        if self.dataset.source.is_none() && self.dataset.toy_size == 0 {
            return Err(validation("dataset.toy_size must be positive".into()));
        }
        self.trigger_train_config().validate()?;
        match self.trigger.patch_style.as_str() {
            "checker" | "solid" => {}
            other => {
                return Err(validation(format!(
                    "trigger.patch_style must be \"checker\" or \"solid\", got {other:?}"
                )))
            }
        }
        if self
            .trigger
            .patch_color
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(validation(format!(
                "trigger.patch_color components must lie in [0, 1], got {:?}",
                self.trigger.patch_color
            )));
        }
        self.text_poison_config().validate()?;
        self.victim_config().validate()?;
        if self.eval.k == 0 {
            return Err(validation("eval.k must be at least 1".into()));
        }
        match self.surrogate.backend.as_str() {
            "toy" | "external" => Ok(()),
            other => Err(validation(format!(
                "surrogate.backend must be \"toy\" or \"external\", got {other:?}"
            ))),
        }
    }

    pub fn scenario(&self) -> Result<AttackScenario> {
        match self.attack.scenario.as_str() {
            "v2l" => Ok(AttackScenario::V2L),
            "l2v" => Ok(AttackScenario::L2V),
            "dual-key" => Ok(AttackScenario::DualKey),
            other => Err(validation(format!(
                "attack.scenario must be \"v2l\", \"l2v\" or \"dual-key\", got {other:?}"
            ))),
        }
    }

    pub fn split_fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.dataset.split[0],
            query: self.dataset.split[1],
            retrieval: self.dataset.split[2],
        }
    }

    pub fn trigger_train_config(&self) -> TriggerTrainConfig {
        TriggerTrainConfig {
            alpha: self.trigger.alpha,
            beta: self.trigger.beta,
            gamma: self.trigger.gamma,
            learning_rate: self.trigger.learning_rate,
            epochs: self.trigger.epochs,
            batch_size: self.trigger.batch_size,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.trigger.base_channels,
            bottleneck_channels: self.trigger.bottleneck_channels,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.trigger.disc_channels,
        }
    }

    pub fn text_poison_config(&self) -> TextPoisonConfig {
        TextPoisonConfig {
            rare_word: self.text.rare_word.clone(),
            max_candidates: self.text.max_candidates,
            s_target: self.text.s_target,
            seed_score_with_original: self.text.seed_score_with_original,
        }
    }

    pub fn victim_config(&self) -> VictimConfig {
        VictimConfig {
            hidden_dim: self.victim.hidden_dim,
            common_dim: self.victim.common_dim,
            epochs: self.victim.epochs,
            batch_size: self.victim.batch_size,
            learning_rate: self.victim.learning_rate,
            temperature: self.victim.temperature,
            label_loss_weight: self.victim.label_loss_weight,
            seed: self.victim.seed,
        }
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the resolved snapshot into `run_dir`, or verifies it matches
    /// the one written by an earlier stage.
    pub fn write_snapshot(&self, run_dir: &Path) -> Result<()> {
        fs::create_dir_all(run_dir).map_err(|e| CliError::io_at("creating", run_dir, e))?;
        let path = run_dir.join(SNAPSHOT_NAME);
        let resolved = self.resolved_toml();
        match fs::read_to_string(&path) {
            Ok(existing) => {
                if existing != resolved {
                    Err(CliError::Format(format!(
                        "{} holds a different resolved configuration; use a fresh run directory",
                        path.display()
                    )))
                } else {
                    Ok(())
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                fs::write(&path, resolved).map_err(|e| CliError::io_at("writing", &path, e))
            }
            Err(e) => Err(CliError::io_at("reading", &path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_paper_defaults() {
        let config: RunConfig = toml::from_str(
            "[attack]\nscenario = \"v2l\"\ntargets = [3]\n",
        )
        .unwrap();
        config.validate().unwrap();
        assert_eq!(config.attack.ratio, 0.05);
        assert_eq!(config.mining.pixel_budget, 0.30);
        assert_eq!(config.mining.keyword_budget, 0.40);
        let t = config.trigger_train_config();
        assert_eq!(t.alpha, 5.0);
        assert_eq!(t.beta, 5e-3);
        assert_eq!(t.gamma, 1.0);
        assert_eq!(t.learning_rate, 5e-5);
        assert_eq!(t.epochs, 200);
        assert_eq!(t.batch_size, 64);
        assert_eq!(config.text_poison_config().s_target, 0.7);
        assert_eq!(config.eval.k, 50);
        assert_eq!(config.dataset.split, [0.8, 0.1, 0.1]);
    }

    #[test]
    fn bad_values_are_rejected_with_field_names() {
        let config: RunConfig =
            toml::from_str("[attack]\nscenario = \"sideways\"\n").unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("attack.scenario"));

        let config: RunConfig =
            toml::from_str("[attack]\nratio = 1.5\n").unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("attack.ratio"));

        let err = toml::from_str::<RunConfig>("[attack]\nunknown_knob = 1\n").unwrap_err();
        assert!(err.to_string().contains("unknown_knob"));
    }

    #[test]
    fn snapshot_rejects_a_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.write_snapshot(dir.path()).unwrap();
        config.write_snapshot(dir.path()).unwrap();
        config.attack.ratio = 0.10;
        let err = config.write_snapshot(dir.path()).unwrap_err();
        assert!(err.to_string().contains("different resolved configuration"));
    }

    #[test]
    fn snapshot_round_trips_through_toml() {
        let config = RunConfig::default();
        let parsed: RunConfig = toml::from_str(&config.resolved_toml()).unwrap();
        assert_eq!(config, parsed);
    }
}
