//! Invisible textual trigger: greedy synonym substitution over the mined
//! keywords, steered toward an explicit rare-word poison in embedding space.
//!
//! The explicit poison replaces every keyword with the rare word; it carries
//! the trigger pattern but reads badly. The greedy pass swaps keywords for
//! synonyms one candidate at a time, keeping a swap only when it moves the
//! text strictly closer (cosine) to the explicit poison, and stops as soon
//! as the score reaches the target.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mining::KeywordSelection;
use crate::surrogate::{cosine_similarity, CandidateOracle, TextEmbedder};
use crate::text::{tokenize, TextSample};

/// Settings for textual poisoning.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPoisonConfig {
    /// The explicit trigger word every keyword maps to.
    pub rare_word: String,
    /// Candidate-set size cap per keyword.
    pub max_candidates: usize,
    /// Stop substituting once the score reaches this value.
    pub s_target: f64,
    /// Start the best score from `cos(original, explicit poison)` instead
    /// of zero. Off by default: the first strict improvement over zero is
    /// then always accepted.
    pub seed_score_with_original: bool,
}

impl Default for TextPoisonConfig {
    fn default() -> Self {
        TextPoisonConfig {
            rare_word: String::from("cf"),
            max_candidates: 64,
            s_target: 0.7,
            seed_score_with_original: false,
        }
    }
}

impl TextPoisonConfig {
    pub fn validate(&self) -> Result<()> {
        if tokenize(&self.rare_word).len() != 1 {
            return Err(Error::Validation(format!(
                "rare word {:?} must be a single token",
                self.rare_word
            )));
        }
        if self.max_candidates == 0 {
            return Err(Error::Validation(String::from(
                "candidate cap must be at least 1",
            )));
        }
        if !(0.0..=1.0).contains(&self.s_target) {
            return Err(Error::Validation(format!(
                "target score must lie in [0, 1], got {}",
                self.s_target
            )));
        }
        Ok(())
    }
}

/// Output of [`build_explicit_poison`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitPoison {
    pub text: TextSample,
    /// Set when there were no keywords, leaving the text unchanged.
    pub no_keywords: bool,
}

/// One accepted substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionStep {
    pub position: usize,
    pub original: String,
    pub chosen: String,
    /// Best score right after this keyword's final accepted candidate.
    pub score_after: f64,
}

/// Record of a greedy run: one step per substituted keyword, in keyword
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionTrace {
    pub steps: Vec<SubstitutionStep>,
    pub s_best: f64,
    /// True when the run returned via the target-score check.
    pub terminated_early: bool,
}

/// Replaces every keyword position with the rare word.
pub fn build_explicit_poison(
    text: &TextSample,
    keywords: &KeywordSelection,
    rare_word: &str,
) -> Result<ExplicitPoison> {
    if keywords.is_empty() {
        return Ok(ExplicitPoison {
            text: text.clone(),
            no_keywords: true,
        });
    }
    let subs: Vec<(usize, &str)> = keywords
        .positions
        .iter()
        .map(|&p| (p, rare_word))
        .collect();
    Ok(ExplicitPoison {
        text: text.with_substitutions(&subs)?,
        no_keywords: false,
    })
}

/// Greedy synonym substitution toward the explicit poison.
///
/// Keywords are visited most-important-first. For each, the oracle's
/// candidate set (capped, stop words and the original word filtered) is
/// tried in order; a candidate is kept only when the substituted text
/// scores strictly higher against the explicit poison than the best so
/// far. After every evaluated candidate, the run returns as soon as the
/// best score has reached the target. Accepted swaps accumulate, so the
/// output can differ from the input at several keyword positions — and
/// nowhere else.
pub fn greedy_substitute(
    text: &TextSample,
    keywords: &KeywordSelection,
    config: &TextPoisonConfig,
    text_embedder: &dyn TextEmbedder,
    oracle: &dyn CandidateOracle,
) -> Result<(TextSample, SubstitutionTrace)> {
    config.validate()?;
    if keywords.is_empty() {
        return Err(Error::Validation(String::from(
            "unpoisonable instance: no substitutable keywords",
        )));
    }
    for &p in &keywords.positions {
        if p >= text.len() {
            return Err(Error::Validation(format!(
                "keyword position {p} out of range for {} tokens",
                text.len()
            )));
        }
    }
    let explicit = build_explicit_poison(text, keywords, &config.rare_word)?;
    let target_emb = text_embedder.embed_text(&explicit.text)?;

    let mut s_best = if config.seed_score_with_original {
        cosine_similarity(&text_embedder.embed_text(text)?, &target_emb)
    } else {
        0.0
    };
    let mut accepted: Vec<(usize, String)> = Vec::new();
    let mut steps: Vec<SubstitutionStep> = Vec::new();

    if config.seed_score_with_original && s_best >= config.s_target {
        return Ok((
            text.clone(),
            SubstitutionTrace {
                steps,
                s_best,
                terminated_early: true,
            },
        ));
    }

    let mut terminated_early = false;
    'keywords: for &pos in &keywords.positions {
        let candidates = oracle.mask_candidates(text, pos, config.max_candidates)?;
        let mut best_here: Option<(String, f64)> = None;
        for candidate in &candidates.words {
            let mut subs: Vec<(usize, &str)> = accepted
                .iter()
                .map(|(p, w)| (*p, w.as_str()))
                .collect();
            subs.push((pos, candidate));
            let trial = text.with_substitutions(&subs)?;
            let s = cosine_similarity(&text_embedder.embed_text(&trial)?, &target_emb);
            if s > s_best {
                s_best = s;
                best_here = Some((candidate.clone(), s));
            }
            if s_best >= config.s_target {
                terminated_early = true;
                flush(&mut accepted, &mut steps, text, pos, best_here);
                break 'keywords;
            }
        }
        flush(&mut accepted, &mut steps, text, pos, best_here);
    }

    let final_subs: Vec<(usize, &str)> = accepted
        .iter()
        .map(|(p, w)| (*p, w.as_str()))
        .collect();
    let poisoned = text.with_substitutions(&final_subs)?;
    Ok((
        poisoned,
        SubstitutionTrace {
            steps,
            s_best,
            terminated_early,
        },
    ))
}

fn flush(
    accepted: &mut Vec<(usize, String)>,
    steps: &mut Vec<SubstitutionStep>,
    text: &TextSample,
    pos: usize,
    best_here: Option<(String, f64)>,
) {
    if let Some((chosen, score_after)) = best_here {
        accepted.push((pos, chosen.clone()));
        steps.push(SubstitutionStep {
            position: pos,
            original: text.tokens()[pos].clone(),
            chosen,
            score_after,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{CandidateSet, LexiconOracle, ToyTextEmbedder};

    fn keywords(positions: &[usize]) -> KeywordSelection {
        KeywordSelection {
            positions: positions.to_vec(),
            scores: positions.iter().map(|&p| 1.0 - p as f64 * 0.1).collect(),
            unpoisonable: false,
        }
    }

    fn none_selected() -> KeywordSelection {
        KeywordSelection {
            positions: Vec::new(),
            scores: Vec::new(),
            unpoisonable: true,
        }
    }

    struct EmptyOracle;
    impl CandidateOracle for EmptyOracle {
        fn mask_candidates(
            &self,
            text: &TextSample,
            position: usize,
            _max: usize,
        ) -> Result<CandidateSet> {
            Ok(CandidateSet::build(
                position,
                &text.tokens()[position],
                core::iter::empty(),
                0,
            ))
        }
    }

    #[test]
    fn explicit_poison_replaces_keyword_positions() {
        let text = TextSample::new("a man walks near trees").unwrap();
        let out = build_explicit_poison(&text, &keywords(&[1, 3]), "cf").unwrap();
        assert!(!out.no_keywords);
        assert_eq!(out.text.tokens(), &["a", "cf", "walks", "cf", "trees"]);
        assert_eq!(out.text.raw(), "a cf walks cf trees");
    }

    #[test]
    fn explicit_poison_empty_keywords_flagged() {
        let text = TextSample::new("a man walks").unwrap();
        let out = build_explicit_poison(&text, &none_selected(), "cf").unwrap();
        assert!(out.no_keywords);
        assert_eq!(out.text, text);
    }

    #[test]
    fn explicit_poison_saturation() {
        let text = TextSample::new("man walks").unwrap();
        let out = build_explicit_poison(&text, &keywords(&[0, 1]), "cf").unwrap();
        assert_eq!(out.text.tokens(), &["cf", "cf"]);
    }

    #[test]
    fn greedy_rejects_empty_keywords() {
        let text = TextSample::new("a man walks").unwrap();
        let err = greedy_substitute(
            &text,
            &none_selected(),
            &TextPoisonConfig::default(),
            &ToyTextEmbedder::new(1),
            &LexiconOracle,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("unpoisonable"));
    }

    #[test]
    fn empty_candidate_sets_leave_text_unchanged() {
        let text = TextSample::new("a man walks").unwrap();
        let (poisoned, trace) = greedy_substitute(
            &text,
            &keywords(&[1, 2]),
            &TextPoisonConfig::default(),
            &ToyTextEmbedder::new(1),
            &EmptyOracle,
        )
        .unwrap();
        assert_eq!(poisoned, text);
        assert!(trace.steps.is_empty());
        assert!(!trace.terminated_early);
        assert_eq!(trace.s_best, 0.0);
    }

    #[test]
    fn zero_target_stops_at_first_scoring_candidate() {
        let text = TextSample::new("a man walks").unwrap();
        let config = TextPoisonConfig {
            s_target: 0.0,
            ..TextPoisonConfig::default()
        };
        let (poisoned, trace) = greedy_substitute(
            &text,
            &keywords(&[1]),
            &config,
            &ToyTextEmbedder::new(1),
            &LexiconOracle,
        )
        .unwrap();
        assert!(trace.terminated_early);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].chosen, "gentleman");
        assert_eq!(poisoned.tokens()[1], "gentleman");
        assert!(trace.s_best > 0.0);
    }

    #[test]
    fn edit_locality_and_case() {
        let text = TextSample::new("A Man walks").unwrap();
        let config = TextPoisonConfig {
            s_target: 1.0,
            ..TextPoisonConfig::default()
        };
        let (poisoned, trace) = greedy_substitute(
            &text,
            &keywords(&[1]),
            &config,
            &ToyTextEmbedder::new(1),
            &LexiconOracle,
        )
        .unwrap();
        assert_eq!(poisoned.tokens()[0], "a");
        assert_eq!(poisoned.tokens()[2], "walks");
        for step in &trace.steps {
            assert_eq!(step.position, 1);
        }
        if poisoned.tokens()[1] != "man" {
            let surface = poisoned.raw().split(' ').nth(1).unwrap();
            assert!(surface.chars().next().unwrap().is_uppercase());
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let text = TextSample::new("a man walks near trees").unwrap();
        let run = || {
            greedy_substitute(
                &text,
                &keywords(&[1, 4]),
                &TextPoisonConfig::default(),
                &ToyTextEmbedder::new(7),
                &LexiconOracle,
            )
            .unwrap()
        };
        let (p1, t1) = run();
        let (p2, t2) = run();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn trace_scores_strictly_increase() {
        let text = TextSample::new("a man walks near trees").unwrap();
        let config = TextPoisonConfig {
            s_target: 1.0,
            ..TextPoisonConfig::default()
        };
        let (_, trace) = greedy_substitute(
            &text,
            &keywords(&[1, 2, 4]),
            &config,
            &ToyTextEmbedder::new(3),
            &LexiconOracle,
        )
        .unwrap();
        assert!(trace.steps.len() <= 3);
        for pair in trace.steps.windows(2) {
            assert!(pair[1].score_after > pair[0].score_after);
        }
        assert!(!trace.terminated_early || trace.s_best >= 1.0);
    }

    #[test]
    fn seeded_score_can_terminate_immediately() {
        let text = TextSample::new("a man walks").unwrap();
        let config = TextPoisonConfig {
            s_target: 1e-12,
            seed_score_with_original: true,
            ..TextPoisonConfig::default()
        };
        // Original vs explicit poison share "walks", so the seeded score is
        // already positive and the target is met before any candidate.
        let (poisoned, trace) = greedy_substitute(
            &text,
            &keywords(&[1]),
            &config,
            &ToyTextEmbedder::new(1),
            &LexiconOracle,
        )
        .unwrap();
        assert_eq!(poisoned, text);
        assert!(trace.terminated_early);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(TextPoisonConfig::default().validate().is_ok());
        let bad_word = TextPoisonConfig {
            rare_word: String::from("two words"),
            ..TextPoisonConfig::default()
        };
        assert!(bad_word.validate().is_err());
        let bad_target = TextPoisonConfig {
            s_target: 1.5,
            ..TextPoisonConfig::default()
        };
        assert!(bad_target.validate().is_err());
        let bad_cap = TextPoisonConfig {
            max_candidates: 0,
            ..TextPoisonConfig::default()
        };
        assert!(bad_cap.validate().is_err());
    }

    #[test]
    fn out_of_range_keyword_rejected() {
        let text = TextSample::new("a man").unwrap();
        let err = greedy_substitute(
            &text,
            &keywords(&[5]),
            &TextPoisonConfig::default(),
            &ToyTextEmbedder::new(1),
            &LexiconOracle,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("out of range"));
    }
}
