//! Text samples and the tokenizer contract.
//!
//! Tokenizer contract: input is lowercased; tokens are maximal runs of
//! alphanumeric characters; every other non-whitespace character becomes its
//! own single-character token. A [`TextSample`] keeps the original surface
//! forms alongside the lowercase tokens so substitutions can rebuild a raw
//! string that preserves capitalization and re-tokenizes to the same tokens.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A sentence with its lowercase token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextSample {
    raw: String,
    tokens: Vec<String>,
    surfaces: Vec<String>,
}

impl TextSample {
    /// Tokenizes a raw sentence; fails on input with no tokens.
    pub fn new(raw: &str) -> Result<Self> {
        let (tokens, surfaces) = tokenize_with_surfaces(raw);
        if tokens.is_empty() {
            return Err(Error::Validation(
                "text sample has no tokens".to_string(),
            ));
        }
        Ok(TextSample {
            raw: raw.to_string(),
            tokens,
            surfaces,
        })
    }

    /// Builds a transient sample directly from tokens, for probe inputs such
    /// as masked sentences. The synthesized raw string is a plain join and is
    /// not guaranteed to re-tokenize to `tokens`.
    pub fn from_tokens_for_analysis(tokens: Vec<String>) -> Self {
        let raw = tokens.join(" ");
        let surfaces = tokens.clone();
        TextSample {
            raw,
            tokens,
            surfaces,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token count.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Returns a copy with tokens replaced at the given positions.
    ///
    /// Each replacement must itself tokenize to exactly one token. The raw
    /// string is rebuilt from surface forms, matching the capitalization
    /// pattern of each replaced word, and re-tokenizes to the new tokens.
    pub fn with_substitutions(&self, subs: &[(usize, &str)]) -> Result<TextSample> {
        let mut tokens = self.tokens.clone();
        let mut surfaces = self.surfaces.clone();
        for (pos, word) in subs {
            if *pos >= tokens.len() {
                return Err(Error::Validation(format!(
                    "substitution position {pos} out of range for {} tokens",
                    tokens.len()
                )));
            }
            let (word_tokens, _) = tokenize_with_surfaces(word);
            if word_tokens.len() != 1 {
                return Err(Error::Validation(format!(
                    "replacement {word:?} does not tokenize to a single token"
                )));
            }
            surfaces[*pos] = match_case(&surfaces[*pos], &word_tokens[0]);
            tokens[*pos] = word_tokens.into_iter().next().unwrap();
        }
        let raw = join_surfaces(&surfaces);
        debug_assert_eq!(tokenize(&raw), tokens);
        Ok(TextSample {
            raw,
            tokens,
            surfaces,
        })
    }
}

/// Lowercase tokens of a raw string under the tokenizer contract.
pub fn tokenize(raw: &str) -> Vec<String> {
    tokenize_with_surfaces(raw).0
}

fn tokenize_with_surfaces(raw: &str) -> (Vec<String>, Vec<String>) {
    let mut tokens = Vec::new();
    let mut surfaces = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>, surfaces: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(word.to_lowercase());
            surfaces.push(core::mem::take(word));
        }
    };
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, &mut tokens, &mut surfaces);
            if !ch.is_whitespace() {
                tokens.push(ch.to_lowercase().to_string());
                surfaces.push(ch.to_string());
            }
        }
    }
    flush(&mut word, &mut tokens, &mut surfaces);
    (tokens, surfaces)
}

/// Joins surface forms into a raw sentence: single spaces between tokens,
/// except that single-character punctuation attaches to the preceding token.
fn join_surfaces(surfaces: &[String]) -> String {
    let mut out = String::new();
    for surface in surfaces {
        let is_punct = surface.chars().count() == 1
            && !surface.chars().next().unwrap().is_alphanumeric();
        if !out.is_empty() && !is_punct {
            out.push(' ');
        }
        out.push_str(surface);
    }
    out
}

/// Applies the capitalization pattern of `surface` to `word`.
fn match_case(surface: &str, word: &str) -> String {
    let letters: Vec<char> = surface.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return word.to_uppercase();
    }
    if letters.first().is_some_and(|c| c.is_uppercase()) {
        let mut chars = word.chars();
        return match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
    }
    word.to_string()
}
