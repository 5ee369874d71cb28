//! Deterministic bag-of-words scorer for offline runs.
//!
//! `log p(target | input) = Σ_{w ∈ target} ln((count_input(w) + 1) / (|input| + V))`
//! where `V` counts the distinct tokens of input and target together.

use std::collections::{HashMap, HashSet};

use super::{LanguageModel, LmScore, TextPair};
use crate::error::{Error, Result};
use crate::text::tokens;

pub fn toy_score(input: &str, target: &str) -> LmScore {
    let input_toks = tokens(input);
    let target_toks = tokens(target);
    if target_toks.is_empty() {
        return LmScore {
            log_likelihood: 0.0,
            n_target_tokens: 0,
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &input_toks {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let vocab: HashSet<&str> = input_toks.iter().chain(&target_toks).map(String::as_str).collect();
    let denom = (input_toks.len() + vocab.len()) as f64;
    let log_likelihood = target_toks
        .iter()
        .map(|w| ((counts.get(w.as_str()).copied().unwrap_or(0) + 1) as f64 / denom).ln())
        .sum();
    LmScore {
        log_likelihood,
        n_target_tokens: target_toks.len(),
    }
}

/// Candidate with the highest length-normalized score; first wins ties.
pub fn toy_generate(input: &str, candidates: &[String]) -> Result<String> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = toy_score(input, c).normalized();
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| candidates[i].clone())
        .ok_or_else(|| Error::Invalid("generation needs a nonempty candidate list".into()))
}

/// The toy model has no parameters; the step only reports the NLL.
pub fn toy_train_step(input: &str, target: &str) -> f64 {
    toy_score(input, target).nll()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ToyLm;

impl LanguageModel for ToyLm {
    fn score(&self, pairs: &[TextPair]) -> Result<Vec<LmScore>> {
        Ok(pairs.iter().map(|p| toy_score(&p.input, &p.target)).collect())
    }

    fn generate(&self, input: &str, candidates: Option<&[String]>) -> Result<String> {
        match candidates {
            Some(c) => toy_generate(input, c),
            None => Err(Error::Invalid(
                "the toy LM only supports generation constrained to candidates".into(),
            )),
        }
    }

    fn train_step(&mut self, pairs: &[TextPair], _lr: f64) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Invalid("train_step needs at least one pair".into()));
        }
        let total: f64 = pairs.iter().map(|p| toy_train_step(&p.input, &p.target)).sum();
        Ok(total / pairs.len() as f64)
    }

    fn state_digest(&self) -> Result<String> {
        Ok("toy-lm:parameter-free".into())
    }
}
