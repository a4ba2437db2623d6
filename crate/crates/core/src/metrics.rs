//! SQuAD F1, classification F1 variants, and summary statistics.
//!
//! Scores are on the unit interval here; reports scale them to percentages.

use std::collections::HashMap;

use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("at least one gold answer is required")]
    EmptyGolds,
    #[error("predictions ({preds}) and golds ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no examples to score")]
    Empty,
    #[error("gold label {label} is outside 0..{n_labels}")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("need at least 2 values, got {0}")]
    TooFewValues(usize),
}

/// Python's `string.punctuation`, which the official SQuAD evaluator strips.
const ASCII_PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedAnswer {
    pub tokens: Vec<String>,
}

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn is_word_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Lowercase, strip punctuation, drop the articles "a", "an", "the" as whole
/// words, split on whitespace.
pub fn normalize_answer(text: &str) -> NormalizedAnswer {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|&c| !ASCII_PUNCTUATION.contains(c) && !is_unicode_punctuation(c))
        .collect();

    // Articles are removed as maximal word-character runs, the same span a
    // `\b(a|an|the)\b` regex matches.
    let mut without_articles = String::with_capacity(stripped.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if matches!(word.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in stripped.chars() {
        if is_word_char(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut without_articles);
            without_articles.push(c);
        }
    }
    flush(&mut word, &mut without_articles);

    NormalizedAnswer {
        tokens: without_articles.split_whitespace().map(str::to_owned).collect(),
    }
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred == gold { 1.0 } else { 0.0 };
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for tok in gold {
        *gold_counts.entry(tok).or_default() += 1;
    }
    let mut overlap = 0usize;
    for tok in pred {
        if let Some(n) = gold_counts.get_mut(tok.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    // Same operation order as the reference evaluator, for bit parity.
    let precision = 1.0 * overlap as f64 / pred.len() as f64;
    let recall = 1.0 * overlap as f64 / gold.len() as f64;
    (2.0 * precision * recall) / (precision + recall)
}

/// Token-overlap F1 of `prediction` against the best-matching gold.
pub fn squad_f1<S: AsRef<str>>(prediction: &str, golds: &[S]) -> Result<f64, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGolds);
    }
    let pred = normalize_answer(prediction).tokens;
    Ok(golds
        .iter()
        .map(|g| token_f1(&pred, &normalize_answer(g.as_ref()).tokens))
        .fold(0.0, f64::max))
}

fn check_lengths(preds: &[usize], golds: &[usize], n_labels: usize) -> Result<(), MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&label) = golds.iter().find(|&&g| g >= n_labels) {
        return Err(MetricError::LabelOutOfRange { label, n_labels });
    }
    Ok(())
}

/// Unweighted mean of per-label F1 over labels `0..n_labels`.
///
/// A prediction outside `0..n_labels` (an abstention) counts against the
/// gold label's recall only.
pub fn macro_f1(preds: &[usize], golds: &[usize], n_labels: usize) -> Result<f64, MetricError> {
    check_lengths(preds, golds, n_labels)?;
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut fn_ = vec![0usize; n_labels];
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if p < n_labels {
                fp[p] += 1;
            }
        }
    }
    let total: f64 = (0..n_labels)
        .map(|l| {
            if tp[l] == 0 {
                0.0
            } else {
                2.0 * tp[l] as f64 / (2 * tp[l] + fp[l] + fn_[l]) as f64
            }
        })
        .sum();
    Ok(total / n_labels as f64)
}

/// Micro-averaged F1; for single-label classification this is accuracy.
pub fn micro_f1(preds: &[usize], golds: &[usize], n_labels: usize) -> Result<f64, MetricError> {
    check_lengths(preds, golds, n_labels)?;
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / golds.len() as f64)
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64), MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::TooFewValues(n));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((mean, var.sqrt() / nf.sqrt()))
}
