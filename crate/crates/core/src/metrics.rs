//! Answer normalization, exact match, token F1, corpus BLEU and per-language reports.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LanguageCode, QaExample};
use crate::par::{self, Execution};
use crate::{Error, Result};

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").expect("valid regex"));

const ENGLISH_ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, strips Unicode punctuation, collapses whitespace, and for
/// English drops the articles `a`, `an`, `the`.
pub fn normalize_answer(text: &str, language: &LanguageCode) -> String {
    let lower = text.to_lowercase();
    let stripped = PUNCTUATION.replace_all(&lower, "");
    let tokens = stripped.split_whitespace();
    if language.is_english() {
        tokens
            .filter(|t| !ENGLISH_ARTICLES.contains(t))
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        tokens.collect::<Vec<_>>().join(" ")
    }
}

pub fn em<S: AsRef<str>>(prediction: &str, golds: &[S], language: &LanguageCode) -> u8 {
    let pred = normalize_answer(prediction, language);
    u8::from(golds.iter().any(|g| normalize_answer(g.as_ref(), language) == pred))
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-overlap F1 against the best-matching gold.
pub fn f1<S: AsRef<str>>(prediction: &str, golds: &[S], language: &LanguageCode) -> f64 {
    let pred = normalize_answer(prediction, language);
    golds
        .iter()
        .map(|g| token_f1(&pred, &normalize_answer(g.as_ref(), language)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageScore {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_language: BTreeMap<LanguageCode, LanguageScore>,
    /// Unweighted mean over non-English languages; `None` if there are none.
    pub macro_em_excl_en: Option<f64>,
    pub macro_f1_excl_en: Option<f64>,
}

impl EvalReport {
    /// Plain-text table: one row per language, then the macro average row.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12}{:>8}{:>10}{:>10}\n", "Language", "n", "EM", "F1");
        for (lang, sc) in &self.per_language {
            s.push_str(&format!(
                "{:<12}{:>8}{:>10.1}{:>10.1}\n",
                lang.as_str(),
                sc.n,
                sc.em,
                sc.f1
            ));
        }
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        s.push_str(&format!(
            "{:<12}{:>8}{:>10}{:>10}\n",
            "Avg (excl. en)",
            "",
            fmt(self.macro_em_excl_en),
            fmt(self.macro_f1_excl_en)
        ));
        s
    }
}

pub fn evaluate(predictions: &HashMap<String, String>, gold: &Dataset) -> Result<EvalReport> {
    evaluate_with(Execution::default(), predictions, gold)
}

pub fn evaluate_with(exec: Execution, predictions: &HashMap<String, String>, gold: &Dataset) -> Result<EvalReport> {
    let missing: Vec<String> = gold
        .iter()
        .filter(|e| !predictions.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let scores = par::map(exec, gold.examples(), |ex: &QaExample| {
        let pred = &predictions[&ex.id];
        let golds = ex.golds();
        (em(pred, &golds, &ex.language), f1(pred, &golds, &ex.language))
    });
    let mut sums: BTreeMap<LanguageCode, (f64, f64, usize)> = BTreeMap::new();
    for (ex, (e, f)) in gold.iter().zip(scores) {
        let entry = sums.entry(ex.language.clone()).or_default();
        entry.0 += f64::from(e);
        entry.1 += f;
        entry.2 += 1;
    }
    let per_language: BTreeMap<_, _> = sums
        .into_iter()
        .map(|(lang, (e, f, n))| {
            let score = LanguageScore {
                em: 100.0 * e / n as f64,
                f1: 100.0 * f / n as f64,
                n,
            };
            (lang, score)
        })
        .collect();
    let (macro_em_excl_en, macro_f1_excl_en) = macro_excluding_english(&per_language);
    Ok(EvalReport {
        per_language,
        macro_em_excl_en,
        macro_f1_excl_en,
    })
}

/// Mean of per-language EM and F1 over languages other than English,
/// each language counted once.
pub fn macro_excluding_english(scores: &BTreeMap<LanguageCode, LanguageScore>) -> (Option<f64>, Option<f64>) {
    let others: Vec<&LanguageScore> = scores.iter().filter(|(l, _)| !l.is_english()).map(|(_, s)| s).collect();
    if others.is_empty() {
        return (None, None);
    }
    let k = others.len() as f64;
    (
        Some(others.iter().map(|s| s.em).sum::<f64>() / k),
        Some(others.iter().map(|s| s.f1).sum::<f64>() / k),
    )
}

pub const MAX_NGRAM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_NGRAM],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// `1` if the hypothesis is longer than the reference, otherwise
/// `exp(1 - ref_len / hyp_len)`; `0` for an empty hypothesis.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with clipped n-gram counts up to 4-grams and no smoothing.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::invalid("BLEU needs at least one segment"));
    }
    let mut matched = [0usize; MAX_NGRAM];
    let mut total = [0usize; MAX_NGRAM];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_NGRAM {
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hyp, n) {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; MAX_NGRAM];
    for n in 0..MAX_NGRAM {
        if total[n] > 0 {
            precisions[n] = matched[n] as f64 / total[n] as f64;
        }
    }
    let bp = brevity_penalty(hyp_len, ref_len);
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_NGRAM as f64;
        bp * log_mean.exp() * 100.0
    } else {
        0.0
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
    })
}

/// Whitespace tokenization used for text BLEU.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
