//! Question-type distribution by leading words.
//!
//! Questions are translated to English and bucketed by their first word
//! (inner ring) and first two words (outer ring). Rare first words are merged
//! into `Other`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{TranslationRequest, Translator, DEFAULT_PARALLELISM};
use crate::corpus::{Dataset, LanguageCode};
use crate::par;
use crate::{Error, Result};

pub const OTHER: &str = "Other";
pub const DEFAULT_OTHER_THRESHOLD: f64 = 0.02;

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn question_tokens(question: &str) -> Vec<String> {
    question
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

/// `(first word, first two words)`, capitalized; `("Other", "Other")` for an
/// empty question.
pub fn categorize(question_en: &str) -> (String, String) {
    let tokens = question_tokens(question_en);
    match tokens.as_slice() {
        [] => (OTHER.to_string(), OTHER.to_string()),
        [only] => (capitalize(only), capitalize(only)),
        [first, second, ..] => (capitalize(first), capitalize(&format!("{first} {second}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryStats {
    pub count: usize,
    /// Share within the parent category.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub fraction: f64,
    pub subcategories: BTreeMap<String, SubcategoryStats>,
}

/// Category → subcategory → count, before any merging.
pub type RawCounts = BTreeMap<String, BTreeMap<String, usize>>;

/// One pie: total, translation failures, and the two category levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub total: usize,
    pub translation_failures: usize,
    pub categories: BTreeMap<String, CategoryStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Category,
    Subcategory,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Ring {
    pub fn from_counts(raw: &RawCounts, translation_failures: usize, other_threshold: f64) -> Ring {
        let total: usize = raw.values().flat_map(|subs| subs.values()).sum();
        let mut merged: RawCounts = BTreeMap::new();
        for (cat, subs) in raw {
            let count: usize = subs.values().sum();
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let key = if fraction < other_threshold {
                OTHER
            } else {
                cat.as_str()
            };
            let target = merged.entry(key.to_string()).or_default();
            for (sub, n) in subs {
                *target.entry(sub.clone()).or_default() += n;
            }
        }
        let categories = merged
            .into_iter()
            .map(|(cat, subs)| {
                let count: usize = subs.values().sum();
                let subcategories = subs
                    .into_iter()
                    .map(|(sub, n)| {
                        let stats = SubcategoryStats {
                            count: n,
                            fraction: n as f64 / count as f64,
                        };
                        (sub, stats)
                    })
                    .collect();
                let stats = CategoryStats {
                    count,
                    fraction: count as f64 / total as f64,
                    subcategories,
                };
                (cat, stats)
            })
            .collect();
        Ring {
            total,
            translation_failures,
            categories,
        }
    }

    /// `label,count` rows for one level of the ring.
    pub fn to_csv(&self, level: Level) -> String {
        let mut out = String::from("label,count\n");
        for (cat, stats) in &self.categories {
            match level {
                Level::Category => out.push_str(&format!("{},{}\n", csv_field(cat), stats.count)),
                Level::Subcategory => {
                    for (sub, s) in &stats.subcategories {
                        out.push_str(&format!("{},{}\n", csv_field(sub), s.count));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub other_threshold: f64,
    pub per_language: BTreeMap<LanguageCode, Ring>,
    pub pooled: Option<Ring>,
}

/// Translates non-English questions to English (at most `DEFAULT_PARALLELISM`
/// requests in flight), categorizes them and builds per-language rings, plus
/// a pooled ring when `pool_all_languages` is set. Failed translations are
/// counted and bucketed as `Other`.
pub fn distribution(
    dataset: &Dataset,
    translator: &dyn Translator,
    pool_all_languages: bool,
    other_threshold: f64,
) -> Result<TaxonomyReport> {
    distribution_bounded(
        dataset,
        translator,
        pool_all_languages,
        other_threshold,
        DEFAULT_PARALLELISM,
    )
}

pub fn distribution_bounded(
    dataset: &Dataset,
    translator: &dyn Translator,
    pool_all_languages: bool,
    other_threshold: f64,
    parallelism: usize,
) -> Result<TaxonomyReport> {
    if !(0.0..=1.0).contains(&other_threshold) {
        return Err(Error::invalid("other_threshold must be in [0, 1]"));
    }
    let en = LanguageCode::english();
    let labels = par::map_bounded(parallelism, dataset.examples(), |ex| {
        if ex.language.is_english() {
            return Some(categorize(&ex.question));
        }
        translator
            .translate(&TranslationRequest::new(ex.question.as_str(), &ex.language, &en))
            .ok()
            .map(|q| categorize(&q))
    });

    let mut raw: BTreeMap<LanguageCode, (RawCounts, usize)> = BTreeMap::new();
    for (ex, label) in dataset.iter().zip(labels) {
        let (counts, failures) = raw.entry(ex.language.clone()).or_default();
        let (cat, sub) = label.unwrap_or_else(|| {
            *failures += 1;
            (OTHER.to_string(), OTHER.to_string())
        });
        *counts.entry(cat).or_default().entry(sub).or_default() += 1;
    }

    let pooled = pool_all_languages.then(|| {
        let mut all: RawCounts = BTreeMap::new();
        let mut failures = 0;
        for (counts, f) in raw.values() {
            failures += f;
            for (cat, subs) in counts {
                let target = all.entry(cat.clone()).or_default();
                for (sub, n) in subs {
                    *target.entry(sub.clone()).or_default() += n;
                }
            }
        }
        Ring::from_counts(&all, failures, other_threshold)
    });
    let per_language = raw
        .iter()
        .map(|(l, (counts, f))| (l.clone(), Ring::from_counts(counts, *f, other_threshold)))
        .collect();
    Ok(TaxonomyReport {
        other_threshold,
        per_language,
        pooled,
    })
}
