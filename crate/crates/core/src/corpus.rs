//! Gold QA datasets, unlabeled passage pools, sampling and statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{char_len, char_slice, json_error};
use crate::{Error, Result};

/// Default passage length window, in characters.
pub const MIN_PASSAGE_CHARS: usize = 200;
pub const MAX_PASSAGE_CHARS: usize = 510;

/// Lowercase ASCII language tag such as `fi` or `ar`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: &str) -> Result<Self> {
        let ok = (2..=3).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase());
        if ok {
            Ok(LanguageCode(code.to_string()))
        } else {
            Err(Error::InvalidLanguage(code.to_string()))
        }
    }

    pub fn english() -> Self {
        LanguageCode("en".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_english(&self) -> bool {
        self.0 == "en"
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        LanguageCode::new(&s)
    }
}

impl From<LanguageCode> for String {
    fn from(l: LanguageCode) -> String {
        l.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageCode::new(s)
    }
}

/// An unlabeled paragraph from a target-language pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub language: LanguageCode,
    pub source: String,
}

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Mt,
    Pe,
    Pt,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Gold => "gold",
            Provenance::Mt => "mt",
            Provenance::Pe => "pe",
            Provenance::Pt => "pt",
        }
    }
}

/// One (context, question, answer) triple.
///
/// `answer_start` is a character offset into `context`. Additional gold
/// answers parsed from SQuAD files are kept in `alt_answers` for
/// max-over-golds scoring; they are not part of the JSONL export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
    pub answer_start: Option<usize>,
    pub language: LanguageCode,
    pub provenance: Provenance,
    pub source_dataset: String,
    #[serde(skip)]
    pub alt_answers: Vec<String>,
}

impl QaExample {
    /// Checks the offset invariant: the answer appears at `answer_start`.
    pub fn answer_at_offset(&self) -> bool {
        match self.answer_start {
            None => true,
            Some(start) => char_slice(&self.context, start, char_len(&self.answer)) == Some(self.answer.as_str()),
        }
    }

    /// Primary answer followed by any alternates.
    pub fn golds(&self) -> Vec<&str> {
        std::iter::once(self.answer.as_str())
            .chain(self.alt_answers.iter().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    EnglishOnly,
    FewShot,
    Full,
}

/// A named, ordered collection of examples with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub scenario: Scenario,
    examples: Vec<QaExample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, scenario: Scenario, examples: Vec<QaExample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Dataset {
            name: name.into(),
            scenario,
            examples,
        })
    }

    pub fn empty(name: impl Into<String>, scenario: Scenario) -> Self {
        Dataset {
            name: name.into(),
            scenario,
            examples: Vec::new(),
        }
    }

    pub fn examples(&self) -> &[QaExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<QaExample> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, QaExample> {
        self.examples.iter()
    }

    /// Distinct languages, sorted.
    pub fn languages(&self) -> Vec<LanguageCode> {
        let mut langs: Vec<_> = self.examples.iter().map(|e| e.language.clone()).collect();
        langs.sort();
        langs.dedup();
        langs
    }

    /// The single language of a monolingual, non-empty dataset.
    pub fn sole_language(&self) -> Result<LanguageCode> {
        match self.languages().as_slice() {
            [only] => Ok(only.clone()),
            [] => Err(Error::invalid(format!("dataset {:?} is empty", self.name))),
            many => Err(Error::invalid(format!(
                "dataset {:?} mixes languages: {}",
                self.name,
                many.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Writes one JSON object per line with the export field set.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_jsonl(name: impl Into<String>, scenario: Scenario, text: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: QaExample = serde_json::from_str(line).map_err(|e| Error::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !ex.answer_at_offset() {
                return Err(Error::Line {
                    line: i + 1,
                    message: "answer text does not match context at answer_start".into(),
                });
            }
            examples.push(ex);
        }
        Dataset::new(name, scenario, examples)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a QaExample;
    type IntoIter = std::slice::Iter<'a, QaExample>;
    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// A qa entry that was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub qa_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub parsed: usize,
    pub skipped: Vec<RecordError>,
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Parses a SQuAD v1.1 layout file (also used by TyDiQA-GoldP and MLQA).
///
/// Entries without answers, with empty questions/answers, with an answer that
/// does not sit at its offset, or with a duplicate id are skipped and listed
/// in the report.
pub fn parse_squad_json(bytes: &[u8], dataset_name: &str, language: &LanguageCode) -> Result<(Dataset, ParseReport)> {
    parse_squad_with(bytes, dataset_name, |_| Some(language.clone()))
}

/// Language names used as id prefixes in the TyDiQA-GoldP release
/// (`arabic-123…`), mapped to ISO 639-1 codes.
const TYDIQA_PREFIXES: [(&str, &str); 9] = [
    ("arabic", "ar"),
    ("bengali", "bn"),
    ("english", "en"),
    ("finnish", "fi"),
    ("indonesian", "id"),
    ("korean", "ko"),
    ("russian", "ru"),
    ("swahili", "sw"),
    ("telugu", "te"),
];

/// Language of a TyDiQA-GoldP qa id, from its prefix before the first `-`.
pub fn tydiqa_language(qa_id: &str) -> Option<LanguageCode> {
    let prefix = qa_id.split('-').next()?;
    TYDIQA_PREFIXES
        .iter()
        .find(|(name, _)| *name == prefix)
        .map(|(_, code)| LanguageCode((*code).to_string()))
}

/// Like [`parse_squad_json`] for a mixed-language TyDiQA-GoldP file; each
/// entry's language comes from its id prefix.
pub fn parse_tydiqa_json(bytes: &[u8], dataset_name: &str) -> Result<(Dataset, ParseReport)> {
    parse_squad_with(bytes, dataset_name, tydiqa_language)
}

fn parse_squad_with(
    bytes: &[u8],
    dataset_name: &str,
    language_of: impl Fn(&str) -> Option<LanguageCode>,
) -> Result<(Dataset, ParseReport)> {
    let file: SquadFile = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, &e))?;
    let mut report = ParseReport::default();
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let mut skip = |reason: &str| {
                    report.skipped.push(RecordError {
                        qa_id: qa.id.clone(),
                        reason: reason.to_string(),
                    })
                };
                let Some(first) = qa.answers.first() else {
                    skip("empty answers list");
                    continue;
                };
                if qa.question.trim().is_empty() || first.text.is_empty() {
                    skip("empty question or answer");
                    continue;
                }
                if seen.contains(&qa.id) {
                    skip("duplicate id");
                    continue;
                }
                let Some(language) = language_of(&qa.id) else {
                    skip("unknown language prefix");
                    continue;
                };
                let ex = QaExample {
                    id: qa.id.clone(),
                    context: para.context.clone(),
                    question: qa.question.clone(),
                    answer: first.text.clone(),
                    answer_start: Some(first.answer_start),
                    language,
                    provenance: Provenance::Gold,
                    source_dataset: dataset_name.to_string(),
                    alt_answers: qa.answers[1..].iter().map(|a| a.text.clone()).collect(),
                };
                if !ex.answer_at_offset() {
                    skip("answer text does not match context at answer_start");
                    continue;
                }
                seen.insert(qa.id.clone());
                examples.push(ex);
            }
        }
    }
    report.parsed = examples.len();
    Ok((Dataset::new(dataset_name, Scenario::Full, examples)?, report))
}

#[derive(Deserialize)]
struct PoolRecord {
    id: String,
    text: String,
    #[serde(default)]
    source: Option<String>,
}

/// Loads newline-delimited `{"id", "text", "source"?}` records.
pub fn load_passage_pool(lines: &str, language: &LanguageCode) -> Result<Vec<Passage>> {
    let mut pool = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let rec: PoolRecord = serde_json::from_str(line).map_err(|e| Error::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.text.is_empty() {
            return Err(Error::Line {
                line: line_no,
                message: "empty text".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Line {
                line: line_no,
                message: format!("duplicate id {:?}", rec.id),
            });
        }
        pool.push(Passage {
            id: rec.id,
            text: rec.text,
            language: language.clone(),
            source: rec.source.unwrap_or_default(),
        });
    }
    Ok(pool)
}

/// Draws `n` passages uniformly without replacement among those whose
/// character length lies in `[min_len, max_len]`. Output is in draw order.
pub fn sample_unlabeled(pool: &[Passage], n: usize, seed: u64, min_len: usize, max_len: usize) -> Result<Vec<Passage>> {
    let mut eligible: Vec<&Passage> = pool
        .iter()
        .filter(|p| (min_len..=max_len).contains(&char_len(&p.text)))
        .collect();
    if n > eligible.len() {
        return Err(Error::NotEnough {
            requested: n,
            available: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked, _) = eligible.partial_shuffle(&mut rng, n);
    Ok(picked.iter().map(|p| (*p).clone()).collect())
}

/// Draws the `n`-shot split for one language.
pub fn subsample_fewshot(dataset: &Dataset, language: &LanguageCode, n: usize, seed: u64) -> Result<Dataset> {
    let mut pool: Vec<&QaExample> = dataset.iter().filter(|e| &e.language == language).collect();
    if n > pool.len() {
        return Err(Error::NotEnough {
            requested: n,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (picked, _) = pool.partial_shuffle(&mut rng, n);
    let examples = picked.iter().map(|e| (*e).clone()).collect();
    Dataset::new(
        format!("{}-{}-{}shot", dataset.name, language, n),
        Scenario::FewShot,
        examples,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_language: BTreeMap<LanguageCode, usize>,
    pub total: usize,
}

impl DatasetStats {
    /// Fixed-width table, one row per language plus a total row.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10}{:>10}\n", "Language", "Count");
        for (lang, n) in &self.per_language {
            s.push_str(&format!("{:<10}{:>10}\n", lang.as_str(), n));
        }
        s.push_str(&format!("{:<10}{:>10}\n", "Total", self.total));
        s
    }

    pub fn merge(&mut self, other: &DatasetStats) {
        for (lang, n) in &other.per_language {
            *self.per_language.entry(lang.clone()).or_default() += n;
        }
        self.total += other.total;
    }
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for ex in dataset {
        *stats.per_language.entry(ex.language.clone()).or_default() += 1;
    }
    stats.total = dataset.len();
    stats
}
