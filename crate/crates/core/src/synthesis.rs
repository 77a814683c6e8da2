//! Synthetic data generation (translation, prompting, tuned prompts),
//! filtering, and assembly of training unions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{GenerationRequest, TextGenerator, TranslationRequest, Translator, DEFAULT_PARALLELISM};
use crate::corpus::{dataset_stats, Dataset, DatasetStats, LanguageCode, Passage, Provenance, QaExample, Scenario};
use crate::metrics::normalize_answer;
use crate::par::{self, Execution};
use crate::promptkit::{
    parse_completion, render_answer_prompt, render_question_prompt, render_roundtrip_prompt, ExemplarScenario,
    ExemplarSet, FIELD_STOPS,
};
use crate::tuner::{encode_context, greedy_decode, split_at_sep, SoftPrompt, ToyLm};
use crate::util::{char_find, config_hash};
use crate::{Error, Result};

/// Separator between answer and question in completions from a remote
/// prompt-tuned backend.
pub const REMOTE_PT_SEPARATOR: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NotSubstringOfContext,
    SubstringOfQuestion,
    RoundtripMismatch,
    EmptyGeneration,
}

/// Counts of kept and dropped items for one filtering pass or a chain of them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl FilterReport {
    pub fn passthrough(n: usize) -> Self {
        FilterReport {
            input_count: n,
            kept_count: n,
            ..FilterReport::default()
        }
    }

    fn record(&mut self, outcome: std::result::Result<(), DropReason>) {
        self.input_count += 1;
        match outcome {
            Ok(()) => self.kept_count += 1,
            Err(reason) => *self.dropped.entry(reason).or_default() += 1,
        }
    }

    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    /// `input == kept + Σ dropped`
    pub fn is_conserved(&self) -> bool {
        self.input_count == self.kept_count + self.dropped_total()
    }

    /// Composes this report with a later pass that consumed our kept items.
    pub fn then(mut self, next: FilterReport) -> FilterReport {
        debug_assert_eq!(self.kept_count, next.input_count);
        self.kept_count = next.kept_count;
        for (reason, n) in next.dropped {
            *self.dropped.entry(reason).or_default() += n;
        }
        self.notes.extend(next.notes);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mt,
    Pe,
    Pt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Maximum concurrent backend requests.
    pub parallelism: usize,
    /// Token budget for each single-field generation.
    pub max_tokens: usize,
    pub roundtrip: bool,
    pub roundtrip_mode: MatchMode,
    /// Decode budget for the local prompt-tuned model.
    pub decode_max_len: usize,
}

impl SynthOptions {
    pub fn for_method(method: Method) -> Self {
        SynthOptions {
            parallelism: DEFAULT_PARALLELISM,
            max_tokens: 64,
            roundtrip: method == Method::Pe,
            roundtrip_mode: MatchMode::Normalized,
            decode_max_len: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub passage_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRun {
    pub raw: Dataset,
    pub filtered: Dataset,
    pub report: FilterReport,
    pub failures: Vec<GenerationFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRun {
    pub method: Method,
    pub scenario: ExemplarScenario,
    pub languages: BTreeSet<LanguageCode>,
    pub per_language: BTreeMap<LanguageCode, LanguageRun>,
    pub options: SynthOptions,
    pub config_hash: String,
}

#[derive(Serialize)]
struct RunConfigRecord<'a> {
    method: Method,
    scenario: ExemplarScenario,
    languages: &'a BTreeSet<LanguageCode>,
    options: &'a SynthOptions,
}

impl SynthesisRun {
    fn new(
        method: Method,
        scenario: ExemplarScenario,
        per_language: BTreeMap<LanguageCode, LanguageRun>,
        options: &SynthOptions,
    ) -> Self {
        let languages: BTreeSet<_> = per_language.keys().cloned().collect();
        let config_hash = config_hash(&RunConfigRecord {
            method,
            scenario,
            languages: &languages,
            options,
        });
        SynthesisRun {
            method,
            scenario,
            languages,
            per_language,
            options: options.clone(),
            config_hash,
        }
    }

    pub fn filtered(&self) -> BTreeMap<LanguageCode, Dataset> {
        self.per_language
            .iter()
            .map(|(l, run)| (l.clone(), run.filtered.clone()))
            .collect()
    }

    /// Writes `<lang>/raw.jsonl`, `<lang>/filtered.jsonl`, `report.json` and
    /// `config.json` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct LangReport<'a> {
            raw_count: usize,
            filtered_count: usize,
            filter: &'a FilterReport,
            failures: &'a [GenerationFailure],
        }
        let mut reports = BTreeMap::new();
        for (lang, run) in &self.per_language {
            let sub = dir.join(lang.as_str());
            fs::create_dir_all(&sub)?;
            fs::write(sub.join("raw.jsonl"), run.raw.to_jsonl())?;
            fs::write(sub.join("filtered.jsonl"), run.filtered.to_jsonl())?;
            reports.insert(
                lang.clone(),
                LangReport {
                    raw_count: run.raw.len(),
                    filtered_count: run.filtered.len(),
                    filter: &run.report,
                    failures: &run.failures,
                },
            );
        }
        write_json(&dir.join("report.json"), &reports)?;
        let config = serde_json::json!({
            "method": self.method,
            "scenario": self.scenario,
            "languages": self.languages,
            "options": self.options,
            "config_hash": self.config_hash,
        });
        write_json(&dir.join("config.json"), &config)?;
        Ok(())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn require_english(d_en: &Dataset) -> Result<()> {
    match d_en.iter().find(|e| !e.language.is_english()) {
        Some(ex) => Err(Error::invalid(format!(
            "example {:?} in the English set is {}",
            ex.id, ex.language
        ))),
        None => Ok(()),
    }
}

/// Translate-train: every English example is translated field by field into
/// each non-English language. No filtering is applied.
pub fn synth_mt(
    d_en: &Dataset,
    translator: &dyn Translator,
    languages: &BTreeSet<LanguageCode>,
    options: &SynthOptions,
) -> Result<SynthesisRun> {
    require_english(d_en)?;
    let en = LanguageCode::english();
    let mut per_language = BTreeMap::new();
    for lang in languages.iter().filter(|l| !l.is_english()) {
        let translated = par::map_bounded(options.parallelism, d_en.examples(), |ex| {
            let tr = |field: &'static str, text: &str| {
                translator
                    .translate(&TranslationRequest::new(text, &en, lang))
                    .map_err(|source| Error::Translation {
                        id: ex.id.clone(),
                        field,
                        source,
                    })
            };
            Ok(QaExample {
                id: ex.id.clone(),
                context: tr("context", &ex.context)?,
                question: tr("question", &ex.question)?,
                answer: tr("answer", &ex.answer)?,
                answer_start: None,
                language: lang.clone(),
                provenance: Provenance::Mt,
                source_dataset: ex.source_dataset.clone(),
                alt_answers: Vec::new(),
            })
        });
        let examples = translated.into_iter().collect::<Result<Vec<_>>>()?;
        let raw = Dataset::new(format!("mt-{lang}"), Scenario::EnglishOnly, examples)?;
        let n = raw.len();
        per_language.insert(
            lang.clone(),
            LanguageRun {
                filtered: raw.clone(),
                raw,
                report: FilterReport::passthrough(n),
                failures: Vec::new(),
            },
        );
    }
    Ok(SynthesisRun::new(
        Method::Mt,
        ExemplarScenario::EnglishOnly,
        per_language,
        options,
    ))
}

fn generate_field(backend: &dyn TextGenerator, prompt: String, max_tokens: usize) -> Result<String> {
    let response = backend.generate(&GenerationRequest::greedy(prompt, max_tokens, &FIELD_STOPS))?;
    parse_completion(&response.text)
}

fn synthetic_example(passage: &Passage, question: String, answer: String, provenance: Provenance) -> QaExample {
    QaExample {
        id: passage.id.clone(),
        context: passage.text.clone(),
        question,
        answer,
        answer_start: None,
        language: passage.language.clone(),
        provenance,
        source_dataset: passage.source.clone(),
        alt_answers: Vec::new(),
    }
}

/// Collects per-passage generation outcomes into the raw dataset, a
/// generation-stage report and the failure list.
fn collect_generated(
    name: String,
    passages: &[Passage],
    outcomes: Vec<std::result::Result<QaExample, String>>,
) -> Result<(Dataset, FilterReport, Vec<GenerationFailure>)> {
    let mut report = FilterReport::default();
    let mut examples = Vec::new();
    let mut failures = Vec::new();
    for (passage, outcome) in passages.iter().zip(outcomes) {
        match outcome {
            Ok(ex) => {
                report.record(Ok(()));
                examples.push(ex);
            }
            Err(error) => {
                report.record(Err(DropReason::EmptyGeneration));
                failures.push(GenerationFailure {
                    passage_id: passage.id.clone(),
                    error,
                });
            }
        }
    }
    let scenario = Scenario::Full;
    Ok((Dataset::new(name, scenario, examples)?, report, failures))
}

fn check_passage_languages(lang: &LanguageCode, passages: &[Passage]) -> Result<()> {
    match passages.iter().find(|p| &p.language != lang) {
        Some(p) => Err(Error::invalid(format!(
            "passage {:?} is {}, expected {lang}",
            p.id, p.language
        ))),
        None => Ok(()),
    }
}

/// Two-stage prompted generation: answer first, then a question conditioned
/// on that answer. Failed passages are recorded and skipped.
pub fn synth_pe(
    exemplars: &BTreeMap<LanguageCode, ExemplarSet>,
    passages: &BTreeMap<LanguageCode, Vec<Passage>>,
    backend: &dyn TextGenerator,
    options: &SynthOptions,
) -> Result<SynthesisRun> {
    let mut scenario = None;
    let mut per_language = BTreeMap::new();
    for (lang, pool) in passages {
        let set = exemplars
            .get(lang)
            .ok_or_else(|| Error::invalid(format!("no exemplars for {lang}")))?;
        if &set.language != lang {
            return Err(Error::invalid(format!("exemplar set for {lang} is {}", set.language)));
        }
        check_passage_languages(lang, pool)?;
        scenario.get_or_insert(set.scenario);

        let outcomes = par::map_bounded(options.parallelism, pool, |passage| {
            let answer = generate_field(backend, render_answer_prompt(set, passage).text, options.max_tokens)
                .map_err(|e| format!("answer stage: {e}"))?;
            let question = generate_field(
                backend,
                render_question_prompt(set, passage, &answer).text,
                options.max_tokens,
            )
            .map_err(|e| format!("question stage: {e}"))?;
            Ok(synthetic_example(passage, question, answer, Provenance::Pe))
        });
        let (raw, gen_report, failures) = collect_generated(format!("pe-{lang}"), pool, outcomes)?;
        let (mut filtered, mut report) = filter_extractive(&raw);
        report = gen_report.then(report);
        if options.roundtrip {
            let (kept, rt) = filter_roundtrip(&filtered, backend, set, options);
            filtered = kept;
            report = report.then(rt);
        }
        per_language.insert(
            lang.clone(),
            LanguageRun {
                raw,
                filtered,
                report,
                failures,
            },
        );
    }
    let scenario = scenario.unwrap_or(ExemplarScenario::FewShot);
    Ok(SynthesisRun::new(Method::Pe, scenario, per_language, options))
}

/// Where prompt-tuned generations come from.
pub enum PtSource<'a> {
    /// The local frozen model with one tuned prompt per language.
    Toy {
        model: &'a ToyLm,
        prompts: &'a BTreeMap<LanguageCode, SoftPrompt>,
    },
    /// A remote backend serving a prompt-tuned model. It receives
    /// `"[l]" + passage` and answers `answer [SEP] question`.
    Remote(&'a dyn TextGenerator),
}

fn pt_toy_generate(
    model: &ToyLm,
    prompt: &SoftPrompt,
    passage: &Passage,
    max_len: usize,
) -> std::result::Result<(String, String), String> {
    let input = encode_context(passage.language.as_str(), &passage.text);
    let tokens = greedy_decode(model, prompt, &input, max_len);
    let (a, q) = split_at_sep(&tokens).ok_or("decoded output has no separator")?;
    let a = String::from_utf8(a).map_err(|_| "answer is not valid UTF-8")?;
    let q = String::from_utf8(q).map_err(|_| "question is not valid UTF-8")?;
    Ok((a, q))
}

fn pt_remote_generate(
    backend: &dyn TextGenerator,
    passage: &Passage,
    max_tokens: usize,
) -> std::result::Result<(String, String), String> {
    let prompt = format!("[{}]{}", passage.language, passage.text);
    let text = backend
        .generate(&GenerationRequest::greedy(prompt, max_tokens, &[]))
        .map_err(|e| e.to_string())?
        .text;
    let (a, q) = text
        .split_once(REMOTE_PT_SEPARATOR)
        .ok_or("completion has no separator")?;
    Ok((a.trim().to_string(), q.trim().to_string()))
}

/// Generation with tuned prompts: decode `a SEP q` per passage, then apply
/// the extractive filters. Round-trip filtering is not applied here.
pub fn synth_pt(
    source: PtSource<'_>,
    passages: &BTreeMap<LanguageCode, Vec<Passage>>,
    scenario: ExemplarScenario,
    options: &SynthOptions,
) -> Result<SynthesisRun> {
    let mut per_language = BTreeMap::new();
    for (lang, pool) in passages {
        check_passage_languages(lang, pool)?;
        let outcomes: Vec<std::result::Result<QaExample, String>> = match &source {
            PtSource::Toy { model, prompts } => {
                let prompt = prompts
                    .get(lang)
                    .ok_or_else(|| Error::invalid(format!("no tuned prompt for {lang}")))?;
                par::map(Execution::default(), pool, |p| {
                    let (a, q) = pt_toy_generate(model, prompt, p, options.decode_max_len)?;
                    finish_pt(p, a, q)
                })
            }
            PtSource::Remote(backend) => par::map_bounded(options.parallelism, pool, |p| {
                let (a, q) = pt_remote_generate(*backend, p, options.max_tokens)?;
                finish_pt(p, a, q)
            }),
        };
        let (raw, gen_report, failures) = collect_generated(format!("pt-{lang}"), pool, outcomes)?;
        let (filtered, report) = filter_extractive(&raw);
        per_language.insert(
            lang.clone(),
            LanguageRun {
                raw,
                filtered,
                report: gen_report.then(report),
                failures,
            },
        );
    }
    Ok(SynthesisRun::new(Method::Pt, scenario, per_language, options))
}

fn finish_pt(passage: &Passage, a: String, q: String) -> std::result::Result<QaExample, String> {
    if a.is_empty() || q.is_empty() {
        return Err("empty answer or question".into());
    }
    Ok(synthetic_example(passage, q, a, Provenance::Pt))
}

fn extractive_check(ex: &QaExample) -> std::result::Result<usize, DropReason> {
    if ex.answer.is_empty() || ex.question.is_empty() {
        return Err(DropReason::EmptyGeneration);
    }
    let start = char_find(&ex.context, &ex.answer).ok_or(DropReason::NotSubstringOfContext)?;
    if ex.question.contains(ex.answer.as_str()) {
        return Err(DropReason::SubstringOfQuestion);
    }
    Ok(start)
}

/// Keeps an example iff its answer occurs in the context and not in the
/// question; `answer_start` is set to the first occurrence.
pub fn filter_extractive(raw: &Dataset) -> (Dataset, FilterReport) {
    filter_extractive_with(Execution::default(), raw)
}

pub fn filter_extractive_with(exec: Execution, raw: &Dataset) -> (Dataset, FilterReport) {
    let checks = par::map(exec, raw.examples(), extractive_check);
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (ex, check) in raw.iter().zip(checks) {
        report.record(check.map(|_| ()));
        if let Ok(start) = check {
            let mut ex = ex.clone();
            ex.answer_start = Some(start);
            kept.push(ex);
        }
    }
    let filtered = Dataset::new(raw.name.clone(), raw.scenario, kept).expect("subset of unique ids");
    (filtered, report)
}

fn answers_match(predicted: &str, original: &str, language: &LanguageCode, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Normalized => normalize_answer(predicted, language) == normalize_answer(original, language),
        MatchMode::Raw => predicted == original,
    }
}

/// Re-answers each question with the backend and keeps the example only if
/// the prediction matches the generated answer.
pub fn filter_roundtrip(
    examples: &Dataset,
    qa_backend: &dyn TextGenerator,
    exemplars: &ExemplarSet,
    options: &SynthOptions,
) -> (Dataset, FilterReport) {
    let outcomes = par::map_bounded(options.parallelism, examples.examples(), |ex| {
        let passage = Passage {
            id: ex.id.clone(),
            text: ex.context.clone(),
            language: ex.language.clone(),
            source: ex.source_dataset.clone(),
        };
        let prompt = render_roundtrip_prompt(exemplars, &passage, &ex.question).text;
        generate_field(qa_backend, prompt, options.max_tokens)
            .map(|predicted| answers_match(&predicted, &ex.answer, &ex.language, options.roundtrip_mode))
    });
    let mut report = FilterReport::default();
    let mut kept = Vec::new();
    for (ex, outcome) in examples.iter().zip(outcomes) {
        match outcome {
            Ok(true) => {
                report.record(Ok(()));
                kept.push(ex.clone());
            }
            Ok(false) => report.record(Err(DropReason::RoundtripMismatch)),
            Err(e) => {
                report.record(Err(DropReason::RoundtripMismatch));
                report.notes.push(format!("{}: {e}", ex.id));
            }
        }
    }
    let filtered = Dataset::new(examples.name.clone(), examples.scenario, kept).expect("subset of unique ids");
    (filtered, report)
}

fn namespaced(ex: &QaExample) -> QaExample {
    let mut ex = ex.clone();
    ex.id = format!("{}:{}:{}", ex.provenance.as_str(), ex.language, ex.id);
    ex
}

/// `D_en` followed by each synthetic language in code order, ids prefixed
/// with `provenance:language:`. No cross-method deduplication is done.
pub fn assemble(d_en: &Dataset, synthetic: &BTreeMap<LanguageCode, Dataset>) -> Result<Dataset> {
    require_english(d_en)?;
    let mut examples: Vec<QaExample> = d_en.iter().map(namespaced).collect();
    for (lang, ds) in synthetic {
        if lang.is_english() {
            return Err(Error::invalid("synthetic sets must not include English"));
        }
        if let Some(ex) = ds.iter().find(|e| &e.language != lang) {
            return Err(Error::invalid(format!(
                "example {:?} under {lang} is {}",
                ex.id, ex.language
            )));
        }
        examples.extend(ds.iter().map(namespaced));
    }
    Dataset::new("assembled", d_en.scenario, examples)
}

/// Per-language synthetic example counts.
pub fn synthetic_counts(synthetic: &BTreeMap<LanguageCode, Dataset>) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for ds in synthetic.values() {
        stats.merge(&dataset_stats(ds));
    }
    stats
}

/// Nested subsamples of the non-English part of `assembled`; the English part
/// is always kept whole. Selected examples keep their original order.
pub fn size_sweep(assembled: &Dataset, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("sweep sizes must be nondecreasing"));
    }
    let (english, synthetic): (Vec<_>, Vec<_>) = assembled
        .examples()
        .iter()
        .enumerate()
        .partition(|(_, e)| e.language.is_english());
    if let Some(&max) = sizes.last() {
        if max > synthetic.len() {
            return Err(Error::NotEnough {
                requested: max,
                available: synthetic.len(),
            });
        }
    }
    let mut order: Vec<usize> = synthetic.iter().map(|(i, _)| *i).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    sizes
        .iter()
        .map(|&size| {
            let mut picked = order[..size].to_vec();
            picked.sort_unstable();
            let examples = english
                .iter()
                .map(|(_, e)| (*e).clone())
                .chain(picked.iter().map(|&i| assembled.examples()[i].clone()))
                .collect();
            Dataset::new(format!("{}-sweep-{size}", assembled.name), assembled.scenario, examples)
        })
        .collect()
}
