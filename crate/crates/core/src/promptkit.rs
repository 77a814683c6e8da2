//! Exemplar construction and the two-stage answer/question prompts.
//!
//! Each exemplar block states the English answer (or question) before the
//! target-language one, so the model is walked through English first.
//! Rendered layout for the answer stage with one exemplar:
//!
//! ```text
//! I will write potential answers
//! for the following passages.
//!
//!   Passage: <c_l>
//!   Answer in English: <a_en>
//!   Answer in the original language: <a_l>
//!
//!   Passage: <target passage>
//!   Answer in the original language:
//! ```

use serde::{Deserialize, Serialize};

use crate::backends::{TranslationRequest, Translator};
use crate::corpus::{Dataset, LanguageCode, Passage};
use crate::{Error, Result};

pub const ANSWER_INSTRUCTION: &str = "I will write potential answers\nfor the following passages.";
pub const QUESTION_INSTRUCTION: &str = "I will write questions and answers\nfor the following passages.";
pub const ROUNDTRIP_INSTRUCTION: &str = "I will write answers to questions\nfor the following passages.";

pub const PASSAGE_LABEL: &str = "Passage:";
pub const ANSWER_LABEL: &str = "Answer:";
pub const QUESTION_LABEL: &str = "Question:";
pub const ANSWER_EN_LABEL: &str = "Answer in English:";
pub const QUESTION_EN_LABEL: &str = "Question in English:";
pub const ANSWER_CUE: &str = "Answer in the original language:";
pub const QUESTION_CUE: &str = "Question in the original language:";

const INDENT: &str = "  ";
const BLOCK_SEPARATOR: &str = "\n\n";

/// Stop sequences used when requesting a single field.
pub const FIELD_STOPS: [&str; 2] = ["\n", PASSAGE_LABEL];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub context_l: String,
    pub question_en: String,
    pub answer_en: String,
    pub question_l: String,
    pub answer_l: String,
    pub language: LanguageCode,
}

impl Exemplar {
    fn check(&self) -> Result<()> {
        let fields = [
            &self.context_l,
            &self.question_en,
            &self.answer_en,
            &self.question_l,
            &self.answer_l,
        ];
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::invalid("exemplar has an empty field"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarScenario {
    EnglishOnly,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub language: LanguageCode,
    pub scenario: ExemplarScenario,
    pub exemplars: Vec<Exemplar>,
}

impl ExemplarSet {
    pub fn new(language: LanguageCode, scenario: ExemplarScenario, exemplars: Vec<Exemplar>) -> Result<Self> {
        for ex in &exemplars {
            ex.check()?;
            if ex.language != language {
                return Err(Error::invalid(format!(
                    "exemplar language {} does not match set language {}",
                    ex.language, language
                )));
            }
        }
        Ok(ExemplarSet {
            language,
            scenario,
            exemplars,
        })
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

fn translate_field(
    translator: &dyn Translator,
    id: &str,
    field: &'static str,
    text: &str,
    source: &LanguageCode,
    target: &LanguageCode,
) -> Result<String> {
    translator
        .translate(&TranslationRequest::new(text, source, target))
        .map_err(|source| Error::Translation {
            id: id.to_string(),
            field,
            source,
        })
}

/// English-only scenario: `(c, q, a)` becomes `(T_l(c), q, a, T_l(q), T_l(a))`.
pub fn build_exemplars_en_only(
    d_en_n: &Dataset,
    translator: &dyn Translator,
    target_language: &LanguageCode,
) -> Result<ExemplarSet> {
    let en = LanguageCode::english();
    if target_language.is_english() {
        return Err(Error::invalid("target language must not be English"));
    }
    let mut exemplars = Vec::with_capacity(d_en_n.len());
    for ex in d_en_n {
        if !ex.language.is_english() {
            return Err(Error::invalid(format!("example {:?} is not English", ex.id)));
        }
        let tr = |field, text: &str| translate_field(translator, &ex.id, field, text, &en, target_language);
        exemplars.push(Exemplar {
            context_l: tr("context", &ex.context)?,
            question_en: ex.question.clone(),
            answer_en: ex.answer.clone(),
            question_l: tr("question", &ex.question)?,
            answer_l: tr("answer", &ex.answer)?,
            language: target_language.clone(),
        });
    }
    ExemplarSet::new(target_language.clone(), ExemplarScenario::EnglishOnly, exemplars)
}

/// Few-shot scenario: `(c, q, a)` becomes `(c, T_en(q), T_en(a), q, a)`.
pub fn build_exemplars_fewshot(d_l_n: &Dataset, translator: &dyn Translator) -> Result<ExemplarSet> {
    let language = d_l_n.sole_language()?;
    if language.is_english() {
        return Err(Error::invalid("few-shot exemplars need a non-English dataset"));
    }
    let en = LanguageCode::english();
    let mut exemplars = Vec::with_capacity(d_l_n.len());
    for ex in d_l_n {
        let tr = |field, text: &str| translate_field(translator, &ex.id, field, text, &language, &en);
        exemplars.push(Exemplar {
            context_l: ex.context.clone(),
            question_en: tr("question", &ex.question)?,
            answer_en: tr("answer", &ex.answer)?,
            question_l: ex.question.clone(),
            answer_l: ex.answer.clone(),
            language: language.clone(),
        });
    }
    ExemplarSet::new(language, ExemplarScenario::FewShot, exemplars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStage {
    Answer,
    Question,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub stage: PromptStage,
    pub target_language: LanguageCode,
}

/// Field values are kept on one line so the block structure stays intact.
fn one_line(s: &str) -> String {
    s.replace(['\r', '\n'], " ")
}

fn push_line(out: &mut String, label: &str, value: &str) {
    out.push_str(INDENT);
    out.push_str(label);
    out.push(' ');
    out.push_str(&one_line(value));
    out.push('\n');
}

fn push_cue(out: &mut String, cue: &str) {
    out.push_str(INDENT);
    out.push_str(cue);
}

fn check_language(exemplars: &ExemplarSet, passage: &Passage) {
    debug_assert_eq!(
        exemplars.language, passage.language,
        "exemplars and target passage must share a language"
    );
}

pub fn render_answer_prompt(exemplars: &ExemplarSet, target_passage: &Passage) -> RenderedPrompt {
    check_language(exemplars, target_passage);
    let mut text = String::from(ANSWER_INSTRUCTION);
    for ex in &exemplars.exemplars {
        text.push_str(BLOCK_SEPARATOR);
        push_line(&mut text, PASSAGE_LABEL, &ex.context_l);
        push_line(&mut text, ANSWER_EN_LABEL, &ex.answer_en);
        push_cue(&mut text, ANSWER_CUE);
        text.push(' ');
        text.push_str(&one_line(&ex.answer_l));
    }
    text.push_str(BLOCK_SEPARATOR);
    push_line(&mut text, PASSAGE_LABEL, &target_passage.text);
    push_cue(&mut text, ANSWER_CUE);
    RenderedPrompt {
        text,
        stage: PromptStage::Answer,
        target_language: target_passage.language.clone(),
    }
}

pub fn render_question_prompt(
    exemplars: &ExemplarSet,
    target_passage: &Passage,
    predicted_answer: &str,
) -> RenderedPrompt {
    check_language(exemplars, target_passage);
    debug_assert!(!predicted_answer.is_empty());
    let mut text = String::from(QUESTION_INSTRUCTION);
    for ex in &exemplars.exemplars {
        text.push_str(BLOCK_SEPARATOR);
        push_line(&mut text, PASSAGE_LABEL, &ex.context_l);
        push_line(&mut text, ANSWER_LABEL, &ex.answer_l);
        push_line(&mut text, QUESTION_EN_LABEL, &ex.question_en);
        push_cue(&mut text, QUESTION_CUE);
        text.push(' ');
        text.push_str(&one_line(&ex.question_l));
    }
    text.push_str(BLOCK_SEPARATOR);
    push_line(&mut text, PASSAGE_LABEL, &target_passage.text);
    push_line(&mut text, ANSWER_LABEL, predicted_answer);
    push_cue(&mut text, QUESTION_CUE);
    RenderedPrompt {
        text,
        stage: PromptStage::Question,
        target_language: target_passage.language.clone(),
    }
}

/// Answer-stage prompt with the question included in every block, used to
/// re-answer a generated question for round-trip filtering.
pub fn render_roundtrip_prompt(exemplars: &ExemplarSet, target_passage: &Passage, question: &str) -> RenderedPrompt {
    check_language(exemplars, target_passage);
    let mut text = String::from(ROUNDTRIP_INSTRUCTION);
    for ex in &exemplars.exemplars {
        text.push_str(BLOCK_SEPARATOR);
        push_line(&mut text, PASSAGE_LABEL, &ex.context_l);
        push_line(&mut text, QUESTION_LABEL, &ex.question_l);
        push_line(&mut text, ANSWER_EN_LABEL, &ex.answer_en);
        push_cue(&mut text, ANSWER_CUE);
        text.push(' ');
        text.push_str(&one_line(&ex.answer_l));
    }
    text.push_str(BLOCK_SEPARATOR);
    push_line(&mut text, PASSAGE_LABEL, &target_passage.text);
    push_line(&mut text, QUESTION_LABEL, question);
    push_cue(&mut text, ANSWER_CUE);
    RenderedPrompt {
        text,
        stage: PromptStage::Answer,
        target_language: target_passage.language.clone(),
    }
}

/// Extracts the field value from a raw continuation: everything before the
/// first newline or `Passage:` marker, trimmed.
pub fn parse_completion(raw: &str) -> Result<String> {
    let newline = raw.find('\n').unwrap_or(raw.len());
    let marker = raw.find(PASSAGE_LABEL).unwrap_or(raw.len());
    let value = raw[..newline.min(marker)].trim();
    if value.is_empty() {
        return Err(Error::EmptyCompletion);
    }
    Ok(value.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::TaggingTranslator;
    use crate::corpus::{Provenance, QaExample, Scenario};

    fn lang(s: &str) -> LanguageCode {
        LanguageCode::new(s).unwrap()
    }

    fn qa(id: &str, l: &str, c: &str, q: &str, a: &str) -> QaExample {
        QaExample {
            id: id.into(),
            context: c.into(),
            question: q.into(),
            answer: a.into(),
            answer_start: None,
            language: lang(l),
            provenance: Provenance::Gold,
            source_dataset: "t".into(),
            alt_answers: vec![],
        }
    }

    fn fi_set(n: usize) -> ExemplarSet {
        let exemplars = (0..n)
            .map(|i| Exemplar {
                context_l: format!("Tullintori valmistui vuonna 199{i}."),
                question_en: "When was Tullintori completed?".into(),
                answer_en: format!("199{i}"),
                question_l: "Milloin Tullintori valmistui?".into(),
                answer_l: format!("199{i}"),
                language: lang("fi"),
            })
            .collect();
        ExemplarSet::new(lang("fi"), ExemplarScenario::FewShot, exemplars).unwrap()
    }

    fn target() -> Passage {
        Passage {
            id: "p".into(),
            text: "Turun tuomiokirkko vihittiin 1300.".into(),
            language: lang("fi"),
            source: "wiki".into(),
        }
    }

    #[test]
    fn en_only_exemplars_use_translation() {
        let d = Dataset::new(
            "en5",
            Scenario::FewShot,
            vec![qa("1", "en", "X lives in Y", "Where does X live?", "Y")],
        )
        .unwrap();
        let set = build_exemplars_en_only(&d, &TaggingTranslator, &lang("fr")).unwrap();
        assert_eq!(
            set.exemplars[0],
            Exemplar {
                context_l: "[fr] X lives in Y".into(),
                question_en: "Where does X live?".into(),
                answer_en: "Y".into(),
                question_l: "[fr] Where does X live?".into(),
                answer_l: "[fr] Y".into(),
                language: lang("fr"),
            }
        );
        assert_eq!(set.scenario, ExemplarScenario::EnglishOnly);

        let empty = Dataset::empty("e", Scenario::FewShot);
        assert!(build_exemplars_en_only(&empty, &TaggingTranslator, &lang("fr"))
            .unwrap()
            .is_empty());

        let five: Vec<_> = (0..5).map(|i| qa(&i.to_string(), "en", "c", "q", "a")).collect();
        let d = Dataset::new("en5", Scenario::FewShot, five).unwrap();
        assert_eq!(
            build_exemplars_en_only(&d, &TaggingTranslator, &lang("fi"))
                .unwrap()
                .len(),
            5
        );
    }

    #[test]
    fn fewshot_exemplars_translate_to_english() {
        let d = Dataset::new("fi", Scenario::FewShot, vec![qa("1", "fi", "c", "Milloin?", "1457")]).unwrap();
        let set = build_exemplars_fewshot(&d, &TaggingTranslator).unwrap();
        let e = &set.exemplars[0];
        assert_eq!(e.context_l, "c");
        assert_eq!(e.question_en, "[en] Milloin?");
        assert_eq!(e.answer_en, "[en] 1457");
        assert_eq!(e.question_l, "Milloin?");
        assert_eq!(e.answer_l, "1457");

        let mixed = Dataset::new(
            "m",
            Scenario::FewShot,
            vec![qa("1", "fi", "c", "q", "a"), qa("2", "ar", "c", "q", "a")],
        )
        .unwrap();
        assert!(build_exemplars_fewshot(&mixed, &TaggingTranslator).is_err());
    }

    #[test]
    fn translation_failure_names_field_and_id() {
        struct Broken;
        impl Translator for Broken {
            fn translate(&self, _: &TranslationRequest) -> std::result::Result<String, crate::backends::BackendError> {
                Err(crate::backends::BackendError::Transport("down".into()))
            }
        }
        let d = Dataset::new("en", Scenario::FewShot, vec![qa("ex7", "en", "c", "q", "a")]).unwrap();
        match build_exemplars_en_only(&d, &Broken, &lang("fi")) {
            Err(Error::Translation { id, field, .. }) => {
                assert_eq!(id, "ex7");
                assert_eq!(field, "context");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn answer_prompt_golden() {
        let p = render_answer_prompt(&fi_set(1), &target());
        let want = "I will write potential answers\nfor the following passages.\n\n  \
                    Passage: Tullintori valmistui vuonna 1990.\n  \
                    Answer in English: 1990\n  \
                    Answer in the original language: 1990\n\n  \
                    Passage: Turun tuomiokirkko vihittiin 1300.\n  \
                    Answer in the original language:";
        assert_eq!(p.text, want);
        assert_eq!(p.text.matches("Passage:").count(), 2);
        assert!(p.text.ends_with(ANSWER_CUE));
        assert_eq!(p.stage, PromptStage::Answer);
        assert_eq!(p, render_answer_prompt(&fi_set(1), &target()));
    }

    #[test]
    fn question_prompt_golden() {
        let p = render_question_prompt(&fi_set(1), &target(), "1457");
        let want = "I will write questions and answers\nfor the following passages.\n\n  \
                    Passage: Tullintori valmistui vuonna 1990.\n  \
                    Answer: 1990\n  \
                    Question in English: When was Tullintori completed?\n  \
                    Question in the original language: Milloin Tullintori valmistui?\n\n  \
                    Passage: Turun tuomiokirkko vihittiin 1300.\n  \
                    Answer: 1457\n  \
                    Question in the original language:";
        assert_eq!(p.text, want);
        assert!(p.text.contains("Answer: 1457"));
    }

    #[test]
    fn zero_exemplars_render_target_only() {
        let empty = ExemplarSet::new(lang("fi"), ExemplarScenario::FewShot, vec![]).unwrap();
        let a = render_answer_prompt(&empty, &target());
        assert_eq!(
            a.text,
            format!("{ANSWER_INSTRUCTION}\n\n  Passage: Turun tuomiokirkko vihittiin 1300.\n  {ANSWER_CUE}")
        );
        let q = render_question_prompt(&empty, &target(), "1300");
        assert_eq!(
            q.text,
            format!("{QUESTION_INSTRUCTION}\n\n  Passage: Turun tuomiokirkko vihittiin 1300.\n  Answer: 1300\n  {QUESTION_CUE}")
        );
    }

    #[test]
    fn english_precedes_target_language_in_each_block() {
        let p = render_answer_prompt(&fi_set(3), &target());
        for block in p.text.split(BLOCK_SEPARATOR).skip(1) {
            if let (Some(en), Some(l)) = (block.find(ANSWER_EN_LABEL), block.find(ANSWER_CUE)) {
                assert!(en < l);
            }
        }
        let q = render_question_prompt(&fi_set(3), &target(), "x");
        for block in q.text.split(BLOCK_SEPARATOR).skip(1) {
            if let (Some(en), Some(l)) = (block.find(QUESTION_EN_LABEL), block.find(QUESTION_CUE)) {
                assert!(en < l);
            }
        }
    }

    #[test]
    fn newlines_in_fields_are_flattened() {
        let mut t = target();
        t.text = "line one\nline two".into();
        let p = render_answer_prompt(&fi_set(0), &t);
        assert!(p.text.contains("Passage: line one line two\n"));
    }

    #[test]
    fn completion_parsing() {
        assert_eq!(parse_completion("  1457\nPassage: next…").unwrap(), "1457");
        assert_eq!(parse_completion("1457").unwrap(), "1457");
        assert_eq!(parse_completion("1457 Passage: x").unwrap(), "1457");
        let err = parse_completion("\n\n").unwrap_err();
        assert_eq!(err.to_string(), "empty completion");
    }
}
