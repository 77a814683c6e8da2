#![allow(dead_code)]

use qameleon::corpus::{Dataset, LanguageCode, Passage, Provenance, QaExample, Scenario};
use qameleon::promptkit::{Exemplar, ExemplarScenario, ExemplarSet};

pub fn lang(code: &str) -> LanguageCode {
    LanguageCode::new(code).unwrap()
}

pub fn example(id: &str, language: &str, context: &str, question: &str, answer: &str) -> QaExample {
    QaExample {
        id: id.into(),
        context: context.into(),
        question: question.into(),
        answer: answer.into(),
        answer_start: context.find(answer).map(|b| context[..b].chars().count()),
        language: lang(language),
        provenance: if language == "en" {
            Provenance::Gold
        } else {
            Provenance::Pe
        },
        source_dataset: "fixture".into(),
        alt_answers: vec![],
    }
}

/// 32 tiny examples whose answer is always `a`: context `a<x><y>`,
/// question `a<y>?`.
pub fn byte_corpus() -> Dataset {
    let exs = (0..32u8)
        .map(|i| {
            let x = (b'b' + i % 8) as char;
            let y = (b'k' + i / 8) as char;
            example(&format!("b{i}"), "fi", &format!("a{x}{y}"), &format!("a{y}?"), "a")
        })
        .collect();
    Dataset::new("byte-corpus", Scenario::FewShot, exs).unwrap()
}

/// 32 examples whose answers are runs of `a`: context `<x><a..><y>`,
/// question `a<y>a?`.
pub fn a_run_corpus() -> Dataset {
    let exs = (0..32u8)
        .map(|i| {
            let x = (b'b' + i % 8) as char;
            let y = (b'k' + i / 8) as char;
            let a = "a".repeat(1 + (i % 3) as usize);
            example(&format!("r{i}"), "fi", &format!("{x}{a}{y}"), &format!("a{y}a?"), &a)
        })
        .collect();
    Dataset::new("a-runs", Scenario::FewShot, exs).unwrap()
}

const WORDS: [&str; 12] = [
    "joki", "kaupunki", "vuori", "silta", "kirkko", "satama", "metsä", "tori", "linna", "koulu", "kylä", "rata",
];
const NAMES: [&str; 6] = ["Turku", "Oulu", "Tullintori", "Pori", "Lahti", "Kemi"];

/// `n` seeded passages of 200 to 510 characters. Some mention a year, all
/// mention at least one capitalized name.
pub fn passages(language: &str, n: usize, seed: u64) -> Vec<Passage> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let target = rng.random_range(201..=510);
            let mut text = String::new();
            while text.chars().count() < target {
                let word = match rng.random_range(0..10) {
                    0 => NAMES[rng.random_range(0..NAMES.len())].to_string(),
                    1 if rng.random_bool(0.5) => rng.random_range(1200..2024).to_string(),
                    _ => WORDS[rng.random_range(0..WORDS.len())].to_string(),
                };
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&word);
            }
            let name = NAMES[i % NAMES.len()];
            let mut text: String = text.chars().take(target - name.len() - 1).collect();
            text = format!("{name} {}", text.trim_end());
            Passage {
                id: format!("{language}-p{i}"),
                text,
                language: lang(language),
                source: "fixture-pool".into(),
            }
        })
        .collect()
}

pub fn exemplar_set(language: &str) -> ExemplarSet {
    let exemplars = (0..2)
        .map(|i| Exemplar {
            context_l: format!("Silta {i} valmistui vuonna 190{i}."),
            question_en: format!("When was bridge {i} completed?"),
            answer_en: format!("190{i}"),
            question_l: format!("Milloin silta {i} valmistui?"),
            answer_l: format!("190{i}"),
            language: lang(language),
        })
        .collect();
    ExemplarSet::new(lang(language), ExemplarScenario::FewShot, exemplars).unwrap()
}

/// Ten English gold examples.
pub fn english_gold() -> Dataset {
    let exs = (0..10)
        .map(|i| {
            let context = format!("The bridge number {i} was completed in 19{i:02} after a long delay.");
            example(
                &format!("en{i}"),
                "en",
                &context,
                &format!("When was bridge {i} completed?"),
                &format!("19{i:02}"),
            )
        })
        .collect();
    Dataset::new("en-gold", Scenario::Full, exs).unwrap()
}
