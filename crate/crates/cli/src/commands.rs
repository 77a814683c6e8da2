//! One function per subcommand. Each reads its inputs through a
//! [`Recorder`], writes artifacts under the output directory and finishes
//! with `manifest.json`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use qameleon::backends::{TaggingTranslator, Translator};
use qameleon::corpus::{
    dataset_stats, load_passage_pool, parse_squad_json, parse_tydiqa_json, sample_unlabeled, subsample_fewshot,
    Dataset, DatasetStats, LanguageCode, Passage, Scenario,
};
use qameleon::metrics::evaluate;
use qameleon::promptkit::{build_exemplars_en_only, build_exemplars_fewshot, ExemplarScenario, ExemplarSet};
use qameleon::synthesis::{
    assemble as assemble_sets, filter_extractive, filter_roundtrip, size_sweep, synth_mt, synth_pe, synth_pt,
    synthetic_counts, Method, PtSource, SynthesisRun,
};
use qameleon::taxonomy::{distribution, Level};
use qameleon::tuner::{
    read_prompt, tune as tune_prompt, write_prompt, EarlyStopMetric, EvalRecord, PromptHeader, ToyLm,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Recorder;
use crate::{
    AssembleArgs, CliError, EvalArgs, ExemplarsArgs, FilterArgs, IngestArgs, LangPath, MethodArg, SampleArgs,
    StatsArgs, SynthArgs, TaxonomyArgs, TuneArgs,
};

pub struct Context<'a> {
    pub config: RunConfig,
    pub argv: &'a [String],
}

impl Context<'_> {
    fn recorder(&self, command: &str, out: Option<&PathBuf>) -> Result<Recorder, CliError> {
        let dir = out
            .or(self.config.paths.output.as_ref())
            .ok_or_else(|| CliError::Validation(format!("{command}: pass --out or set paths.output")))?;
        Recorder::new(command, dir)
    }

    fn finish(&self, rec: Recorder) -> Result<(), CliError> {
        rec.finish(self.argv, &self.config)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn load_dataset(rec: &mut Recorder, path: &Path, scenario: Scenario) -> Result<Dataset, CliError> {
    let text = rec.read_string(path)?;
    Dataset::from_jsonl(stem(path), scenario, &text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_passages(rec: &mut Recorder, path: &Path) -> Result<Vec<Passage>, CliError> {
    let text = rec.read_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_json<T: serde::de::DeserializeOwned>(rec: &mut Recorder, path: &Path) -> Result<T, CliError> {
    let bytes = rec.read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn required<'a>(flag: Option<&'a PathBuf>, fallback: Option<&'a PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    flag.or(fallback)
        .ok_or_else(|| CliError::Validation(format!("missing {what}")))
}

/// `LANG=PATH` flags, falling back to a config map when none are given.
fn lang_paths(flags: &[LangPath], fallback: &BTreeMap<LanguageCode, PathBuf>) -> BTreeMap<LanguageCode, PathBuf> {
    if flags.is_empty() {
        fallback.clone()
    } else {
        flags.iter().map(|lp| (lp.language.clone(), lp.path.clone())).collect()
    }
}

fn passages_jsonl(passages: &[Passage]) -> String {
    passages
        .iter()
        .map(|p| serde_json::to_string(p).expect("passage serializes") + "\n")
        .collect()
}

pub fn ingest(ctx: &Context, args: IngestArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("ingest", args.out.as_ref())?;
    let bytes = rec.read(&args.input)?;
    let name = args.name.unwrap_or_else(|| stem(&args.input));
    let (dataset, report) = match &args.language {
        Some(lang) => parse_squad_json(&bytes, &name, lang)?,
        None => parse_tydiqa_json(&bytes, &name)?,
    };
    let stats = dataset_stats(&dataset);
    rec.write("dataset.jsonl", dataset.to_jsonl())?;
    rec.write_json("parse_report.json", &report)?;
    rec.write_json("stats.json", &stats)?;
    println!("parsed {} examples, skipped {}", report.parsed, report.skipped.len());
    ctx.finish(rec)
}

pub fn sample(ctx: &Context, args: SampleArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("sample", args.out.as_ref())?;
    let text = rec.read_string(&args.pool)?;
    let pool = load_passage_pool(&text, &args.language)?;
    let seed = rec.seed(&ctx.config, "sample");
    let picked = sample_unlabeled(&pool, args.n, seed, args.min_chars, args.max_chars)?;
    rec.write("passages.jsonl", passages_jsonl(&picked))?;
    println!("sampled {} of {} passages", picked.len(), pool.len());
    ctx.finish(rec)
}

pub fn exemplars(ctx: &Context, args: ExemplarsArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("exemplars", args.out.as_ref())?;
    let config = &ctx.config;
    let lang = &args.language;
    let seed = rec.seed(config, "fewshot");
    let set = match config.scenario {
        ExemplarScenario::FewShot => {
            let path = required(args.gold.as_ref(), config.paths.gold.get(lang), "--gold")?;
            let gold = load_dataset(&mut rec, path, Scenario::Full)?;
            let shots = subsample_fewshot(&gold, lang, config.n_shot, seed)?;
            rec.write("fewshot.jsonl", shots.to_jsonl())?;
            build_exemplars_fewshot(&shots, config.translator()?.as_ref())?
        }
        ExemplarScenario::EnglishOnly => {
            let path = required(args.english.as_ref(), config.paths.english.as_ref(), "--english")?;
            let english = load_dataset(&mut rec, path, Scenario::Full)?;
            let shots = subsample_fewshot(&english, &LanguageCode::english(), config.n_shot, seed)?;
            rec.write("fewshot.jsonl", shots.to_jsonl())?;
            build_exemplars_en_only(&shots, config.translator()?.as_ref(), lang)?
        }
    };
    rec.write_json("exemplars.json", &set)?;
    ctx.finish(rec)
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    metric: EarlyStopMetric,
    initial_train_loss: f64,
    final_train_loss: f64,
    best_step: usize,
    best_metric: f64,
    records: &'a [EvalRecord],
    model_checksum: String,
}

pub fn tune(ctx: &Context, args: TuneArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("tune", args.out.as_ref())?;
    let t = &ctx.config.tuner;
    let train = load_dataset(&mut rec, &args.train, Scenario::FewShot)?;
    let dev = load_dataset(&mut rec, &args.dev, Scenario::FewShot)?;
    let seed = rec.seed(&ctx.config, "tune");
    let tune_config = t.tune_config(seed);
    let model = ToyLm::new(t.d, t.h, t.model_seed);
    let trace = tune_prompt(&model, &train, &dev, &tune_config)?;

    let header = PromptHeader {
        m: tune_config.prompt_length,
        d: t.d,
        seed,
        config_hash: tune_config.hash(),
        h: t.h,
        model_seed: t.model_seed,
    };
    rec.write("prompt.bin", write_prompt(&trace.best_prompt, &header))?;
    rec.write("final_prompt.bin", write_prompt(&trace.final_prompt, &header))?;
    rec.write_json(
        "trace.json",
        &TraceSummary {
            metric: trace.metric,
            initial_train_loss: trace.initial_train_loss,
            final_train_loss: trace.final_train_loss(),
            best_step: trace.best_step,
            best_metric: trace.best_metric,
            records: &trace.records,
            model_checksum: model.checksum(),
        },
    )?;
    println!(
        "train loss {:.4} -> {:.4}; best step {} ({:?} {:.4})",
        trace.initial_train_loss,
        trace.final_train_loss(),
        trace.best_step,
        trace.metric,
        trace.best_metric
    );
    ctx.finish(rec)
}

fn load_passage_map(
    rec: &mut Recorder,
    paths: &BTreeMap<LanguageCode, PathBuf>,
) -> Result<BTreeMap<LanguageCode, Vec<Passage>>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Validation(
            "no passage files: pass --passages LANG=PATH".into(),
        ));
    }
    paths
        .iter()
        .map(|(lang, path)| Ok((lang.clone(), load_passages(rec, path)?)))
        .collect()
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("synth", args.out.as_ref())?;
    let config = &ctx.config;
    let run: SynthesisRun = match args.method {
        MethodArg::Mt => {
            if config.languages.is_empty() {
                return Err(CliError::Validation("synth mt needs `languages` in the config".into()));
            }
            let path = required(args.english.as_ref(), config.paths.english.as_ref(), "--english")?;
            let english = load_dataset(&mut rec, path, Scenario::Full)?;
            synth_mt(
                &english,
                config.translator()?.as_ref(),
                &config.languages,
                &config.synth_options(Method::Mt),
            )?
        }
        MethodArg::Pe => {
            let passages = load_passage_map(&mut rec, &lang_paths(&args.passages, &config.paths.passages))?;
            let mut sets = BTreeMap::new();
            for lp in &args.exemplars {
                let set: ExemplarSet = load_json(&mut rec, &lp.path)?;
                sets.insert(lp.language.clone(), set);
            }
            let generator = config.generator()?;
            synth_pe(&sets, &passages, generator.as_ref(), &config.synth_options(Method::Pe))?
        }
        MethodArg::Pt => {
            let passages = load_passage_map(&mut rec, &lang_paths(&args.passages, &config.paths.passages))?;
            let options = config.synth_options(Method::Pt);
            if args.prompts.is_empty() {
                let generator = config.generator()?;
                synth_pt(
                    PtSource::Remote(generator.as_ref()),
                    &passages,
                    config.scenario,
                    &options,
                )?
            } else {
                let mut prompts = BTreeMap::new();
                let mut shape = None;
                for lp in &args.prompts {
                    let bytes = rec.read(&lp.path)?;
                    let (header, prompt) = read_prompt(&bytes)?;
                    let this = (header.d, header.h, header.model_seed);
                    if *shape.get_or_insert(this) != this {
                        return Err(CliError::Validation(
                            "prompt files were tuned against different models".into(),
                        ));
                    }
                    prompts.insert(lp.language.clone(), prompt);
                }
                let (d, h, model_seed) = shape.expect("at least one prompt");
                let model = ToyLm::new(d, h, model_seed);
                let source = PtSource::Toy {
                    model: &model,
                    prompts: &prompts,
                };
                synth_pt(source, &passages, config.scenario, &options)?
            }
        }
    };

    run.write_dir(rec.out_dir())?;
    for lang in run.per_language.keys() {
        rec.note_output(format!("{lang}/raw.jsonl"));
        rec.note_output(format!("{lang}/filtered.jsonl"));
    }
    rec.note_output("report.json");
    rec.note_output("config.json");
    for (lang, lr) in &run.per_language {
        println!(
            "{lang}: {} generated, {} kept, {} failed",
            lr.raw.len(),
            lr.filtered.len(),
            lr.failures.len()
        );
    }
    ctx.finish(rec)?;

    let dead: Vec<_> = run
        .per_language
        .iter()
        .filter(|(_, lr)| lr.raw.is_empty() && !lr.failures.is_empty())
        .map(|(l, lr)| format!("{l} ({})", lr.failures[0].error))
        .collect();
    if !dead.is_empty() {
        return Err(CliError::Backend(format!(
            "every generation failed for {}",
            dead.join(", ")
        )));
    }
    Ok(())
}

pub fn filter(ctx: &Context, args: FilterArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("filter", args.out.as_ref())?;
    let input = load_dataset(&mut rec, &args.input, Scenario::Full)?;
    let (mut kept, mut report) = filter_extractive(&input);
    if let Some(path) = &args.exemplars {
        let set: ExemplarSet = load_json(&mut rec, path)?;
        let generator = ctx.config.generator()?;
        let (rt_kept, rt) = filter_roundtrip(&kept, generator.as_ref(), &set, &ctx.config.synth_options(Method::Pe));
        kept = rt_kept;
        report = report.then(rt);
    }
    rec.write("filtered.jsonl", kept.to_jsonl())?;
    rec.write_json("report.json", &report)?;
    println!("kept {} of {}", report.kept_count, report.input_count);
    ctx.finish(rec)
}

pub fn assemble(ctx: &Context, args: AssembleArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("assemble", args.out.as_ref())?;
    let path = required(args.english.as_ref(), ctx.config.paths.english.as_ref(), "--english")?;
    let english = load_dataset(&mut rec, path, Scenario::Full)?;
    let mut synthetic = BTreeMap::new();
    for lp in &args.synthetic {
        let ds = load_dataset(&mut rec, &lp.path, Scenario::Full)?;
        if synthetic.insert(lp.language.clone(), ds).is_some() {
            return Err(CliError::Validation(format!(
                "--synthetic given twice for {}",
                lp.language
            )));
        }
    }
    let assembled = assemble_sets(&english, &synthetic)?;
    rec.write("assembled.jsonl", assembled.to_jsonl())?;
    rec.write_json("synthetic_counts.json", &synthetic_counts(&synthetic))?;
    if !args.sweep.is_empty() {
        let seed = rec.seed(&ctx.config, "sweep");
        let subsets = size_sweep(&assembled, &args.sweep, seed)?;
        for (size, ds) in args.sweep.iter().zip(&subsets) {
            rec.write(&format!("sweep/size_{size}.jsonl"), ds.to_jsonl())?;
        }
    }
    println!("assembled {} examples", assembled.len());
    ctx.finish(rec)
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("eval", args.out.as_ref())?;
    let predictions: HashMap<String, String> = load_json(&mut rec, &args.predictions)?;
    let gold = load_dataset(&mut rec, &args.gold, Scenario::Full)?;
    let report = evaluate(&predictions, &gold)?;
    let table = report.to_table();
    rec.write_json("report.json", &report)?;
    rec.write("report.txt", &table)?;
    print!("{table}");
    ctx.finish(rec)
}

pub fn taxonomy(ctx: &Context, args: TaxonomyArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("taxonomy", args.out.as_ref())?;
    let dataset = load_dataset(&mut rec, &args.input, Scenario::Full)?;
    // English-only input never reaches the translator.
    let translator: Box<dyn Translator> = if dataset.iter().all(|e| e.language.is_english()) {
        Box::new(TaggingTranslator)
    } else {
        ctx.config.translator()?
    };
    let report = distribution(&dataset, translator.as_ref(), args.pool, args.threshold)?;
    rec.write_json("taxonomy.json", &report)?;
    let rings = report
        .per_language
        .iter()
        .map(|(l, r)| (l.to_string(), r))
        .chain(report.pooled.iter().map(|r| ("pooled".to_string(), r)));
    for (name, ring) in rings {
        rec.write(&format!("{name}_categories.csv"), ring.to_csv(Level::Category))?;
        rec.write(&format!("{name}_subcategories.csv"), ring.to_csv(Level::Subcategory))?;
    }
    ctx.finish(rec)
}

pub fn stats(ctx: &Context, args: StatsArgs) -> Result<(), CliError> {
    let mut rec = ctx.recorder("stats", args.out.as_ref())?;
    if args.jsonl.is_empty() && args.squad.is_empty() && args.tydiqa.is_empty() {
        return Err(CliError::Validation("stats needs at least one input file".into()));
    }
    let mut total = DatasetStats::default();
    for path in &args.jsonl {
        total.merge(&dataset_stats(&load_dataset(&mut rec, path, Scenario::Full)?));
    }
    for lp in &args.squad {
        let bytes = rec.read(&lp.path)?;
        let (ds, _) = parse_squad_json(&bytes, &stem(&lp.path), &lp.language)?;
        total.merge(&dataset_stats(&ds));
    }
    for path in &args.tydiqa {
        let bytes = rec.read(path)?;
        let (ds, _) = parse_tydiqa_json(&bytes, &stem(path))?;
        total.merge(&dataset_stats(&ds));
    }
    let table = total.to_table();
    rec.write_json("stats.json", &total)?;
    rec.write("stats.txt", &table)?;
    print!("{table}");
    ctx.finish(rec)
}
