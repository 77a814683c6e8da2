//! Run configuration: one TOML document, secrets and endpoints from the
//! environment only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use qameleon::backends::{
    HttpBackend, MockQaBackend, TaggingTranslator, TextGenerator, Translator, BACKEND_URL_ENV, DEFAULT_PARALLELISM,
};
use qameleon::corpus::LanguageCode;
use qameleon::promptkit::ExemplarScenario;
use qameleon::synthesis::{MatchMode, Method, SynthOptions};
use qameleon::tuner::{EarlyStopMetric, TuneConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Stage names accepted under `[seeds]`.
pub const SEED_STAGES: [&str; 5] = ["sample", "fewshot", "tune", "mock", "sweep"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub languages: BTreeSet<LanguageCode>,
    pub scenario: ExemplarScenario,
    pub n_shot: usize,
    pub backend: BackendConfig,
    pub paths: PathsConfig,
    pub seeds: BTreeMap<String, u64>,
    pub tuner: TunerConfig,
    pub filters: FiltersConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            languages: BTreeSet::new(),
            scenario: ExemplarScenario::FewShot,
            n_shot: 5,
            backend: BackendConfig::default(),
            paths: PathsConfig::default(),
            seeds: BTreeMap::new(),
            tuner: TunerConfig::default(),
            filters: FiltersConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Falls back to `QAM_BACKEND_URL` when unset.
    pub url: Option<String>,
    pub parallelism: usize,
    pub timeout_secs: u64,
    /// Mock generator only: probability of a corrupted span.
    pub noise_rate: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            url: None,
            parallelism: DEFAULT_PARALLELISM,
            timeout_secs: 60,
            noise_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// English gold training set (JSONL).
    pub english: Option<PathBuf>,
    /// Target-language gold sets (JSONL), by language.
    pub gold: BTreeMap<LanguageCode, PathBuf>,
    /// Sampled passage files (JSONL), by language.
    pub passages: BTreeMap<LanguageCode, PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub d: usize,
    pub h: usize,
    pub model_seed: u64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub prompt_length: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub decode_max_len: usize,
}

impl Default for TunerConfig {
    fn default() -> Self {
        let t = TuneConfig::default();
        TunerConfig {
            d: 8,
            h: 16,
            model_seed: 0,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            eval_every: t.eval_every,
            prompt_length: t.prompt_length,
            early_stop_metric: t.early_stop_metric,
            decode_max_len: t.decode_max_len,
        }
    }
}

impl TunerConfig {
    pub fn tune_config(&self, seed: u64) -> TuneConfig {
        TuneConfig {
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            batch_size: self.batch_size,
            max_steps: self.max_steps,
            eval_every: self.eval_every,
            prompt_length: self.prompt_length,
            early_stop_metric: self.early_stop_metric,
            seed,
            decode_max_len: self.decode_max_len,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltersConfig {
    /// Round-trip filtering; defaults to on for prompted generation only.
    pub roundtrip: Option<bool>,
    pub roundtrip_mode: MatchMode,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.resolve_against(base);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.scenario == ExemplarScenario::FewShot && self.n_shot == 0 {
            return Err(invalid("scenario few_shot requires n_shot >= 1"));
        }
        if self.backend.parallelism == 0 {
            return Err(invalid("backend.parallelism must be at least 1"));
        }
        if self.backend.timeout_secs == 0 {
            return Err(invalid("backend.timeout_secs must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.backend.noise_rate) {
            return Err(invalid("backend.noise_rate must be in [0, 1]"));
        }
        if let Some(stage) = self.seeds.keys().find(|k| !SEED_STAGES.contains(&k.as_str())) {
            return Err(invalid(format!(
                "unknown seed stage {stage:?}; expected one of {}",
                SEED_STAGES.join(", ")
            )));
        }
        if self.tuner.d == 0 || self.tuner.h == 0 {
            return Err(invalid("tuner.d and tuner.h must be at least 1"));
        }
        self.tuner.tune_config(0).validate()?;
        Ok(())
    }

    pub fn seed(&self, stage: &str) -> u64 {
        debug_assert!(SEED_STAGES.contains(&stage));
        self.seeds.get(stage).copied().unwrap_or(0)
    }

    pub fn synth_options(&self, method: Method) -> SynthOptions {
        let mut options = SynthOptions::for_method(method);
        options.parallelism = self.backend.parallelism;
        if let Some(roundtrip) = self.filters.roundtrip {
            options.roundtrip = roundtrip && method == Method::Pe;
        }
        options.roundtrip_mode = self.filters.roundtrip_mode;
        options
    }

    pub fn generator(&self) -> Result<Box<dyn TextGenerator>, CliError> {
        Ok(match self.backend.kind {
            BackendKind::Mock => Box::new(MockQaBackend::new(self.backend.noise_rate, self.seed("mock"))),
            BackendKind::Http => Box::new(self.http()?),
        })
    }

    pub fn translator(&self) -> Result<Box<dyn Translator>, CliError> {
        Ok(match self.backend.kind {
            BackendKind::Mock => Box::new(TaggingTranslator),
            BackendKind::Http => Box::new(self.http()?),
        })
    }

    /// The URL requirement is checked here, not in `validate`, so commands
    /// that never call a backend run without one.
    fn http(&self) -> Result<HttpBackend, CliError> {
        if self.backend.url.is_none() && std::env::var_os(BACKEND_URL_ENV).is_none() {
            return Err(invalid(format!(
                "http backend requires backend.url or {BACKEND_URL_ENV}"
            )));
        }
        let timeout = Duration::from_secs(self.backend.timeout_secs);
        HttpBackend::from_env(self.backend.url.as_deref(), timeout)
            .map_err(|e| CliError::Core(qameleon::Error::Backend(e)))
    }
}

impl PathsConfig {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.english.as_mut().map(fix);
        self.output.as_mut().map(fix);
        self.gold.values_mut().for_each(fix);
        self.passages.values_mut().for_each(fix);
    }
}
