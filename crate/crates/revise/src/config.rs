//! Layered run configuration.
//!
//! Every setting is a flat `key=value` pair. Later layers win:
//! built-in defaults, a config file, `REVISE_<KEY>` environment variables,
//! then command-line overrides. Secrets never live here: the HTTP backend
//! reads its key from the environment variable named by `api_key_env`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use revise_core::controller::prompt::PromptTemplate;
use revise_core::grpo::ToyConfig;
use revise_core::protocol::SummaryMode;
use revise_core::synth::OracleRules;
use revise_core::{CostModel, EpisodeConfig, RewardWeights, SamplingParams};
use thiserror::Error;

use crate::frame_dir::parse_kv;
use crate::http::HttpConfig;
use crate::synth_export::SynthSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Usize,
    U64,
    F64,
    Bool,
    Str,
    Choice(&'static [&'static str]),
}

const KEYS: &[(&str, Kind, &str)] = &[
    ("backend", Kind::Choice(&["oracle", "http"]), "oracle"),
    ("seed", Kind::U64, "0"),
    ("parallelism", Kind::Usize, "1"),
    ("out_dir", Kind::Str, "runs"),
    // episode
    ("max_rounds", Kind::Usize, "4"),
    ("max_frames_per_round", Kind::Usize, "3"),
    ("initial_frames", Kind::Usize, "3"),
    ("token_budget", Kind::U64, "8192"),
    ("per_frame_cost", Kind::U64, "256"),
    ("retry_on_invalid", Kind::Usize, "1"),
    ("force_answer_at_end", Kind::Bool, "true"),
    ("carry_state", Kind::Bool, "true"),
    ("summary_mode", Kind::Choice(&["structured", "free_text"]), "structured"),
    ("lenient_parse", Kind::Bool, "false"),
    ("score_options", Kind::Bool, "true"),
    ("temperature", Kind::F64, "0.2"),
    ("top_p", Kind::F64, "0.9"),
    ("max_response_tokens", Kind::U64, "256"),
    ("prompt_template", Kind::Str, ""),
    // reward
    ("lambda_conf", Kind::F64, "1"),
    ("lambda_sum", Kind::F64, "1"),
    ("lambda_stop", Kind::F64, "0.5"),
    ("alpha_format", Kind::F64, "0.1"),
    ("beta", Kind::F64, "1"),
    ("t_stop", Kind::Usize, "2"),
    ("gamma", Kind::F64, "1"),
    ("margin_temperature", Kind::F64, "1"),
    // oracle backend
    ("oracle_b0", Kind::F64, "-1"),
    ("oracle_b1", Kind::F64, "3"),
    ("oracle_distractor_logit", Kind::F64, "0"),
    ("oracle_threshold", Kind::F64, "1"),
    ("oracle_noise", Kind::F64, "0"),
    ("oracle_answer_on_last_round", Kind::Bool, "true"),
    ("tasks", Kind::Str, ""),
    // http backend
    ("endpoint", Kind::Str, "http://127.0.0.1:8000/v1/chat/completions"),
    ("model", Kind::Str, "default"),
    ("api_key_env", Kind::Str, "REVISE_API_KEY"),
    ("timeout_ms", Kind::U64, "60000"),
    ("max_retries", Kind::U64, "3"),
    ("max_concurrency", Kind::Usize, "8"),
    ("backoff_base_ms", Kind::U64, "500"),
    ("backoff_max_ms", Kind::U64, "8000"),
    ("logprobs", Kind::Bool, "true"),
    ("fallback_samples", Kind::Usize, "8"),
    ("debug_log", Kind::Bool, "false"),
    // synthetic data
    ("synth_items", Kind::Usize, "20"),
    ("synth_length", Kind::Usize, "40"),
    ("synth_k_min", Kind::Usize, "2"),
    ("synth_k_max", Kind::Usize, "8"),
    ("synth_options", Kind::Usize, "4"),
    ("synth_fps", Kind::F64, "1"),
    // toy training
    ("toy_iterations", Kind::Usize, "80"),
    ("toy_tasks", Kind::Usize, "32"),
    ("toy_group_size", Kind::Usize, "8"),
    ("toy_epochs", Kind::Usize, "4"),
    ("toy_learning_rate", Kind::F64, "0.2"),
    ("toy_clip_eps", Kind::F64, "0.2"),
    ("toy_kl_coef", Kind::F64, "0.001"),
];

const FORBIDDEN: &[&str] = &["api_key", "apikey", "key", "password", "secret", "authorization", "bearer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SettingsError {
    #[error("unknown config key {key:?} (from {origin})")]
    UnknownKey { key: String, origin: &'static str },
    #[error("{key}={value:?} (from {origin}): expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: String,
        origin: &'static str,
    },
    #[error("{0:?} looks like a secret; put it in the environment variable named by api_key_env instead")]
    Secret(String),
    #[error("cannot read config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Source)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, _, d)| (k, (d.to_string(), Source::Default))).collect(),
        }
    }
}

fn check(kind: Kind, value: &str) -> Result<String, String> {
    let ok = match kind {
        Kind::Usize => value.parse::<usize>().is_ok(),
        Kind::U64 => value.parse::<u64>().is_ok(),
        Kind::F64 => value.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => return parse_bool(value).map(|b| b.to_string()).ok_or_else(|| "true or false".into()),
        Kind::Str => true,
        Kind::Choice(opts) => {
            return opts
                .iter()
                .find(|o| o.eq_ignore_ascii_case(value))
                .map(|o| o.to_string())
                .ok_or_else(|| format!("one of {}", opts.join(", ")))
        }
    };
    if ok {
        Ok(value.to_string())
    } else {
        Err(match kind {
            Kind::Usize | Kind::U64 => "a non-negative integer".into(),
            _ => "a finite number".into(),
        })
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

pub fn env_var_name(key: &str) -> String {
    format!("REVISE_{}", key.to_ascii_uppercase())
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.0)
    }

    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<(), SettingsError> {
        let key = key.trim();
        let lower = key.to_ascii_lowercase();
        if FORBIDDEN.contains(&lower.as_str()) {
            return Err(SettingsError::Secret(key.to_string()));
        }
        let Some(&(name, kind, _)) = KEYS.iter().find(|k| k.0 == key) else {
            return Err(SettingsError::UnknownKey {
                key: key.to_string(),
                origin: source.name(),
            });
        };
        let v = check(kind, value.trim()).map_err(|expected| SettingsError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected,
            origin: source.name(),
        })?;
        self.values.insert(name, (v, source));
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, source: Source) -> Result<(), SettingsError> {
        let kv = parse_kv(text).map_err(SettingsError::Invalid)?;
        for (k, v) in kv {
            self.set(&k, &v, source)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), SettingsError> {
        let text = std::fs::read_to_string(path).map_err(|e| SettingsError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, Source::File).map_err(|e| match e {
            SettingsError::Invalid(m) => SettingsError::File {
                path: path.to_path_buf(),
                message: m,
            },
            other => other,
        })
    }

    /// Applies `REVISE_<KEY>` variables found through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), SettingsError> {
        for &(k, _, _) in KEYS {
            if let Some(v) = lookup(&env_var_name(k)) {
                self.set(k, &v, Source::Env)?;
            }
        }
        Ok(())
    }

    /// Defaults, then `file`, then the process environment, then `flags`.
    pub fn layered(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, SettingsError> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        cfg.apply_env(|name| std::env::var(name).ok())?;
        for (k, v) in flags {
            cfg.set(k, v, Source::Flag)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(|v| v.0.as_str()).unwrap_or("")
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|v| v.1)
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> T {
        match self.get(key).parse() {
            Ok(v) => v,
            Err(_) => panic!("config key {key} holds an unchecked value"),
        }
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn opt_str(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|s| !s.is_empty())
    }

    /// Every setting as `key=value`, readable back as a config file. A
    /// leading comment names the layer of each non-default value.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let changed: Vec<String> = self
            .values
            .iter()
            .filter(|(_, (_, s))| *s != Source::Default)
            .map(|(k, (_, s))| format!("{k} ({})", s.name()))
            .collect();
        if !changed.is_empty() {
            let _ = writeln!(out, "# set: {}", changed.join(", "));
        }
        for (k, (v, _)) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), SettingsError> {
        self.episode_config()?
            .validate()
            .map_err(|e| SettingsError::Invalid(e.to_string()))?;
        if self.num::<usize>("synth_k_min") > self.num::<usize>("synth_k_max") {
            return Err(SettingsError::Invalid("synth_k_min exceeds synth_k_max".into()));
        }
        if self.num::<u64>("timeout_ms") == 0 {
            return Err(SettingsError::Invalid("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> usize {
        self.num::<usize>("parallelism").max(1)
    }

    pub fn seed(&self) -> u64 {
        self.num("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn backend_is_http(&self) -> bool {
        self.get("backend") == "http"
    }

    pub fn tasks_path(&self) -> Option<PathBuf> {
        self.opt_str("tasks").map(PathBuf::from)
    }

    pub fn episode_config(&self) -> Result<EpisodeConfig, SettingsError> {
        let template = match self.opt_str("prompt_template") {
            None => PromptTemplate::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SettingsError::File {
                    path: p.into(),
                    message: e.to_string(),
                })?;
                PromptTemplate::parse(&text).map_err(|e| SettingsError::Invalid(format!("{p}: {e}")))?
            }
        };
        Ok(EpisodeConfig {
            max_rounds: self.num("max_rounds"),
            max_frames_per_round: self.num("max_frames_per_round"),
            token_budget: self.num("token_budget"),
            initial_frame_count: self.num("initial_frames"),
            retry_on_invalid: self.num("retry_on_invalid"),
            sampling: SamplingParams {
                temperature: self.num("temperature"),
                top_p: self.num("top_p"),
                max_response_tokens: self.num::<u64>("max_response_tokens").min(u32::MAX as u64) as u32,
            },
            force_answer_at_end: self.flag("force_answer_at_end"),
            cost: CostModel {
                per_frame_cost: self.num("per_frame_cost"),
                ..CostModel::default()
            },
            carry_state: self.flag("carry_state"),
            summary_mode: if self.get("summary_mode") == "free_text" {
                SummaryMode::FreeText
            } else {
                SummaryMode::Structured
            },
            lenient_parse: self.flag("lenient_parse"),
            score_options: self.flag("score_options"),
            template,
        })
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            conf: self.num("lambda_conf"),
            sum: self.num("lambda_sum"),
            stop: self.num("lambda_stop"),
            format: self.num("alpha_format"),
            beta: self.num("beta"),
            t_stop: self.num("t_stop"),
            gamma: self.num("gamma"),
            margin_temperature: self.num("margin_temperature"),
        }
    }

    pub fn oracle_rules(&self) -> OracleRules {
        OracleRules {
            b0: self.num("oracle_b0"),
            b1: self.num("oracle_b1"),
            distractor_logit: self.num("oracle_distractor_logit"),
            answer_threshold: self.num("oracle_threshold"),
            noise: self.num("oracle_noise"),
            answer_on_last_round: self.flag("oracle_answer_on_last_round"),
        }
    }

    /// HTTP settings; `debug_dir` receives `http_debug.jsonl` when
    /// `debug_log` is on.
    pub fn http_config(&self, debug_dir: Option<&Path>) -> HttpConfig {
        HttpConfig {
            endpoint: self.get("endpoint").to_string(),
            model: self.get("model").to_string(),
            api_key_env: self.opt_str("api_key_env").map(String::from),
            timeout_ms: self.num("timeout_ms"),
            max_retries: self.num::<u64>("max_retries").min(u32::MAX as u64) as u32,
            max_concurrency: self.num("max_concurrency"),
            backoff_base_ms: self.num("backoff_base_ms"),
            backoff_max_ms: self.num("backoff_max_ms"),
            headers: Vec::new(),
            use_logprobs: self.flag("logprobs"),
            fallback_samples: self.num("fallback_samples"),
            debug_log: debug_dir
                .filter(|_| self.flag("debug_log"))
                .map(|d| d.join("http_debug.jsonl")),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed(),
            items: self.num("synth_items"),
            length: self.num("synth_length"),
            k_min: self.num("synth_k_min"),
            k_max: self.num("synth_k_max"),
            n_options: self.num("synth_options"),
            fps: self.num("synth_fps"),
        }
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig {
            iterations: self.num("toy_iterations"),
            tasks_per_iteration: self.num("toy_tasks"),
            group_size: self.num("toy_group_size"),
            epochs: self.num("toy_epochs"),
            learning_rate: self.num("toy_learning_rate"),
            clip_eps: self.num("toy_clip_eps"),
            kl_coef: self.num("toy_kl_coef"),
            rules: self.oracle_rules(),
            ..ToyConfig::default()
        }
    }
}
