//! The model interface.
//!
//! A backend is a black box reached only through two calls: free-form
//! generation and per-option scoring. The controller and the reward never
//! look inside it.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::controller::prompt::PromptView;
use crate::math;
use crate::protocol::{parse_lenient, Action, AnswerSet};

/// An image handed to a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    /// `image/jpeg`, `image/png`, or `image/x-gray8` for raw 8-bit
    /// grayscale (see [`ImagePayload::gray`]).
    pub mime: String,
    pub data: Vec<u8>,
    pub width: u32,
    pub height: u32,
    /// Machine-readable content, when the source has it.
    pub label: Option<String>,
}

impl ImagePayload {
    pub const GRAY8: &'static str = "image/x-gray8";

    pub fn encoded(mime: &str, data: Vec<u8>) -> Self {
        Self {
            mime: mime.to_string(),
            data,
            width: 0,
            height: 0,
            label: None,
        }
    }

    pub fn gray(width: u32, height: u32, data: Vec<u8>) -> Self {
        Self {
            mime: Self::GRAY8.to_string(),
            data,
            width,
            height,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_response_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            top_p: 0.9,
            max_response_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct OptionScore {
    pub label: String,
    pub logprob: f64,
}

/// Log-probabilities over the answer set, in option order.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct OptionScores {
    entries: Vec<OptionScore>,
}

impl OptionScores {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            entries: pairs
                .into_iter()
                .map(|(label, logprob)| OptionScore {
                    label: label.into(),
                    logprob,
                })
                .collect(),
        }
    }

    /// Normalized log-softmax of raw logits aligned with `options`.
    pub fn from_logits(options: &AnswerSet, logits: &[f64]) -> Self {
        let norm = math::log_sum_exp(logits);
        Self::new(
            options
                .labels()
                .zip(logits)
                .map(|(l, x)| (l.to_string(), x - norm)),
        )
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.label == label)
            .map(|e| e.logprob)
    }

    pub fn iter(&self) -> core::slice::Iter<'_, OptionScore> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys equal the option labels exactly and every value is finite.
    pub fn matches(&self, options: &AnswerSet) -> bool {
        self.entries.len() == options.len()
            && options.labels().all(|l| self.get(l).is_some())
            && self.entries.iter().all(|e| e.logprob.is_finite())
    }

    /// The unique highest-scoring label, or `None` on a tie.
    pub fn argmax_unique(&self) -> Option<&str> {
        let best = self
            .entries
            .iter()
            .map(|e| e.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut at_best = self.entries.iter().filter(|e| e.logprob == best);
        match (at_best.next(), at_best.next()) {
            (Some(e), None) => Some(&e.label),
            _ => None,
        }
    }

    /// Highest-scoring label, first in option order on ties.
    pub fn argmax_first(&self) -> Option<&str> {
        let mut best: Option<&OptionScore> = None;
        for e in &self.entries {
            if best.is_none_or(|b| e.logprob > b.logprob) {
                best = Some(e);
            }
        }
        best.map(|e| e.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum BackendError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("timed out after {attempts} attempts ({elapsed_ms} ms): {reason}")]
    Timeout {
        attempts: u32,
        elapsed_ms: u64,
        reason: String,
    },
    #[error("server error {status} after {attempts} attempts")]
    Server { status: u16, attempts: u32 },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("option scoring unavailable: {0}")]
    ScoringUnavailable(String),
    #[error("{0}")]
    Other(String),
}

/// A frozen answer-producing model.
///
/// Implementations must be shareable across concurrently running episodes
/// and keep only per-call state.
pub trait ModelBackend: Sync {
    fn generate(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        params: &SamplingParams,
    ) -> Result<String, BackendError>;

    /// One finite log-probability per option, keyed exactly by the labels.
    fn score_options(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        options: &AnswerSet,
    ) -> Result<OptionScores, BackendError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn generate(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        params: &SamplingParams,
    ) -> Result<String, BackendError> {
        (**self).generate(prompt, images, params)
    }

    fn score_options(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        options: &AnswerSet,
    ) -> Result<OptionScores, BackendError> {
        (**self).score_options(prompt, images, options)
    }
}

/// Backends that expose token-level log-probabilities.
pub trait TokenLogprobs {
    /// Candidate first tokens of a constrained answer continuation with
    /// their log-probabilities, or `None` when the backend hides them.
    #[allow(clippy::type_complexity)]
    fn first_token_logprobs(
        &self,
        prompt: &str,
        images: &[ImagePayload],
    ) -> Result<Option<Vec<(String, f64)>>, BackendError>;
}

/// Which route produced a set of option scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ScoringPath {
    Logprobs,
    SampledFrequency { samples: usize },
}

/// Pseudo-log-probabilities from repeated sampling, for backends that hide
/// log-probs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingFallback {
    pub samples: usize,
    pub params: SamplingParams,
}

impl Default for SamplingFallback {
    fn default() -> Self {
        Self {
            samples: 8,
            params: SamplingParams::default(),
        }
    }
}

/// Appended to a decision-state prompt when only an answer is wanted.
pub const ANSWER_ONLY_SUFFIX: &str =
    "\nRespond with only the label of the correct option, with no other text.";

/// Scores options from first-token log-probabilities, falling back to
/// Laplace-smoothed answer frequencies over `fallback.samples` generations:
/// `log((count + 1) / (n + |options|))`.
pub fn score_options_via_logprobs<B>(
    backend: &B,
    prompt: &str,
    images: &[ImagePayload],
    options: &AnswerSet,
    fallback: Option<&SamplingFallback>,
) -> Result<(OptionScores, ScoringPath), BackendError>
where
    B: ModelBackend + TokenLogprobs + ?Sized,
{
    if options.is_empty() {
        return Err(BackendError::ScoringUnavailable("empty option set".into()));
    }
    let mut answer_prompt = String::from(prompt);
    answer_prompt.push_str(ANSWER_ONLY_SUFFIX);

    let mut missing: Option<String> = None;
    if let Some(tokens) = backend.first_token_logprobs(&answer_prompt, images)? {
        let mut pairs = Vec::with_capacity(options.len());
        for label in options.labels() {
            let best = tokens
                .iter()
                .filter(|(tok, lp)| tok.trim().eq_ignore_ascii_case(label) && lp.is_finite())
                .map(|(_, lp)| *lp)
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                pairs.push((label.to_string(), best));
            } else {
                missing = Some(label.to_string());
                break;
            }
        }
        if missing.is_none() {
            return Ok((OptionScores::new(pairs), ScoringPath::Logprobs));
        }
    }

    let Some(fb) = fallback.filter(|fb| fb.samples > 0) else {
        return Err(BackendError::ScoringUnavailable(match missing {
            Some(label) => alloc::format!("no log-probability for option {label}"),
            None => "backend exposes no log-probabilities and no fallback is configured".into(),
        }));
    };

    let mut counts = alloc::vec![0usize; options.len()];
    let mut resolved = 0usize;
    for _ in 0..fb.samples {
        let raw = backend.generate(&answer_prompt, images, &fb.params)?;
        if let Some(i) = resolve_sampled_answer(&raw, options) {
            counts[i] += 1;
            resolved += 1;
        }
    }
    let denom = (resolved + options.len()) as f64;
    let scores = OptionScores::new(
        options
            .labels()
            .zip(&counts)
            .map(|(l, &c)| (l.to_string(), math::ln((c as f64 + 1.0) / denom))),
    );
    Ok((
        scores,
        ScoringPath::SampledFrequency {
            samples: fb.samples,
        },
    ))
}

/// A sampled answer may be a bare label or a full protocol reply.
fn resolve_sampled_answer(raw: &str, options: &AnswerSet) -> Option<usize> {
    if let Some(o) = options.resolve(raw) {
        return options.index_of(&o.label);
    }
    if let Ok(r) = parse_lenient(raw, options) {
        if let Action::FinalAnswer { label, .. } = r.action {
            return options.index_of(&label);
        }
    }
    let inner = match (raw.find("<answer>"), raw.rfind("</answer>")) {
        (Some(a), Some(b)) if a + 8 <= b => &raw[a + 8..b],
        _ => raw,
    };
    if let Some(o) = options.resolve(inner.trim()) {
        return options.index_of(&o.label);
    }
    let wrapped = alloc::format!("<summary></summary><answer>{}</answer>", inner.trim());
    match parse_lenient(&wrapped, options).ok()?.action {
        Action::FinalAnswer { label, .. } => options.index_of(&label),
        Action::FrameRequest(_) => None,
    }
}

/// One scripted reply: response text plus per-option logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTurn {
    pub response: String,
    pub logits: Vec<(String, f64)>,
}

/// A pure backend that replies by round number, read from the prompt.
///
/// Rounds beyond the script repeat the last turn. Forced-answer prompts get
/// `forced` when set; summary-only prompts are scored with
/// `summary_logits` when set.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub turns: Vec<ScriptedTurn>,
    pub forced: Option<ScriptedTurn>,
    pub reprompt: Option<ScriptedTurn>,
    pub summary_logits: Option<Vec<(String, f64)>>,
}

impl ScriptedBackend {
    pub fn new(turns: Vec<ScriptedTurn>) -> Self {
        Self {
            turns,
            ..Self::default()
        }
    }

    fn turn_for(&self, prompt: &str) -> Option<&ScriptedTurn> {
        let view = PromptView::parse(prompt);
        if view.forced {
            if let Some(f) = &self.forced {
                return Some(f);
            }
        }
        if view.reprompt {
            if let Some(r) = &self.reprompt {
                return Some(r);
            }
        }
        let round = view.round.unwrap_or(1).max(1);
        self.turns
            .get(round - 1)
            .or_else(|| self.turns.last())
    }
}

impl ModelBackend for ScriptedBackend {
    fn generate(
        &self,
        prompt: &str,
        _images: &[ImagePayload],
        _params: &SamplingParams,
    ) -> Result<String, BackendError> {
        self.turn_for(prompt)
            .map(|t| t.response.clone())
            .ok_or_else(|| BackendError::Other("empty script".into()))
    }

    fn score_options(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        options: &AnswerSet,
    ) -> Result<OptionScores, BackendError> {
        let tokens = self
            .first_token_logprobs(prompt, images)?
            .unwrap_or_default();
        let scores = OptionScores::new(options.labels().map(|l| {
            let lp = tokens
                .iter()
                .find(|(t, _)| t == l)
                .map(|(_, lp)| *lp)
                .unwrap_or(f64::NAN);
            (l.to_string(), lp)
        }));
        if scores.matches(options) {
            Ok(scores)
        } else {
            Err(BackendError::ScoringUnavailable(
                "script has no logit for some option".into(),
            ))
        }
    }
}

impl TokenLogprobs for ScriptedBackend {
    fn first_token_logprobs(
        &self,
        prompt: &str,
        _images: &[ImagePayload],
    ) -> Result<Option<Vec<(String, f64)>>, BackendError> {
        let view = PromptView::parse(prompt);
        if view.summary_only {
            if let Some(l) = &self.summary_logits {
                return Ok(Some(l.clone()));
            }
        }
        Ok(self.turn_for(prompt).map(|t| t.logits.clone()))
    }
}
