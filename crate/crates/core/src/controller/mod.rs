//! The multi-round episode loop.
//!
//! Each round the model sees the question, the latest summary and only the
//! frames admitted since the previous round, and replies with a summary plus
//! either a frame request or an answer.

pub mod prompt;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ImagePayload, ModelBackend, OptionScores, SamplingParams};
use crate::protocol::{
    parse_with, Action, AgentResponse, AnswerSet, ParseError, ParseOptions, SummaryMode,
    SummaryState,
};
use crate::summary_state::{CostModel, EpisodeState, RejectReason};
use crate::video::{VideoError, VideoSource};

use prompt::{build_prompt, PromptInputs, PromptKind, PromptTemplate, ShownFrame};

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// `T`.
    pub max_rounds: usize,
    /// Cap on new frames admitted per round.
    pub max_frames_per_round: usize,
    /// `K`: visual plus text tokens allowed in any single call.
    pub token_budget: u64,
    /// Uniformly spaced frames shown in round 1.
    pub initial_frame_count: usize,
    /// Reprompts allowed after an unparseable reply before an answer is forced.
    pub retry_on_invalid: usize,
    pub sampling: SamplingParams,
    /// At `t = T`, turn a frame request into one forced-answer call.
    pub force_answer_at_end: bool,
    pub cost: CostModel,
    /// Show the latest summary in each prompt. Off gives a memoryless agent.
    pub carry_state: bool,
    pub summary_mode: SummaryMode,
    pub lenient_parse: bool,
    /// Query option scores at every decision state (needed for the margin).
    pub score_options: bool,
    pub template: PromptTemplate,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_rounds: 4,
            max_frames_per_round: 3,
            token_budget: 8192,
            initial_frame_count: 3,
            retry_on_invalid: 1,
            sampling: SamplingParams::default(),
            force_answer_at_end: true,
            cost: CostModel::default(),
            carry_state: true,
            summary_mode: SummaryMode::Structured,
            lenient_parse: false,
            score_options: false,
            template: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_rounds must be at least 1")]
    NoRounds,
    #[error("max_frames_per_round must be at least 1")]
    ZeroCap,
    #[error("initial_frame_count {initial} exceeds max_frames_per_round {cap}")]
    InitialOverCap { initial: usize, cap: usize },
    #[error("token_budget must be positive")]
    ZeroBudget,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_rounds == 0 {
            return Err(ConfigError::NoRounds);
        }
        if self.max_frames_per_round == 0 {
            return Err(ConfigError::ZeroCap);
        }
        if self.initial_frame_count > self.max_frames_per_round {
            return Err(ConfigError::InitialOverCap {
                initial: self.initial_frame_count,
                cap: self.max_frames_per_round,
            });
        }
        if self.token_budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        Ok(())
    }

    fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            mode: self.summary_mode,
            lenient: self.lenient_parse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot sample {requested} frames from a video of {length}")]
pub struct SampleError {
    pub requested: usize,
    pub length: usize,
}

/// `n` uniformly spaced indices `floor(j (L-1) / (n-1))`, always including the
/// first and last frame; the middle frame when `n = 1`.
pub fn sample_initial_frames(video_length: usize, n: usize) -> Result<Vec<usize>, SampleError> {
    if n == 0 || n > video_length {
        return Err(SampleError {
            requested: n,
            length: video_length,
        });
    }
    if n == 1 {
        return Ok(alloc::vec![(video_length - 1) / 2]);
    }
    Ok((0..n).map(|j| j * (video_length - 1) / (n - 1)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum AttemptKind {
    Primary,
    Reprompt,
    Forced,
}

/// One generation call within a round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Attempt {
    pub kind: AttemptKind,
    pub prompt: String,
    /// Text tokens of `prompt`.
    pub prompt_tokens: u64,
    /// Frames attached to this call.
    pub images: usize,
    pub raw_response: String,
    pub parsed: Result<AgentResponse, ParseError>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum RoundOutcome {
    /// A request that admitted at least one frame, shown next round.
    Selected {
        admitted: Vec<usize>,
        rejected: Vec<(usize, RejectReason)>,
    },
    /// A request where every index was filtered out.
    NoProgress { rejected: Vec<(usize, RejectReason)> },
    Answered { label: String },
    ForcedAnswer { label: String },
    ProtocolFailure,
    BudgetExhausted,
}

impl RoundOutcome {
    pub fn is_select(&self) -> bool {
        matches!(self, RoundOutcome::Selected { .. } | RoundOutcome::NoProgress { .. })
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            RoundOutcome::Answered { label } | RoundOutcome::ForcedAnswer { label } => Some(label),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RoundRecord {
    pub t: usize,
    /// `F_t`: the frames attached in this round.
    pub shown_frames: Vec<ShownFrame>,
    /// Pending frames dropped because they did not fit the budget.
    pub budget_dropped: Vec<usize>,
    pub notice: Option<String>,
    pub attempts: Vec<Attempt>,
    pub outcome: RoundOutcome,
    /// The summary committed from this round's reply.
    pub committed_summary: Option<SummaryState>,
    /// Scores at this round's decision state.
    pub option_scores_before: Option<OptionScores>,
    /// Scores at the next decision state, when there is one.
    pub option_scores_after: Option<OptionScores>,
    /// `C(S_t)` while this round's calls were made.
    pub visual_cost: u64,
}

impl RoundRecord {
    /// The reply the round was decided on.
    pub fn final_response(&self) -> Option<&AgentResponse> {
        self.attempts.iter().rev().find_map(|a| a.parsed.as_ref().ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Termination {
    /// The agent chose to answer.
    Answered,
    /// An answer was demanded by the round limit, budget or invalid replies.
    ForcedAnswer,
    /// No usable answer could be obtained.
    ProtocolFailure,
    /// Even the forced-answer prompt did not fit the budget.
    BudgetExhausted,
    /// Rounds ran out with forcing disabled.
    RoundsExhausted,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Trajectory {
    pub video_id: String,
    pub question: String,
    pub options: AnswerSet,
    pub video_length: usize,
    pub fps: f64,
    pub max_rounds: usize,
    pub summary_mode: SummaryMode,
    pub rounds: Vec<RoundRecord>,
    /// `tau`: the round that ended the episode.
    pub stopping_round: usize,
    pub termination: Termination,
    pub final_answer: Option<String>,
    /// `z_tau`, the summary attached to the answer.
    pub final_summary: Option<SummaryState>,
    /// Scores given `z_tau` and the question only.
    pub summary_only_scores: Option<OptionScores>,
    /// `S_tau` in admission order.
    pub admitted_frames: Vec<usize>,
    /// Visual plus text tokens over every generation call.
    pub prompt_tokens: u64,
    /// Filled in by callers that measure time.
    pub wall_ms: u64,
}

impl Trajectory {
    pub fn frames_used(&self) -> usize {
        self.admitted_frames.len()
    }

    pub fn is_correct(&self, gold: &str) -> bool {
        self.final_answer.as_deref() == Some(gold)
    }

    /// Stopped before the last round.
    pub fn stopped_early(&self) -> bool {
        self.final_answer.is_some() && self.stopping_round < self.max_rounds
    }

    pub fn summaries(&self) -> impl Iterator<Item = &SummaryState> {
        self.rounds.iter().filter_map(|r| r.committed_summary.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("the answer set is empty")]
    EmptyOptions,
    #[error("the video has no frames")]
    EmptyVideo,
    #[error("video error: {error}")]
    Video {
        error: VideoError,
        partial: Box<Trajectory>,
    },
    #[error("backend error: {error}")]
    Backend {
        error: BackendError,
        partial: Box<Trajectory>,
    },
}

impl EpisodeError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            EpisodeError::Video { partial, .. } | EpisodeError::Backend { partial, .. } => {
                Some(partial)
            }
            _ => None,
        }
    }
}

enum Step {
    Continue,
    Stop,
}

enum Failure {
    Video(VideoError),
    Backend(BackendError),
}

struct Runner<'a, V: ?Sized, B: ?Sized> {
    video: &'a V,
    backend: &'a B,
    config: &'a EpisodeConfig,
    state: EpisodeState,
    traj: Trajectory,
    pending: Vec<usize>,
    notice: Option<String>,
}

/// Runs one episode to termination.
///
/// Every prompt sent satisfies `C(S_t) + text_cost(prompt) <= K`; a prompt that
/// would not fit is never sent.
pub fn run_episode<V, B>(
    video: &V,
    question: &str,
    options: &AnswerSet,
    backend: &B,
    config: &EpisodeConfig,
) -> Result<Trajectory, EpisodeError>
where
    V: VideoSource + ?Sized,
    B: ModelBackend + ?Sized,
{
    config.validate()?;
    if options.is_empty() {
        return Err(EpisodeError::EmptyOptions);
    }
    let length = video.len();
    if length == 0 {
        return Err(EpisodeError::EmptyVideo);
    }

    let state = EpisodeState::new(question, options.clone(), config.cost.clone());
    let initial = config.initial_frame_count.min(length);
    let pending = if initial == 0 {
        Vec::new()
    } else {
        sample_initial_frames(length, initial).unwrap_or_default()
    };

    let mut runner = Runner {
        video,
        backend,
        config,
        state,
        traj: Trajectory {
            video_id: video.id().to_string(),
            question: question.to_string(),
            options: options.clone(),
            video_length: length,
            fps: video.fps(),
            max_rounds: config.max_rounds,
            summary_mode: config.summary_mode,
            rounds: Vec::new(),
            stopping_round: 0,
            termination: Termination::RoundsExhausted,
            final_answer: None,
            final_summary: None,
            summary_only_scores: None,
            admitted_frames: Vec::new(),
            prompt_tokens: 0,
            wall_ms: 0,
        },
        pending,
        notice: None,
    };

    match runner.run() {
        Ok(()) => Ok(runner.finish()),
        Err(Failure::Video(error)) => Err(EpisodeError::Video {
            error,
            partial: Box::new(runner.finish()),
        }),
        Err(Failure::Backend(error)) => Err(EpisodeError::Backend {
            error,
            partial: Box::new(runner.finish()),
        }),
    }
}

/// Rebuilds the prompt of a logged round from the summary it conditioned on.
pub fn round_prompt(
    traj: &Trajectory,
    config: &EpisodeConfig,
    round: &RoundRecord,
    kind: PromptKind,
    summary: Option<&SummaryState>,
) -> String {
    let (shown, notice): (&[ShownFrame], _) = match kind {
        PromptKind::Round { .. } => (&round.shown_frames, round.notice.as_deref()),
        _ => (&[], None),
    };
    build_prompt(
        &config.template,
        &PromptInputs {
            video_id: &traj.video_id,
            total_frames: traj.video_length,
            fps: traj.fps,
            question: &traj.question,
            options: &traj.options,
            summary: if config.carry_state { summary } else { None },
            summary_mode: config.summary_mode,
            shown,
            round: round.t,
            max_rounds: config.max_rounds,
            cap: config.max_frames_per_round,
            notice,
            kind,
        },
    )
}

fn describe_rejections(rejected: &[(usize, RejectReason)]) -> Option<String> {
    if rejected.is_empty() {
        return None;
    }
    let parts: Vec<String> = rejected
        .iter()
        .map(|(i, r)| format!("{i} ({})", r.describe()))
        .collect();
    Some(format!("requested frames not admitted: {}", parts.join(", ")))
}

impl<V, B> Runner<'_, V, B>
where
    V: VideoSource + ?Sized,
    B: ModelBackend + ?Sized,
{
    fn run(&mut self) -> Result<(), Failure> {
        for t in 1..=self.config.max_rounds {
            self.state.advance_round();
            if let Step::Stop = self.round(t)? {
                return Ok(());
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Trajectory {
        let n = self.traj.rounds.len();
        for i in 1..n {
            let next = self.traj.rounds[i].option_scores_before.clone();
            self.traj.rounds[i - 1].option_scores_after = next;
        }
        if self.traj.stopping_round == 0 {
            self.traj.stopping_round = n;
        }
        self.traj.admitted_frames = self.state.admitted_frames().to_vec();
        self.traj
    }

    fn fits(&self, prompt: &str, extra_frames: usize) -> bool {
        self.state.cumulative_visual_cost()
            + self.config.cost.frames_cost(extra_frames)
            + self.config.cost.text_cost(prompt)
            <= self.config.token_budget
    }

    fn summary_for_prompt(&self) -> Option<&SummaryState> {
        if self.config.carry_state {
            self.state.latest_summary()
        } else {
            None
        }
    }

    fn prompt(&self, t: usize, shown: &[ShownFrame], notice: Option<&str>, kind: PromptKind) -> String {
        build_prompt(
            &self.config.template,
            &PromptInputs {
                video_id: &self.traj.video_id,
                total_frames: self.traj.video_length,
                fps: self.traj.fps,
                question: &self.traj.question,
                options: &self.traj.options,
                summary: self.summary_for_prompt(),
                summary_mode: self.config.summary_mode,
                shown,
                round: t,
                max_rounds: self.config.max_rounds,
                cap: self.config.max_frames_per_round,
                notice,
                kind,
            },
        )
    }

    fn shown(&self, indices: &[usize]) -> Vec<ShownFrame> {
        indices
            .iter()
            .map(|&index| ShownFrame {
                index,
                timestamp: self.video.timestamp(index),
            })
            .collect()
    }

    fn call(
        &mut self,
        kind: AttemptKind,
        prompt: String,
        images: &[ImagePayload],
    ) -> Result<Attempt, Failure> {
        let text = self.config.cost.text_cost(&prompt);
        self.traj.prompt_tokens += text + self.state.cumulative_visual_cost();
        let raw = self
            .backend
            .generate(&prompt, images, &self.config.sampling)
            .map_err(Failure::Backend)?;
        let parsed = parse_with(&raw, &self.traj.options, self.config.parse_options());
        Ok(Attempt {
            kind,
            prompt,
            prompt_tokens: text,
            images: images.len(),
            raw_response: raw,
            parsed,
        })
    }

    fn score(&self, prompt: &str, images: &[ImagePayload]) -> Result<Option<OptionScores>, Failure> {
        if !self.config.score_options {
            return Ok(None);
        }
        self.backend
            .score_options(prompt, images, &self.traj.options)
            .map(Some)
            .map_err(Failure::Backend)
    }

    fn round(&mut self, t: usize) -> Result<Step, Failure> {
        let notice = self.notice.take();
        let first = t == 1;
        let pending = core::mem::take(&mut self.pending);

        // Largest prefix of the pending frames that fits alongside the prompt.
        let mut fitted = None;
        for j in (0..=pending.len()).rev() {
            let shown = self.shown(&pending[..j]);
            let p = self.prompt(t, &shown, notice.as_deref(), PromptKind::Round { first });
            if self.fits(&p, j) {
                fitted = Some((j, shown, p));
                break;
            }
        }

        let mut record = RoundRecord {
            t,
            shown_frames: Vec::new(),
            budget_dropped: Vec::new(),
            notice: notice.clone(),
            attempts: Vec::new(),
            outcome: RoundOutcome::ProtocolFailure,
            committed_summary: None,
            option_scores_before: None,
            option_scores_after: None,
            visual_cost: self.state.cumulative_visual_cost(),
        };

        let (j, shown, prompt) = match fitted {
            Some((j, shown, p)) if j > 0 || pending.is_empty() => (j, shown, p),
            _ => {
                record.budget_dropped = pending;
                return self.forced_round(record, true);
            }
        };
        record.budget_dropped = pending[j..].to_vec();
        self.state.commit_frames(&pending[..j]);
        record.visual_cost = self.state.cumulative_visual_cost();
        record.shown_frames = shown;

        let images = match self.load(&pending[..j]) {
            Ok(images) => images,
            Err(e) => {
                self.traj.rounds.push(record);
                return Err(e);
            }
        };
        record.option_scores_before = self.score_or_push(&mut record, &prompt, &images)?;

        let mut attempt = self.call_or_push(&mut record, AttemptKind::Primary, prompt.clone(), &images)?;
        let mut retries = 0;
        while let Err(err) = &attempt.parsed {
            if retries >= self.config.retry_on_invalid {
                break;
            }
            let again = prompt::reprompt(&prompt, &err.message, self.config.summary_mode);
            if !self.fits(&again, 0) {
                break;
            }
            record.attempts.push(attempt);
            attempt = self.call_or_push(&mut record, AttemptKind::Reprompt, again, &images)?;
            retries += 1;
        }
        let parsed = attempt.parsed.clone();
        record.attempts.push(attempt);

        let response = match parsed {
            Ok(r) => r,
            Err(_) => return self.forced_round(record, false),
        };

        match response.action {
            Action::FinalAnswer { label, .. } => {
                record.outcome = RoundOutcome::Answered {
                    label: label.clone(),
                };
                self.traj.termination = Termination::Answered;
                self.conclude(record, label, response.summary);
                Ok(Step::Stop)
            }
            Action::FrameRequest(request) => {
                record.committed_summary = Some(response.summary.clone());
                self.state.commit_summary(response.summary);
                if t >= self.config.max_rounds {
                    if self.config.force_answer_at_end {
                        return self.forced_round(record, false);
                    }
                    record.outcome = RoundOutcome::Selected {
                        admitted: Vec::new(),
                        rejected: Vec::new(),
                    };
                    self.traj.termination = Termination::RoundsExhausted;
                    self.traj.stopping_round = t;
                    self.traj.rounds.push(record);
                    return Ok(Step::Stop);
                }
                let plan = self.state.plan_admission(
                    &request,
                    self.traj.video_length,
                    self.config.max_frames_per_round,
                );
                self.notice = describe_rejections(&plan.rejected);
                record.outcome = if plan.admitted.is_empty() {
                    RoundOutcome::NoProgress {
                        rejected: plan.rejected,
                    }
                } else {
                    self.pending = plan.admitted.clone();
                    RoundOutcome::Selected {
                        admitted: plan.admitted,
                        rejected: plan.rejected,
                    }
                };
                self.traj.rounds.push(record);
                Ok(Step::Continue)
            }
        }
    }

    /// Demands an answer with no new frames. `fresh` marks a round whose
    /// first call is the forced prompt.
    fn forced_round(&mut self, mut record: RoundRecord, fresh: bool) -> Result<Step, Failure> {
        let t = record.t;
        let base = self.prompt(t, &[], None, PromptKind::Forced);
        self.traj.stopping_round = t;
        if !self.fits(&base, 0) {
            record.outcome = RoundOutcome::BudgetExhausted;
            self.traj.termination = Termination::BudgetExhausted;
            self.traj.rounds.push(record);
            return Ok(Step::Stop);
        }
        if fresh {
            record.option_scores_before = self.score_or_push(&mut record, &base, &[])?;
        }
        let mut prompt = base.clone();
        for _ in 0..=self.config.retry_on_invalid {
            let attempt = self.call_or_push(&mut record, AttemptKind::Forced, prompt, &[])?;
            let parsed = attempt.parsed.clone();
            record.attempts.push(attempt);
            let reason = match parsed {
                Ok(AgentResponse {
                    summary,
                    action: Action::FinalAnswer { label, .. },
                }) => {
                    record.outcome = RoundOutcome::ForcedAnswer {
                        label: label.clone(),
                    };
                    self.traj.termination = Termination::ForcedAnswer;
                    self.conclude(record, label, summary);
                    return Ok(Step::Stop);
                }
                Ok(_) => "frame requests are not permitted now".to_string(),
                Err(e) => e.message,
            };
            prompt = prompt::reprompt(&base, &reason, self.config.summary_mode);
            if !self.fits(&prompt, 0) {
                break;
            }
        }
        record.outcome = RoundOutcome::ProtocolFailure;
        self.traj.termination = Termination::ProtocolFailure;
        self.traj.rounds.push(record);
        Ok(Step::Stop)
    }

    fn conclude(&mut self, mut record: RoundRecord, label: String, summary: SummaryState) {
        self.traj.stopping_round = record.t;
        self.traj.final_answer = Some(label);
        record.committed_summary = Some(summary.clone());
        self.traj.final_summary = Some(summary);
        self.traj.rounds.push(record);
        if self.config.score_options {
            let z = self.traj.final_summary.clone();
            let p = build_prompt(
                &self.config.template,
                &PromptInputs {
                    video_id: &self.traj.video_id,
                    total_frames: self.traj.video_length,
                    fps: self.traj.fps,
                    question: &self.traj.question,
                    options: &self.traj.options,
                    summary: z.as_ref(),
                    summary_mode: self.config.summary_mode,
                    shown: &[],
                    round: self.traj.stopping_round,
                    max_rounds: self.config.max_rounds,
                    cap: self.config.max_frames_per_round,
                    notice: None,
                    kind: PromptKind::SummaryOnly,
                },
            );
            // Diagnostic only; a failure here leaves the score absent.
            self.traj.summary_only_scores =
                self.backend.score_options(&p, &[], &self.traj.options).ok();
        }
    }

    fn load(&self, indices: &[usize]) -> Result<Vec<ImagePayload>, Failure> {
        indices
            .iter()
            .map(|&i| self.video.frame_at(i).map(|f| f.image))
            .collect::<Result<_, _>>()
            .map_err(Failure::Video)
    }

    fn score_or_push(
        &mut self,
        record: &mut RoundRecord,
        prompt: &str,
        images: &[ImagePayload],
    ) -> Result<Option<OptionScores>, Failure> {
        match self.score(prompt, images) {
            Ok(s) => Ok(s),
            Err(e) => {
                self.traj.rounds.push(record.clone());
                Err(e)
            }
        }
    }

    fn call_or_push(
        &mut self,
        record: &mut RoundRecord,
        kind: AttemptKind,
        prompt: String,
        images: &[ImagePayload],
    ) -> Result<Attempt, Failure> {
        match self.call(kind, prompt, images) {
            Ok(a) => Ok(a),
            Err(e) => {
                self.traj.rounds.push(record.clone());
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedTurn};
    use crate::video::Frame;
    use alloc::vec;
    use alloc::vec::Vec;

    struct Blank(usize);

    impl VideoSource for Blank {
        fn id(&self) -> &str {
            "blank"
        }
        fn len(&self) -> usize {
            self.0
        }
        fn fps(&self) -> f64 {
            1.0
        }
        fn frame_at(&self, index: usize) -> Result<Frame, VideoError> {
            if index >= self.0 {
                return Err(VideoError::IndexOutOfRange {
                    index,
                    length: self.0,
                });
            }
            Ok(Frame {
                image: ImagePayload::gray(1, 1, vec![0]),
                timestamp: index as f64,
            })
        }
    }

    fn turn(response: &str) -> ScriptedTurn {
        ScriptedTurn {
            response: response.to_string(),
            logits: vec![("A".into(), 0.0), ("B".into(), -1.0)],
        }
    }

    const REQ: &str = "<summary>\nP: a\nO: b\nH: c\nU: d\nR: e\n</summary>\n<frames>5,6</frames>";
    const ANS: &str = "<summary>\nP: a\nO: b\nH: c\nU: d\nR: e\n</summary>\n<answer>B</answer>";

    fn opts() -> AnswerSet {
        AnswerSet::from_texts(["x", "y"])
    }

    #[test]
    fn initial_sampling() {
        assert_eq!(sample_initial_frames(100, 3).unwrap(), vec![0, 49, 99]);
        assert_eq!(sample_initial_frames(7, 1).unwrap(), vec![3]);
        assert_eq!(sample_initial_frames(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(sample_initial_frames(2, 3).is_err());
    }

    #[test]
    fn request_then_answer() {
        let b = ScriptedBackend::new(vec![turn(REQ), turn(ANS)]);
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &EpisodeConfig::default()).unwrap();
        assert_eq!(tr.stopping_round, 2);
        assert_eq!(tr.termination, Termination::Answered);
        assert_eq!(tr.final_answer.as_deref(), Some("B"));
        assert_eq!(tr.admitted_frames, vec![0, 4, 9, 5, 6]);
        assert_eq!(tr.rounds[1].shown_frames.len(), 2);
        assert!(tr.stopped_early());
    }

    #[test]
    fn forced_at_last_round() {
        let mut b = ScriptedBackend::new(vec![turn(REQ)]);
        b.forced = Some(turn(ANS));
        let cfg = EpisodeConfig {
            max_rounds: 2,
            ..EpisodeConfig::default()
        };
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &cfg).unwrap();
        assert_eq!(tr.termination, Termination::ForcedAnswer);
        assert_eq!(tr.stopping_round, 2);
        let kinds: Vec<_> = tr.rounds[1].attempts.iter().map(|a| a.kind).collect();
        assert_eq!(kinds, vec![AttemptKind::Primary, AttemptKind::Forced]);
    }

    #[test]
    fn invalid_reply_reprompts_then_forces() {
        let mut b = ScriptedBackend::new(vec![turn("garbage")]);
        b.forced = Some(turn(ANS));
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &EpisodeConfig::default()).unwrap();
        let kinds: Vec<_> = tr.rounds[0].attempts.iter().map(|a| a.kind).collect();
        assert_eq!(
            kinds,
            vec![AttemptKind::Primary, AttemptKind::Reprompt, AttemptKind::Forced]
        );
        assert_eq!(tr.termination, Termination::ForcedAnswer);
        assert_eq!(tr.stopping_round, 1);
    }

    #[test]
    fn budget_too_small_sends_nothing() {
        let b = ScriptedBackend::new(vec![turn(ANS)]);
        let cfg = EpisodeConfig {
            token_budget: 10,
            ..EpisodeConfig::default()
        };
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &cfg).unwrap();
        assert_eq!(tr.termination, Termination::BudgetExhausted);
        assert!(tr.rounds[0].attempts.is_empty());
        assert_eq!(tr.prompt_tokens, 0);
    }

    #[test]
    fn repeated_request_is_no_progress() {
        let again = "<summary>\nP: a\nO: b\nH: c\nU: d\nR: e\n</summary>\n<frames>0,4</frames>";
        let b = ScriptedBackend::new(vec![turn(again), turn(ANS)]);
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &EpisodeConfig::default()).unwrap();
        assert!(matches!(tr.rounds[0].outcome, RoundOutcome::NoProgress { .. }));
        assert!(tr.rounds[1].shown_frames.is_empty());
        assert!(tr.rounds[1].attempts[0].prompt.contains("0 (already seen)"));
    }

    #[test]
    fn scores_chain_between_rounds() {
        let b = ScriptedBackend::new(vec![turn(REQ), turn(ANS)]);
        let cfg = EpisodeConfig {
            score_options: true,
            ..EpisodeConfig::default()
        };
        let tr = run_episode(&Blank(10), "q", &opts(), &b, &cfg).unwrap();
        assert_eq!(tr.rounds[0].option_scores_after, tr.rounds[1].option_scores_before);
        assert!(tr.rounds[0].option_scores_after.is_some());
        assert!(tr.summary_only_scores.is_some());
    }

    #[test]
    fn rejects_bad_config() {
        let b = ScriptedBackend::new(vec![turn(ANS)]);
        let cfg = EpisodeConfig {
            initial_frame_count: 4,
            ..EpisodeConfig::default()
        };
        assert!(matches!(
            run_episode(&Blank(10), "q", &opts(), &b, &cfg),
            Err(EpisodeError::InvalidConfig(_))
        ));
        assert!(matches!(
            run_episode(&Blank(0), "q", &opts(), &b, &EpisodeConfig::default()),
            Err(EpisodeError::EmptyVideo)
        ));
    }
}
