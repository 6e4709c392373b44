//! Episode state: committed summaries, the admitted frame set `S_t` and
//! token-budget accounting `C(S_t) + |p_t| <= K`.

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::protocol::{AnswerSet, SummaryState};

/// Maps text to a token count.
#[derive(Clone, Default)]
pub enum Tokenizer {
    /// `ceil(bytes / 4)`.
    #[default]
    BytesOver4,
    Custom(Arc<dyn Fn(&str) -> u64 + Send + Sync>),
}

impl Tokenizer {
    pub fn count(&self, text: &str) -> u64 {
        match self {
            Tokenizer::BytesOver4 => (text.len() as u64).div_ceil(4),
            Tokenizer::Custom(f) => f(text),
        }
    }
}

impl fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tokenizer::BytesOver4 => f.write_str("BytesOver4"),
            Tokenizer::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Visual and text token costs.
#[derive(Debug, Clone)]
pub struct CostModel {
    /// Tokens per admitted frame, constant across frames.
    pub per_frame_cost: u64,
    pub tokenizer: Tokenizer,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_frame_cost: 256,
            tokenizer: Tokenizer::BytesOver4,
        }
    }
}

impl CostModel {
    pub fn text_cost(&self, text: &str) -> u64 {
        self.tokenizer.count(text)
    }

    pub fn frames_cost(&self, frames: usize) -> u64 {
        self.per_frame_cost * frames as u64
    }
}

/// Why a requested index was not admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum RejectReason {
    OutOfRange,
    AlreadyAdmitted,
    Duplicate,
    OverCap,
    OverBudget,
}

impl RejectReason {
    pub fn describe(self) -> &'static str {
        match self {
            RejectReason::OutOfRange => "out of range",
            RejectReason::AlreadyAdmitted => "already seen",
            RejectReason::Duplicate => "duplicate in request",
            RejectReason::OverCap => "over the per-round frame cap",
            RejectReason::OverBudget => "over the token budget",
        }
    }
}

/// The outcome of filtering one frame request.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Admission {
    /// Newly admitted indices in request order.
    pub admitted: Vec<usize>,
    pub rejected: Vec<(usize, RejectReason)>,
}

impl Admission {
    pub fn is_empty(&self) -> bool {
        self.admitted.is_empty()
    }
}

/// Every requested index was out of range, already admitted or duplicated.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no requested frame survived filtering")]
pub struct EmptyAfterFiltering {
    pub rejected: Vec<(usize, RejectReason)>,
}

/// State `s_t = (p, z_{t-1}, S_{t-1})` of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    round_index: usize,
    committed_summaries: Vec<SummaryState>,
    admitted_frames: Vec<usize>,
    admitted_set: BTreeSet<usize>,
    cumulative_visual_cost: u64,
    question: alloc::string::String,
    options: AnswerSet,
    cost: CostModel,
}

impl EpisodeState {
    pub fn new(question: &str, options: AnswerSet, cost: CostModel) -> Self {
        Self {
            round_index: 0,
            committed_summaries: Vec::new(),
            admitted_frames: Vec::new(),
            admitted_set: BTreeSet::new(),
            cumulative_visual_cost: 0,
            question: question.into(),
            options,
            cost,
        }
    }

    pub fn round_index(&self) -> usize {
        self.round_index
    }

    pub fn advance_round(&mut self) {
        self.round_index += 1;
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn options(&self) -> &AnswerSet {
        &self.options
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    /// `z_0 .. z_{t-1}`.
    pub fn committed_summaries(&self) -> &[SummaryState] {
        &self.committed_summaries
    }

    /// `z_{t-1}`; prompts read only this.
    pub fn latest_summary(&self) -> Option<&SummaryState> {
        self.committed_summaries.last()
    }

    /// `S_{t-1}` in admission order.
    pub fn admitted_frames(&self) -> &[usize] {
        &self.admitted_frames
    }

    pub fn is_admitted(&self, index: usize) -> bool {
        self.admitted_set.contains(&index)
    }

    /// `C(S_{t-1})`.
    pub fn cumulative_visual_cost(&self) -> u64 {
        self.cumulative_visual_cost
    }

    /// Filters a request without mutating state: clamps to `[0, L)`, drops
    /// indices already admitted or repeated, then keeps the first `cap`.
    pub fn plan_admission(&self, request: &[usize], video_length: usize, cap: usize) -> Admission {
        let mut plan = Admission::default();
        let mut seen = BTreeSet::new();
        for &i in request {
            let reason = if i >= video_length {
                Some(RejectReason::OutOfRange)
            } else if self.admitted_set.contains(&i) {
                Some(RejectReason::AlreadyAdmitted)
            } else if !seen.insert(i) {
                Some(RejectReason::Duplicate)
            } else if plan.admitted.len() >= cap {
                Some(RejectReason::OverCap)
            } else {
                None
            };
            match reason {
                Some(r) => plan.rejected.push((i, r)),
                None => plan.admitted.push(i),
            }
        }
        plan
    }

    /// Adds frames to `S` and recomputes the visual cost. Indices must come
    /// from [`plan_admission`](Self::plan_admission) against this state.
    pub fn commit_frames(&mut self, frames: &[usize]) {
        for &i in frames {
            if self.admitted_set.insert(i) {
                self.admitted_frames.push(i);
            }
        }
        self.cumulative_visual_cost = self.cost.frames_cost(self.admitted_frames.len());
    }

    /// `S_t = S_{t-1} ∪ (request ∩ [0, L) \ S_{t-1})`, capped.
    pub fn admit_frames(
        &mut self,
        request: &[usize],
        video_length: usize,
        cap: usize,
    ) -> Result<Vec<usize>, EmptyAfterFiltering> {
        let plan = self.plan_admission(request, video_length, cap);
        if plan.admitted.is_empty() {
            return Err(EmptyAfterFiltering {
                rejected: plan.rejected,
            });
        }
        self.commit_frames(&plan.admitted);
        Ok(plan.admitted)
    }

    pub fn commit_summary(&mut self, summary: SummaryState) {
        self.committed_summaries.push(summary);
    }

    pub fn text_cost(&self, text: &str) -> u64 {
        self.cost.text_cost(text)
    }

    /// `C(S) + text_cost(next_prompt) <= token_budget`.
    pub fn within_budget(&self, next_prompt: &str, token_budget: u64) -> bool {
        self.cumulative_visual_cost + self.text_cost(next_prompt) <= token_budget
    }
}
