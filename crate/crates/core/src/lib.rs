//! Multi-round sparse video reasoning.
//!
//! An agent inspects a video a few frames at a time. Every round the model
//! writes a five-field summary (previously seen, observations, hypotheses,
//! uncertainties, reasons) and then either requests more frames or answers.
//! The summary is the only state carried from one round to the next.
//!
//! This crate holds everything that does not need an operating system:
//!
//! - [`protocol`]: the tagged response grammar, strict and lenient parsers
//!   and the canonical serializer.
//! - [`summary_state`]: admitted-frame bookkeeping and token budgets.
//! - [`controller`]: the episode loop, prompt construction and trajectories.
//! - [`backend`]: the model interface, option scoring and scripted backends.
//! - [`video`]: indexable frame access.
//! - [`reward`]: per-round reward and discounted returns.
//! - [`grpo`]: group-relative advantages, the clipped objective and a toy
//!   softmax policy trained end to end on the synthetic environment.
//! - [`synth`]: deterministic synthetic video-QA tasks and the scripted
//!   oracle model.
//!
//! File formats, the networked backend, the benchmark harness and the CLI
//! live in the `revise` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod backend;
pub mod controller;
pub mod grpo;
mod math;
pub mod protocol;
pub mod reward;
pub mod summary_state;
pub mod synth;
pub mod video;

pub use backend::{BackendError, ImagePayload, ModelBackend, OptionScores, SamplingParams};
pub use controller::{run_episode, EpisodeConfig, EpisodeError, Termination, Trajectory};
pub use protocol::{
    format_is_valid, parse_response, serialize_response, Action, AgentResponse, AnswerOption,
    AnswerSet, ParseError, ParseErrorKind, SummaryState,
};
pub use reward::{score_trajectory, RewardTrace, RewardWeights};
pub use summary_state::{CostModel, EpisodeState};
pub use video::{Frame, VideoError, VideoSource};
