//! Trajectory logs, one JSON object per episode.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use revise_core::controller::RoundOutcome;
use revise_core::{RewardTrace, RewardWeights, Termination, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub t: usize,
    /// SHA-256 of the round's first prompt, hex.
    pub prompt_hash: String,
    pub frames: Vec<usize>,
    pub raw_response: String,
    pub action: String,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    pub rounds: Vec<RoundSummary>,
    pub tau: usize,
    pub answer: Option<String>,
    pub gold: String,
    pub correct: bool,
    pub frames_used: usize,
    pub prompt_tokens: u64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub termination: Termination,
    pub early_stop: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardTrace>,
    /// Weights `reward` was computed with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_weights: Option<RewardWeights>,
    /// The full trajectory, for offline re-scoring.
    pub trajectory: Trajectory,
}

/// An item that produced no scorable trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn action_name(outcome: &RoundOutcome) -> &'static str {
    match outcome {
        RoundOutcome::Selected { .. } => "select",
        RoundOutcome::NoProgress { .. } => "no_progress",
        RoundOutcome::Answered { .. } => "answer",
        RoundOutcome::ForcedAnswer { .. } => "forced_answer",
        RoundOutcome::ProtocolFailure => "protocol_failure",
        RoundOutcome::BudgetExhausted => "budget_exhausted",
    }
}

impl TrajectoryRecord {
    pub fn new(id: &str, gold: &str, category: Option<String>, traj: Trajectory) -> Self {
        let rounds = traj
            .rounds
            .iter()
            .map(|r| {
                let last = r.attempts.last();
                RoundSummary {
                    t: r.t,
                    prompt_hash: r.attempts.first().map(|a| sha256_hex(&a.prompt)).unwrap_or_default(),
                    frames: r.shown_frames.iter().map(|f| f.index).collect(),
                    raw_response: last.map(|a| a.raw_response.clone()).unwrap_or_default(),
                    action: action_name(&r.outcome).to_string(),
                    parse_ok: last.is_some_and(|a| a.parsed.is_ok()),
                }
            })
            .collect();
        Self {
            id: id.to_string(),
            question: traj.question.clone(),
            options: traj.options.iter().map(|o| o.text.clone()).collect(),
            rounds,
            tau: traj.stopping_round,
            answer: traj.final_answer.clone(),
            gold: gold.to_string(),
            correct: traj.is_correct(gold),
            frames_used: traj.frames_used(),
            prompt_tokens: traj.prompt_tokens,
            wall_ms: traj.wall_ms,
            category,
            termination: traj.termination,
            early_stop: traj.stopped_early(),
            reward: None,
            reward_weights: None,
            trajectory: traj,
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
