//! Per-step reward: confidence gain on frame requests, summary sufficiency
//! and a correct-early-stop bonus at the end, and a format term throughout.

use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ModelBackend, OptionScores};
use crate::controller::prompt::{build_prompt, PromptInputs, PromptKind, PromptTemplate};
use crate::controller::Trajectory;
use crate::protocol::format_is_valid_in;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RewardWeights {
    /// `lambda_1`, confidence gain.
    pub conf: f64,
    /// `lambda_2`, summary sufficiency.
    pub sum: f64,
    /// `lambda_3`, correct early stop.
    pub stop: f64,
    /// `alpha`, format validity.
    pub format: f64,
    /// Bonus per round saved before `t_stop`.
    pub beta: f64,
    pub t_stop: usize,
    /// Discount applied as `gamma^(t-1)`.
    pub gamma: f64,
    /// Log-probabilities are divided by this before the margin is taken.
    pub margin_temperature: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            conf: 1.0,
            sum: 1.0,
            stop: 0.5,
            format: 0.1,
            beta: 1.0,
            t_stop: 2,
            gamma: 1.0,
            margin_temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("the margin needs at least two options")]
    SingleOption,
    #[error("option {0} has no score")]
    MissingLabel(String),
    #[error("round {0} has no option scores")]
    MissingScores(usize),
    #[error("summary-only scores are absent and no scorer was given")]
    MissingSummaryScores,
    #[error("margin temperature must be positive")]
    BadTemperature,
    #[error("scoring failed: {0}")]
    Backend(#[from] BackendError),
}

/// `m = (log p(y*) - max_{y != y*} log p(y)) / temperature`.
pub fn margin(scores: &OptionScores, correct: &str, temperature: f64) -> Result<f64, RewardError> {
    if !(temperature > 0.0) {
        return Err(RewardError::BadTemperature);
    }
    if scores.len() < 2 {
        return Err(RewardError::SingleOption);
    }
    let gold = scores
        .get(correct)
        .ok_or_else(|| RewardError::MissingLabel(correct.into()))?;
    let rival = scores
        .iter()
        .filter(|s| s.label != correct)
        .map(|s| s.logprob)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((gold - rival) / temperature)
}

/// `[m_after - m_before]_+`.
pub fn confidence_gain(before: f64, after: f64) -> f64 {
    (after - before).max(0.0)
}

/// 1 when the summary-only scores have a unique argmax equal to `correct`.
pub fn summary_sufficiency(scores: &OptionScores, correct: &str) -> f64 {
    if scores.argmax_unique() == Some(correct) {
        1.0
    } else {
        0.0
    }
}

/// `1 + beta * max(t_stop - tau, 0)` for a correct answer at `tau <= t_stop`.
pub fn stop_reward(correct: bool, tau: usize, weights: &RewardWeights) -> f64 {
    if correct && tau <= weights.t_stop {
        1.0 + weights.beta * (weights.t_stop - tau) as f64
    } else {
        0.0
    }
}

/// What the reward reads from one round.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepInput {
    pub t: usize,
    pub is_select: bool,
    pub format_valid: bool,
    pub scores_before: Option<OptionScores>,
    pub scores_after: Option<OptionScores>,
}

/// What the reward reads from the whole episode.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpisodeInput {
    pub steps: Vec<StepInput>,
    pub tau: usize,
    pub answer: Option<String>,
    pub correct: String,
    pub summary_only_scores: Option<OptionScores>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepReward {
    pub t: usize,
    pub conf: f64,
    pub sum: f64,
    pub stop: f64,
    pub format: f64,
    /// `lambda_1 conf + lambda_2 sum + lambda_3 stop + alpha format`.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RewardTrace {
    pub steps: Vec<StepReward>,
    /// Discounted return.
    pub total: f64,
    pub correct: bool,
    pub tau: usize,
}

/// Scores an episode summary. Steps after `tau` are ignored.
pub fn score_episode(input: &EpisodeInput, weights: &RewardWeights) -> Result<RewardTrace, RewardError> {
    let correct = input.answer.as_deref() == Some(input.correct.as_str());
    let mut steps = Vec::with_capacity(input.steps.len());
    let mut total = 0.0;
    let mut discount = 1.0;
    for step in input.steps.iter().filter(|s| s.t <= input.tau) {
        let mut r = StepReward {
            t: step.t,
            ..StepReward::default()
        };
        if step.is_select && step.t < input.tau && weights.conf != 0.0 {
            let before = step
                .scores_before
                .as_ref()
                .ok_or(RewardError::MissingScores(step.t))?;
            let after = step
                .scores_after
                .as_ref()
                .ok_or(RewardError::MissingScores(step.t + 1))?;
            let m0 = margin(before, &input.correct, weights.margin_temperature)?;
            let m1 = margin(after, &input.correct, weights.margin_temperature)?;
            r.conf = confidence_gain(m0, m1);
        }
        if step.t == input.tau && input.answer.is_some() {
            if weights.sum != 0.0 {
                let s = input
                    .summary_only_scores
                    .as_ref()
                    .ok_or(RewardError::MissingSummaryScores)?;
                r.sum = summary_sufficiency(s, &input.correct);
            }
            r.stop = stop_reward(correct, input.tau, weights);
        }
        if step.format_valid {
            r.format = 1.0;
        }
        r.total = weights.conf * r.conf + weights.sum * r.sum + weights.stop * r.stop + weights.format * r.format;
        total += discount * r.total;
        discount *= weights.gamma;
        steps.push(r);
    }
    Ok(RewardTrace {
        steps,
        total,
        correct,
        tau: input.tau,
    })
}

/// Extracts the reward inputs of a trajectory. Format validity is judged
/// on the first reply of each round.
pub fn episode_input(traj: &Trajectory, correct: &str) -> EpisodeInput {
    EpisodeInput {
        steps: traj
            .rounds
            .iter()
            .map(|r| StepInput {
                t: r.t,
                is_select: r.outcome.is_select(),
                format_valid: r.attempts.first().is_some_and(|a| {
                    format_is_valid_in(&a.raw_response, &traj.options, traj.summary_mode)
                }),
                scores_before: r.option_scores_before.clone(),
                scores_after: r.option_scores_after.clone(),
            })
            .collect(),
        tau: traj.stopping_round,
        answer: traj.final_answer.clone(),
        correct: correct.into(),
        summary_only_scores: traj.summary_only_scores.clone(),
    }
}

/// Scores a trajectory. When the summary-only scores were not recorded they
/// are requested from `scorer` with a frames-free prompt built from `z_tau`.
pub fn score_trajectory(
    traj: &Trajectory,
    correct: &str,
    scorer: Option<&dyn ModelBackend>,
    weights: &RewardWeights,
) -> Result<RewardTrace, RewardError> {
    let mut input = episode_input(traj, correct);
    if input.summary_only_scores.is_none() && input.answer.is_some() && weights.sum != 0.0 {
        if let Some(backend) = scorer {
            let prompt = summary_only_prompt(traj, &PromptTemplate::default());
            input.summary_only_scores = Some(backend.score_options(&prompt, &[], &traj.options)?);
        }
    }
    score_episode(&input, weights)
}

/// Question, options and `z_tau`; no frames.
pub fn summary_only_prompt(traj: &Trajectory, template: &PromptTemplate) -> String {
    build_prompt(
        template,
        &PromptInputs {
            video_id: &traj.video_id,
            total_frames: traj.video_length,
            fps: traj.fps,
            question: &traj.question,
            options: &traj.options,
            summary: traj.final_summary.as_ref(),
            summary_mode: traj.summary_mode,
            shown: &[],
            round: traj.stopping_round,
            max_rounds: traj.max_rounds,
            cap: 0,
            notice: None,
            kind: PromptKind::SummaryOnly,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scores(a: f64, b: f64, c: f64) -> OptionScores {
        OptionScores::new([("A", a), ("B", b), ("C", c)])
    }

    #[test]
    fn margin_against_best_rival() {
        let s = scores(-0.5, -1.0, -3.0);
        assert_eq!(margin(&s, "A", 1.0).unwrap(), 0.5);
        assert_eq!(margin(&s, "C", 1.0).unwrap(), -2.5);
        assert_eq!(margin(&s, "A", 0.5).unwrap(), 1.0);
        assert_eq!(
            margin(&OptionScores::new([("A", 0.0)]), "A", 1.0),
            Err(RewardError::SingleOption)
        );
    }

    #[test]
    fn stop_reward_cases() {
        let w = RewardWeights::default();
        assert_eq!(stop_reward(true, 1, &w), 2.0);
        assert_eq!(stop_reward(true, 2, &w), 1.0);
        assert_eq!(stop_reward(true, 3, &w), 0.0);
        assert_eq!(stop_reward(false, 1, &w), 0.0);
    }

    #[test]
    fn sufficiency_needs_unique_argmax() {
        assert_eq!(summary_sufficiency(&scores(0.0, -1.0, -1.0), "A"), 1.0);
        assert_eq!(summary_sufficiency(&scores(0.0, 0.0, -1.0), "A"), 0.0);
        assert_eq!(summary_sufficiency(&scores(-2.0, 0.0, -1.0), "A"), 0.0);
    }

    #[test]
    fn two_step_episode() {
        let w = RewardWeights::default();
        let input = EpisodeInput {
            steps: vec![
                StepInput {
                    t: 1,
                    is_select: true,
                    format_valid: true,
                    scores_before: Some(scores(-1.0, -0.5, -3.0)),
                    scores_after: Some(scores(-0.2, -2.0, -3.0)),
                },
                StepInput {
                    t: 2,
                    is_select: false,
                    format_valid: true,
                    scores_before: Some(scores(-0.2, -2.0, -3.0)),
                    scores_after: None,
                },
            ],
            tau: 2,
            answer: Some("A".into()),
            correct: "A".into(),
            summary_only_scores: Some(scores(0.0, -1.0, -1.0)),
        };
        let tr = score_episode(&input, &w).unwrap();
        // m1 = -0.5, m2 = 1.8
        assert!((tr.steps[0].conf - 2.3).abs() < 1e-12);
        assert!((tr.steps[0].total - 2.4).abs() < 1e-12);
        assert!((tr.steps[1].total - (1.0 + 0.5 + 0.1)).abs() < 1e-12);
        assert!((tr.total - 4.0).abs() < 1e-12);
        assert!(tr.correct);
    }
}
