//! A log-linear softmax policy over frame-bin requests and stopping, trained
//! with GRPO on synthetic tasks.
//!
//! The video is split into equal bins and all evidence sits in one of them.
//! Each bin carries a noisy salience cue. Requesting a bin admits its unseen
//! frames; answering commits to the current favourite option and ends the
//! episode. Rollouts are turned into ordinary
//! [`Trajectory`] values and scored with the episode reward.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::OptionScores;
use crate::controller::prompt::ShownFrame;
use crate::controller::{
    sample_initial_frames, Attempt, AttemptKind, RoundOutcome, RoundRecord, Termination,
    Trajectory,
};
use crate::math;
use crate::protocol::{serialize_response, AgentResponse, SummaryMode, SummaryState};
use crate::reward::{score_trajectory, RewardError, RewardTrace, RewardWeights};
use crate::synth::{generate_task, OracleRules, SynthError, SyntheticTask};
use crate::video::VideoSource;

use super::{clipped_surrogate, group_advantages, GrpoError};

/// Number of policy features.
pub const DIM: usize = 6;

pub const FEATURE_NAMES: [&str; DIM] = [
    "request_bias",
    "answer_bias",
    "salience",
    "request_confidence",
    "answer_confidence",
    "answer_round",
];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyConfig {
    pub video_length: usize,
    /// Frames per bin; also the per-round frame cap.
    pub bin_size: usize,
    pub n_options: usize,
    pub max_rounds: usize,
    pub initial_frames: usize,
    /// Half-width of the uniform noise on each bin's salience cue.
    pub salience_noise: f64,
    pub iterations: usize,
    pub tasks_per_iteration: usize,
    pub group_size: usize,
    /// Gradient steps per batch.
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub rules: OracleRules,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            video_length: 24,
            bin_size: 4,
            n_options: 4,
            max_rounds: 4,
            initial_frames: 3,
            salience_noise: 0.8,
            iterations: 80,
            tasks_per_iteration: 32,
            group_size: 8,
            epochs: 4,
            learning_rate: 0.2,
            clip_eps: 0.2,
            kl_coef: 0.001,
            rules: OracleRules::default(),
        }
    }
}

impl ToyConfig {
    pub fn bins(&self) -> usize {
        self.video_length.div_ceil(self.bin_size)
    }

    fn validate(&self) -> Result<(), ToyError> {
        if self.bin_size == 0 || self.video_length < self.bin_size {
            return Err(ToyError::Config("bin_size must be in 1..=video_length"));
        }
        if self.max_rounds == 0 {
            return Err(ToyError::Config("max_rounds must be positive"));
        }
        if self.initial_frames == 0 || self.initial_frames > self.video_length {
            return Err(ToyError::Config("initial_frames must be in 1..=video_length"));
        }
        if self.group_size < 2 {
            return Err(ToyError::Grpo(GrpoError::GroupTooSmall(self.group_size)));
        }
        if self.tasks_per_iteration == 0 {
            return Err(ToyError::Config("tasks_per_iteration must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ToyError::Config("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToyError {
    #[error("invalid toy configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("parameters became non-finite at iteration {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyPolicy {
    pub theta: [f64; DIM],
}

impl Default for ToyPolicy {
    /// Leans toward requesting.
    fn default() -> Self {
        Self {
            theta: [0.0, -2.0, 1.0, 0.0, 1.0, 0.0],
        }
    }
}

fn dot(a: &[f64; DIM], b: &[f64; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ToyPolicy {
    /// Log-probabilities over the rows of `features`.
    pub fn log_probs(&self, features: &[[f64; DIM]]) -> Vec<f64> {
        log_softmax(&self.theta, features)
    }
}

fn log_softmax(theta: &[f64; DIM], features: &[[f64; DIM]]) -> Vec<f64> {
    let logits: Vec<f64> = features.iter().map(|f| dot(theta, f)).collect();
    let norm = math::log_sum_exp(&logits);
    logits.iter().map(|z| z - norm).collect()
}

/// A synthetic task with clustered evidence and per-bin salience cues.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub task: SyntheticTask,
    pub evidence_bin: usize,
    pub salience: Vec<f64>,
}

pub fn toy_task(seed: u64, cfg: &ToyConfig) -> Result<ToyTask, ToyError> {
    let mut task = generate_task(seed, cfg.video_length, 0, cfg.n_options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A17_E4CE);
    let bins = cfg.bins();
    let evidence_bin = rng.gen_range(0..bins);
    let start = evidence_bin * cfg.bin_size;
    let end = (start + cfg.bin_size).min(cfg.video_length);
    task.evidence = (start..end).collect();
    let correct = task.options.index_of(&task.correct).unwrap_or(0) as u8;
    for i in start..end {
        task.layout[i] = correct;
    }
    let salience = (0..bins)
        .map(|b| {
            let hit = if b == evidence_bin { 1.0 } else { 0.0 };
            hit + cfg.salience_noise * (2.0 * rng.gen::<f64>() - 1.0)
        })
        .collect();
    Ok(ToyTask {
        task,
        evidence_bin,
        salience,
    })
}

/// One sampled action with what the objective needs to re-score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Feature rows of the valid actions.
    pub features: Vec<[f64; DIM]>,
    pub chosen: usize,
    /// Log-probability of `chosen` under the sampling policy.
    pub logp_old: f64,
    /// Reference-policy log-probabilities of every valid action.
    pub ref_logp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRollout {
    pub decisions: Vec<Decision>,
    pub trajectory: Trajectory,
    pub reward: RewardTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGroup {
    pub rollouts: Vec<ToyRollout>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyBatch {
    pub groups: Vec<ToyGroup>,
}

impl ToyBatch {
    pub fn rollouts(&self) -> impl Iterator<Item = &ToyRollout> {
        self.groups.iter().flat_map(|g| g.rollouts.iter())
    }
}

fn confidence(scores: &OptionScores) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for s in scores.iter() {
        if s.logprob > top {
            second = top;
            top = s.logprob;
        } else if s.logprob > second {
            second = s.logprob;
        }
    }
    if second.is_finite() {
        top - second
    } else {
        0.0
    }
}

enum ToyAction {
    Request(usize),
    Answer(String),
}

fn sample_index(logp: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += math::exp(*lp);
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

fn list(items: &[usize]) -> String {
    let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

/// Samples one episode of `policy` on `toy` and scores it.
pub fn rollout(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    toy: &ToyTask,
    cfg: &ToyConfig,
    weights: &RewardWeights,
    rng: &mut ChaCha8Rng,
) -> Result<ToyRollout, ToyError> {
    let task = &toy.task;
    let l = cfg.video_length;
    let big_t = cfg.max_rounds;
    let mut seen = alloc::vec![false; l];
    let mut admitted: Vec<usize> = Vec::new();
    let mut shown = sample_initial_frames(l, cfg.initial_frames.min(l))
        .map_err(|_| ToyError::Config("initial_frames must be in 1..=video_length"))?;
    let mut decisions = Vec::new();
    let mut rounds = Vec::new();
    let mut answer = None;
    let mut tau = big_t;

    for t in 1..=big_t {
        for &i in &shown {
            if !seen[i] {
                seen[i] = true;
                admitted.push(i);
            }
        }
        let n_ev = task.evidence.iter().filter(|&&i| seen[i]).count();
        let scores = cfg.rules.scores(task, n_ev);
        let conf = confidence(&scores);
        let favourite = scores.argmax_first().unwrap_or("A").to_string();

        let mut actions = Vec::new();
        let mut features = Vec::new();
        if t < big_t {
            for b in 0..cfg.bins() {
                let start = b * cfg.bin_size;
                let end = (start + cfg.bin_size).min(l);
                if (start..end).any(|i| !seen[i]) {
                    actions.push(ToyAction::Request(b));
                    features.push([1.0, 0.0, toy.salience[b], conf, 0.0, 0.0]);
                }
            }
        }
        actions.push(ToyAction::Answer(favourite));
        features.push([0.0, 1.0, 0.0, 0.0, conf, t as f64 / big_t as f64]);

        let logp = policy.log_probs(&features);
        let chosen = sample_index(&logp, rng);
        decisions.push(Decision {
            ref_logp: reference.log_probs(&features),
            logp_old: logp[chosen],
            features,
            chosen,
        });

        let seen_list: Vec<usize> = (0..l).filter(|&i| seen[i]).collect();
        let ev_list: Vec<usize> = task.evidence.iter().copied().filter(|&i| seen[i]).collect();
        let summary = SummaryState::new(
            &format!("seen {}", list(&seen_list)),
            &format!("evidence {}", list(&ev_list)),
            &format!("evidence fraction {n_ev}/{}", task.k()),
            &format!("{} evidence frames missing", task.k() - n_ev),
            "",
        );
        let shown_frames: Vec<ShownFrame> = shown
            .iter()
            .map(|&index| ShownFrame {
                index,
                timestamp: task.timestamp(index),
            })
            .collect();
        let visual_cost = admitted.len() as u64;

        let (response, outcome, next) = match &actions[chosen] {
            ToyAction::Request(b) => {
                let start = b * cfg.bin_size;
                let end = (start + cfg.bin_size).min(l);
                let new: Vec<usize> = (start..end).filter(|&i| !seen[i]).collect();
                (
                    AgentResponse::request(summary.clone(), new.clone()),
                    RoundOutcome::Selected {
                        admitted: new.clone(),
                        rejected: Vec::new(),
                    },
                    Some(new),
                )
            }
            ToyAction::Answer(label) => (
                AgentResponse::answer(summary.clone(), label),
                RoundOutcome::Answered {
                    label: label.clone(),
                },
                None,
            ),
        };
        rounds.push(RoundRecord {
            t,
            shown_frames,
            budget_dropped: Vec::new(),
            notice: None,
            attempts: alloc::vec![Attempt {
                kind: AttemptKind::Primary,
                prompt: String::new(),
                prompt_tokens: 0,
                images: shown.len(),
                raw_response: serialize_response(&response),
                parsed: Ok(response),
            }],
            outcome,
            committed_summary: Some(summary.clone()),
            option_scores_before: Some(scores.clone()),
            option_scores_after: None,
            visual_cost,
        });
        match next {
            Some(new) => shown = new,
            None => {
                answer = Some((summary, n_ev));
                tau = t;
                break;
            }
        }
    }

    for i in 1..rounds.len() {
        rounds[i - 1].option_scores_after = rounds[i].option_scores_before.clone();
    }
    let (final_summary, final_ev) = match answer {
        Some((z, n)) => (Some(z), n),
        None => (None, 0),
    };
    let final_answer = rounds.last().and_then(|r| r.outcome.answer().map(String::from));
    let trajectory = Trajectory {
        video_id: task.id.clone(),
        question: task.question.clone(),
        options: task.options.clone(),
        video_length: l,
        fps: task.fps,
        max_rounds: big_t,
        summary_mode: SummaryMode::Structured,
        rounds,
        stopping_round: tau,
        termination: Termination::Answered,
        summary_only_scores: final_summary.as_ref().map(|_| cfg.rules.scores(task, final_ev)),
        final_answer,
        final_summary,
        admitted_frames: admitted,
        prompt_tokens: 0,
        wall_ms: 0,
    };
    let reward = score_trajectory(&trajectory, &task.correct, None, weights)?;
    Ok(ToyRollout {
        decisions,
        trajectory,
        reward,
    })
}

/// `G` rollouts on each of `tasks`, with group-standardized returns.
pub fn sample_batch(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    tasks: &[ToyTask],
    cfg: &ToyConfig,
    weights: &RewardWeights,
    rng: &mut ChaCha8Rng,
) -> Result<ToyBatch, ToyError> {
    let mut groups = Vec::with_capacity(tasks.len());
    for toy in tasks {
        let rollouts = (0..cfg.group_size)
            .map(|_| rollout(policy, reference, toy, cfg, weights, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let returns: Vec<f64> = rollouts.iter().map(|r| r.reward.total).collect();
        let advantages = group_advantages(&returns)?;
        groups.push(ToyGroup {
            rollouts,
            advantages,
        });
    }
    Ok(ToyBatch { groups })
}

fn kl_to_reference(logp: &[f64], ref_logp: &[f64]) -> f64 {
    logp.iter()
        .zip(ref_logp)
        .map(|(l, r)| math::exp(*l) * (l - r))
        .sum()
}

/// The GRPO surrogate averaged over groups, minus `kl_coef` times the
/// per-decision mean of `KL(pi_theta || pi_ref)`.
pub fn toy_objective(theta: &[f64; DIM], batch: &ToyBatch, cfg: &ToyConfig) -> f64 {
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut tokens = 0usize;
    for g in &batch.groups {
        let mut group_sum = 0.0;
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let mut traj_sum = 0.0;
            for d in &r.decisions {
                let logp = log_softmax(theta, &d.features);
                let rho = math::exp(logp[d.chosen] - d.logp_old);
                traj_sum += clipped_surrogate(rho, adv, cfg.clip_eps).0;
                kl += kl_to_reference(&logp, &d.ref_logp);
                tokens += 1;
            }
            group_sum += traj_sum / r.decisions.len() as f64;
        }
        surrogate += group_sum / g.rollouts.len() as f64;
    }
    let groups = batch.groups.len().max(1) as f64;
    surrogate / groups - cfg.kl_coef * kl / tokens.max(1) as f64
}

/// Exact gradient of [`toy_objective`] in `theta`.
pub fn toy_gradient(theta: &[f64; DIM], batch: &ToyBatch, cfg: &ToyConfig) -> [f64; DIM] {
    let mut grad_s = [0.0; DIM];
    let mut grad_kl = [0.0; DIM];
    let mut tokens = 0usize;
    let groups = batch.groups.len().max(1) as f64;
    for g in &batch.groups {
        let g_scale = 1.0 / (groups * g.rollouts.len() as f64);
        for (r, &adv) in g.rollouts.iter().zip(&g.advantages) {
            let scale = g_scale / r.decisions.len() as f64;
            for d in &r.decisions {
                let logp = log_softmax(theta, &d.features);
                let mut mean = [0.0; DIM];
                for (f, lp) in d.features.iter().zip(&logp) {
                    let p = math::exp(*lp);
                    for k in 0..DIM {
                        mean[k] += p * f[k];
                    }
                }
                let rho = math::exp(logp[d.chosen] - d.logp_old);
                let (_, dj_drho) = clipped_surrogate(rho, adv, cfg.clip_eps);
                let w = scale * dj_drho * rho;
                let fc = &d.features[d.chosen];
                for k in 0..DIM {
                    grad_s[k] += w * (fc[k] - mean[k]);
                }
                // d KL = sum_a p_a (phi_a - mean) (log p_a - log ref_a)
                for ((f, lp), rlp) in d.features.iter().zip(&logp).zip(&d.ref_logp) {
                    let c = math::exp(*lp) * (lp - rlp);
                    for k in 0..DIM {
                        grad_kl[k] += c * (f[k] - mean[k]);
                    }
                }
                tokens += 1;
            }
        }
    }
    let kl_scale = cfg.kl_coef / tokens.max(1) as f64;
    let mut out = [0.0; DIM];
    for k in 0..DIM {
        out[k] = grad_s[k] - kl_scale * grad_kl[k];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub mean_tau: f64,
    pub mean_frames: f64,
    pub accuracy: f64,
}

impl CurvePoint {
    fn from_batch(iteration: usize, batch: &ToyBatch) -> Self {
        let mut n = 0.0;
        let (mut ret, mut tau, mut frames, mut correct) = (0.0, 0.0, 0.0, 0.0);
        for r in batch.rollouts() {
            n += 1.0;
            ret += r.reward.total;
            tau += r.trajectory.stopping_round as f64;
            frames += r.trajectory.frames_used() as f64;
            if r.reward.correct {
                correct += 1.0;
            }
        }
        let n = if n > 0.0 { n } else { 1.0 };
        Self {
            iteration,
            mean_return: ret / n,
            mean_tau: tau / n,
            mean_frames: frames / n,
            accuracy: correct / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LearningCurve {
    /// Statistics of the rollouts sampled at each iteration, before its
    /// update; point 0 is the initial policy.
    pub points: Vec<CurvePoint>,
    pub policy: ToyPolicy,
}

/// Trains the toy policy from [`ToyPolicy::default`]. Deterministic in `seed`.
pub fn train_toy(cfg: &ToyConfig, weights: &RewardWeights, seed: u64) -> Result<LearningCurve, ToyError> {
    train_toy_from(ToyPolicy::default(), cfg, weights, seed)
}

pub fn train_toy_from(
    initial: ToyPolicy,
    cfg: &ToyConfig,
    weights: &RewardWeights,
    seed: u64,
) -> Result<LearningCurve, ToyError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = initial;
    let mut policy = initial;
    let mut points = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let tasks = (0..cfg.tasks_per_iteration)
            .map(|_| toy_task(rng.gen(), cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = sample_batch(&policy, &reference, &tasks, cfg, weights, &mut rng)?;
        points.push(CurvePoint::from_batch(it, &batch));
        if it == cfg.iterations {
            break;
        }
        for _ in 0..cfg.epochs {
            let g = toy_gradient(&policy.theta, &batch, cfg);
            for k in 0..DIM {
                policy.theta[k] += cfg.learning_rate * g[k];
            }
            if policy.theta.iter().any(|x| !x.is_finite()) {
                return Err(ToyError::NonFinite(it));
            }
        }
    }
    Ok(LearningCurve { points, policy })
}
