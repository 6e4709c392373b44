use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revise_core::backend::OptionScores;
use revise_core::controller::prompt::{summary_from_history, PromptKind};
use revise_core::controller::{round_prompt, AttemptKind, RoundOutcome};
use revise_core::protocol::SummaryMode;
use revise_core::synth::{generate_task, OracleBackend, OracleRules, SyntheticTask};
use revise_core::{
    run_episode, Action, AnswerSet, BackendError, EpisodeConfig, ImagePayload, ModelBackend,
    SamplingParams, Trajectory,
};

/// The oracle, except that some replies are garbled or ask for frames that
/// cannot be admitted.
struct Unruly {
    inner: OracleBackend,
    salt: u64,
    rate: f64,
}

fn hash(s: &str, salt: u64) -> u64 {
    s.bytes().fold(0xcbf29ce484222325 ^ salt, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl ModelBackend for Unruly {
    fn generate(&self, prompt: &str, images: &[ImagePayload], params: &SamplingParams) -> Result<String, BackendError> {
        let reply = self.inner.generate(prompt, images, params)?;
        let h = hash(prompt, self.salt);
        if (h % 10_000) as f64 >= self.rate * 10_000.0 {
            return Ok(reply);
        }
        Ok(match (h >> 20) % 3 {
            0 => "I think it is probably the red one.".into(),
            1 => reply.replace("<summary>", ""),
            _ => {
                let mut out = String::new();
                for line in reply.lines() {
                    if line.starts_with("<frames>") {
                        out.push_str("<frames>0,100000</frames>");
                    } else {
                        out.push_str(line);
                        out.push('\n');
                    }
                }
                out
            }
        })
    }

    fn score_options(&self, prompt: &str, images: &[ImagePayload], options: &AnswerSet) -> Result<OptionScores, BackendError> {
        self.inner.score_options(prompt, images, options)
    }
}

fn random_case(seed: u64) -> (SyntheticTask, EpisodeConfig, Unruly) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = rng.gen_range(1..=120);
    let k = rng.gen_range(1..=length.min(15));
    let n_options = rng.gen_range(2..=6);
    let task = generate_task(seed, length, k, n_options).unwrap();
    let mut config = EpisodeConfig::default();
    config.max_rounds = rng.gen_range(1..=6);
    config.max_frames_per_round = rng.gen_range(1..=6);
    config.initial_frame_count = rng.gen_range(0..=config.max_frames_per_round);
    config.cost.per_frame_cost = [16, 64, 256, 1000][rng.gen_range(0..4)];
    config.token_budget = rng.gen_range(300..=8192);
    config.retry_on_invalid = rng.gen_range(0..=2);
    config.force_answer_at_end = rng.gen_bool(0.8);
    config.carry_state = rng.gen_bool(0.8);
    config.score_options = rng.gen_bool(0.5);
    if rng.gen_bool(0.3) {
        config.summary_mode = SummaryMode::FreeText;
    }
    let rules = OracleRules {
        answer_threshold: [0.5, 0.8, 1.0][rng.gen_range(0..3)],
        noise: if rng.gen_bool(0.3) { 0.4 } else { 0.0 },
        answer_on_last_round: rng.gen_bool(0.7),
        ..OracleRules::default()
    };
    let backend = Unruly {
        inner: OracleBackend::new([task.clone()], rules),
        salt: seed,
        rate: if rng.gen_bool(0.5) { 0.0 } else { 0.25 },
    };
    (task, config, backend)
}

fn violations(traj: &Trajectory, config: &EpisodeConfig, length: usize) -> Vec<String> {
    let mut v = Vec::new();
    let t_max = config.max_rounds;
    let cap = config.max_frames_per_round;
    let k = config.token_budget;
    if traj.stopping_round > t_max || traj.rounds.len() > t_max {
        v.push(format!("tau {} > T {t_max}", traj.stopping_round));
    }
    let mut admitted: BTreeSet<usize> = BTreeSet::new();
    let mut expected_next: Option<Vec<usize>> = None;
    for (i, round) in traj.rounds.iter().enumerate() {
        if round.t != i + 1 {
            v.push(format!("round {} logged at position {i}", round.t));
        }
        let shown: Vec<usize> = round.shown_frames.iter().map(|s| s.index).collect();
        if shown.len() > cap {
            v.push(format!("round {}: {} frames > cap {cap}", round.t, shown.len()));
        }
        for &f in &shown {
            if f >= length {
                v.push(format!("round {}: frame {f} out of range", round.t));
            }
            if !admitted.insert(f) {
                v.push(format!("round {}: frame {f} admitted twice", round.t));
            }
        }
        if let Some(expected) = expected_next.take() {
            let mut got = shown.clone();
            got.extend(&round.budget_dropped);
            if got != expected {
                v.push(format!("round {}: shown+dropped {got:?} != admitted {expected:?}", round.t));
            }
        }
        let visual = config.cost.frames_cost(admitted.len());
        if round.visual_cost != visual {
            v.push(format!("round {}: visual cost {} != {visual}", round.t, round.visual_cost));
        }
        for a in &round.attempts {
            if a.prompt_tokens != config.cost.text_cost(&a.prompt) {
                v.push(format!("round {}: prompt tokens misreported", round.t));
            }
            if round.visual_cost + a.prompt_tokens > k {
                v.push(format!(
                    "round {}: {} + {} > K {k}",
                    round.t, round.visual_cost, a.prompt_tokens
                ));
            }
        }
        let is_last = i + 1 == traj.rounds.len();
        match &round.outcome {
            RoundOutcome::Selected { admitted: new, .. } => {
                if new.iter().any(|f| admitted.contains(f)) {
                    v.push(format!("round {}: re-admitted a seen frame", round.t));
                }
                if new.len() > cap {
                    v.push(format!("round {}: admitted over cap", round.t));
                }
                expected_next = Some(new.clone());
            }
            RoundOutcome::Answered { .. } | RoundOutcome::ForcedAnswer { .. } if !is_last => {
                v.push(format!("round {}: answer before the last round", round.t));
            }
            _ => {}
        }
    }
    let answers = traj.rounds.iter().filter(|r| r.outcome.answer().is_some()).count();
    if answers > 1 || (answers == 1) != traj.final_answer.is_some() {
        v.push(format!("{answers} answer records, final answer {:?}", traj.final_answer));
    }
    let logged: BTreeSet<usize> = traj.admitted_frames.iter().copied().collect();
    if logged != admitted || logged.len() != traj.admitted_frames.len() {
        v.push("admitted frame log disagrees with the rounds".into());
    }
    v
}

/// Rebuilds each logged prompt from the whole committed history and from
/// the last summary alone; both must equal what was sent.
fn summary_mismatches(traj: &Trajectory, config: &EpisodeConfig) -> usize {
    let mut bad = 0;
    let mut history = Vec::new();
    for round in &traj.rounds {
        let mut forced_history = history.clone();
        let decided = round
            .attempts
            .iter()
            .filter(|a| a.kind != AttemptKind::Forced)
            .last()
            .and_then(|a| a.parsed.as_ref().ok());
        if let Some(r) = decided {
            if matches!(r.action, Action::FrameRequest(_)) {
                forced_history.push(r.summary.clone());
            }
        }
        let primary = round.attempts.iter().find(|a| a.kind == AttemptKind::Primary);
        let forced = round.attempts.iter().find(|a| a.kind == AttemptKind::Forced);
        let checks = [
            (primary, PromptKind::Round { first: round.t == 1 }, &history),
            (forced, PromptKind::Forced, &forced_history),
        ];
        for (attempt, kind, hist) in checks {
            let Some(a) = attempt else { continue };
            let full = round_prompt(traj, config, round, kind, summary_from_history(hist));
            let last = round_prompt(traj, config, round, kind, hist.last());
            if full != last || full != a.prompt {
                bad += 1;
            }
        }
        if let Some(z) = &round.committed_summary {
            if round.outcome.is_select() {
                history.push(z.clone());
            }
        }
    }
    bad
}

#[test]
fn invariants_hold_over_randomized_oracle_episodes() {
    let mut total = Vec::new();
    let mut rounds = 0;
    let mut reprompts = 0;
    let mut no_progress = 0;
    for seed in 0..1000u64 {
        let (task, config, backend) = random_case(seed);
        let traj = run_episode(&task, &task.question, &task.options, &backend, &config)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        rounds += traj.rounds.len();
        reprompts += traj
            .rounds
            .iter()
            .flat_map(|r| &r.attempts)
            .filter(|a| a.kind == AttemptKind::Reprompt)
            .count();
        no_progress += traj
            .rounds
            .iter()
            .filter(|r| matches!(r.outcome, RoundOutcome::NoProgress { .. }))
            .count();
        for msg in violations(&traj, &config, task.length) {
            total.push(format!("seed {seed}: {msg}"));
        }
    }
    assert!(total.is_empty(), "{} violations, first: {:?}", total.len(), &total[..total.len().min(5)]);
    assert!(rounds > 1500 && reprompts > 20 && no_progress > 5, "{rounds} {reprompts} {no_progress}");
}

#[test]
fn prompts_depend_only_on_the_latest_summary() {
    let mut checked = 0;
    for seed in 0..300u64 {
        let (task, config, backend) = random_case(seed);
        let traj = run_episode(&task, &task.question, &task.options, &backend, &config).unwrap();
        assert_eq!(summary_mismatches(&traj, &config), 0, "seed {seed}");
        checked += traj.rounds.len();
    }
    assert!(checked > 300);
}

#[test]
fn oracle_episodes_are_reproducible() {
    for seed in [3u64, 17, 99] {
        let (task, config, backend) = random_case(seed);
        let mut a = run_episode(&task, &task.question, &task.options, &backend, &config).unwrap();
        let mut b = run_episode(&task, &task.question, &task.options, &backend, &config).unwrap();
        a.wall_ms = 0;
        b.wall_ms = 0;
        assert_eq!(a, b);
    }
}
