//! A scripted stand-in model for synthetic tasks.
//!
//! Its replies and option scores are exact functions of the evidence it
//! knows about: the frames attached to the call plus whatever the summary
//! in the prompt says it has seen.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backend::{BackendError, ImagePayload, ModelBackend, OptionScores, SamplingParams};
use crate::controller::prompt::PromptView;
use crate::protocol::{serialize_in, AgentResponse, SummaryMode, SummaryState};

use super::{decode_frame, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleRules {
    /// Correct-option logit is `b0 + b1 * f` for evidence fraction `f`.
    pub b0: f64,
    pub b1: f64,
    pub distractor_logit: f64,
    /// Answer once `f` reaches this.
    pub answer_threshold: f64,
    /// Amplitude of a deterministic per-option logit perturbation.
    pub noise: f64,
    /// Answer instead of requesting when the prompt says no rounds remain.
    pub answer_on_last_round: bool,
}

impl Default for OracleRules {
    fn default() -> Self {
        Self {
            b0: -1.0,
            b1: 3.0,
            distractor_logit: 0.0,
            answer_threshold: 1.0,
            noise: 0.0,
            answer_on_last_round: true,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn unit(x: u64) -> f64 {
    (splitmix(x) >> 11) as f64 / (1u64 << 53) as f64
}

impl OracleRules {
    pub fn logits(&self, task: &SyntheticTask, known_evidence: usize) -> Vec<f64> {
        let f = fraction(task, known_evidence);
        (0..task.options.len())
            .map(|i| {
                let base = match task.options.get(i) {
                    Some(o) if o.label == task.correct => self.b0 + self.b1 * f,
                    _ => self.distractor_logit,
                };
                if self.noise == 0.0 {
                    base
                } else {
                    let h = task.seed ^ ((i as u64) << 40) ^ ((known_evidence as u64) << 20);
                    base + self.noise * (2.0 * unit(h) - 1.0)
                }
            })
            .collect()
    }

    pub fn scores(&self, task: &SyntheticTask, known_evidence: usize) -> OptionScores {
        OptionScores::from_logits(&task.options, &self.logits(task, known_evidence))
    }
}

/// Share of the task's evidence that is known; 1 when there is none.
pub fn fraction(task: &SyntheticTask, known_evidence: usize) -> f64 {
    if task.k() == 0 {
        1.0
    } else {
        known_evidence.min(task.k()) as f64 / task.k() as f64
    }
}

/// What the oracle can see in one call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Knowledge {
    pub seen: BTreeSet<usize>,
    pub evidence: BTreeSet<usize>,
}

fn parse_list(s: &str) -> impl Iterator<Item = usize> + '_ {
    s.split(',').filter_map(|w| w.trim().parse().ok())
}

fn render_list<'a>(items: impl IntoIterator<Item = &'a usize>) -> String {
    let parts: Vec<String> = items.into_iter().map(|i| i.to_string()).collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(",")
    }
}

impl Knowledge {
    pub fn gather(task: &SyntheticTask, view: &PromptView, images: &[ImagePayload]) -> Self {
        let mut k = Knowledge::default();
        let absorb = |field: &str, k: &mut Knowledge| {
            if let Some(v) = field.strip_prefix("seen ") {
                k.seen.extend(parse_list(v));
            } else if let Some(v) = field.strip_prefix("evidence ") {
                k.evidence.extend(parse_list(v));
            }
        };
        if view.structured {
            for label in ["P", "O"] {
                if let Some(v) = view.summary_field(label) {
                    absorb(v, &mut k);
                }
            }
        } else {
            let text = view.summary_text();
            for part in text.split(';') {
                absorb(part.trim(), &mut k);
            }
        }
        let decoded: Vec<(usize, bool)> = images.iter().filter_map(decode_frame).collect();
        if decoded.is_empty() {
            for &i in &view.shown {
                k.seen.insert(i);
                if task.is_evidence(i) {
                    k.evidence.insert(i);
                }
            }
        } else {
            for (i, e) in decoded {
                k.seen.insert(i);
                if e {
                    k.evidence.insert(i);
                }
            }
        }
        k.evidence.retain(|&i| task.is_evidence(i));
        k
    }
}

/// Unseen frames in a low-discrepancy order that differs per task.
fn exploration_order(task: &SyntheticTask, seen: &BTreeSet<usize>) -> Vec<usize> {
    const PHI_INV: f64 = 0.618_033_988_749_894_9;
    let l = task.length;
    let offset = unit(task.seed.wrapping_mul(31).wrapping_add(7));
    let mut taken = BTreeSet::new();
    let mut order = Vec::with_capacity(l);
    for n in 0..l {
        let x = offset + n as f64 * PHI_INV;
        let frac = x - (x as u64) as f64;
        let i = ((frac * l as f64) as usize).min(l - 1);
        if !seen.contains(&i) && taken.insert(i) {
            order.push(i);
        }
    }
    order.extend((0..l).filter(|i| !seen.contains(i) && !taken.contains(i)));
    order
}

/// The oracle's reply to one prompt, and its option scores there.
pub fn oracle_respond(
    task: &SyntheticTask,
    rules: &OracleRules,
    prompt: &str,
    images: &[ImagePayload],
) -> (String, OptionScores) {
    let view = PromptView::parse(prompt);
    let know = Knowledge::gather(task, &view, images);
    let n = know.evidence.len();
    let f = fraction(task, n);
    let scores = rules.scores(task, n);
    let mode = if view.structured {
        SummaryMode::Structured
    } else {
        SummaryMode::FreeText
    };

    let cap = view.cap.unwrap_or(1).max(1);
    let proposal: Vec<usize> = if view.structured {
        let targeted: Vec<usize> = task
            .evidence
            .iter()
            .copied()
            .filter(|i| !know.seen.contains(i))
            .take(cap)
            .collect();
        if targeted.is_empty() {
            exploration_order(task, &know.seen).into_iter().take(cap).collect()
        } else {
            targeted
        }
    } else {
        exploration_order(task, &know.seen).into_iter().take(cap).collect()
    };

    let last_round = matches!((view.round, view.max_rounds), (Some(r), Some(m)) if r >= m);
    let answer = f >= rules.answer_threshold
        || view.forced
        || view.summary_only
        || (rules.answer_on_last_round && last_round)
        || proposal.is_empty();

    let seen = render_list(&know.seen);
    let evidence = render_list(&know.evidence);
    let fraction_text = format!("{n}/{}", task.k());
    let next = if answer {
        "answer ready".to_string()
    } else {
        format!("next {}", render_list(&proposal))
    };
    let summary = match mode {
        SummaryMode::Structured => SummaryState::new(
            &format!("seen {seen}"),
            &format!("evidence {evidence}"),
            &format!("evidence fraction {fraction_text}"),
            &format!("{} evidence frames missing", task.k() - n.min(task.k())),
            &next,
        ),
        SummaryMode::FreeText => SummaryState::free_text(&format!(
            "seen {seen}; evidence {evidence}; fraction {fraction_text}; {next}"
        )),
    };
    let response = if answer {
        let label = scores.argmax_first().unwrap_or("A").to_string();
        AgentResponse::answer(summary, &label)
    } else {
        AgentResponse::request(summary, proposal)
    };
    (serialize_in(&response, mode), scores)
}

/// [`oracle_respond`] behind the backend interface, for many tasks keyed by
/// video id.
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    tasks: BTreeMap<String, SyntheticTask>,
    pub rules: OracleRules,
}

impl OracleBackend {
    pub fn new(tasks: impl IntoIterator<Item = SyntheticTask>, rules: OracleRules) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
            rules,
        }
    }

    pub fn insert(&mut self, task: SyntheticTask) {
        self.tasks.insert(task.id.clone(), task);
    }

    pub fn task(&self, id: &str) -> Option<&SyntheticTask> {
        self.tasks.get(id)
    }

    fn task_for(&self, prompt: &str) -> Result<&SyntheticTask, BackendError> {
        let view = PromptView::parse(prompt);
        let id = view
            .video_id
            .ok_or_else(|| BackendError::Other("prompt names no video".into()))?;
        self.tasks
            .get(&id)
            .ok_or_else(|| BackendError::Other(format!("unknown video {id}")))
    }
}

impl ModelBackend for OracleBackend {
    fn generate(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        _params: &SamplingParams,
    ) -> Result<String, BackendError> {
        let task = self.task_for(prompt)?;
        Ok(oracle_respond(task, &self.rules, prompt, images).0)
    }

    fn score_options(
        &self,
        prompt: &str,
        images: &[ImagePayload],
        _options: &crate::protocol::AnswerSet,
    ) -> Result<OptionScores, BackendError> {
        let task = self.task_for(prompt)?;
        Ok(oracle_respond(task, &self.rules, prompt, images).1)
    }
}
