//! Batch evaluation, metrics, turn-budget sweeps and component ablations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use revise_core::controller::ConfigError;
use revise_core::protocol::SummaryMode;
use revise_core::reward::score_trajectory;
use revise_core::{EpisodeConfig, ModelBackend, RewardWeights};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{run_batch, VideoResolver};
use crate::manifest::QaItem;
use crate::records::{ErrorRecord, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error("the sweep grid is empty")]
    EmptyGrid,
    #[error("invalid episode config: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub items: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub items: usize,
    pub scored: usize,
    pub errors: usize,
    /// Percent of all items, errors counting as wrong.
    pub accuracy: f64,
    pub mean_frames: f64,
    pub mean_rounds: f64,
    pub mean_prompt_tokens: f64,
    pub mean_wall_ms: f64,
    pub median_wall_ms: f64,
    /// Percent of scored episodes answered before the last round.
    pub early_stop_rate: f64,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub terminations: BTreeMap<String, usize>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Metrics as a pure function of the trajectory log.
pub fn aggregate(label: &str, records: &[TrajectoryRecord], errors: &[ErrorRecord]) -> MetricsReport {
    let items = records.len() + errors.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    let cats = records
        .iter()
        .map(|r| (r.category.as_ref(), r.correct))
        .chain(errors.iter().map(|e| (e.category.as_ref(), false)));
    for (cat, ok) in cats {
        if let Some(c) = cat {
            let s = per_category.entry(c.clone()).or_insert(CategoryStats {
                items: 0,
                correct: 0,
                accuracy: 0.0,
            });
            s.items += 1;
            s.correct += usize::from(ok);
        }
    }
    for s in per_category.values_mut() {
        s.accuracy = percent(s.correct, s.items);
    }
    let mut terminations = BTreeMap::new();
    for r in records {
        *terminations.entry(format!("{:?}", r.termination)).or_insert(0) += 1;
    }
    if !errors.is_empty() {
        terminations.insert("Error".into(), errors.len());
    }
    MetricsReport {
        label: label.to_string(),
        items,
        scored: records.len(),
        errors: errors.len(),
        accuracy: percent(correct, items),
        mean_frames: mean(records.iter().map(|r| r.frames_used as f64)),
        mean_rounds: mean(records.iter().map(|r| r.tau as f64)),
        mean_prompt_tokens: mean(records.iter().map(|r| r.prompt_tokens as f64)),
        mean_wall_ms: mean(records.iter().map(|r| r.wall_ms as f64)),
        median_wall_ms: median(records.iter().map(|r| r.wall_ms as f64).collect()),
        early_stop_rate: percent(records.iter().filter(|r| r.early_stop).count(), records.len()),
        per_category,
        terminations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<TrajectoryRecord>,
    pub errors: Vec<ErrorRecord>,
}

/// Runs every item and aggregates. When option scoring is on, each record
/// also carries its reward under `weights`.
pub fn evaluate(
    label: &str,
    items: &[QaItem],
    resolver: &dyn VideoResolver,
    backend: &dyn ModelBackend,
    config: &EpisodeConfig,
    weights: &RewardWeights,
    parallelism: usize,
) -> Result<Evaluation, BenchError> {
    if items.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    config.validate()?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (item, result) in items.iter().zip(run_batch(items, resolver, backend, config, parallelism)) {
        match result {
            Ok(traj) => {
                let mut rec = TrajectoryRecord::new(&item.id, &item.answer, item.category.clone(), traj);
                if config.score_options {
                    match score_trajectory(&rec.trajectory, &item.answer, None, weights) {
                        Ok(r) => {
                            rec.reward = Some(r);
                            rec.reward_weights = Some(*weights);
                        }
                        Err(e) => log::warn!("{}: reward unavailable: {e}", item.id),
                    }
                }
                records.push(rec);
            }
            Err(e) => errors.push(ErrorRecord {
                id: e.id,
                kind: serde_json::to_value(e.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                message: e.message,
                category: item.category.clone(),
            }),
        }
    }
    Ok(Evaluation {
        report: aggregate(label, &records, &errors),
        records,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// `{T}_{cap}`.
    pub name: String,
    pub max_rounds: usize,
    pub max_frames_per_round: usize,
    pub report: MetricsReport,
}

/// Config for one `(T, cap)` cell: the base config with the initial frame
/// count clipped to the cap.
pub fn cell_config(base: &EpisodeConfig, max_rounds: usize, cap: usize) -> EpisodeConfig {
    EpisodeConfig {
        max_rounds,
        max_frames_per_round: cap,
        initial_frame_count: base.initial_frame_count.min(cap),
        ..base.clone()
    }
}

pub fn sweep(
    items: &[QaItem],
    resolver: &dyn VideoResolver,
    backend: &dyn ModelBackend,
    base: &EpisodeConfig,
    grid: &[(usize, usize)],
    weights: &RewardWeights,
    parallelism: usize,
) -> Result<Vec<(SweepCell, Evaluation)>, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    grid.iter()
        .map(|&(t, cap)| {
            let name = format!("{t}_{cap}");
            let cfg = cell_config(base, t, cap);
            let ev = evaluate(&name, items, resolver, backend, &cfg, weights, parallelism)?;
            Ok((
                SweepCell {
                    name,
                    max_rounds: t,
                    max_frames_per_round: cap,
                    report: ev.report.clone(),
                },
                ev,
            ))
        })
        .collect()
}

/// `config,accuracy,mean_frames,mean_rounds,runtime` with runtime the mean
/// episode wall time in seconds.
pub fn frontier_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("config,accuracy,mean_frames,mean_rounds,runtime\n");
    for c in cells {
        let r = &c.report;
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4}",
            c.name,
            r.accuracy,
            r.mean_frames,
            r.mean_rounds,
            r.mean_wall_ms / 1000.0
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoStateCarryover,
    NoStructuredFields,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoStateCarryover,
        Variant::NoStructuredFields,
        Variant::Neither,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoStateCarryover => "no_state_carryover",
            Variant::NoStructuredFields => "no_structured_fields",
            Variant::Neither => "neither",
        }
    }

    pub fn apply(self, base: &EpisodeConfig) -> EpisodeConfig {
        let (carry, structured) = match self {
            Variant::Full => (true, true),
            Variant::NoStateCarryover => (false, true),
            Variant::NoStructuredFields => (true, false),
            Variant::Neither => (false, false),
        };
        EpisodeConfig {
            carry_state: carry,
            summary_mode: if structured {
                SummaryMode::Structured
            } else {
                SummaryMode::FreeText
            },
            ..base.clone()
        }
    }
}

pub fn ablate_components(
    items: &[QaItem],
    resolver: &dyn VideoResolver,
    backend: &dyn ModelBackend,
    base: &EpisodeConfig,
    variants: &[Variant],
    weights: &RewardWeights,
    parallelism: usize,
) -> Result<Vec<(Variant, Evaluation)>, BenchError> {
    variants
        .iter()
        .map(|&v| {
            let ev = evaluate(v.name(), items, resolver, backend, &v.apply(base), weights, parallelism)?;
            Ok((v, ev))
        })
        .collect()
}

/// Aligned text table of reports.
pub fn render_table(reports: &[&MetricsReport]) -> String {
    let header = ["config", "items", "errors", "acc(%)", "frames", "rounds", "tokens", "early(%)", "wall(ms)"];
    let rows: Vec<[String; 9]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.items.to_string(),
                r.errors.to_string(),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.mean_frames),
                format!("{:.2}", r.mean_rounds),
                format!("{:.1}", r.mean_prompt_tokens),
                format!("{:.2}", r.early_stop_rate),
                format!("{:.1}", r.mean_wall_ms),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
