//! Learning curves and toy policy checkpoints.
//!
//! Checkpoint format:
//!
//! ```text
//! revise-toy-policy 1
//! request_bias=0
//! answer_bias=-2
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so reading a
//! checkpoint back gives bit-identical parameters.

use std::fmt::Write as _;

use revise_core::grpo::toy::{LearningCurve, ToyPolicy, DIM, FEATURE_NAMES};
use thiserror::Error;

use crate::frame_dir::parse_kv;

pub const POLICY_HEADER: &str = "revise-toy-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("missing or unknown header line (want `{POLICY_HEADER} {POLICY_VERSION}`)")]
    Header,
    #[error("unsupported checkpoint version {0}")]
    Version(String),
    #[error("{0}")]
    Syntax(String),
    #[error("missing parameter {0}")]
    Missing(&'static str),
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("bad value for {name}: {value}")]
    Value { name: String, value: String },
}

pub fn curve_csv(curve: &LearningCurve) -> String {
    let mut out = String::from("iteration,mean_return,mean_tau,mean_frames,accuracy\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.iteration, p.mean_return, p.mean_tau, p.mean_frames, p.accuracy
        );
    }
    out
}

pub fn render_policy(policy: &ToyPolicy) -> String {
    let mut out = format!("{POLICY_HEADER} {POLICY_VERSION}\n");
    for (name, v) in FEATURE_NAMES.iter().zip(policy.theta) {
        let _ = writeln!(out, "{name}={v:?}");
    }
    out
}

pub fn parse_policy(text: &str) -> Result<ToyPolicy, PolicyError> {
    let mut lines = text.splitn(2, '\n');
    let header = lines.next().unwrap_or("").trim();
    let version = header
        .strip_prefix(POLICY_HEADER)
        .map(str::trim)
        .ok_or(PolicyError::Header)?;
    if version != POLICY_VERSION.to_string() {
        return Err(PolicyError::Version(version.to_string()));
    }
    let kv = parse_kv(lines.next().unwrap_or("")).map_err(PolicyError::Syntax)?;
    if let Some(k) = kv.keys().find(|k| !FEATURE_NAMES.contains(&k.as_str())) {
        return Err(PolicyError::Unknown(k.clone()));
    }
    let mut theta = [0.0; DIM];
    for (slot, name) in theta.iter_mut().zip(FEATURE_NAMES) {
        let raw = kv.get(name).ok_or(PolicyError::Missing(name))?;
        *slot = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PolicyError::Value {
                name: name.to_string(),
                value: raw.clone(),
            })?;
    }
    Ok(ToyPolicy { theta })
}
