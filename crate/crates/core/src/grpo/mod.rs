//! Group-relative policy optimization.
//!
//! For `G` trajectories sampled from one input, each trajectory's return is
//! standardized within the group and shared by all of its tokens. The
//! objective is the clipped ratio surrogate averaged per token and then per
//! trajectory.

pub mod toy;

use alloc::vec::Vec;

use crate::math;

pub use toy::{train_toy, LearningCurve, ToyConfig, ToyPolicy};

/// Added to the group standard deviation.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("a group needs at least two trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite return at position {0}")]
    NonFinite(usize),
    #[error("{advantages} advantages for {trajectories} trajectories")]
    LengthMismatch {
        trajectories: usize,
        advantages: usize,
    },
    #[error("trajectory {0} has no tokens")]
    EmptyTrajectory(usize),
    #[error("trajectory {0} has mismatched old and new log-probabilities")]
    TokenMismatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.001,
            learning_rate: 1e-6,
        }
    }
}

/// `(R_i - mean) / (std + eps)` with the population standard deviation.
/// A constant group gives all zeros.
pub fn group_advantages(returns: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if returns.len() < 2 {
        return Err(GrpoError::GroupTooSmall(returns.len()));
    }
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite(i));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    Ok(returns.iter().map(|r| (r - mean) / (std + STD_EPS)).collect())
}

/// Per-token log-probabilities of one trajectory's sampled tokens under the
/// behaviour policy and the policy being optimized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenLogps {
    pub old: Vec<f64>,
    pub new: Vec<f64>,
}

/// `min(rho A, clip(rho, 1-eps, 1+eps) A)` and its derivative in `rho`.
pub fn clipped_surrogate(rho: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps);
    let a = rho * advantage;
    let b = clipped * advantage;
    if a <= b {
        (a, advantage)
    } else {
        (b, 0.0)
    }
}

/// `(1/G) sum_i (1/N_i) sum_n min(rho A_i, clip(rho) A_i)` with
/// `rho = exp(new - old)`.
pub fn grpo_objective(group: &[TokenLogps], advantages: &[f64], clip_eps: f64) -> Result<f64, GrpoError> {
    if group.len() != advantages.len() {
        return Err(GrpoError::LengthMismatch {
            trajectories: group.len(),
            advantages: advantages.len(),
        });
    }
    if group.is_empty() {
        return Err(GrpoError::GroupTooSmall(0));
    }
    let mut total = 0.0;
    for (i, (traj, &adv)) in group.iter().zip(advantages).enumerate() {
        if traj.old.len() != traj.new.len() {
            return Err(GrpoError::TokenMismatch(i));
        }
        if traj.old.is_empty() {
            return Err(GrpoError::EmptyTrajectory(i));
        }
        let sum: f64 = traj
            .old
            .iter()
            .zip(&traj.new)
            .map(|(o, n)| clipped_surrogate(math::exp(n - o), adv, clip_eps).0)
            .sum();
        total += sum / traj.old.len() as f64;
    }
    Ok(total / group.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn advantages_standardize() {
        let a = group_advantages(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
        assert_eq!(group_advantages(&[2.0, 2.0, 2.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(group_advantages(&[1.0]), Err(GrpoError::GroupTooSmall(1)));
    }

    #[test]
    fn on_policy_objective_is_mean_advantage() {
        let group = vec![
            TokenLogps { old: vec![-1.0, -2.0], new: vec![-1.0, -2.0] },
            TokenLogps { old: vec![-0.5], new: vec![-0.5] },
        ];
        let j = grpo_objective(&group, &[1.0, -1.0], 0.2).unwrap();
        assert!(j.abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_ratio() {
        assert_eq!(clipped_surrogate(2.0, 1.0, 0.2), (1.2, 0.0));
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2), (0.5, 1.0));
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), (-0.8, 0.0));
        assert_eq!(clipped_surrogate(2.0, -1.0, 0.2), (-2.0, -1.0));
    }
}
