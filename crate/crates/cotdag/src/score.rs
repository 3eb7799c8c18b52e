//! Redundancy scoring, preference-pair construction, and length-penalized
//! group rewards.
//!
//! The redundancy score of a sampled trajectory is its review-node fraction
//! plus its length normalized by the group mean:
//!
//! ```text
//! R(y) = review_count / node_count + length / group_mean_length
//! ```
//!
//! Preference pairs take the least and most redundant *correct* trajectories
//! of a group. Group rewards gate on correctness and penalize only the
//! excess over the shortest correct length:
//!
//! ```text
//! L*     = min { L(y) : V(y) = 1 }
//! delta  = max(L - L* - Delta, 0) / (L* + Delta)
//! reward = V - lambda * 1{V=1} * delta^gamma
//! ```
//!
//! so an incorrect trajectory scores exactly 0, and a correct one within
//! `Delta` tokens of the shortest correct trajectory scores exactly 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("division domain: {0}")]
    DivisionDomain(String),
    #[error("invalid reward parameters: {0}")]
    InvalidParams(String),
}

/// A sampled trajectory with the measurements scoring needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory<F: Scalar> {
    pub trajectory_id: String,
    pub question_id: String,
    /// Token count of the trajectory, `L(y)`.
    pub length: usize,
    pub review_count: usize,
    pub node_count: usize,
    /// Correctness verdict `V`, supplied externally.
    pub correct: bool,
    /// Redundancy score `R(y)`.
    pub redundancy: F,
}

/// Length-penalty settings: weight, tolerance margin in tokens, and
/// sharpness. Defaults are `lambda = 0.5`, `delta = 256`, `gamma = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams<F: Scalar> {
    pub lambda: F,
    pub delta: F,
    pub gamma: F,
}

impl<F: Scalar> Default for RewardParams<F> {
    fn default() -> Self {
        Self {
            lambda: F::from_f64(0.5).expect("representable"),
            delta: F::from_f64(256.0).expect("representable"),
            gamma: F::from_f64(2.0).expect("representable"),
        }
    }
}

impl<F: Scalar> RewardParams<F> {
    pub fn new(lambda: F, delta: F, gamma: F) -> Result<Self, ScoreError> {
        if lambda < F::zero() {
            return Err(ScoreError::InvalidParams("lambda must be >= 0".into()));
        }
        if delta < F::zero() {
            return Err(ScoreError::InvalidParams("delta must be >= 0".into()));
        }
        if gamma < F::one() {
            return Err(ScoreError::InvalidParams("gamma must be >= 1".into()));
        }
        Ok(Self {
            lambda,
            delta,
            gamma,
        })
    }
}

/// Per-trajectory reward with its components and the group's shortest
/// correct length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord<F: Scalar> {
    pub trajectory_id: String,
    /// Correctness reward `V`.
    pub v: bool,
    /// Trajectory length `L(y)`.
    #[serde(rename = "l")]
    pub length: usize,
    /// Shortest correct length in the group; absent when nothing is correct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_star: Option<usize>,
    pub delta: F,
    pub r_length: F,
    pub reward: F,
}

/// Mean trajectory length over a whole sampled group, correct and incorrect
/// alike. `None` on an empty group.
pub fn mean_length<F: Scalar>(lengths: impl IntoIterator<Item = usize>) -> Option<F> {
    let mut sum = F::zero();
    let mut n = 0usize;
    for len in lengths {
        sum = sum + F::from_count(len);
        n += 1;
    }
    (n > 0).then(|| sum / F::from_count(n))
}

/// The redundancy score: review fraction plus normalized length.
pub fn redundancy_score<F: Scalar>(
    review_count: usize,
    node_count: usize,
    length: usize,
    group_mean_length: F,
) -> Result<F, ScoreError> {
    if node_count == 0 {
        return Err(ScoreError::DivisionDomain("node_count is zero".into()));
    }
    if group_mean_length <= F::zero() {
        return Err(ScoreError::DivisionDomain(
            "group mean length must be positive".into(),
        ));
    }
    let review_fraction = F::from_count(review_count) / F::from_count(node_count);
    let length_ratio = F::from_count(length) / group_mean_length;
    Ok(review_fraction + length_ratio)
}

/// Pick (preferred, dispreferred) = (least, most redundant) among a group's
/// correct trajectories. Ties order the pair by trajectory id. `None` when
/// fewer than two trajectories are correct, or when the extremes coincide.
pub fn build_dpo_pairs<F: Scalar>(
    group: &[ScoredTrajectory<F>],
) -> Option<(&ScoredTrajectory<F>, &ScoredTrajectory<F>)> {
    let correct: Vec<&ScoredTrajectory<F>> = group.iter().filter(|t| t.correct).collect();
    if correct.len() < 2 {
        return None;
    }
    let by_r_then_id = |a: &&ScoredTrajectory<F>, b: &&ScoredTrajectory<F>| {
        a.redundancy
            .partial_cmp(&b.redundancy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.trajectory_id.cmp(&b.trajectory_id))
    };
    let preferred = correct.iter().copied().min_by(by_r_then_id)?;
    let dispreferred = correct.iter().copied().max_by(by_r_then_id)?;
    if preferred.trajectory_id == dispreferred.trajectory_id {
        return None;
    }
    Some((preferred, dispreferred))
}

/// Compute length-penalized rewards for one group of trajectories sampled
/// for the same question. Output order matches input order.
pub fn grpo_rewards<F: Scalar>(
    group: &[ScoredTrajectory<F>],
    params: &RewardParams<F>,
) -> Vec<RewardRecord<F>> {
    let l_star = group
        .iter()
        .filter(|t| t.correct)
        .map(|t| t.length)
        .min();
    group
        .iter()
        .map(|t| {
            let (delta, r_length, reward) = match l_star {
                None => (F::zero(), F::zero(), F::zero()),
                Some(ls) => {
                    let denom = F::from_count(ls) + params.delta;
                    let excess = F::from_count(t.length) - F::from_count(ls) - params.delta;
                    let delta = if denom > F::zero() {
                        excess.max(F::zero()) / denom
                    } else {
                        F::zero()
                    };
                    let r_length = delta.powf(params.gamma);
                    let reward = if t.correct {
                        F::one() - params.lambda * r_length
                    } else {
                        F::zero()
                    };
                    (delta, r_length, reward)
                }
            };
            RewardRecord {
                trajectory_id: t.trajectory_id.clone(),
                v: t.correct,
                length: t.length,
                l_star,
                delta,
                r_length,
                reward,
            }
        })
        .collect()
}
