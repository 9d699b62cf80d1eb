//! Decentralized estimate of the joint importance-sampling ratio.
//!
//! The joint ratio is a product of private per-agent ratios. Agents run
//! average consensus on the log ratios; `exp(K · average)` then recovers the
//! product at every agent.

use crate::error::{Error, Result};
use crate::topology::CombinationMatrix;

/// `ln(π / b)` for one agent. The behavioral probability must respect the
/// policy floor `floor > 0`.
pub fn local_log_ratio(target_prob: f64, behavioral_prob: f64, floor: f64) -> Result<f64> {
    if !(behavioral_prob >= floor) || behavioral_prob <= 0.0 {
        return Err(Error::BehavioralFloor {
            prob: behavioral_prob,
            floor,
        });
    }
    if !(target_prob > 0.0) {
        return Err(Error::Config(format!(
            "target probability must be positive, got {target_prob}"
        )));
    }
    Ok((target_prob / behavioral_prob).ln())
}

/// Same as [`local_log_ratio`] with the target given as a log-probability.
pub fn local_log_ratio_from_log(log_target: f64, behavioral_prob: f64, floor: f64) -> Result<f64> {
    if !(behavioral_prob >= floor) || behavioral_prob <= 0.0 {
        return Err(Error::BehavioralFloor {
            prob: behavioral_prob,
            floor,
        });
    }
    if log_target.is_nan() || log_target == f64::NEG_INFINITY {
        return Err(Error::Config(format!(
            "target log-probability must be finite, got {log_target}"
        )));
    }
    Ok(log_target - behavioral_prob.ln())
}

/// `rounds` applications of `p̃_k ← Σ_ℓ c_ℓk p̃_ℓ`.
pub fn diffuse_log_ratios(p: &[f64], c: &CombinationMatrix, rounds: usize) -> Result<Vec<f64>> {
    if p.len() != c.agent_count() {
        return Err(Error::Dimension {
            what: "log ratios",
            expected: c.agent_count(),
            got: p.len(),
        });
    }
    let mut cur = p.to_vec();
    for _ in 0..rounds {
        cur = c.diffuse(&cur)?;
    }
    Ok(cur)
}

/// `exp(K · p̃)`: the joint ratio at exact consensus.
pub fn recover_ratio(p_tilde: f64, agent_count: usize) -> f64 {
    (agent_count as f64 * p_tilde).exp()
}

/// Full consensus pipeline with clamping at `1 / b_eps`.
#[derive(Debug, Clone)]
pub struct RatioEstimator {
    cap: f64,
    clamps: u64,
}

impl RatioEstimator {
    pub fn new(b_eps: f64) -> Self {
        Self {
            cap: 1.0 / b_eps,
            clamps: 0,
        }
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Number of recovered ratios that were clamped so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamps
    }

    pub fn clamp(&mut self, rho: f64) -> f64 {
        if rho > self.cap {
            self.clamps += 1;
            self.cap
        } else {
            rho
        }
    }

    /// Diffuses `log_ratios` for `rounds` rounds and returns each agent's
    /// clamped joint-ratio estimate.
    pub fn estimate(
        &mut self,
        log_ratios: &[f64],
        c: &CombinationMatrix,
        rounds: usize,
    ) -> Result<Vec<f64>> {
        let k = c.agent_count();
        let p = diffuse_log_ratios(log_ratios, c, rounds)?;
        Ok(p.into_iter().map(|v| self.clamp(recover_ratio(v, k))).collect())
    }
}
