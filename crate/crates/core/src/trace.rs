//! Per-step run records and paired-run gap metrics.

use serde::Serialize;

use crate::actor_critic::PolicyTable;
use crate::bounds::BoundFlags;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Decpomdp,
    Oracle,
    Zopo,
}

/// Everything recorded for one environment step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub state: usize,
    pub actions: Vec<usize>,
    /// Realized rewards.
    pub rewards: Vec<f64>,
    /// Expected reward of each agent's learned policy at its current belief.
    pub policy_value: Vec<f64>,
    pub rho: Vec<f64>,
    /// `(1/K) Σ ‖ω_k − ω̄‖` after this step's combine.
    pub agreement: f64,
    /// Each agent's belief mass on the true state.
    pub true_state_mass: Vec<f64>,
    pub flags: BoundFlags,
    /// Post-update critics; empty unless parameters are recorded.
    #[serde(skip)]
    pub omega: Vec<Vec<f64>>,
    /// Post-update actors; empty unless parameters are recorded.
    #[serde(skip)]
    pub theta: Vec<PolicyTable>,
    /// Beliefs used for acting; empty unless parameters are recorded.
    #[serde(skip)]
    pub beliefs: Vec<Vec<f64>>,
}

/// Largest observed value of each bounded quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BoundPeaks {
    pub rho: f64,
    pub f: f64,
    pub m: f64,
    pub e_norm: f64,
    pub m_theta: f64,
    /// Largest `|δ| / B^δ_n` ratio seen.
    pub delta_ratio: f64,
    pub psi_norm: f64,
    /// Largest `‖ω‖ / W_n` ratio seen.
    pub critic_ratio: f64,
}

impl BoundPeaks {
    pub(crate) fn absorb(&mut self, other: &BoundPeaks) {
        self.rho = self.rho.max(other.rho);
        self.f = self.f.max(other.f);
        self.m = self.m.max(other.m);
        self.e_norm = self.e_norm.max(other.e_norm);
        self.m_theta = self.m_theta.max(other.m_theta);
        self.delta_ratio = self.delta_ratio.max(other.delta_ratio);
        self.psi_norm = self.psi_norm.max(other.psi_norm);
        self.critic_ratio = self.critic_ratio.max(other.critic_ratio);
    }
}

/// Time-indexed record of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub agent_count: usize,
    pub state_rounds: usize,
    pub ratio_rounds: usize,
    pub clamp_count: u64,
    pub peaks: BoundPeaks,
    pub steps: Vec<StepRecord>,
    /// Behavioral tables at the first and last step.
    #[serde(skip)]
    pub behavioral_start: Vec<PolicyTable>,
    #[serde(skip)]
    pub behavioral_end: Vec<PolicyTable>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Agent-averaged expected reward per step.
    pub fn mean_policy_value(&self) -> Vec<f64> {
        self.steps.iter().map(|s| mean(&s.policy_value)).collect()
    }

    /// Running mean of [`RunTrace::mean_policy_value`].
    pub fn cumulative_average_reward(&self) -> Vec<f64> {
        cumulative_average(&self.mean_policy_value())
    }

    pub fn agreement(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.agreement).collect()
    }

    pub fn flagged_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.flags.is_clean()).count()
    }

    pub fn final_cumulative_reward(&self) -> f64 {
        self.cumulative_average_reward().last().copied().unwrap_or(0.0)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn cumulative_average(xs: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            total += x;
            total / (i + 1) as f64
        })
        .collect()
}

/// Means of the first and last quarter of `xs`.
pub fn quarter_means(xs: &[f64]) -> (f64, f64) {
    let q = (xs.len() / 4).max(1);
    let n = xs.len();
    (mean(&xs[..q.min(n)]), mean(&xs[n.saturating_sub(q)..]))
}

/// Agent-averaged `‖ω̂ − ω‖` and `‖θ̂ − θ‖` per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSeries {
    pub delta_omega: Vec<f64>,
    pub delta_theta: Vec<f64>,
    /// Per step, each agent's `‖ω̂_k − ω_k‖`.
    pub agent_omega: Vec<Vec<f64>>,
    /// Per step, each agent's `‖θ̂_k − θ_k‖`.
    pub agent_theta: Vec<Vec<f64>>,
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Gap between a dec-POMDP trace and its paired oracle replay.
///
/// Both traces must come from the same trajectory and carry recorded
/// parameters. The series covers the common horizon.
pub fn paired_gap_metrics(primary: &RunTrace, oracle: &RunTrace) -> Result<GapSeries> {
    if primary.seed != oracle.seed || primary.agent_count != oracle.agent_count {
        return Err(Error::Pairing(format!(
            "seed/agent mismatch: ({}, {}) vs ({}, {})",
            primary.seed, primary.agent_count, oracle.seed, oracle.agent_count
        )));
    }
    let horizon = primary.len().min(oracle.len());
    let mut out = GapSeries {
        delta_omega: Vec::with_capacity(horizon),
        delta_theta: Vec::with_capacity(horizon),
        agent_omega: Vec::with_capacity(horizon),
        agent_theta: Vec::with_capacity(horizon),
    };
    for (p, o) in primary.steps.iter().zip(&oracle.steps) {
        if p.step != o.step || p.state != o.state || p.actions != o.actions {
            return Err(Error::Pairing(format!(
                "traces diverge at step {}: state {} vs {}",
                p.step, p.state, o.state
            )));
        }
        let k = primary.agent_count;
        if p.omega.len() != k || o.omega.len() != k || p.theta.len() != k || o.theta.len() != k {
            return Err(Error::Pairing(format!(
                "step {} lacks recorded parameters",
                p.step
            )));
        }
        let dw: Vec<f64> = (0..k).map(|a| l2_diff(&o.omega[a], &p.omega[a])).collect();
        let dt: Vec<f64> = (0..k)
            .map(|a| l2_diff(o.theta[a].as_slice(), p.theta[a].as_slice()))
            .collect();
        out.delta_omega.push(mean(&dw));
        out.delta_theta.push(mean(&dt));
        out.agent_omega.push(dw);
        out.agent_theta.push(dt);
    }
    Ok(out)
}
