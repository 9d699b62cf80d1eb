//! Boltzmann policies over belief features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::social_learning::log_sum_exp;

/// Per-action parameter blocks `θ_a ∈ R^S`, stored row-major by action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    actions: usize,
    states: usize,
    theta: Vec<f64>,
}

impl PolicyTable {
    pub fn zeros(actions: usize, states: usize) -> Self {
        Self {
            actions,
            states,
            theta: vec![0.0; actions * states],
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Result<Self> {
        let actions = blocks.len();
        let states = blocks.first().map(|b| b.len()).unwrap_or(0);
        if actions == 0 || states == 0 {
            return Err(Error::Config("policy table needs at least one action and state".into()));
        }
        if let Some(b) = blocks.iter().find(|b| b.len() != states) {
            return Err(Error::Dimension {
                what: "policy block",
                expected: states,
                got: b.len(),
            });
        }
        Ok(Self {
            actions,
            states,
            theta: blocks.into_iter().flatten().collect(),
        })
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn block(&self, action: usize) -> &[f64] {
        &self.theta[action * self.states..(action + 1) * self.states]
    }

    pub fn block_mut(&mut self, action: usize) -> &mut [f64] {
        &mut self.theta[action * self.states..(action + 1) * self.states]
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        (0..self.actions).map(|a| self.block(a).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Logits `μᵀθ_c` for every action.
    pub fn logits(&self, belief: &[f64]) -> Vec<f64> {
        (0..self.actions)
            .map(|a| self.block(a).iter().zip(belief).map(|(t, m)| t * m).sum())
            .collect()
    }
}

/// Full Boltzmann distribution `π(·|μ) = softmax(μᵀθ_·)`.
pub fn boltzmann_probs(belief: &[f64], table: &PolicyTable) -> Vec<f64> {
    let logits = table.logits(belief);
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `ln π(·|μ)`, finite even where the probability underflows.
pub fn log_boltzmann_probs(belief: &[f64], table: &PolicyTable) -> Vec<f64> {
    let logits = table.logits(belief);
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| l - lse).collect()
}

pub fn boltzmann_prob(belief: &[f64], table: &PolicyTable, action: usize) -> f64 {
    let logits = table.logits(belief);
    (logits[action] - log_sum_exp(&logits)).exp()
}

/// `∇_{θ_a} ln π(a|μ) = μ (1 − π(a|μ))`, the gradient with respect to the
/// chosen action's own block.
pub fn log_policy_gradient(belief: &[f64], table: &PolicyTable, action: usize) -> Vec<f64> {
    let p = boltzmann_prob(belief, table, action);
    belief.iter().map(|m| m * (1.0 - p)).collect()
}

/// Shape of the fixed behavioral policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehavioralSpec {
    /// Weight `τ` of the belief-greedy logits `θ̄_a = τ e_a`.
    #[serde(default)]
    pub temperature: f64,
    /// Uniform mixture weight `κ ∈ (0, 1]`; the per-action floor is `κ/|A|`.
    #[serde(default = "default_mix")]
    pub mix: f64,
}

fn default_mix() -> f64 {
    1.0
}

impl Default for BehavioralSpec {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            mix: 1.0,
        }
    }
}

impl BehavioralSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.mix > 0.0 && self.mix <= 1.0) {
            out.push(format!(
                "behavioral mix ({}) must lie in (0, 1] so every action keeps positive probability",
                self.mix
            ));
        }
        if !self.temperature.is_finite() {
            out.push("behavioral temperature must be finite".into());
        }
        out
    }
}

/// Time-invariant behavioral policy
/// `b(a|μ) = (1 − κ) softmax(μᵀθ̄)_a + κ/|A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralPolicy {
    table: PolicyTable,
    mix: f64,
}

impl BehavioralPolicy {
    pub fn new(spec: &BehavioralSpec, actions: usize, states: usize) -> Self {
        let mut table = PolicyTable::zeros(actions, states);
        for a in 0..actions.min(states) {
            table.block_mut(a)[a] = spec.temperature;
        }
        Self {
            table,
            mix: spec.mix,
        }
    }

    pub fn table(&self) -> &PolicyTable {
        &self.table
    }

    /// Smallest probability any action can receive.
    pub fn floor(&self) -> f64 {
        self.mix / self.table.actions() as f64
    }

    pub fn probs(&self, belief: &[f64]) -> Vec<f64> {
        let uniform = self.floor();
        boltzmann_probs(belief, &self.table)
            .into_iter()
            .map(|p| (1.0 - self.mix) * p + uniform)
            .collect()
    }
}
