//! Emphatic off-policy actor-critic with belief features.
//!
//! Each agent keeps a linear critic `ωᵀμ` over its belief `μ` and a
//! Boltzmann actor with one parameter block per action. Local updates follow
//! emphatic TD (follow-on trace `F`, emphasis `M`, eligibility trace `e`,
//! actor emphasis `M^θ`); critics are then averaged over the network.

mod policy;
mod run;

pub use policy::{
    boltzmann_prob, boltzmann_probs, log_boltzmann_probs, log_policy_gradient, BehavioralPolicy,
    BehavioralSpec,
    PolicyTable,
};
pub use run::{
    resolve_inner_rounds, run_maopac_decpomdp, run_maopac_oracle, run_with_env, InnerRounds, RunSpec,
    Trajectory, TrajectoryStep,
};

use std::fmt;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::topology::CombinationMatrix;

/// Inner-loop length: a fixed round count or derived at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerLoop {
    Fixed(usize),
    Auto,
}

impl Serialize for InnerLoop {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            InnerLoop::Fixed(n) => s.serialize_u64(*n as u64),
            InnerLoop::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for InnerLoop {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = InnerLoop;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a nonnegative integer or \"auto\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<InnerLoop, E> {
                Ok(InnerLoop::Fixed(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<InnerLoop, E> {
                if v < 0 {
                    return Err(E::custom(format!("inner-loop length {v} is negative")));
                }
                Ok(InnerLoop::Fixed(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<InnerLoop, E> {
                match v {
                    "auto" => Ok(InnerLoop::Auto),
                    other => Err(E::custom(format!("expected \"auto\", got \"{other}\""))),
                }
            }
        }
        d.deserialize_any(Visitor)
    }
}

fn default_eps() -> f64 {
    0.1
}
fn default_t_state() -> InnerLoop {
    InnerLoop::Fixed(10)
}
fn default_t_rho() -> InnerLoop {
    InnerLoop::Fixed(50)
}
fn default_lipschitz() -> f64 {
    1.0
}
fn default_critic_init() -> f64 {
    0.1
}
fn default_max_inner() -> usize {
    1000
}

/// Learning hyperparameters shared by every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub b_eps: f64,
    pub beta0: f64,
    pub beta_exponent: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(rename = "T_state", default = "default_t_state")]
    pub t_state: InnerLoop,
    #[serde(rename = "T_rho", default = "default_t_rho")]
    pub t_rho: InnerLoop,
    /// Lipschitz constant of the policy map; reported only.
    #[serde(default = "default_lipschitz")]
    pub lipschitz: f64,
    /// Critic weights start uniform in `[-scale, scale]`.
    #[serde(default = "default_critic_init")]
    pub critic_init_scale: f64,
    /// Upper limit for automatically sized inner loops.
    #[serde(default = "default_max_inner")]
    pub max_inner_rounds: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            lambda: 0.5,
            zeta: 0.5,
            b_eps: 0.5,
            beta0: 10.0,
            beta_exponent: 0.6,
            eps: default_eps(),
            t_state: default_t_state(),
            t_rho: default_t_rho(),
            lipschitz: default_lipschitz(),
            critic_init_scale: default_critic_init(),
            max_inner_rounds: default_max_inner(),
        }
    }
}

fn open_unit(name: &str, v: f64, out: &mut Vec<String>) {
    if !(v > 0.0 && v < 1.0) {
        out.push(format!("{name} ({v}) must lie in (0, 1)"));
    }
}

impl HyperParams {
    /// Step size `β_n = β₀ / (1 + n)^p`.
    pub fn step_size(&self, n: usize) -> f64 {
        self.beta0 / (1.0 + n as f64).powf(self.beta_exponent)
    }

    /// Every violated assumption, worded for the user.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        open_unit("gamma", self.gamma, &mut out);
        open_unit("lambda", self.lambda, &mut out);
        open_unit("zeta", self.zeta, &mut out);
        if !(self.b_eps > self.gamma) {
            out.push(format!(
                "b_eps ({}) must exceed gamma ({}): behavioral-floor assumption",
                self.b_eps, self.gamma
            ));
        }
        if !(self.b_eps <= 1.0) {
            out.push(format!("b_eps ({}) must be at most 1: behavioral-floor assumption", self.b_eps));
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            out.push(format!(
                "beta0 ({}) must be positive: step-size assumption",
                self.beta0
            ));
        }
        if !(self.beta_exponent > 0.5 && self.beta_exponent <= 1.0) {
            out.push(format!(
                "beta_exponent ({}) must lie in (0.5, 1] so that sum(beta) diverges and sum(beta^2) converges: step-size assumption",
                self.beta_exponent
            ));
        }
        if !(self.eps > 0.0) {
            out.push(format!("eps ({}) must be positive", self.eps));
        }
        if self.t_state == InnerLoop::Fixed(0) {
            out.push("T_state must be at least 1".into());
        }
        if !(self.critic_init_scale >= 0.0) {
            out.push(format!(
                "critic_init_scale ({}) must be nonnegative",
                self.critic_init_scale
            ));
        }
        if self.max_inner_rounds == 0 {
            out.push("max_inner_rounds must be at least 1".into());
        }
        out
    }
}

/// Per-agent learning state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Follow-on trace.
    pub f: f64,
    /// Emphatic weight.
    pub m: f64,
    /// Eligibility trace.
    pub e: Vec<f64>,
    pub m_theta: f64,
    /// Critic weights; holds the pre-combine `ω̃` right after [`etd_update`].
    pub omega: Vec<f64>,
    pub theta: PolicyTable,
    pub rho_prev: f64,
}

impl AgentState {
    /// `F = 0`, `e = 0`, `θ = 0` and a neutral previous ratio of 1.
    pub fn new(omega: Vec<f64>, actions: usize) -> Self {
        let states = omega.len();
        Self {
            f: 0.0,
            m: 0.0,
            e: vec![0.0; states],
            m_theta: 0.0,
            omega,
            theta: PolicyTable::zeros(actions, states),
            rho_prev: 1.0,
        }
    }
}

/// Intermediate quantities of one update, for bound checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtdDiagnostics {
    pub f: f64,
    pub m: f64,
    pub e_norm: f64,
    pub m_theta: f64,
    pub delta: f64,
    pub psi_norm: f64,
    pub rho: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn finite(v: f64, quantity: &'static str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { quantity, step })
    }
}

/// One local emphatic actor-critic update.
///
/// Order: `F`, `M`, `e`, `M^θ` (using the pre-update `F`), `δ`, `Ψ`, then
/// `ω̃` and the chosen action's actor block. On return `state.omega` holds
/// `ω̃`, awaiting [`critic_combine`].
#[allow(clippy::too_many_arguments)]
pub fn etd_update(
    state: &mut AgentState,
    mu: &[f64],
    eta: &[f64],
    rho: f64,
    reward: f64,
    action: usize,
    beta: f64,
    hyper: &HyperParams,
    step: usize,
) -> Result<EtdDiagnostics> {
    let s = state.omega.len();
    for (what, v) in [("belief mu", mu.len()), ("belief eta", eta.len())] {
        if v != s {
            return Err(Error::Dimension {
                what,
                expected: s,
                got: v,
            });
        }
    }
    if action >= state.theta.actions() {
        return Err(Error::InvalidAction {
            agent: 0,
            action,
            action_count: state.theta.actions(),
        });
    }
    let (gamma, lambda, zeta) = (hyper.gamma, hyper.lambda, hyper.zeta);

    let f_prev = state.f;
    let f = finite(1.0 + gamma * state.rho_prev * f_prev, "F", step)?;
    let m = lambda + (1.0 - lambda) * f;
    for (e, m_mu) in state.e.iter_mut().zip(mu) {
        *e = gamma * lambda * *e + m * m_mu;
    }
    let m_theta = finite(1.0 + zeta * gamma * state.rho_prev * f_prev, "M_theta", step)?;
    let delta = finite(
        reward + gamma * dot(&state.omega, eta) - dot(&state.omega, mu),
        "delta",
        step,
    )?;
    let psi = log_policy_gradient(mu, &state.theta, action);

    let critic_gain = beta * rho * delta;
    for (w, e) in state.omega.iter_mut().zip(&state.e) {
        *w += critic_gain * e;
    }
    let actor_gain = beta * rho * m_theta * delta;
    for (t, p) in state.theta.block_mut(action).iter_mut().zip(&psi) {
        *t += actor_gain * p;
    }
    if state.omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence {
            quantity: "omega",
            step,
        });
    }
    if state.theta.block(action).iter().any(|t| !t.is_finite()) {
        return Err(Error::Divergence {
            quantity: "theta",
            step,
        });
    }

    state.f = f;
    state.m = m;
    state.m_theta = m_theta;
    state.rho_prev = rho;
    Ok(EtdDiagnostics {
        f,
        m,
        e_norm: norm(&state.e),
        m_theta,
        delta,
        psi_norm: norm(&psi),
        rho,
    })
}

/// `ω_k ← Σ_ℓ c_ℓk ω̃_ℓ` for every agent.
pub fn critic_combine(omega_tildes: &[Vec<f64>], c: &CombinationMatrix) -> Result<Vec<Vec<f64>>> {
    let k = c.agent_count();
    if omega_tildes.len() != k {
        return Err(Error::Dimension {
            what: "critic vectors",
            expected: k,
            got: omega_tildes.len(),
        });
    }
    let s = omega_tildes[0].len();
    if let Some(bad) = omega_tildes.iter().find(|w| w.len() != s) {
        return Err(Error::Dimension {
            what: "critic length",
            expected: s,
            got: bad.len(),
        });
    }
    Ok((0..k)
        .map(|j| {
            let mut out = vec![0.0; s];
            for (l, w) in omega_tildes.iter().enumerate() {
                let c_lj = c.weight(l, j);
                if c_lj != 0.0 {
                    out.iter_mut().zip(w).for_each(|(o, x)| *o += c_lj * x);
                }
            }
            out
        })
        .collect())
}

/// `(1/K) Σ_k ‖ω_k − ω̄‖`.
pub fn critic_disagreement(omegas: &[Vec<f64>]) -> f64 {
    let k = omegas.len();
    if k == 0 {
        return 0.0;
    }
    let s = omegas[0].len();
    let mean: Vec<f64> = (0..s)
        .map(|i| omegas.iter().map(|w| w[i]).sum::<f64>() / k as f64)
        .collect();
    omegas
        .iter()
        .map(|w| w.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / k as f64
}
