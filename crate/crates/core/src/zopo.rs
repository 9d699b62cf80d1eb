//! Zeroth-order policy optimization baseline.
//!
//! Each agent perturbs its own Boltzmann table along a random unit
//! direction, measures mean episode return on both sides with on-policy
//! Monte-Carlo rollouts, and ascends the two-point finite difference. Agents
//! act on private beliefs built from their own observations only.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{boltzmann_probs, PolicyTable};
use crate::bounds::BoundFlags;
use crate::environment::{DecPomdp, EnvSpec};
use crate::error::{Error, Result};
use crate::social_learning::{BeliefNetwork, BeliefVector};
use crate::topology::CombinationMatrix;
use crate::trace::{Algorithm, BoundPeaks, RunTrace, StepRecord};

const AGENT_STREAM: u64 = 2;

fn default_radius() -> f64 {
    0.5
}
fn default_episodes() -> usize {
    2
}
fn default_horizon() -> usize {
    10
}
fn default_step() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZopoSpec {
    /// Smoothing radius of the perturbation.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Episodes averaged per side of the finite difference.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Steps per episode.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Constant ascent step.
    #[serde(default = "default_step")]
    pub step_size: f64,
}

impl Default for ZopoSpec {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            episodes: default_episodes(),
            horizon: default_horizon(),
            step_size: default_step(),
        }
    }
}

impl ZopoSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            out.push(format!("zopo radius ({}) must be positive", self.radius));
        }
        if self.episodes == 0 {
            out.push("zopo episodes must be at least 1".into());
        }
        if self.horizon == 0 {
            out.push("zopo horizon must be at least 1".into());
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            out.push(format!("zopo step_size ({}) must be nonnegative", self.step_size));
        }
        out
    }

    /// Environment steps consumed by one gradient estimate.
    pub fn steps_per_update(&self) -> usize {
        2 * self.episodes * self.horizon
    }
}

/// Uniformly random direction on the unit sphere in `dim` dimensions.
pub fn random_unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Two-point estimate `d/(2r) (J(θ + r u) − J(θ − r u)) u`.
pub fn zopo_gradient_estimate<R: Rng + ?Sized>(
    theta: &[f64],
    radius: f64,
    rng: &mut R,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let d = theta.len();
    let u = random_unit_direction(d, rng);
    let shifted = |sign: f64| -> Vec<f64> {
        theta.iter().zip(&u).map(|(t, ui)| t + sign * radius * ui).collect()
    };
    let plus = objective(&shifted(1.0));
    let minus = objective(&shifted(-1.0));
    let scale = d as f64 / (2.0 * radius) * (plus - minus);
    u.into_iter().map(|ui| scale * ui).collect()
}

/// Per-agent belief from the agent's own observations only.
fn private_beliefs<E: DecPomdp>(env: &mut E, isolated: &CombinationMatrix, rounds: usize) -> Result<Vec<Vec<f64>>> {
    let k = env.agent_count();
    let mut net = BeliefNetwork::uniform(isolated, env.state_count());
    let mut obs = vec![0.0; k];
    for _ in 0..rounds {
        for (agent, o) in obs.iter_mut().enumerate() {
            *o = env.observe(agent);
        }
        net.round(env.observation_model(), &obs)?;
    }
    Ok(net.beliefs().into_iter().map(BeliefVector::into_inner).collect())
}

fn identity(k: usize) -> Result<CombinationMatrix> {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    CombinationMatrix::from_rows(&rows)
}

/// Runs the baseline for exactly `steps` environment interactions.
pub fn run_zopo(
    env_spec: &EnvSpec,
    zopo: &ZopoSpec,
    state_rounds: usize,
    steps: usize,
    seed: u64,
) -> Result<RunTrace> {
    let problems = zopo.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    if state_rounds == 0 {
        return Err(Error::Config("T_state must be at least 1".into()));
    }
    let mut env = env_spec.build(seed)?;
    run_zopo_with_env(&mut env, zopo, state_rounds, steps, seed)
}

pub fn run_zopo_with_env<E: DecPomdp>(
    env: &mut E,
    zopo: &ZopoSpec,
    state_rounds: usize,
    steps: usize,
    seed: u64,
) -> Result<RunTrace> {
    let (k, states, actions) = (env.agent_count(), env.state_count(), env.action_count());
    let isolated = identity(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(AGENT_STREAM);
    let mut tables = vec![PolicyTable::zeros(actions, states); k];
    let dim = actions * states;
    let mut records = Vec::with_capacity(steps);
    let mut mus = private_beliefs(env, &isolated, state_rounds)?;

    'outer: while records.len() < steps {
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| random_unit_direction(dim, &mut rng)).collect();
        let mut returns = [vec![0.0; k], vec![0.0; k]];
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            let perturbed: Vec<PolicyTable> = tables
                .iter()
                .zip(&dirs)
                .map(|(t, u)| {
                    let mut p = t.clone();
                    p.as_mut_slice()
                        .iter_mut()
                        .zip(u)
                        .for_each(|(x, ui)| *x += sign * zopo.radius * ui);
                    p
                })
                .collect();
            for _ in 0..zopo.episodes {
                for _ in 0..zopo.horizon {
                    if records.len() >= steps {
                        break 'outer;
                    }
                    let n = records.len();
                    let state = env.true_state();
                    let mut acts = Vec::with_capacity(k);
                    let mut policy_value = Vec::with_capacity(k);
                    for agent in 0..k {
                        let probs = boltzmann_probs(&mus[agent], &perturbed[agent]);
                        let dist = WeightedIndex::new(&probs)
                            .map_err(|_| Error::Divergence { quantity: "zopo policy", step: n })?;
                        acts.push(dist.sample(&mut rng));
                        let learned = boltzmann_probs(&mus[agent], &tables[agent]);
                        policy_value.push(env.expected_reward(agent, &learned));
                    }
                    let true_state_mass = mus.iter().map(|m| m[state]).collect();
                    let rewards = env.step(&acts)?;
                    for (ret, r) in returns[side].iter_mut().zip(&rewards) {
                        *ret += r;
                    }
                    records.push(StepRecord {
                        step: n,
                        state,
                        actions: acts,
                        rewards,
                        policy_value,
                        rho: vec![1.0; k],
                        agreement: 0.0,
                        true_state_mass,
                        flags: BoundFlags::default(),
                        omega: Vec::new(),
                        theta: Vec::new(),
                        beliefs: Vec::new(),
                    });
                    mus = private_beliefs(env, &isolated, state_rounds)?;
                }
            }
        }
        let episodes = zopo.episodes as f64;
        for (agent, table) in tables.iter_mut().enumerate() {
            let diff = (returns[0][agent] - returns[1][agent]) / episodes;
            let scale = zopo.step_size * dim as f64 / (2.0 * zopo.radius) * diff;
            for (t, u) in table.as_mut_slice().iter_mut().zip(&dirs[agent]) {
                *t += scale * u;
            }
            if table.as_slice().iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    quantity: "zopo theta",
                    step: records.len(),
                });
            }
        }
    }

    Ok(RunTrace {
        algorithm: Algorithm::Zopo,
        seed,
        agent_count: k,
        state_rounds,
        ratio_rounds: 0,
        clamp_count: 0,
        peaks: BoundPeaks::default(),
        steps: records,
        behavioral_start: Vec::new(),
        behavioral_end: Vec::new(),
    })
}
