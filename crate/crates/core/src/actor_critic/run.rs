//! Outer learning loop and its full-observation replay.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    boltzmann_probs, critic_combine, critic_disagreement, etd_update, log_boltzmann_probs, norm,
    AgentState, BehavioralPolicy, BehavioralSpec, HyperParams, InnerLoop,
};
use crate::bounds::{theorem2_bounds, BoundConstants, BoundFlags, RuntimeBounds, Theorem2Inputs};
use crate::environment::{DecPomdp, EnvSpec};
use crate::error::{Error, Result};
use crate::ratio_consensus::{local_log_ratio_from_log, RatioEstimator};
use crate::social_learning::{BeliefNetwork, BeliefVector};
use crate::topology::{rounds_for_tolerance, second_eigenvalue_magnitude, CombinationMatrix};
use crate::trace::{Algorithm, BoundPeaks, RunTrace, StepRecord};

/// Residual consensus error targeted by the automatic ratio schedule.
const RATIO_CONSENSUS_TOL: f64 = 1e-8;

/// Agent-side stream, kept apart from the environment's generator.
const AGENT_STREAM: u64 = 1;

/// One seeded learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub env: EnvSpec,
    pub hyper: HyperParams,
    #[serde(default)]
    pub behavioral: BehavioralSpec,
    pub steps: usize,
    pub seed: u64,
    /// Check the runtime bound suite every step.
    #[serde(default = "yes")]
    pub diagnostics: bool,
    /// Keep per-step critics, actors and beliefs in the trace.
    #[serde(default)]
    pub record_params: bool,
}

fn yes() -> bool {
    true
}

/// What the oracle needs to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub next_state: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub beta: f64,
    /// Reward table of every agent in `state`.
    pub action_rewards: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub agent_count: usize,
    pub state_count: usize,
    pub action_count: usize,
    pub omega0: Vec<Vec<f64>>,
    pub steps: Vec<TrajectoryStep>,
}

/// Inner-loop lengths actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerRounds {
    pub state: usize,
    pub ratio: usize,
}

/// Resolves `"auto"` loop lengths from the spectrum of `c` and the
/// admissible belief error at the end of the run.
pub fn resolve_inner_rounds(
    hyper: &HyperParams,
    c: &CombinationMatrix,
    states: usize,
    steps: usize,
    omega0_max_norm: f64,
    reward_bound: f64,
) -> Result<InnerRounds> {
    let cap = hyper.max_inner_rounds.max(1);
    let needs_spectrum = hyper.t_state == InnerLoop::Auto || hyper.t_rho == InnerLoop::Auto;
    let lambda2 = if needs_spectrum {
        second_eigenvalue_magnitude(c)?
    } else {
        0.0
    };
    let state = match hyper.t_state {
        InnerLoop::Fixed(t) => t,
        InnerLoop::Auto => {
            let consts = BoundConstants::new(hyper)?;
            let n = steps.max(1);
            let b = theorem2_bounds(
                hyper,
                &Theorem2Inputs {
                    n,
                    j: n,
                    eps: hyper.eps,
                    m_kj: consts.b_m,
                    f_kj: consts.f_max,
                    omega0_max_norm,
                    reward_bound,
                },
            )?;
            let ln_target = b.ln_belief_tolerance() - (states as f64).ln();
            if ln_target.is_nan() {
                cap
            } else if ln_target >= 0.0 || lambda2 <= 0.0 {
                1
            } else {
                let t = (ln_target / lambda2.ln()).ceil();
                if t.is_finite() && t < cap as f64 {
                    (t as usize).max(1)
                } else {
                    cap
                }
            }
        }
    };
    let ratio = match hyper.t_rho {
        InnerLoop::Fixed(t) => t,
        InnerLoop::Auto => rounds_for_tolerance(lambda2, RATIO_CONSENSUS_TOL).clamp(1, cap),
    };
    Ok(InnerRounds { state, ratio })
}

fn check_agents(spec: &RunSpec, c: &CombinationMatrix) -> Result<()> {
    let k = spec.env.agent_count();
    if c.agent_count() != k {
        return Err(Error::Dimension {
            what: "combination matrix",
            expected: k,
            got: c.agent_count(),
        });
    }
    let mut problems = spec.hyper.validate();
    problems.extend(spec.behavioral.validate());
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

fn initial_critics(rng: &mut ChaCha8Rng, agents: usize, states: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..agents)
        .map(|_| {
            (0..states)
                .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
                .collect()
        })
        .collect()
}

fn max_norm(vs: &[Vec<f64>]) -> f64 {
    vs.iter().map(|v| norm(v)).fold(0.0, f64::max)
}

/// Per-agent learners plus the shared bookkeeping of one run.
struct Learners {
    agents: Vec<AgentState>,
    behavioral: BehavioralPolicy,
    estimator: RatioEstimator,
    checker: Option<RuntimeBounds>,
    peaks: BoundPeaks,
}

impl Learners {
    fn new(
        hyper: &HyperParams,
        behavioral: &BehavioralSpec,
        omega0: &[Vec<f64>],
        actions: usize,
        diagnostics: bool,
        reward_bound: f64,
    ) -> Result<Self> {
        let states = omega0.first().map(|w| w.len()).unwrap_or(0);
        let checker = if diagnostics {
            Some(RuntimeBounds::new(hyper, max_norm(omega0), reward_bound)?)
        } else {
            None
        };
        Ok(Self {
            agents: omega0.iter().map(|w| AgentState::new(w.clone(), actions)).collect(),
            behavioral: BehavioralPolicy::new(behavioral, actions, states),
            estimator: RatioEstimator::new(hyper.b_eps),
            checker,
            peaks: BoundPeaks::default(),
        })
    }

    /// Local log ratio of each agent's chosen action at its acting belief.
    fn log_ratios(&self, beliefs: &[Vec<f64>], actions: &[usize]) -> Result<Vec<f64>> {
        let floor = self.behavioral.floor();
        self.agents
            .iter()
            .zip(beliefs)
            .zip(actions)
            .map(|((agent, mu), &a)| {
                let log_pi = log_boltzmann_probs(mu, &agent.theta)[a];
                let b = self.behavioral.probs(mu)[a];
                local_log_ratio_from_log(log_pi, b, floor)
            })
            .collect()
    }

    fn policy_values(&self, beliefs: &[Vec<f64>], action_rewards: &[Vec<f64>]) -> Vec<f64> {
        self.agents
            .iter()
            .zip(beliefs)
            .zip(action_rewards)
            .map(|((agent, mu), rewards)| {
                boltzmann_probs(mu, &agent.theta)
                    .iter()
                    .zip(rewards)
                    .map(|(p, r)| p * r)
                    .sum()
            })
            .collect()
    }

    /// Local updates, bound checks and critic combination for one step.
    #[allow(clippy::too_many_arguments)]
    fn update(
        &mut self,
        step: usize,
        mus: &[Vec<f64>],
        etas: &[Vec<f64>],
        rhos: &[f64],
        rewards: &[f64],
        actions: &[usize],
        beta: f64,
        hyper: &HyperParams,
        c: &CombinationMatrix,
    ) -> Result<BoundFlags> {
        let mut flags = BoundFlags::default();
        if let Some(chk) = &self.checker {
            let omegas: Vec<Vec<f64>> = self.agents.iter().map(|a| a.omega.clone()).collect();
            flags = flags.union(chk.check_critics(&omegas));
            if chk.critic_bound() > 0.0 {
                self.peaks.critic_ratio = self.peaks.critic_ratio.max(max_norm(&omegas) / chk.critic_bound());
            }
        }
        for (k, agent) in self.agents.iter_mut().enumerate() {
            let d = etd_update(agent, &mus[k], &etas[k], rhos[k], rewards[k], actions[k], beta, hyper, step)
                .map_err(|e| match e {
                    Error::InvalidAction {
                        action,
                        action_count,
                        ..
                    } => Error::InvalidAction {
                        agent: k,
                        action,
                        action_count,
                    },
                    other => other,
                })?;
            if let Some(chk) = &self.checker {
                flags = flags.union(chk.check_update(&d));
                self.peaks.absorb(&BoundPeaks {
                    rho: d.rho,
                    f: d.f,
                    m: d.m.abs(),
                    e_norm: d.e_norm,
                    m_theta: d.m_theta.abs(),
                    delta_ratio: d.delta.abs() / chk.td_bound(),
                    psi_norm: d.psi_norm,
                    critic_ratio: 0.0,
                });
            }
        }
        let tildes: Vec<Vec<f64>> = self.agents.iter().map(|a| a.omega.clone()).collect();
        for (agent, w) in self.agents.iter_mut().zip(critic_combine(&tildes, c)?) {
            agent.omega = w;
        }
        if let Some(chk) = &mut self.checker {
            chk.advance();
        }
        Ok(flags)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        step: usize,
        state: usize,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        policy_value: Vec<f64>,
        rho: Vec<f64>,
        true_state_mass: Vec<f64>,
        flags: BoundFlags,
        beliefs: &[Vec<f64>],
        keep: bool,
    ) -> StepRecord {
        let omegas: Vec<Vec<f64>> = self.agents.iter().map(|a| a.omega.clone()).collect();
        StepRecord {
            step,
            state,
            actions,
            rewards,
            policy_value,
            rho,
            agreement: critic_disagreement(&omegas),
            true_state_mass,
            flags,
            omega: if keep { omegas } else { Vec::new() },
            theta: if keep {
                self.agents.iter().map(|a| a.theta.clone()).collect()
            } else {
                Vec::new()
            },
            beliefs: if keep { beliefs.to_vec() } else { Vec::new() },
        }
    }
}

/// Runs `rounds` adapt/combine rounds from uniform beliefs on fresh
/// observations of the current state.
fn social_estimate<E: DecPomdp>(env: &mut E, c: &CombinationMatrix, rounds: usize) -> Result<Vec<Vec<f64>>> {
    let k = env.agent_count();
    let mut net = BeliefNetwork::uniform(c, env.state_count());
    let mut obs = vec![0.0; k];
    for _ in 0..rounds {
        for (agent, o) in obs.iter_mut().enumerate() {
            *o = env.observe(agent);
        }
        net.round(env.observation_model(), &obs)?;
    }
    Ok(net.beliefs().into_iter().map(BeliefVector::into_inner).collect())
}

fn sample_actions(rng: &mut ChaCha8Rng, policy: &BehavioralPolicy, beliefs: &[Vec<f64>]) -> Result<Vec<usize>> {
    beliefs
        .iter()
        .map(|mu| {
            let probs = policy.probs(mu);
            let dist = WeightedIndex::new(&probs)
                .map_err(|e| Error::Config(format!("behavioral policy is not a distribution: {e}")))?;
            Ok(dist.sample(rng))
        })
        .collect()
}

/// The decentralized learner driven by networked belief estimates.
///
/// Returns the trace and the trajectory needed for an oracle replay.
pub fn run_maopac_decpomdp(spec: &RunSpec, c: &CombinationMatrix) -> Result<(RunTrace, Trajectory)> {
    check_agents(spec, c)?;
    let mut env = spec.env.build(spec.seed)?;
    run_with_env(spec, c, &mut env)
}

/// Same as [`run_maopac_decpomdp`] on a caller-supplied environment.
pub fn run_with_env<E: DecPomdp>(
    spec: &RunSpec,
    c: &CombinationMatrix,
    env: &mut E,
) -> Result<(RunTrace, Trajectory)> {
    check_agents(spec, c)?;
    let hyper = &spec.hyper;
    let (k, states, actions) = (env.agent_count(), env.state_count(), env.action_count());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(AGENT_STREAM);
    let omega0 = initial_critics(&mut rng, k, states, hyper.critic_init_scale);
    let reward_bound = env.reward_bound();
    let rounds = resolve_inner_rounds(hyper, c, states, spec.steps, max_norm(&omega0), reward_bound)?;
    if rounds.state == 0 {
        return Err(Error::Config("T_state must be at least 1".into()));
    }
    let mut learners = Learners::new(hyper, &spec.behavioral, &omega0, actions, spec.diagnostics, reward_bound)?;
    let behavioral_start = vec![learners.behavioral.table().clone(); k];

    let mut trace_steps = Vec::with_capacity(spec.steps);
    let mut traj_steps = Vec::with_capacity(spec.steps);
    let mut mus = social_estimate(env, c, rounds.state)?;
    for n in 0..spec.steps {
        let state = env.true_state();
        let true_state_mass: Vec<f64> = mus.iter().map(|m| m[state]).collect();
        let acts = sample_actions(&mut rng, &learners.behavioral, &mus)?;
        let action_rewards: Vec<Vec<f64>> = (0..k).map(|a| env.action_rewards(a)).collect();
        let policy_value = learners.policy_values(&mus, &action_rewards);
        let rewards = env.step(&acts)?;
        let next_state = env.true_state();
        let etas = social_estimate(env, c, rounds.state)?;

        let p = learners.log_ratios(&mus, &acts)?;
        let rhos = learners.estimator.estimate(&p, c, rounds.ratio)?;
        let beta = hyper.step_size(n);
        let flags = learners.update(n, &mus, &etas, &rhos, &rewards, &acts, beta, hyper, c)?;

        trace_steps.push(learners.record(
            n,
            state,
            acts.clone(),
            rewards.clone(),
            policy_value,
            rhos,
            true_state_mass,
            flags,
            &mus,
            spec.record_params,
        ));
        traj_steps.push(TrajectoryStep {
            state,
            next_state,
            actions: acts,
            rewards,
            beta,
            action_rewards,
        });
        mus = etas;
    }

    let trace = RunTrace {
        algorithm: Algorithm::Decpomdp,
        seed: spec.seed,
        agent_count: k,
        state_rounds: rounds.state,
        ratio_rounds: rounds.ratio,
        clamp_count: learners.estimator.clamp_count(),
        peaks: learners.peaks,
        steps: trace_steps,
        behavioral_start,
        behavioral_end: vec![learners.behavioral.table().clone(); k],
    };
    let trajectory = Trajectory {
        seed: spec.seed,
        agent_count: k,
        state_count: states,
        action_count: actions,
        omega0,
        steps: traj_steps,
    };
    Ok((trace, trajectory))
}

/// Replays `trajectory` with one-hot beliefs at the true states and the exact
/// joint ratio.
pub fn run_maopac_oracle(
    spec: &RunSpec,
    c: &CombinationMatrix,
    trajectory: &Trajectory,
) -> Result<RunTrace> {
    check_agents(spec, c)?;
    let (k, states, actions) = (
        spec.env.agent_count(),
        spec.env.state_count(),
        spec.env.action_count(),
    );
    if trajectory.seed != spec.seed
        || trajectory.agent_count != k
        || trajectory.state_count != states
        || trajectory.action_count != actions
    {
        return Err(Error::Pairing(format!(
            "trajectory (seed {}, K={}, S={}, A={}) does not match config (seed {}, K={k}, S={states}, A={actions})",
            trajectory.seed,
            trajectory.agent_count,
            trajectory.state_count,
            trajectory.action_count,
            spec.seed
        )));
    }
    if trajectory.steps.len() < spec.steps {
        return Err(Error::Pairing(format!(
            "trajectory has {} steps, config asks for {}",
            trajectory.steps.len(),
            spec.steps
        )));
    }
    let hyper = &spec.hyper;
    let reward_bound = trajectory
        .steps
        .iter()
        .flat_map(|s| s.action_rewards.iter().flatten())
        .fold(0.0_f64, |m, r| m.max(r.abs()));
    let omega0 = &trajectory.omega0;
    let mut learners = Learners::new(hyper, &spec.behavioral, omega0, actions, spec.diagnostics, reward_bound)?;
    let behavioral_start = vec![learners.behavioral.table().clone(); k];
    let one_hot = |s: usize| BeliefVector::point(states, s).into_inner();

    let mut trace_steps = Vec::with_capacity(spec.steps);
    for (n, ts) in trajectory.steps.iter().take(spec.steps).enumerate() {
        if ts.actions.len() != k || ts.rewards.len() != k || ts.state >= states || ts.next_state >= states {
            return Err(Error::Pairing(format!("malformed trajectory step {n}")));
        }
        let mus = vec![one_hot(ts.state); k];
        let etas = vec![one_hot(ts.next_state); k];
        let policy_value = learners.policy_values(&mus, &ts.action_rewards);
        let p = learners.log_ratios(&mus, &ts.actions)?;
        let joint: f64 = p.iter().sum();
        let rho = learners.estimator.clamp(joint.exp());
        let rhos = vec![rho; k];
        let flags = learners.update(n, &mus, &etas, &rhos, &ts.rewards, &ts.actions, ts.beta, hyper, c)?;
        trace_steps.push(learners.record(
            n,
            ts.state,
            ts.actions.clone(),
            ts.rewards.clone(),
            policy_value,
            rhos,
            vec![1.0; k],
            flags,
            &mus,
            spec.record_params,
        ));
    }

    Ok(RunTrace {
        algorithm: Algorithm::Oracle,
        seed: spec.seed,
        agent_count: k,
        state_rounds: 0,
        ratio_rounds: 0,
        clamp_count: learners.estimator.clamp_count(),
        peaks: learners.peaks,
        steps: trace_steps,
        behavioral_start,
        behavioral_end: vec![learners.behavioral.table().clone(); k],
    })
}
