//! Dec-POMDP environments.
//!
//! The main instance is the radar grid: `K` radars sit on fixed cells of an
//! `h × h` grid and try to hit a single target that runs away from the
//! most recent hits. The hidden global state is the target cell, the
//! actions are cells, and each radar observes a noisy Manhattan range to
//! the target.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar observation (noisy distance in grid-cell units).
pub type Observation = f64;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Per-agent observation model: likelihoods `L_k(ξ | s)`.
pub trait ObservationModel {
    fn state_count(&self) -> usize;
    fn agent_count(&self) -> usize;
    /// Natural log of `L_k(ξ | s)`. May be `-inf` for structural zeros.
    fn log_likelihood(&self, agent: usize, xi: Observation, state: usize) -> f64;

    fn likelihood(&self, agent: usize, xi: Observation, state: usize) -> f64 {
        self.log_likelihood(agent, xi, state).exp()
    }
}

/// The interface every learner drives.
pub trait DecPomdp {
    fn state_count(&self) -> usize;
    fn action_count(&self) -> usize;
    fn agent_count(&self) -> usize;
    /// Upper bound on `|r|`.
    fn reward_bound(&self) -> f64;
    fn true_state(&self) -> usize;
    /// Emits per-agent rewards for the current state, then transitions.
    fn step(&mut self, joint_action: &[usize]) -> Result<Vec<f64>>;
    fn observe(&mut self, agent: usize) -> Observation;
    fn observation_model(&self) -> &dyn ObservationModel;
    /// Reward `agent` would receive for each action in the current state.
    fn action_rewards(&self, agent: usize) -> Vec<f64>;

    /// Expected reward of `agent` in the current state under `action_probs`.
    fn expected_reward(&self, agent: usize, action_probs: &[f64]) -> f64 {
        self.action_rewards(agent)
            .iter()
            .zip(action_probs)
            .map(|(r, p)| r * p)
            .sum()
    }
}

#[inline]
fn cell_xy(cell: usize, side: usize) -> (i64, i64) {
    ((cell / side) as i64, (cell % side) as i64)
}

/// Manhattan distance between two row-major cells.
#[inline]
pub fn manhattan(a: usize, b: usize, side: usize) -> usize {
    let (ar, ac) = cell_xy(a, side);
    let (br, bc) = cell_xy(b, side);
    ((ar - br).abs() + (ac - bc).abs()) as usize
}

/// Gaussian range model: `ξ ~ N(dist(agent, target), σ²)`.
///
/// Positions need not be distinct here; only the environment itself insists
/// on one radar per cell.
#[derive(Debug, Clone)]
pub struct GaussianRangeModel {
    grid_side: usize,
    positions: Vec<usize>,
    sigma: f64,
    // distances[k * S + s]
    distances: Vec<f64>,
}

impl GaussianRangeModel {
    pub fn new(grid_side: usize, positions: Vec<usize>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "likelihood standard deviation must be positive, got {sigma}"
            )));
        }
        Self::unchecked(grid_side, positions, sigma)
    }

    fn unchecked(grid_side: usize, positions: Vec<usize>, sigma: f64) -> Result<Self> {
        let cells = grid_side * grid_side;
        if let Some(&bad) = positions.iter().find(|&&p| p >= cells) {
            return Err(Error::Config(format!(
                "agent position {bad} outside a {grid_side}x{grid_side} grid"
            )));
        }
        let distances = positions
            .iter()
            .flat_map(|&p| (0..cells).map(move |s| manhattan(p, s, grid_side) as f64))
            .collect();
        Ok(Self {
            grid_side,
            positions,
            sigma,
            distances,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn distance(&self, agent: usize, state: usize) -> f64 {
        self.distances[agent * self.grid_side * self.grid_side + state]
    }

    /// Draws `ξ = dist(agent, state) + N(0, σ²)`; exact when σ = 0.
    pub fn sample<R: Rng + ?Sized>(&self, agent: usize, state: usize, rng: &mut R) -> Observation {
        let d = self.distance(agent, state);
        if self.sigma == 0.0 {
            return d;
        }
        let noise: f64 = Normal::new(0.0, self.sigma)
            .expect("sigma validated positive")
            .sample(rng);
        d + noise
    }
}

impl ObservationModel for GaussianRangeModel {
    fn state_count(&self) -> usize {
        self.grid_side * self.grid_side
    }

    fn agent_count(&self) -> usize {
        self.positions.len()
    }

    fn log_likelihood(&self, agent: usize, xi: Observation, state: usize) -> f64 {
        let z = (xi - self.distance(agent, state)) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - LN_SQRT_2PI
    }
}

/// Static description of a radar grid instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_side: usize,
    pub agent_positions: Vec<usize>,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Standard deviation the agents' likelihoods assume; defaults to `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood_sigma: Option<f64>,
}

impl GridSpec {
    pub fn new(grid_side: usize, agent_positions: Vec<usize>, sigma: f64) -> Self {
        Self {
            grid_side,
            agent_positions,
            sigma,
            likelihood_sigma: None,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cells = self.cell_count();
        if self.grid_side < 2 {
            out.push(format!("grid_side ({}) must be at least 2", self.grid_side));
        }
        if self.agent_positions.is_empty() {
            out.push("agent_positions must list at least one agent".into());
        }
        if self.agent_positions.len() > cells {
            out.push(format!(
                "{} agents do not fit on a {}x{} grid",
                self.agent_positions.len(),
                self.grid_side,
                self.grid_side
            ));
        }
        for (k, &p) in self.agent_positions.iter().enumerate() {
            if p >= cells {
                out.push(format!("agent {k} position {p} is outside the grid"));
            }
            if self.agent_positions[..k].contains(&p) {
                out.push(format!("agent {k} shares cell {p} with another agent"));
            }
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            out.push(format!("sigma ({}) must be a finite nonnegative number", self.sigma));
        }
        let model_sigma = self.likelihood_sigma.unwrap_or(self.sigma);
        if !(model_sigma > 0.0) {
            out.push(format!(
                "likelihood sigma ({model_sigma}) must be positive; set likelihood_sigma when sigma = 0"
            ));
        }
        out
    }
}

/// Live state of the radar grid.
#[derive(Debug, Clone)]
pub struct GridEnv {
    spec: GridSpec,
    target_cell: usize,
    last_hits: Vec<usize>,
    noise: GaussianRangeModel,
    model: GaussianRangeModel,
    rng: ChaCha8Rng,
}

impl GridEnv {
    /// Places the target uniformly at random. Deterministic given `seed`.
    pub fn reset(spec: &GridSpec, seed: u64) -> Result<Self> {
        let problems = spec.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target_cell = rng.random_range(0..spec.cell_count());
        let noise =
            GaussianRangeModel::unchecked(spec.grid_side, spec.agent_positions.clone(), spec.sigma)?;
        let model = GaussianRangeModel::new(
            spec.grid_side,
            spec.agent_positions.clone(),
            spec.likelihood_sigma.unwrap_or(spec.sigma),
        )?;
        Ok(Self {
            spec: spec.clone(),
            target_cell,
            last_hits: spec.agent_positions.clone(),
            noise,
            model,
            rng,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn agent_positions(&self) -> &[usize] {
        &self.spec.agent_positions
    }

    pub fn last_hits(&self) -> &[usize] {
        &self.last_hits
    }

    /// Overrides the target cell (test scenarios).
    pub fn set_target(&mut self, cell: usize) -> Result<()> {
        if cell >= self.spec.cell_count() {
            return Err(Error::Config(format!("target cell {cell} outside the grid")));
        }
        self.target_cell = cell;
        Ok(())
    }

    /// Moore neighborhood of `cell` (including `cell`), clipped to the grid.
    pub fn moore_neighborhood(&self, cell: usize) -> Vec<usize> {
        let side = self.spec.grid_side as i64;
        let (r, c) = cell_xy(cell, self.spec.grid_side);
        let mut out = Vec::with_capacity(9);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (nr, nc) = (r + dr, c + dc);
                if (0..side).contains(&nr) && (0..side).contains(&nc) {
                    out.push((nr * side + nc) as usize);
                }
            }
        }
        out
    }

    /// Candidate cells maximizing the minimum Manhattan distance to `hits`.
    pub fn escape_candidates(&self, hits: &[usize]) -> Vec<usize> {
        let side = self.spec.grid_side;
        let scored: Vec<(usize, usize)> = self
            .moore_neighborhood(self.target_cell)
            .into_iter()
            .map(|cell| {
                let d = hits.iter().map(|&h| manhattan(cell, h, side)).min().unwrap_or(0);
                (cell, d)
            })
            .collect();
        let best = scored.iter().map(|&(_, d)| d).max().unwrap_or(0);
        scored
            .into_iter()
            .filter(|&(_, d)| d == best)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn likelihood(&self, agent: usize, xi: Observation, state: usize) -> f64 {
        self.model.likelihood(agent, xi, state)
    }
}

impl DecPomdp for GridEnv {
    fn state_count(&self) -> usize {
        self.spec.cell_count()
    }

    fn action_count(&self) -> usize {
        self.spec.cell_count()
    }

    fn agent_count(&self) -> usize {
        self.spec.agent_positions.len()
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }

    fn true_state(&self) -> usize {
        self.target_cell
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<Vec<f64>> {
        let k = self.agent_count();
        if joint_action.len() != k {
            return Err(Error::Dimension {
                what: "joint action",
                expected: k,
                got: joint_action.len(),
            });
        }
        let cells = self.spec.cell_count();
        if let Some((agent, &action)) = joint_action.iter().enumerate().find(|(_, &a)| a >= cells) {
            return Err(Error::InvalidAction {
                agent,
                action,
                action_count: cells,
            });
        }
        let rewards = joint_action
            .iter()
            .map(|&a| if a == self.target_cell { 1.0 } else { 0.0 })
            .collect();
        let candidates = self.escape_candidates(joint_action);
        self.target_cell = *candidates
            .choose(&mut self.rng)
            .expect("Moore neighborhood always contains the current cell");
        self.last_hits.copy_from_slice(joint_action);
        Ok(rewards)
    }

    fn observe(&mut self, agent: usize) -> Observation {
        self.noise.sample(agent, self.target_cell, &mut self.rng)
    }

    fn action_rewards(&self, _agent: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.cell_count()];
        out[self.target_cell] = 1.0;
        out
    }

    fn observation_model(&self) -> &dyn ObservationModel {
        &self.model
    }
}

/// One-state environment: every agent observes nothing informative and
/// receives a fixed reward per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleStateSpec {
    pub agent_count: usize,
    /// Reward for each action; the action count is its length.
    pub action_rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SingleStateEnv {
    spec: SingleStateSpec,
    model: FlatModel,
}

#[derive(Debug, Clone)]
struct FlatModel {
    agents: usize,
}

impl ObservationModel for FlatModel {
    fn state_count(&self) -> usize {
        1
    }
    fn agent_count(&self) -> usize {
        self.agents
    }
    fn log_likelihood(&self, _agent: usize, _xi: Observation, _state: usize) -> f64 {
        0.0
    }
}

impl SingleStateEnv {
    pub fn new(spec: &SingleStateSpec) -> Result<Self> {
        if spec.agent_count == 0 || spec.action_rewards.is_empty() {
            return Err(Error::Config(
                "single-state environment needs at least one agent and one action".into(),
            ));
        }
        if spec.action_rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("action rewards must be finite".into()));
        }
        Ok(Self {
            spec: spec.clone(),
            model: FlatModel {
                agents: spec.agent_count,
            },
        })
    }
}

impl DecPomdp for SingleStateEnv {
    fn state_count(&self) -> usize {
        1
    }
    fn action_count(&self) -> usize {
        self.spec.action_rewards.len()
    }
    fn agent_count(&self) -> usize {
        self.spec.agent_count
    }
    fn reward_bound(&self) -> f64 {
        self.spec
            .action_rewards
            .iter()
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }
    fn true_state(&self) -> usize {
        0
    }
    fn step(&mut self, joint_action: &[usize]) -> Result<Vec<f64>> {
        if joint_action.len() != self.spec.agent_count {
            return Err(Error::Dimension {
                what: "joint action",
                expected: self.spec.agent_count,
                got: joint_action.len(),
            });
        }
        joint_action
            .iter()
            .enumerate()
            .map(|(agent, &a)| {
                self.spec
                    .action_rewards
                    .get(a)
                    .copied()
                    .ok_or(Error::InvalidAction {
                        agent,
                        action: a,
                        action_count: self.spec.action_rewards.len(),
                    })
            })
            .collect()
    }
    fn observe(&mut self, _agent: usize) -> Observation {
        0.0
    }
    fn action_rewards(&self, _agent: usize) -> Vec<f64> {
        self.spec.action_rewards.clone()
    }
    fn observation_model(&self) -> &dyn ObservationModel {
        &self.model
    }
}

/// Environment description as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Grid(GridSpec),
    SingleState(SingleStateSpec),
}

impl EnvSpec {
    pub fn agent_count(&self) -> usize {
        match self {
            EnvSpec::Grid(g) => g.agent_positions.len(),
            EnvSpec::SingleState(s) => s.agent_count,
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            EnvSpec::Grid(g) => g.cell_count(),
            EnvSpec::SingleState(_) => 1,
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            EnvSpec::Grid(g) => g.cell_count(),
            EnvSpec::SingleState(s) => s.action_rewards.len(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            EnvSpec::Grid(g) => g.validate(),
            EnvSpec::SingleState(s) => match SingleStateEnv::new(s) {
                Ok(_) => Vec::new(),
                Err(e) => vec![e.to_string()],
            },
        }
    }

    pub fn build(&self, seed: u64) -> Result<Env> {
        Ok(match self {
            EnvSpec::Grid(g) => Env::Grid(GridEnv::reset(g, seed)?),
            EnvSpec::SingleState(s) => Env::SingleState(SingleStateEnv::new(s)?),
        })
    }
}

/// Enum dispatch over the concrete environments.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Env {
    Grid(GridEnv),
    SingleState(SingleStateEnv),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Env::Grid($e) => $body,
            Env::SingleState($e) => $body,
        }
    };
}

impl DecPomdp for Env {
    fn state_count(&self) -> usize {
        dispatch!(self, e => e.state_count())
    }
    fn action_count(&self) -> usize {
        dispatch!(self, e => e.action_count())
    }
    fn agent_count(&self) -> usize {
        dispatch!(self, e => e.agent_count())
    }
    fn reward_bound(&self) -> f64 {
        dispatch!(self, e => e.reward_bound())
    }
    fn true_state(&self) -> usize {
        dispatch!(self, e => e.true_state())
    }
    fn step(&mut self, joint_action: &[usize]) -> Result<Vec<f64>> {
        dispatch!(self, e => e.step(joint_action))
    }
    fn observe(&mut self, agent: usize) -> Observation {
        dispatch!(self, e => e.observe(agent))
    }
    fn observation_model(&self) -> &dyn ObservationModel {
        dispatch!(self, e => e.observation_model())
    }
    fn action_rewards(&self, agent: usize) -> Vec<f64> {
        dispatch!(self, e => e.action_rewards(agent))
    }
}
