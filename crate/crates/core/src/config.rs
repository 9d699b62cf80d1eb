//! JSON run configuration.
//!
//! One document describes a whole experiment: environment, communication
//! graph, learning hyperparameters, behavioral policy, algorithm, horizon
//! and seeds. [`load_config`] parses and validates it, reporting every
//! violation at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actor_critic::{BehavioralSpec, HyperParams, RunSpec};
use crate::environment::EnvSpec;
use crate::error::{Error, Result};
use crate::topology::{build_metropolis_matrix, CombinationMatrix, Graph};
use crate::zopo::ZopoSpec;

/// Communication graph: a named family or an explicit undirected edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologySpec {
    Complete,
    Ring,
    Path,
    Edges(Vec<(usize, usize)>),
}

impl TopologySpec {
    pub fn graph(&self, agents: usize) -> Result<Graph> {
        match self {
            TopologySpec::Complete => Graph::complete(agents),
            TopologySpec::Ring => Graph::ring(agents),
            TopologySpec::Path => Graph::path(agents),
            TopologySpec::Edges(edges) => Graph::new(agents, edges),
        }
    }

    /// Metropolis combination matrix over the graph.
    pub fn combination_matrix(&self, agents: usize) -> Result<CombinationMatrix> {
        build_metropolis_matrix(&self.graph(agents)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    /// Learner on estimated beliefs only.
    Decpomdp,
    /// Learner plus its full-observation replay, with gap metrics.
    OraclePair,
    /// Zeroth-order baseline at the same interaction budget.
    Zopo,
}

fn yes() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvSpec,
    pub topology: TopologySpec,
    pub hyper: HyperParams,
    #[serde(default)]
    pub behavioral: BehavioralSpec,
    pub algorithm: AlgorithmChoice,
    pub steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub diagnostics: bool,
    #[serde(default)]
    pub zopo: ZopoSpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Every problem with the config; empty when it is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = self.environment.validate();
        out.extend(self.hyper.validate());
        out.extend(self.behavioral.validate());
        if self.algorithm == AlgorithmChoice::Zopo {
            out.extend(self.zopo.validate());
        }
        if self.steps == 0 {
            out.push("steps must be at least 1".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.push("seeds must be distinct".into());
        }
        let agents = self.environment.agent_count();
        if agents > 0 {
            if let Err(e) = self.topology.graph(agents).and_then(|g| {
                if g.is_connected() {
                    Ok(())
                } else {
                    let (from, to) = g.unreachable_pair().unwrap_or((0, 0));
                    Err(Error::Disconnected { from, to })
                }
            }) {
                out.push(e.to_string());
            }
        }
        out
    }

    /// Learner settings for one seed.
    pub fn run_spec(&self, seed: u64, record_params: bool) -> RunSpec {
        RunSpec {
            env: self.environment.clone(),
            hyper: self.hyper.clone(),
            behavioral: self.behavioral,
            steps: self.steps,
            seed,
            diagnostics: self.diagnostics,
            record_params,
        }
    }

    pub fn combination_matrix(&self) -> Result<CombinationMatrix> {
        self.topology.combination_matrix(self.environment.agent_count())
    }
}

/// Parses `text` as a config, pointing at the offending line on failure.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let line = e.line();
        let context = text
            .lines()
            .nth(line.saturating_sub(1))
            .map(str::trim_end)
            .unwrap_or("");
        Error::Config(format!("{e}\n  {line:>4} | {context}"))
    })?;
    let problems = cfg.validate();
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Validation(problems))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
