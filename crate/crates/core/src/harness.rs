//! Experiment orchestration and metric export.
//!
//! Seeds run in parallel. Each produces a network-level metrics table (one
//! row per step, agent column `all`) and a per-agent table; across seeds the
//! harness takes per-step medians. Files are written only after every seed
//! has finished, and anything already written is removed if writing fails.
//!
//! CSV layout, preceded by the version line `# maopac-metrics v1`:
//!
//! ```text
//! step,seed,agent,reward,cum_avg_reward,delta_omega_norm,delta_theta_norm,agreement,rho,flags
//! ```
//!
//! `reward` is the expected reward of the learned policy at the agent's
//! belief; `flags` is the bound-violation bitmask (see
//! [`crate::bounds::BoundFlags`]). Gap columns are zero unless the algorithm
//! is `oracle_pair`; agreement is zero for `zopo`, whose agents keep no
//! critic. All trends are qualitative reproductions with no reference scale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::actor_critic::{resolve_inner_rounds, run_maopac_decpomdp, run_maopac_oracle};
use crate::bounds::{theorem2_bounds, BoundConstants, Theorem2Inputs};
use crate::config::{AlgorithmChoice, RunConfig};
use crate::environment::DecPomdp;
use crate::error::{Error, Result};
use crate::topology::CombinationMatrix;
use crate::trace::{cumulative_average, mean, paired_gap_metrics, BoundPeaks, GapSeries, RunTrace};
use crate::zopo::run_zopo;

pub const CSV_VERSION: &str = "# maopac-metrics v1";
pub const CSV_COLUMNS: [&str; 10] = [
    "step",
    "seed",
    "agent",
    "reward",
    "cum_avg_reward",
    "delta_omega_norm",
    "delta_theta_norm",
    "agreement",
    "rho",
    "flags",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    /// Seed number, or `median` in the aggregate table.
    pub seed: String,
    /// Agent index, or `all` for network-level rows.
    pub agent: String,
    pub reward: f64,
    pub cum_avg_reward: f64,
    pub delta_omega_norm: f64,
    pub delta_theta_norm: f64,
    pub agreement: f64,
    pub rho: f64,
    pub flags: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

/// Shortest round-trip decimal; scientific notation outside a readable range.
fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 2));
        out.push_str(CSV_VERSION);
        out.push('\n');
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.seed,
                r.agent,
                fmt_num(r.reward),
                fmt_num(r.cum_avg_reward),
                fmt_num(r.delta_omega_norm),
                fmt_num(r.delta_theta_norm),
                fmt_num(r.agreement),
                fmt_num(r.rho),
                r.flags
            );
        }
        out
    }

    pub fn column(&self, pick: impl Fn(&MetricRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(pick).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| {
            [
                r.reward,
                r.cum_avg_reward,
                r.delta_omega_norm,
                r.delta_theta_norm,
                r.agreement,
                r.rho,
            ]
            .iter()
            .all(|x| x.is_finite())
        })
    }
}

/// Scalars describing one seed's run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_cum_reward: f64,
    /// Oracle replay's final cumulative reward, for paired runs.
    pub oracle_final_cum_reward: Option<f64>,
    pub flagged_rows: usize,
    pub clamp_count: u64,
    pub state_rounds: usize,
    pub ratio_rounds: usize,
    pub peaks: BoundPeaks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub summary: SeedSummary,
    pub network: MetricsTable,
    pub agents: MetricsTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seeds: Vec<SeedResult>,
    pub aggregate: MetricsTable,
    pub files: Vec<PathBuf>,
}

fn tables(trace: &RunTrace, gaps: Option<&GapSeries>) -> (MetricsTable, MetricsTable) {
    let seed = trace.seed.to_string();
    let k = trace.agent_count;
    let network_reward = trace.mean_policy_value();
    let network_cum = cumulative_average(&network_reward);
    let mut network = Vec::with_capacity(trace.len());
    let mut agents = Vec::with_capacity(trace.len() * k);
    let mut agent_totals = vec![0.0; k];
    for (i, s) in trace.steps.iter().enumerate() {
        let gap = |series: fn(&GapSeries) -> &Vec<f64>| gaps.and_then(|g| series(g).get(i).copied()).unwrap_or(0.0);
        network.push(MetricRow {
            step: s.step,
            seed: seed.clone(),
            agent: "all".into(),
            reward: network_reward[i],
            cum_avg_reward: network_cum[i],
            delta_omega_norm: gap(|g| &g.delta_omega),
            delta_theta_norm: gap(|g| &g.delta_theta),
            agreement: s.agreement,
            rho: mean(&s.rho),
            flags: s.flags.0,
        });
        for a in 0..k {
            agent_totals[a] += s.policy_value[a];
            let per_agent = |series: fn(&GapSeries) -> &Vec<Vec<f64>>| {
                gaps.and_then(|g| series(g).get(i).map(|row| row[a])).unwrap_or(0.0)
            };
            agents.push(MetricRow {
                step: s.step,
                seed: seed.clone(),
                agent: a.to_string(),
                reward: s.policy_value[a],
                cum_avg_reward: agent_totals[a] / (i + 1) as f64,
                delta_omega_norm: per_agent(|g| &g.agent_omega),
                delta_theta_norm: per_agent(|g| &g.agent_theta),
                agreement: s.agreement,
                rho: s.rho[a],
                flags: s.flags.0,
            });
        }
    }
    (MetricsTable { rows: network }, MetricsTable { rows: agents })
}

fn summary(trace: &RunTrace, oracle: Option<&RunTrace>) -> SeedSummary {
    SeedSummary {
        seed: trace.seed,
        final_cum_reward: trace.final_cumulative_reward(),
        oracle_final_cum_reward: oracle.map(RunTrace::final_cumulative_reward),
        flagged_rows: trace.flagged_steps(),
        clamp_count: trace.clamp_count,
        state_rounds: trace.state_rounds,
        ratio_rounds: trace.ratio_rounds,
        peaks: trace.peaks,
    }
}

/// Runs the configured algorithm for one seed.
pub fn run_seed(cfg: &RunConfig, c: &CombinationMatrix, seed: u64) -> Result<SeedResult> {
    match cfg.algorithm {
        AlgorithmChoice::Decpomdp => {
            let (trace, _) = run_maopac_decpomdp(&cfg.run_spec(seed, false), c)?;
            let (network, agents) = tables(&trace, None);
            Ok(SeedResult {
                summary: summary(&trace, None),
                network,
                agents,
            })
        }
        AlgorithmChoice::OraclePair => {
            let spec = cfg.run_spec(seed, true);
            let (trace, trajectory) = run_maopac_decpomdp(&spec, c)?;
            let oracle = run_maopac_oracle(&spec, c, &trajectory)?;
            let gaps = paired_gap_metrics(&trace, &oracle)?;
            let (network, agents) = tables(&trace, Some(&gaps));
            Ok(SeedResult {
                summary: summary(&trace, Some(&oracle)),
                network,
                agents,
            })
        }
        AlgorithmChoice::Zopo => {
            let states = cfg.environment.state_count();
            let reward_bound = cfg.environment.build(seed)?.reward_bound();
            let omega0_norm = cfg.hyper.critic_init_scale * (states as f64).sqrt();
            let rounds = resolve_inner_rounds(&cfg.hyper, c, states, cfg.steps, omega0_norm, reward_bound)?;
            let trace = run_zopo(&cfg.environment, &cfg.zopo, rounds.state, cfg.steps, seed)?;
            let (network, agents) = tables(&trace, None);
            Ok(SeedResult {
                summary: summary(&trace, None),
                network,
                agents,
            })
        }
    }
}

/// Runs every seed in parallel; results come back in config order.
pub fn run_seeds(cfg: &RunConfig) -> Result<Vec<SeedResult>> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let c = cfg.combination_matrix()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, &c, s)).collect()
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-step medians of the network rows across seeds; flags are OR-ed.
pub fn aggregate(results: &[SeedResult]) -> MetricsTable {
    let horizon = results.iter().map(|r| r.network.rows.len()).min().unwrap_or(0);
    let rows = (0..horizon)
        .map(|i| {
            let med = |pick: fn(&MetricRow) -> f64| {
                let mut xs: Vec<f64> = results.iter().map(|r| pick(&r.network.rows[i])).collect();
                median(&mut xs)
            };
            MetricRow {
                step: results[0].network.rows[i].step,
                seed: "median".into(),
                agent: "all".into(),
                reward: med(|r| r.reward),
                cum_avg_reward: med(|r| r.cum_avg_reward),
                delta_omega_norm: med(|r| r.delta_omega_norm),
                delta_theta_norm: med(|r| r.delta_theta_norm),
                agreement: med(|r| r.agreement),
                rho: med(|r| r.rho),
                flags: results.iter().fold(0, |acc, r| acc | r.network.rows[i].flags),
            }
        })
        .collect();
    MetricsTable { rows }
}

struct Panel {
    file: &'static str,
    title: &'static str,
    pick: fn(&MetricRow) -> f64,
}

const PANELS: [Panel; 4] = [
    Panel {
        file: "critic_gap.svg",
        title: "critic gap to oracle",
        pick: |r| r.delta_omega_norm,
    },
    Panel {
        file: "actor_gap.svg",
        title: "actor gap to oracle",
        pick: |r| r.delta_theta_norm,
    },
    Panel {
        file: "critic_agreement.svg",
        title: "critic agreement",
        pick: |r| r.agreement,
    },
    Panel {
        file: "cumulative_reward.svg",
        title: "cumulative average reward",
        pick: |r| r.cum_avg_reward,
    },
];

fn panels_for(algorithm: AlgorithmChoice) -> Vec<&'static Panel> {
    PANELS
        .iter()
        .filter(|p| match algorithm {
            AlgorithmChoice::OraclePair => true,
            AlgorithmChoice::Decpomdp => !p.file.ends_with("gap.svg"),
            AlgorithmChoice::Zopo => p.file == "cumulative_reward.svg",
        })
        .collect()
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Io(format!("plot rendering failed: {e}"))
}

/// SVG line plot: one faint line per seed and the median in bold.
pub fn render_panel(title: &str, seeds: &[Vec<f64>], median: &[f64]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_error)?;
        let all = seeds.iter().flatten().chain(median).copied().filter(|x| x.is_finite());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi + 0.05 * (hi - lo))
        } else {
            let base = if lo.is_finite() { lo } else { 0.0 };
            (base - 1.0, base + 1.0)
        };
        let len = median.len().max(2) as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(0.0..len, lo..hi)
            .map_err(plot_error)?;
        chart
            .configure_mesh()
            .x_desc("step")
            .draw()
            .map_err(plot_error)?;
        for series in seeds {
            chart
                .draw_series(LineSeries::new(
                    series.iter().enumerate().map(|(i, &y)| (i as f64, y)),
                    BLUE.mix(0.25),
                ))
                .map_err(plot_error)?;
        }
        chart
            .draw_series(LineSeries::new(
                median.iter().enumerate().map(|(i, &y)| (i as f64, y)),
                BLACK.stroke_width(2),
            ))
            .map_err(plot_error)?;
        root.present().map_err(plot_error)?;
    }
    Ok(svg)
}

fn write_all(dir: &Path, results: &[SeedResult], agg: &MetricsTable, cfg: &RunConfig, plots: bool, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut put = |name: String, body: &str| -> Result<()> {
        let path = dir.join(name);
        written.push(path.clone());
        fs::write(&path, body)?;
        Ok(())
    };
    for r in results {
        put(format!("seed_{}.csv", r.summary.seed), &r.network.to_csv())?;
        put(format!("seed_{}_agents.csv", r.summary.seed), &r.agents.to_csv())?;
    }
    put("aggregate.csv".into(), &agg.to_csv())?;
    if plots {
        for panel in panels_for(cfg.algorithm) {
            let seeds: Vec<Vec<f64>> = results.iter().map(|r| r.network.column(panel.pick)).collect();
            let svg = render_panel(panel.title, &seeds, &agg.column(panel.pick))?;
            put(panel.file.into(), &svg)?;
        }
    }
    Ok(())
}

/// Runs the experiment and writes its files into `out` (default: the
/// config's `output_dir`).
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>, plots: bool) -> Result<ExperimentReport> {
    let results = run_seeds(cfg)?;
    let agg = aggregate(&results);
    let dir = out.unwrap_or(&cfg.output_dir);
    let mut written = Vec::new();
    if let Err(e) = write_all(dir, &results, &agg, cfg, plots, &mut written) {
        for path in &written {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(ExperimentReport {
        seeds: results,
        aggregate: agg,
        files: written,
    })
}

/// Plain-text table of the bound constants and the five finite-time
/// bounds. `m` and `f` default to their worst-case values.
pub fn bounds_report(cfg: &RunConfig, n: usize, j: usize, eps: f64, m: Option<f64>, f: Option<f64>) -> Result<String> {
    let h = &cfg.hyper;
    let consts = BoundConstants::new(h)?;
    let states = cfg.environment.state_count();
    let omega0_max_norm = h.critic_init_scale * (states as f64).sqrt();
    let reward_bound = cfg.environment.build(cfg.seeds.first().copied().unwrap_or(0))?.reward_bound();
    let m_kj = m.unwrap_or(consts.b_m);
    let f_kj = f.unwrap_or(consts.f_max);
    let b = theorem2_bounds(
        h,
        &Theorem2Inputs {
            n,
            j,
            eps,
            m_kj,
            f_kj,
            omega0_max_norm,
            reward_bound,
        },
    )?;
    let mut out = String::new();
    let _ = writeln!(out, "constants");
    for (name, v) in [
        ("B_M", consts.b_m),
        ("B_e", consts.b_e),
        ("B_M_theta", consts.b_m_theta),
        ("F_max", consts.f_max),
        ("Omega", consts.omega),
        ("I1", consts.i1),
        ("I2", consts.i2),
        ("I3", consts.i3),
    ] {
        let _ = writeln!(out, "  {name:<10} {}", fmt_num(v));
    }
    let _ = writeln!(out, "inputs");
    let _ = writeln!(out, "  n={n} j={j} eps={eps} M={} F={} |w0|={} R={}", fmt_num(m_kj), fmt_num(f_kj), fmt_num(omega0_max_norm), fmt_num(reward_bound));
    let _ = writeln!(out, "finite-time bounds      value                 ln(value)");
    for (name, ln) in ["B1 (belief)", "B2 (belief)", "D1 (ratio)", "D2 (ratio)", "D3 (ratio)"].iter().zip(b.logs()) {
        let _ = writeln!(out, "  {name:<20} {:<21} {}", fmt_num(ln.exp()), fmt_num(ln));
    }
    Ok(out)
}
