//! Closed-form constants and ε-optimality bounds.
//!
//! Everything here is a pure function of the hyperparameters plus runtime
//! snapshots supplied by the caller. [`RuntimeBounds`] wraps the constants
//! into a per-step checker used by the learner when diagnostics are on.

use std::f64::consts::PI;

use serde::Serialize;

use crate::actor_critic::{EtdDiagnostics, HyperParams, PolicyTable};
use crate::error::{Error, Result};

/// Comparison slack for runtime checks.
pub const RUNTIME_TOL: f64 = 1e-9;

/// Hyperparameter-only constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    /// Bound on the emphatic weight `M`.
    pub b_m: f64,
    /// Bound on the eligibility trace norm.
    pub b_e: f64,
    /// Bound on the actor emphasis `M^θ`.
    pub b_m_theta: f64,
    /// Bound on the follow-on trace `F`.
    pub f_max: f64,
    /// Per-step critic growth factor.
    pub omega: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
}

impl BoundConstants {
    pub fn new(h: &HyperParams) -> Result<Self> {
        let (gamma, lambda, zeta, b) = (h.gamma, h.lambda, h.zeta, h.b_eps);
        if !(b > gamma) || !(gamma > 0.0) {
            return Err(Error::Bound(format!(
                "b_eps ({b}) must exceed gamma ({gamma}) > 0: behavioral-floor assumption"
            )));
        }
        if !(lambda * gamma < 1.0) || !(lambda > 0.0) {
            return Err(Error::Bound(format!(
                "lambda * gamma ({}) must lie in (0, 1)",
                lambda * gamma
            )));
        }
        if !(h.beta0 > 0.0) {
            return Err(Error::Bound(format!("beta0 ({}) must be positive", h.beta0)));
        }
        let ratio = gamma / b;
        let f_max = 1.0 / (1.0 - ratio);
        let b_m = lambda + (1.0 - lambda) * f_max;
        let b_e = b_m / (1.0 - lambda * gamma);
        let b_m_theta = (1.0 - (1.0 - zeta) * ratio) / (1.0 - ratio);
        let omega = 1.0 + h.beta0 * (1.0 + gamma) * b_e / b;
        if !(b * omega / gamma > 1.0) {
            return Err(Error::Bound(format!(
                "I2 undefined: b_eps * Omega / gamma = {} is not above 1",
                b * omega / gamma
            )));
        }
        if !(omega > gamma * lambda) {
            return Err(Error::Bound(format!(
                "I1 undefined: Omega ({omega}) must exceed gamma * lambda ({})",
                gamma * lambda
            )));
        }
        Ok(Self {
            b_m,
            b_e,
            b_m_theta,
            f_max,
            omega,
            i1: 1.0 / (omega / (gamma * lambda)).ln(),
            i2: 2.0 / (b * omega / gamma).ln(),
            i3: 2.0 / (b / gamma).ln(),
        })
    }
}

/// Step-indexed bounds at a single `n`.
///
/// Values grow like `Ω^n`, so each is also kept as a natural log; the plain
/// value may overflow to infinity while the log stays finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryBounds {
    pub n: usize,
    /// Closed-form critic bound; zero (vacuous) when the initial critic is zero.
    pub b_omega: f64,
    pub b_delta: f64,
    pub phi: f64,
    pub ln_b_omega: f64,
    pub ln_b_delta: f64,
    pub ln_phi: f64,
    /// Set when `omega0_max_norm == 0` and `b_omega` says nothing.
    pub vacuous: bool,
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Log of the closed-form critic bound `Σ_{i<n} Ω^{n−i} β_i R B_e ‖ω₀‖ / b_ε`.
pub fn ln_closed_form_critic_bound(
    h: &HyperParams,
    c: &BoundConstants,
    n: usize,
    omega0_max_norm: f64,
    reward_bound: f64,
) -> f64 {
    let ln_omega = c.omega.ln();
    let ln_sum = (0..n)
        .map(|i| (n - i) as f64 * ln_omega + h.step_size(i).ln())
        .fold(f64::NEG_INFINITY, ln_add);
    ln_sum + reward_bound.ln() + c.b_e.ln() + omega0_max_norm.ln() - h.b_eps.ln()
}

pub fn closed_form_critic_bound(
    h: &HyperParams,
    c: &BoundConstants,
    n: usize,
    omega0_max_norm: f64,
    reward_bound: f64,
) -> f64 {
    ln_closed_form_critic_bound(h, c, n, omega0_max_norm, reward_bound).exp()
}

/// `4 β₀ (1+γ) π² B_M^θ n³` (π the circle constant).
pub fn phi(h: &HyperParams, c: &BoundConstants, n: usize) -> f64 {
    4.0 * h.beta0 * (1.0 + h.gamma) * PI * PI * c.b_m_theta * (n as f64).powi(3)
}

pub fn trajectory_bounds(
    h: &HyperParams,
    n: usize,
    omega0_max_norm: f64,
    reward_bound: f64,
) -> Result<TrajectoryBounds> {
    if n == 0 {
        return Err(Error::Bound("trajectory bounds need n >= 1".into()));
    }
    if !(omega0_max_norm >= 0.0) {
        return Err(Error::Bound("initial critic norm must be nonnegative".into()));
    }
    let c = BoundConstants::new(h)?;
    let ln_b_omega = ln_closed_form_critic_bound(h, &c, n, omega0_max_norm, reward_bound);
    let ln_b_delta = ln_add(reward_bound.ln(), (1.0 + h.gamma).ln() + ln_b_omega);
    let phi = phi(h, &c, n);
    Ok(TrajectoryBounds {
        n,
        b_omega: ln_b_omega.exp(),
        b_delta: ln_b_delta.exp(),
        phi,
        ln_b_omega,
        ln_b_delta,
        ln_phi: phi.ln(),
        vacuous: omega0_max_norm == 0.0,
    })
}

/// Admissible belief and ratio errors at step `j` for ε-closeness at `n`,
/// stored as natural logs. The bounds shrink like `Ω^{−n}` and leave the
/// range of `f64` long before they reach zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Bounds {
    pub ln_b1: f64,
    pub ln_b2: f64,
    pub ln_d1: f64,
    pub ln_d2: f64,
    pub ln_d3: f64,
}

impl Theorem2Bounds {
    pub fn logs(&self) -> [f64; 5] {
        [self.ln_b1, self.ln_b2, self.ln_d1, self.ln_d2, self.ln_d3]
    }

    /// Plain values; may underflow to zero.
    pub fn values(&self) -> [f64; 5] {
        self.logs().map(f64::exp)
    }

    pub fn b1(&self) -> f64 {
        self.ln_b1.exp()
    }

    pub fn b2(&self) -> f64 {
        self.ln_b2.exp()
    }

    pub fn d1(&self) -> f64 {
        self.ln_d1.exp()
    }

    pub fn d2(&self) -> f64 {
        self.ln_d2.exp()
    }

    pub fn d3(&self) -> f64 {
        self.ln_d3.exp()
    }

    pub fn ln_belief_tolerance(&self) -> f64 {
        self.ln_b1.min(self.ln_b2)
    }

    pub fn ln_ratio_tolerance(&self) -> f64 {
        self.ln_d1.min(self.ln_d2).min(self.ln_d3)
    }
}

/// Inputs of [`theorem2_bounds`] that do not come from the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem2Inputs {
    pub n: usize,
    pub j: usize,
    pub eps: f64,
    /// Runtime emphatic weight `M_{k,j}`.
    pub m_kj: f64,
    /// Runtime follow-on trace `F_{k,j}`.
    pub f_kj: f64,
    pub omega0_max_norm: f64,
    pub reward_bound: f64,
}

pub fn theorem2_bounds(h: &HyperParams, inp: &Theorem2Inputs) -> Result<Theorem2Bounds> {
    let Theorem2Inputs {
        n,
        j,
        eps,
        m_kj,
        f_kj,
        omega0_max_norm,
        reward_bound,
    } = *inp;
    if j < 1 || j > n {
        return Err(Error::Bound(format!("need 1 <= j <= n, got j = {j}, n = {n}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Bound(format!("eps ({eps}) must be positive")));
    }
    if !m_kj.is_finite() || !f_kj.is_finite() {
        return Err(Error::Bound("runtime snapshots must be finite".into()));
    }
    let c = BoundConstants::new(h)?;
    let (gamma, lambda, b) = (h.gamma, h.lambda, h.b_eps);
    let at_n = trajectory_bounds(h, n, omega0_max_norm, reward_bound)?;
    let at_j = trajectory_bounds(h, j, omega0_max_norm, reward_bound)?;
    let (nf, jf) = (n as f64, j as f64);
    let ln = f64::ln;
    let ln_eps = ln(eps);
    let ln_omega = ln(c.omega);
    let ln_ratio = ln(b / gamma);
    let ln_pi2 = 2.0 * ln(PI);

    let ln_b1 = ln_eps + ln(b)
        - (ln(1.0 + gamma)
            + ln(c.b_e)
            + at_n.ln_phi
            + ln(h.step_size(j))
            + at_j.ln_b_omega
            + (nf - jf) * ln_omega);
    let ln_b2 = ln_eps
        - (ln(h.beta0)
            + ln(c.i1)
            + ln(2.0)
            + at_n.ln_phi
            + ln(m_kj.abs())
            + at_n.ln_b_delta
            + (nf - c.i1) * ln_omega
            + (c.i1 - jf) * ln(gamma * lambda));
    let ln_d1 = ln_eps + ln(b)
        - (ln(c.b_e) + at_n.ln_phi + ln(h.step_size(j)) + at_j.ln_b_delta + (nf - jf) * ln_omega);
    let ln_d2 = (c.i2 - jf) * ln_ratio + ln_eps
        - (2.0 * ln(c.i2)
            + ln(1.0 - lambda)
            + ln(h.beta0)
            + ln(2.0)
            + at_n.ln_phi
            + ln(f_kj)
            + at_n.ln_b_delta
            + (nf - c.i2) * ln_omega);
    let ln_d3 = (c.i3 - jf) * ln_ratio + ln(3.0) + ln_eps + ln(b)
        - (2.0 * ln(c.i3)
            + ln(h.zeta)
            + ln(8.0)
            + ln(h.step_size(n))
            + ln_pi2
            + at_n.ln_b_delta
            + ln(f_kj));
    Ok(Theorem2Bounds {
        ln_b1,
        ln_b2,
        ln_d1,
        ln_d2,
        ln_d3,
    })
}

/// Policy-parameter tolerance for Boltzmann target and behavioral tables.
///
/// `Θ = θ_a − θ̄_a + θ̄_max − θ_min` with entrywise max/min over actions;
/// returns `(ln(d_min + ρ_a) − μᵀΘ) / ‖Θ‖`.
pub fn corollary1_bound(
    target: &PolicyTable,
    behavioral: &PolicyTable,
    action: usize,
    belief: &[f64],
    rho_a: f64,
    d_min: f64,
) -> Result<f64> {
    if target.actions() != behavioral.actions() || target.states() != behavioral.states() {
        return Err(Error::Dimension {
            what: "behavioral table",
            expected: target.as_slice().len(),
            got: behavioral.as_slice().len(),
        });
    }
    if belief.len() != target.states() {
        return Err(Error::Dimension {
            what: "belief",
            expected: target.states(),
            got: belief.len(),
        });
    }
    if action >= target.actions() {
        return Err(Error::InvalidAction {
            agent: 0,
            action,
            action_count: target.actions(),
        });
    }
    if !(d_min + rho_a > 0.0) {
        return Err(Error::Bound(format!(
            "d_min + rho_a ({}) must be positive",
            d_min + rho_a
        )));
    }
    let s = target.states();
    let gap: Vec<f64> = (0..s)
        .map(|i| {
            let bar_max = (0..behavioral.actions())
                .map(|c| behavioral.block(c)[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let theta_min = (0..target.actions())
                .map(|c| target.block(c)[i])
                .fold(f64::INFINITY, f64::min);
            target.block(action)[i] - behavioral.block(action)[i] + bar_max - theta_min
        })
        .collect();
    let norm = gap.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegeneratePolicyGap);
    }
    let mu_gap: f64 = belief.iter().zip(&gap).map(|(m, g)| m * g).sum();
    Ok(((d_min + rho_a).ln() - mu_gap) / norm)
}

/// Critic-norm recursion `W_n = Ω W_{n−1} + β_{n−1} R B_e / b_ε`, `W_0 = ‖ω₀‖`.
pub fn recursive_critic_bound(
    h: &HyperParams,
    n: usize,
    omega0_max_norm: f64,
    reward_bound: f64,
) -> Result<f64> {
    let c = BoundConstants::new(h)?;
    let mut w = omega0_max_norm;
    for i in 0..n {
        w = critic_bound_step(h, &c, w, i, reward_bound);
    }
    Ok(w)
}

fn critic_bound_step(h: &HyperParams, c: &BoundConstants, w: f64, i: usize, reward_bound: f64) -> f64 {
    c.omega * w + h.step_size(i) * reward_bound * c.b_e / h.b_eps
}

/// Bit set of violated runtime bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct BoundFlags(pub u16);

impl BoundFlags {
    pub const RHO: u16 = 1;
    pub const FOLLOW_ON: u16 = 1 << 1;
    pub const EMPHASIS: u16 = 1 << 2;
    pub const TRACE: u16 = 1 << 3;
    pub const ACTOR_EMPHASIS: u16 = 1 << 4;
    pub const TD_ERROR: u16 = 1 << 5;
    pub const SCORE: u16 = 1 << 6;
    pub const CRITIC: u16 = 1 << 7;

    const NAMES: [(u16, &'static str); 8] = [
        (Self::RHO, "rho"),
        (Self::FOLLOW_ON, "F"),
        (Self::EMPHASIS, "M"),
        (Self::TRACE, "e"),
        (Self::ACTOR_EMPHASIS, "M_theta"),
        (Self::TD_ERROR, "delta"),
        (Self::SCORE, "psi"),
        (Self::CRITIC, "omega"),
    ];

    pub fn is_clean(self) -> bool {
        self.0 == 0
    }

    pub fn set(&mut self, bit: u16) {
        self.0 |= bit;
    }

    pub fn union(self, other: Self) -> Self {
        Self(self.0 | other.0)
    }

    pub fn names(self) -> Vec<&'static str> {
        Self::NAMES
            .iter()
            .filter(|(bit, _)| self.0 & bit != 0)
            .map(|&(_, n)| n)
            .collect()
    }
}

/// Per-step checker for the runtime bound suite.
#[derive(Debug, Clone)]
pub struct RuntimeBounds {
    hyper: HyperParams,
    constants: BoundConstants,
    reward_bound: f64,
    /// Current `W_n`.
    critic: f64,
    step: usize,
}

impl RuntimeBounds {
    pub fn new(h: &HyperParams, omega0_max_norm: f64, reward_bound: f64) -> Result<Self> {
        Ok(Self {
            hyper: h.clone(),
            constants: BoundConstants::new(h)?,
            reward_bound,
            critic: omega0_max_norm,
            step: 0,
        })
    }

    pub fn constants(&self) -> &BoundConstants {
        &self.constants
    }

    /// `W_n` for the current step.
    pub fn critic_bound(&self) -> f64 {
        self.critic
    }

    pub fn td_bound(&self) -> f64 {
        self.reward_bound + (1.0 + self.hyper.gamma) * self.critic
    }

    /// Checks critic norms at the start of the current step.
    pub fn check_critics(&self, omegas: &[Vec<f64>]) -> BoundFlags {
        let mut flags = BoundFlags::default();
        let limit = self.critic + RUNTIME_TOL;
        if omegas
            .iter()
            .any(|w| w.iter().map(|x| x * x).sum::<f64>().sqrt() > limit)
        {
            flags.set(BoundFlags::CRITIC);
        }
        flags
    }

    /// Checks one agent's update diagnostics against the current step's bounds.
    pub fn check_update(&self, d: &EtdDiagnostics) -> BoundFlags {
        let c = &self.constants;
        let tol = RUNTIME_TOL;
        let mut flags = BoundFlags::default();
        let mut check = |ok: bool, bit| {
            if !ok {
                flags.set(bit);
            }
        };
        check(d.rho <= 1.0 / self.hyper.b_eps + tol, BoundFlags::RHO);
        check(d.f <= c.f_max + tol, BoundFlags::FOLLOW_ON);
        check(d.m.abs() <= c.b_m + tol, BoundFlags::EMPHASIS);
        check(d.e_norm <= c.b_e + tol, BoundFlags::TRACE);
        check(d.m_theta.abs() <= c.b_m_theta + tol, BoundFlags::ACTOR_EMPHASIS);
        check(d.delta.abs() <= self.td_bound() + tol, BoundFlags::TD_ERROR);
        check(d.psi_norm <= 1.0 + tol, BoundFlags::SCORE);
        flags
    }

    /// Advances `W_n` to the next step.
    pub fn advance(&mut self) {
        self.critic = critic_bound_step(
            &self.hyper,
            &self.constants,
            self.critic,
            self.step,
            self.reward_bound,
        );
        self.step += 1;
    }
}
