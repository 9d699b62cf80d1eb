//! Adapt-then-combine social learning of the hidden global state.
//!
//! Each inner round, every agent Bayes-updates its belief with one fresh
//! private observation (adapt) and then takes a weighted geometric average
//! of its neighbors' intermediate beliefs (combine). Beliefs live in log
//! space between rounds so long runs never underflow; they are only
//! exponentiated when read out as a [`BeliefVector`].

use crate::environment::{Observation, ObservationModel};
use crate::error::{Error, Result};
use crate::topology::CombinationMatrix;

pub const SIMPLEX_TOL: f64 = 1e-10;

/// Probability distribution over the global states.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector(Vec<f64>);

impl BeliefVector {
    pub fn uniform(states: usize) -> Self {
        Self(vec![1.0 / states as f64; states])
    }

    /// All mass on `state`.
    pub fn point(states: usize, state: usize) -> Self {
        let mut v = vec![0.0; states];
        v[state] = 1.0;
        Self(v)
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DegenerateBelief("empty belief".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::DegenerateBelief(format!("entries must be nonnegative: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::DegenerateBelief(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mass(&self, state: usize) -> f64 {
        self.0[state]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn to_log(&self) -> Vec<f64> {
        self.0.iter().map(|p| p.ln()).collect()
    }

    fn from_log(log: &[f64]) -> Self {
        let lse = log_sum_exp(log);
        let mut v: Vec<f64> = log.iter().map(|l| (l - lse).exp()).collect();
        // exp may leave the sum a few ulps off one
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= sum);
        Self(v)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn normalize_log(log: &mut [f64], what: &str) -> Result<()> {
    let lse = log_sum_exp(log);
    if !lse.is_finite() {
        return Err(Error::DegenerateBelief(format!(
            "{what}: every state has zero probability"
        )));
    }
    log.iter_mut().for_each(|l| *l -= lse);
    Ok(())
}

/// Bayes step with explicit likelihood values `L(ξ | s)`.
pub fn adapt_with_likelihoods(prior: &BeliefVector, likelihoods: &[f64]) -> Result<BeliefVector> {
    if likelihoods.len() != prior.len() {
        return Err(Error::Dimension {
            what: "likelihood vector",
            expected: prior.len(),
            got: likelihoods.len(),
        });
    }
    let mut log: Vec<f64> = prior
        .to_log()
        .iter()
        .zip(likelihoods)
        .map(|(lp, l)| lp + l.ln())
        .collect();
    normalize_log(&mut log, "adapt")?;
    Ok(BeliefVector::from_log(&log))
}

/// Adapt step: `ψ(s) ∝ L_k(ξ | s) · prior(s)`.
pub fn adapt_belief(
    model: &dyn ObservationModel,
    agent: usize,
    xi: Observation,
    prior: &BeliefVector,
) -> Result<BeliefVector> {
    let mut log = prior.to_log();
    for (s, l) in log.iter_mut().enumerate() {
        *l += model.log_likelihood(agent, xi, s);
    }
    normalize_log(&mut log, "adapt")?;
    Ok(BeliefVector::from_log(&log))
}

/// Combine step: `out(s) ∝ Π_ℓ ψ_ℓ(s)^{c_ℓk}` over the neighborhood.
pub fn combine_beliefs(psis: &[&BeliefVector], weights: &[f64]) -> Result<BeliefVector> {
    if psis.len() != weights.len() {
        return Err(Error::Dimension {
            what: "combination weights",
            expected: psis.len(),
            got: weights.len(),
        });
    }
    let states = psis.first().map(|b| b.len()).unwrap_or(0);
    let logs: Vec<Vec<f64>> = psis.iter().map(|b| b.to_log()).collect();
    let mut out = vec![0.0; states];
    geometric_mix(&mut out, logs.iter().map(|v| v.as_slice()).zip(weights.iter().copied()));
    normalize_log(&mut out, "combine")?;
    Ok(BeliefVector::from_log(&out))
}

fn geometric_mix<'a>(out: &mut [f64], terms: impl Iterator<Item = (&'a [f64], f64)>) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (log, w) in terms {
        if w == 0.0 {
            continue;
        }
        for (o, l) in out.iter_mut().zip(log) {
            *o += w * l;
        }
    }
}

/// Network of per-agent log-beliefs advanced one adapt/combine round at a time.
#[derive(Debug, Clone)]
pub struct BeliefNetwork<'c> {
    c: &'c CombinationMatrix,
    log_beliefs: Vec<Vec<f64>>,
    scratch: Vec<Vec<f64>>,
    rounds: usize,
}

impl<'c> BeliefNetwork<'c> {
    pub fn new(c: &'c CombinationMatrix, initial: &[BeliefVector]) -> Result<Self> {
        if initial.len() != c.agent_count() {
            return Err(Error::Dimension {
                what: "initial beliefs",
                expected: c.agent_count(),
                got: initial.len(),
            });
        }
        let log_beliefs: Vec<Vec<f64>> = initial.iter().map(|b| b.to_log()).collect();
        Ok(Self {
            c,
            scratch: log_beliefs.clone(),
            log_beliefs,
            rounds: 0,
        })
    }

    pub fn uniform(c: &'c CombinationMatrix, states: usize) -> Self {
        let init = vec![BeliefVector::uniform(states); c.agent_count()];
        Self::new(c, &init).expect("dimensions match by construction")
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// One adapt + combine round using `observations[k]` for agent `k`.
    /// All adapts finish before any combine reads them.
    pub fn round(&mut self, model: &dyn ObservationModel, observations: &[Observation]) -> Result<()> {
        let k_count = self.c.agent_count();
        if observations.len() != k_count {
            return Err(Error::Dimension {
                what: "observations per round",
                expected: k_count,
                got: observations.len(),
            });
        }
        for (k, (psi, prior)) in self.scratch.iter_mut().zip(&self.log_beliefs).enumerate() {
            for (s, (p, lp)) in psi.iter_mut().zip(prior).enumerate() {
                *p = lp + model.log_likelihood(k, observations[k], s);
            }
            normalize_log(psi, "adapt")?;
        }
        for k in 0..k_count {
            let out = &mut self.log_beliefs[k];
            let terms = (0..k_count).map(|l| (self.scratch[l].as_slice(), self.c.weight(l, k)));
            geometric_mix(out, terms);
            normalize_log(out, "combine")?;
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn beliefs(&self) -> Vec<BeliefVector> {
        self.log_beliefs.iter().map(|l| BeliefVector::from_log(l)).collect()
    }

    /// Each agent's probability on `state`.
    pub fn mass_on(&self, state: usize) -> Vec<f64> {
        self.log_beliefs
            .iter()
            .map(|l| (l[state] - log_sum_exp(l)).exp())
            .collect()
    }
}

/// Runs `observations.len()` adapt/combine rounds from `initial` and returns
/// the final per-agent beliefs. `observations[t][k]` is agent `k`'s
/// observation in round `t`.
pub fn estimate_belief(
    model: &dyn ObservationModel,
    c: &CombinationMatrix,
    initial: &[BeliefVector],
    observations: &[Vec<Observation>],
) -> Result<Vec<BeliefVector>> {
    if observations.is_empty() {
        return Err(Error::Config("belief estimation needs at least one round".into()));
    }
    let mut net = BeliefNetwork::new(c, initial)?;
    for obs in observations {
        net.round(model, obs)?;
    }
    Ok(net.beliefs())
}

/// Convenience: draws a fresh observation per agent per round from `draw`
/// and runs `rounds` rounds from uniform beliefs.
pub fn estimate_from_uniform(
    model: &dyn ObservationModel,
    c: &CombinationMatrix,
    rounds: usize,
    mut draw: impl FnMut(usize) -> Observation,
) -> Result<Vec<BeliefVector>> {
    if rounds == 0 {
        return Err(Error::Config("belief estimation needs at least one round".into()));
    }
    let mut net = BeliefNetwork::uniform(c, model.state_count());
    let mut obs = vec![0.0; c.agent_count()];
    for _ in 0..rounds {
        obs.iter_mut().enumerate().for_each(|(k, o)| *o = draw(k));
        net.round(model, &obs)?;
    }
    Ok(net.beliefs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::GaussianRangeModel;
    use crate::topology::{build_metropolis_matrix, Graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uninformative_adapt_keeps_uniform() {
        let out = adapt_with_likelihoods(&BeliefVector::uniform(3), &[0.2, 0.2, 0.2]).unwrap();
        assert!(close(out.probs(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn adapt_hand_bayes() {
        let prior = BeliefVector::from_probs(vec![0.5, 0.5]).unwrap();
        let out = adapt_with_likelihoods(&prior, &[0.8, 0.2]).unwrap();
        assert!(close(out.probs(), &[0.8, 0.2], 1e-15));
    }

    #[test]
    fn point_mass_is_absorbing() {
        let model = GaussianRangeModel::new(2, vec![0], 1.0).unwrap();
        let out = adapt_belief(&model, 0, 1.7, &BeliefVector::point(4, 2)).unwrap();
        assert_eq!(out.probs(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn adapt_rejects_all_zero_numerator() {
        let prior = BeliefVector::point(2, 0);
        assert!(matches!(
            adapt_with_likelihoods(&prior, &[0.0, 1.0]),
            Err(Error::DegenerateBelief(_))
        ));
    }

    #[test]
    fn combine_identical_is_identity() {
        let psi = BeliefVector::from_probs(vec![0.1, 0.6, 0.3]).unwrap();
        let out = combine_beliefs(&[&psi, &psi, &psi], &[0.2, 0.5, 0.3]).unwrap();
        assert!(close(out.probs(), psi.probs(), 1e-15));
    }

    #[test]
    fn combine_hand_geometric_mean() {
        let a = BeliefVector::from_probs(vec![0.9, 0.1]).unwrap();
        let b = BeliefVector::from_probs(vec![0.5, 0.5]).unwrap();
        let out = combine_beliefs(&[&a, &b], &[0.5, 0.5]).unwrap();
        let (x, y) = (0.45_f64.sqrt(), 0.05_f64.sqrt());
        assert!(close(out.probs(), &[x / (x + y), y / (x + y)], 1e-15));
        assert!(close(out.probs(), &[0.75, 0.25], 1e-12));
    }

    #[test]
    fn combine_zero_factor_propagates() {
        let a = BeliefVector::from_probs(vec![0.0, 0.4, 0.6]).unwrap();
        let b = BeliefVector::from_probs(vec![0.5, 0.25, 0.25]).unwrap();
        let out = combine_beliefs(&[&a, &b], &[0.3, 0.7]).unwrap();
        assert_eq!(out.mass(0), 0.0);
        // zero weight neighbors do not contribute zeros
        let out = combine_beliefs(&[&a, &b], &[0.0, 1.0]).unwrap();
        assert!(close(out.probs(), b.probs(), 1e-15));
        let c = BeliefVector::from_probs(vec![0.5, 0.0, 0.5]).unwrap();
        let d = BeliefVector::from_probs(vec![0.0, 0.5, 0.5]).unwrap();
        let e = BeliefVector::from_probs(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(
            combine_beliefs(&[&c, &d, &e], &[0.3, 0.3, 0.4]),
            Err(Error::DegenerateBelief(_))
        ));
    }

    #[test]
    fn single_round_single_agent_equals_adapt() {
        let model = GaussianRangeModel::new(3, vec![4], 0.8).unwrap();
        let c = build_metropolis_matrix(&Graph::new(1, &[]).unwrap()).unwrap();
        let out = estimate_belief(&model, &c, &[BeliefVector::uniform(9)], &[vec![1.3]]).unwrap();
        let direct = adapt_belief(&model, 0, 1.3, &BeliefVector::uniform(9)).unwrap();
        assert!(close(out[0].probs(), direct.probs(), 1e-15));
    }

    #[test]
    fn noiseless_pair_identifies_target() {
        let c = build_metropolis_matrix(&Graph::complete(2).unwrap()).unwrap();
        let model = GaussianRangeModel::new(2, vec![0, 1], 1.0).unwrap();
        for truth in 0..4 {
            let obs: Vec<Vec<f64>> = (0..25)
                .map(|_| (0..2).map(|k| model.distance(k, truth)).collect())
                .collect();
            let out = estimate_belief(&model, &c, &vec![BeliefVector::uniform(4); 2], &obs).unwrap();
            for b in &out {
                assert!(b.mass(truth) >= 0.99, "truth {truth}: {:?}", b.probs());
            }
        }
    }

    #[test]
    fn long_runs_do_not_underflow() {
        let c = build_metropolis_matrix(&Graph::ring(3).unwrap()).unwrap();
        let model = GaussianRangeModel::new(4, vec![0, 3, 12], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = estimate_from_uniform(&model, &c, 5_000, |k| model.sample(k, 9, &mut rng)).unwrap();
        for b in out {
            assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL);
            assert!(b.mass(9) > 0.999_999);
        }
    }
}
