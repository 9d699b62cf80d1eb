//! Communication graphs and doubly-stochastic combination matrices.
//!
//! Every diffusion step in the crate (belief combination, log-ratio
//! consensus, critic averaging) reads its weights from one shared
//! [`CombinationMatrix`]. The entry `c[l][k]` is the weight agent `k`
//! assigns to the value received from agent `l`, so agent `k` combines
//! along column `k`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance used for row/column stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Iteration cap for the eigenvalue solvers.
const EIGEN_MAX_ITER: usize = 10_000;

/// Undirected communication graph over `node_count` agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    self_loops: BTreeSet<usize>,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-edges `(k, k)` are
    /// ignored; every agent is allowed a self-loop weight.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) has an endpoint outside [0, {node_count})"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Self {
            node_count,
            edges: set,
            self_loops: (0..node_count).collect(),
        })
    }

    pub fn complete(node_count: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for a in 0..node_count {
            for b in a + 1..node_count {
                edges.push((a, b));
            }
        }
        Self::new(node_count, &edges)
    }

    /// Cycle `0 - 1 - ... - (K-1) - 0`. For K = 2 this is a single edge.
    pub fn ring(node_count: usize) -> Result<Self> {
        let edges: Vec<_> = (0..node_count)
            .map(|k| (k, (k + 1) % node_count))
            .collect();
        Self::new(node_count, &edges)
    }

    pub fn path(node_count: usize) -> Result<Self> {
        let edges: Vec<_> = (1..node_count).map(|k| (k - 1, k)).collect();
        Self::new(node_count, &edges)
    }

    /// Restricts which agents may keep a positive self weight.
    pub fn with_self_loops(mut self, nodes: &[usize]) -> Result<Self> {
        if let Some(&bad) = nodes.iter().find(|&&k| k >= self.node_count) {
            return Err(Error::Topology(format!("self-loop node {bad} out of range")));
        }
        self.self_loops = nodes.iter().copied().collect();
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn self_loops(&self) -> &BTreeSet<usize> {
        &self.self_loops
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == k {
                    Some(b)
                } else if b == k {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, k: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == k || b == k).count()
    }

    /// First pair `(0, t)` with no path between them, if any.
    pub fn unreachable_pair(&self) -> Option<(usize, usize)> {
        let adjacency: Vec<Vec<usize>> = (0..self.node_count).map(|k| self.neighbors(k)).collect();
        first_unreachable(self.node_count, |k| adjacency[k].clone())
    }

    pub fn is_connected(&self) -> bool {
        self.unreachable_pair().is_none()
    }
}

fn first_unreachable(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Option<(usize, usize)> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        for l in neighbors(k) {
            if !seen[l] {
                seen[l] = true;
                queue.push_back(l);
            }
        }
    }
    seen.iter().position(|&s| !s).map(|t| (0, t))
}

/// K×K nonnegative weight matrix used for every diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    weights: DMatrix<f64>,
}

impl CombinationMatrix {
    /// Wraps raw weights without validation; see [`validate_combination_matrix`].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Dimension {
                what: "combination matrix row",
                expected: k,
                got: bad.len(),
            });
        }
        Ok(Self {
            weights: DMatrix::from_fn(k, k, |i, j| rows[i][j]),
        })
    }

    pub fn agent_count(&self) -> usize {
        self.weights.nrows()
    }

    /// `c[l][k]`: weight agent `k` gives to agent `l`.
    #[inline]
    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.weights[(l, k)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.agent_count())
            .map(|i| self.weights.row(i).iter().copied().collect())
            .collect()
    }

    /// Convex combination `0.5 I + 0.5 C`: same support, slower mixing.
    pub fn lazy(&self) -> Self {
        let k = self.agent_count();
        Self {
            weights: DMatrix::identity(k, k) * 0.5 + &self.weights * 0.5,
        }
    }

    /// Applies one diffusion step to per-agent scalars:
    /// `out[k] = sum_l c[l][k] * values[l]`.
    pub fn diffuse(&self, values: &[f64]) -> Result<Vec<f64>> {
        let k = self.agent_count();
        if values.len() != k {
            return Err(Error::Dimension {
                what: "diffused values",
                expected: k,
                got: values.len(),
            });
        }
        Ok((0..k)
            .map(|j| (0..k).map(|l| self.weights[(l, j)] * values[l]).sum())
            .collect())
    }

    fn max_sum_deviation(&self) -> (f64, f64) {
        let k = self.agent_count();
        let mut row_dev: f64 = 0.0;
        let mut col_dev: f64 = 0.0;
        for i in 0..k {
            row_dev = row_dev.max((self.weights.row(i).sum() - 1.0).abs());
            col_dev = col_dev.max((self.weights.column(i).sum() - 1.0).abs());
        }
        (row_dev, col_dev)
    }
}

/// Metropolis–Hastings weights: `c[l][k] = 1 / (1 + max(deg l, deg k))` for
/// neighbors, with the remaining column mass on the diagonal.
pub fn build_metropolis_matrix(graph: &Graph) -> Result<CombinationMatrix> {
    if let Some((from, to)) = graph.unreachable_pair() {
        return Err(Error::Disconnected { from, to });
    }
    let k = graph.node_count();
    let mut w = DMatrix::zeros(k, k);
    for (a, b) in graph.edges() {
        let c = 1.0 / (1.0 + graph.degree(a).max(graph.degree(b)) as f64);
        w[(a, b)] = c;
        w[(b, a)] = c;
    }
    for j in 0..k {
        let off: f64 = (0..k).filter(|&l| l != j).map(|l| w[(l, j)]).sum();
        w[(j, j)] = 1.0 - off;
    }
    Ok(CombinationMatrix { weights: w })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension { matrix: usize, graph: usize },
    Negative { l: usize, k: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    ColumnSum { column: usize, sum: f64 },
    Support { l: usize, k: usize, value: f64 },
    Disconnected { from: usize, to: usize },
    NoSelfLoop,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { matrix, graph } => {
                write!(f, "matrix is {matrix}x{matrix} but graph has {graph} nodes")
            }
            Violation::Negative { l, k, value } => write!(f, "c[{l}][{k}] = {value} is negative"),
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            Violation::ColumnSum { column, sum } => write!(f, "column {column} sums to {sum}"),
            Violation::Support { l, k, value } => {
                write!(f, "c[{l}][{k}] = {value} but ({l}, {k}) is not an edge")
            }
            Violation::Disconnected { from, to } => write!(
                f,
                "not connected under the support of C: no positive-weight path from {from} to {to}"
            ),
            Violation::NoSelfLoop => write!(f, "no agent has a positive self weight"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks double stochasticity, nonnegativity, support, connectivity of the
/// support and existence of a self-loop. Never fails; violations are listed.
pub fn validate_combination_matrix(c: &CombinationMatrix, graph: &Graph) -> ValidationReport {
    let k = c.agent_count();
    let mut violations = Vec::new();
    if k != graph.node_count() {
        violations.push(Violation::Dimension {
            matrix: k,
            graph: graph.node_count(),
        });
        return ValidationReport { violations };
    }
    for l in 0..k {
        for j in 0..k {
            let v = c.weight(l, j);
            if v < 0.0 {
                violations.push(Violation::Negative { l, k: j, value: v });
            }
            let allowed = if l == j {
                graph.self_loops().contains(&l)
            } else {
                graph.has_edge(l, j)
            };
            if v > 0.0 && !allowed {
                violations.push(Violation::Support { l, k: j, value: v });
            }
        }
    }
    for i in 0..k {
        let row: f64 = c.matrix().row(i).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(Violation::RowSum { row: i, sum: row });
        }
        let col: f64 = c.matrix().column(i).sum();
        if (col - 1.0).abs() > STOCHASTIC_TOL {
            violations.push(Violation::ColumnSum { column: i, sum: col });
        }
    }
    let support = |a: usize| -> Vec<usize> {
        (0..k)
            .filter(|&b| b != a && (c.weight(a, b) > 0.0 || c.weight(b, a) > 0.0))
            .collect()
    };
    if let Some((from, to)) = first_unreachable(k, support) {
        violations.push(Violation::Disconnected { from, to });
    }
    if !(0..k).any(|i| c.weight(i, i) > 0.0) {
        violations.push(Violation::NoSelfLoop);
    }
    ValidationReport { violations }
}

/// Second-largest eigenvalue magnitude `|λ₂|` of `C` as given. Returns 0 for
/// a single agent.
pub fn second_eigenvalue_magnitude(c: &CombinationMatrix) -> Result<f64> {
    let (row_dev, col_dev) = c.max_sum_deviation();
    if row_dev > STOCHASTIC_TOL || col_dev > STOCHASTIC_TOL {
        return Err(Error::InvalidMatrix(format!(
            "not doubly stochastic (row deviation {row_dev:e}, column deviation {col_dev:e})"
        )));
    }
    if c.agent_count() == 1 {
        return Ok(0.0);
    }
    let m = c.matrix();
    let not_converged = || Error::InvalidMatrix("eigenvalue iteration did not converge".into());
    let mut mags: Vec<f64> = if (m - m.transpose()).amax() <= STOCHASTIC_TOL {
        SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
            .ok_or_else(not_converged)?
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .collect()
    } else {
        Schur::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER)
            .ok_or_else(not_converged)?
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect()
    };
    mags.sort_by(|a, b| b.total_cmp(a));
    Ok(mags[1].clamp(0.0, 1.0))
}

/// Number of diffusion rounds after which `|λ₂|^t <= tol`. One round suffices
/// when `|λ₂| = 0`.
pub fn rounds_for_tolerance(lambda2: f64, tol: f64) -> usize {
    if lambda2 <= 0.0 {
        return 1;
    }
    if lambda2 >= 1.0 {
        return usize::MAX;
    }
    ((tol.ln() / lambda2.ln()).ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn single_node_is_identity() {
        let c = build_metropolis_matrix(&Graph::new(1, &[]).unwrap()).unwrap();
        assert_eq!(c.to_rows(), vec![vec![1.0]]);
        assert_eq!(second_eigenvalue_magnitude(&c).unwrap(), 0.0);
    }

    #[test]
    fn two_node_complete() {
        let c = build_metropolis_matrix(&Graph::complete(2).unwrap()).unwrap();
        assert_eq!(c.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_close(second_eigenvalue_magnitude(&c).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn three_node_path() {
        let g = Graph::path(3).unwrap();
        let c = build_metropolis_matrix(&g).unwrap();
        for (l, k) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_close(c.weight(l, k), 1.0 / 3.0, 1e-15);
        }
        assert_eq!(c.weight(0, 2), 0.0);
        let (r, col) = c.max_sum_deviation();
        assert!(r < 1e-12 && col < 1e-12);
        assert!(validate_combination_matrix(&c, &g).is_valid());
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        match build_metropolis_matrix(&g) {
            Err(Error::Disconnected { from: 0, to }) => assert!(to == 2 || to == 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edge_out_of_range() {
        assert!(Graph::new(2, &[(0, 2)]).is_err());
        assert!(Graph::new(0, &[]).is_err());
    }

    #[test]
    fn identity_never_mixes() {
        let g = Graph::complete(2).unwrap();
        let c = CombinationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let report = validate_combination_matrix(&c, &g);
        assert_eq!(report.violations, vec![Violation::Disconnected { from: 0, to: 1 }]);
    }

    #[test]
    fn row_sum_violation_reported() {
        let g = Graph::complete(2).unwrap();
        let c = CombinationMatrix::from_rows(&[vec![0.6, 0.5], vec![0.4, 0.5]]).unwrap();
        let report = validate_combination_matrix(&c, &g);
        assert_eq!(report.violations.len(), 2);
        assert!(matches!(report.violations[0], Violation::RowSum { row: 0, sum } if (sum - 1.1).abs() < 1e-12));
        assert!(matches!(report.violations[1], Violation::RowSum { row: 1, .. }));
        assert!(second_eigenvalue_magnitude(&c).is_err());
    }

    #[test]
    fn support_and_self_loop_violations() {
        let g = Graph::path(3).unwrap().with_self_loops(&[]).unwrap();
        let c = build_metropolis_matrix(&Graph::complete(3).unwrap()).unwrap();
        let report = validate_combination_matrix(&c, &g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Support { l: 0, k: 2, .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Support { l: 1, k: 1, .. })));

        let swap = CombinationMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let report = validate_combination_matrix(&swap, &Graph::complete(2).unwrap());
        assert_eq!(report.violations, vec![Violation::NoSelfLoop]);
    }

    #[test]
    fn symmetric_two_by_two_eigenvalue() {
        let c = CombinationMatrix::from_rows(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        assert_close(second_eigenvalue_magnitude(&c).unwrap(), 0.5, 1e-12);
    }

    #[test]
    fn ring_of_five_eigenvalue() {
        // Circulant with weights 1/3 on self and both neighbors.
        let c = build_metropolis_matrix(&Graph::ring(5).unwrap()).unwrap();
        let expected = (1.0 + 2.0 * (2.0 * std::f64::consts::PI / 5.0).cos()) / 3.0;
        assert_close(second_eigenvalue_magnitude(&c).unwrap(), expected.abs(), 1e-12);
        let lazy = c.lazy();
        assert!(second_eigenvalue_magnitude(&lazy).unwrap() > expected);
    }

    #[test]
    fn rounds_for_tolerance_formula() {
        assert_eq!(rounds_for_tolerance(0.0, 1e-8), 1);
        assert_eq!(rounds_for_tolerance(0.5, 0.25), 2);
        assert_eq!(rounds_for_tolerance(0.5, 0.2), 3);
    }
}
