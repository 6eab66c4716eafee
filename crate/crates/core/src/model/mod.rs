//! Network instance data model: the weighted dependence graph, per-node
//! model parameters, validation, random generation and the text formats.

mod format;
mod generate;

pub use format::{parse_instance, parse_svec, serialize_instance, write_svec, ParseError};
pub use generate::{generate_scale_free, GenerationError, ScaleFreeConfig};

use crate::sparse::CsrMatrix;

/// A directed infection edge: `src` infects `dst` at rate `beta` per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub beta: f64,
}

/// Immutable problem instance: graph plus all model parameters.
///
/// The matrix `B` follows the convention `b[i][j] = beta_{j,i}`, so row `i`
/// of `B` collects the rates of edges pointing *into* node `i` and `(B p)_i`
/// is the total infection pressure on `i`.
#[derive(Debug, Clone)]
pub struct NetworkInstance {
    n: usize,
    edges: Vec<Edge>,
    lambda: Vec<f64>,
    delta: Vec<f64>,
    kappa: Vec<f64>,
    alpha: Vec<f64>,
    cost: Vec<f64>,
    w: Vec<f64>,
    b: CsrMatrix,
    bt: CsrMatrix,
}

/// Structural errors raised while assembling an instance. Semantic
/// invariant violations are reported by [`NetworkInstance::validate`] instead.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BuildError {
    #[error("node count must be >= 1")]
    EmptyNetwork,
    #[error("parameter vector `{0}` has length {1}, expected {2}")]
    BadVectorLength(&'static str, usize, usize),
    #[error("edge ({0}, {1}) has an endpoint out of range")]
    EdgeOutOfRange(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
}

/// Outcome of instance validation: `ok` plus a human-readable violation list.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

impl NetworkInstance {
    /// Assembles an instance from parts. `alpha` is derived as `kappa ∘ delta`.
    ///
    /// Only structural well-formedness is enforced here; semantic invariants
    /// (positivity, reachability, no self-loops) are checked by `validate`.
    pub fn new(
        n: usize,
        mut edges: Vec<Edge>,
        lambda: Vec<f64>,
        delta: Vec<f64>,
        kappa: Vec<f64>,
        cost: Vec<f64>,
        w: Vec<f64>,
    ) -> Result<Self, BuildError> {
        if n == 0 {
            return Err(BuildError::EmptyNetwork);
        }
        for (name, v) in [
            ("lambda", &lambda),
            ("delta", &delta),
            ("kappa", &kappa),
            ("cost", &cost),
            ("wlin", &w),
        ] {
            if v.len() != n {
                return Err(BuildError::BadVectorLength(name, v.len(), n));
            }
        }
        edges.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)));
        for pair in edges.windows(2) {
            if pair[0].src == pair[1].src && pair[0].dst == pair[1].dst {
                return Err(BuildError::DuplicateEdge(pair[0].src, pair[0].dst));
            }
        }
        let mut triplets = Vec::with_capacity(edges.len());
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(BuildError::EdgeOutOfRange(e.src, e.dst));
            }
            // b_{dst,src} = beta_{src,dst}
            triplets.push((e.dst, e.src, e.beta));
        }
        let b = CsrMatrix::from_triplets(n, &triplets);
        let bt = b.transpose();
        let alpha = kappa.iter().zip(&delta).map(|(k, d)| k * d).collect();
        Ok(NetworkInstance { n, edges, lambda, delta, kappa, alpha, cost, w, b, bt })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// `alpha = kappa ∘ delta`, stored for direct use.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Linear investment-cost weights, `w(s) = Σ w_i s_i`.
    pub fn w_weights(&self) -> &[f64] {
        &self.w
    }

    /// The infection matrix `B` (`b_{i,j} = beta_{j,i}`).
    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    /// `Bᵀ`.
    pub fn bt(&self) -> &CsrMatrix {
        &self.bt
    }

    /// Total investment cost `w(s)`.
    pub fn invest_cost(&self, s: &[f64]) -> f64 {
        self.w.iter().zip(s).map(|(w, s)| w * s).sum()
    }

    /// True iff all lambda entries are zero.
    pub fn lambda_is_zero(&self) -> bool {
        self.lambda.iter().all(|&l| l == 0.0)
    }

    /// Copy with all primary attack rates set to zero.
    pub fn with_lambda_zero(&self) -> NetworkInstance {
        let mut inst = self.clone();
        inst.lambda = vec![0.0; self.n];
        inst
    }

    /// Copy with infection costs scaled by `factor`.
    pub fn with_cost_scaled(&self, factor: f64) -> NetworkInstance {
        let mut inst = self.clone();
        for c in &mut inst.cost {
            *c *= factor;
        }
        inst
    }

    /// Checks every instance invariant and reports the violations.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for e in &self.edges {
            if e.src == e.dst {
                violations.push(format!("self-loop at node {}", e.src));
            }
            if !(e.beta > 0.0) || !e.beta.is_finite() {
                violations.push(format!("edge ({}, {}) has non-positive rate {}", e.src, e.dst, e.beta));
            }
        }
        for i in 0..self.n {
            if !(self.lambda[i] >= 0.0) || !self.lambda[i].is_finite() {
                violations.push(format!("lambda[{i}] = {} must be >= 0", self.lambda[i]));
            }
            for (name, v) in [
                ("delta", &self.delta),
                ("kappa", &self.kappa),
                ("cost", &self.cost),
                ("wlin", &self.w),
            ] {
                if !(v[i] > 0.0) || !v[i].is_finite() {
                    violations.push(format!("{name}[{i}] = {} must be > 0", v[i]));
                }
            }
            if self.alpha[i] != self.kappa[i] * self.delta[i] {
                violations.push(format!("alpha[{i}] is not kappa[{i}]*delta[{i}]"));
            }
        }
        if !self.reachability_holds() {
            violations.push(
                "graph is not strongly connected and some zero-lambda node is unreachable \
                 from every positive-lambda node"
                    .to_string(),
            );
        }
        ValidationReport { ok: violations.is_empty(), violations }
    }

    /// Strong connectivity of the edge digraph, or the relaxed condition:
    /// every node with `lambda_i = 0` is reachable from some node with
    /// `lambda_j > 0`.
    fn reachability_holds(&self) -> bool {
        if self.is_strongly_connected() {
            return true;
        }
        let sources: Vec<usize> = (0..self.n).filter(|&i| self.lambda[i] > 0.0).collect();
        if sources.is_empty() {
            return false;
        }
        let reached = self.forward_reach(&sources);
        (0..self.n).all(|i| reached[i] || self.lambda[i] > 0.0)
    }

    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 1 {
            return true;
        }
        // full reach from node 0 along edges and along reversed edges
        let fwd = self.forward_reach(&[0]);
        if !fwd.iter().all(|&r| r) {
            return false;
        }
        let mut reached = vec![false; self.n];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(i) = stack.pop() {
            // b row i lists the predecessors of i (edges j -> i), so this
            // pass marks every node that can reach node 0
            for (j, _) in self.b.row(i) {
                if !reached[j] {
                    reached[j] = true;
                    stack.push(j);
                }
            }
        }
        reached.iter().all(|&r| r)
    }

    fn forward_reach(&self, sources: &[usize]) -> Vec<bool> {
        // edge src -> dst appears in row dst of b, i.e. in row src of bt
        let mut reached = vec![false; self.n];
        let mut stack: Vec<usize> = Vec::new();
        for &s in sources {
            if !reached[s] {
                reached[s] = true;
                stack.push(s);
            }
        }
        while let Some(i) = stack.pop() {
            for (j, _) in self.bt.row(i) {
                if !reached[j] {
                    reached[j] = true;
                    stack.push(j);
                }
            }
        }
        reached
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_cycle(beta: f64, lambda: (f64, f64)) -> NetworkInstance {
        NetworkInstance::new(
            2,
            vec![
                Edge { src: 0, dst: 1, beta },
                Edge { src: 1, dst: 0, beta },
            ],
            vec![lambda.0, lambda.1],
            vec![0.1, 0.1],
            vec![10.0, 10.0],
            vec![10.0, 10.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn validate_strongly_connected_cycle() {
        let inst = two_cycle(0.5, (0.1, 0.1));
        let report = inst.validate();
        assert!(report.ok, "{:?}", report.violations);
    }

    #[test]
    fn validate_relaxed_reachability() {
        // single edge 0 -> 1, lambda = (0.1, 0): node 1 reachable from node 0
        let inst = NetworkInstance::new(
            2,
            vec![Edge { src: 0, dst: 1, beta: 0.5 }],
            vec![0.1, 0.0],
            vec![0.1, 0.1],
            vec![10.0, 10.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(inst.validate().ok);
    }

    #[test]
    fn validate_unreachable_zero_lambda_node() {
        // single edge 0 -> 1, lambda = (0, 0.1): node 0 has lambda 0 and no
        // incoming path
        let inst = NetworkInstance::new(
            2,
            vec![Edge { src: 0, dst: 1, beta: 0.5 }],
            vec![0.0, 0.1],
            vec![0.1, 0.1],
            vec![10.0, 10.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let report = inst.validate();
        assert!(!report.ok);
        assert!(report.violations.iter().any(|v| v.contains("unreachable")));
    }

    #[test]
    fn b_convention_row_is_incoming() {
        // edge 0 -> 1 with rate 0.7: (B p)_1 should read p_0 * 0.7
        let inst = NetworkInstance::new(
            2,
            vec![Edge { src: 0, dst: 1, beta: 0.7 }],
            vec![0.1, 0.1],
            vec![0.1, 0.1],
            vec![10.0, 10.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(inst.b().apply(&[1.0, 0.0]), vec![0.0, 0.7]);
    }

    #[test]
    fn duplicate_edges_rejected() {
        let err = NetworkInstance::new(
            2,
            vec![
                Edge { src: 0, dst: 1, beta: 0.5 },
                Edge { src: 0, dst: 1, beta: 0.2 },
            ],
            vec![0.1; 2],
            vec![0.1; 2],
            vec![10.0; 2],
            vec![1.0; 2],
            vec![1.0; 2],
        )
        .unwrap_err();
        assert_eq!(err, BuildError::DuplicateEdge(0, 1));
    }
}
