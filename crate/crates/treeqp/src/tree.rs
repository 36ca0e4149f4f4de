//! Problem instances: a positive-definite quadratic whose off-diagonal
//! support is a tree, plus linear and indicator weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("instance must have at least one node")]
    Empty,
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a node out of range")]
    EdgeOutOfRange(usize, usize),
    #[error("edge ({0}, {1}) has zero weight; the support graph must match the edge list")]
    ZeroEdgeWeight(usize, usize),
    #[error("edge set contains a cycle")]
    Cycle,
    #[error("support graph is disconnected ({0} edges for {1} nodes)")]
    Disconnected(usize, usize),
    #[error("diagonal entry {index} is {value}, must be positive")]
    NonpositiveDiagonal { index: usize, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("root {0} out of range")]
    RootOutOfRange(usize),
}

/// One off-diagonal coupling `Q[u,v] = Q[v,u] = q`, `u != v`, `q != 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TreeEdge {
    pub u: usize,
    pub v: usize,
    pub q: f64,
}

/// A tree-structured instance of the indicator-regularized quadratic program.
#[derive(Debug, Clone)]
pub struct TreeInstance {
    pub n: usize,
    pub diag: Vec<f64>,
    pub edges: Vec<TreeEdge>,
    pub c: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Topological labeling of a rooted tree.
///
/// Labels are a DFS post-order from the root with neighbors visited in
/// ascending id: every node's label is smaller than its child's (the child is
/// the unique neighbor toward the root) and the root carries the last label.
#[derive(Debug, Clone)]
pub struct RootedOrder {
    /// `order[label] = node id`; iterate this for the forward pass.
    pub order: Vec<usize>,
    /// `child[node]` is the neighbor toward the root, `None` at the root.
    pub child: Vec<Option<usize>>,
    /// Tree neighbors other than the child, ascending.
    pub parents: Vec<Vec<usize>>,
    pub root: usize,
}

impl RootedOrder {
    pub fn label_of(&self, node: usize) -> usize {
        // order is a permutation; invert lazily only in tests, linear here.
        self.order.iter().position(|&u| u == node).unwrap()
    }
}

/// Result of the nonpositive-lambda preprocessing.
#[derive(Debug, Clone)]
pub struct LambdaPreprocessed {
    /// Instance with flagged weights zeroed.
    pub instance: TreeInstance,
    /// `true` at nodes whose indicator survives (`lambda > 0`).
    pub has_indicator: Vec<bool>,
    /// Nodes fixed to `z = 1` because their weight was nonpositive.
    pub fixed_one: Vec<usize>,
    /// Sum of the removed weights; add to any objective computed on the
    /// preprocessed instance.
    pub constant: f64,
}

impl TreeInstance {
    pub fn new(
        n: usize,
        diag: Vec<f64>,
        edges: Vec<TreeEdge>,
        c: Vec<f64>,
        lambda: Vec<f64>,
    ) -> Result<Self, TreeError> {
        let inst = TreeInstance { n, diag, edges, c, lambda };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.n == 0 {
            return Err(TreeError::Empty);
        }
        for (what, len) in [
            ("diag", self.diag.len()),
            ("c", self.c.len()),
            ("lambda", self.lambda.len()),
        ] {
            if len != self.n {
                return Err(TreeError::LengthMismatch { what, got: len, expected: self.n });
            }
        }
        if self.diag.iter().any(|d| !d.is_finite()) {
            return Err(TreeError::NonFinite("diag"));
        }
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(TreeError::NonFinite("c"));
        }
        if self.lambda.iter().any(|x| !x.is_finite()) {
            return Err(TreeError::NonFinite("lambda"));
        }
        for (i, &d) in self.diag.iter().enumerate() {
            if d <= 0.0 {
                return Err(TreeError::NonpositiveDiagonal { index: i, value: d });
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut uf: Vec<usize> = (0..self.n).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        for e in &self.edges {
            if e.u >= self.n || e.v >= self.n {
                return Err(TreeError::EdgeOutOfRange(e.u, e.v));
            }
            if e.u == e.v {
                return Err(TreeError::SelfLoop(e.u));
            }
            if !e.q.is_finite() {
                return Err(TreeError::NonFinite("edges"));
            }
            if e.q == 0.0 {
                return Err(TreeError::ZeroEdgeWeight(e.u, e.v));
            }
            if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
                return Err(TreeError::DuplicateEdge(e.u, e.v));
            }
            let (ru, rv) = (find(&mut uf, e.u), find(&mut uf, e.v));
            if ru == rv {
                return Err(TreeError::Cycle);
            }
            uf[ru] = rv;
        }
        if self.edges.len() != self.n - 1 {
            return Err(TreeError::Disconnected(self.edges.len(), self.n));
        }
        Ok(())
    }

    /// Adjacency lists `(neighbor, q)` sorted by neighbor id.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.u].push((e.v, e.q));
            adj[e.v].push((e.u, e.q));
        }
        for a in &mut adj {
            a.sort_by_key(|&(v, _)| v);
        }
        adj
    }

    /// Every node has degree at most two.
    pub fn is_path(&self) -> bool {
        let mut deg = vec![0usize; self.n];
        for e in &self.edges {
            deg[e.u] += 1;
            deg[e.v] += 1;
        }
        deg.iter().all(|&d| d <= 2)
    }

    /// Topological labeling rooted at `root` (default: highest id). The
    /// instance must be valid.
    pub fn topological_order(&self, root: Option<usize>) -> Result<RootedOrder, TreeError> {
        let root = root.unwrap_or(self.n - 1);
        if root >= self.n {
            return Err(TreeError::RootOutOfRange(root));
        }
        let adj = self.adjacency();
        let mut order = Vec::with_capacity(self.n);
        let mut child = vec![None; self.n];
        let mut parents = vec![Vec::new(); self.n];
        // Iterative DFS post-order; recursion would overflow on deep paths.
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            let mut descended = false;
            while *next < adj[u].len() {
                let (v, _) = adj[u][*next];
                *next += 1;
                if Some(v) != child[u] {
                    child[v] = Some(u);
                    parents[u].push(v);
                    stack.push((v, 0));
                    descended = true;
                    break;
                }
            }
            if !descended {
                order.push(u);
                stack.pop();
            }
        }
        child[root] = None;
        Ok(RootedOrder { order, child, parents, root })
    }

    /// Rescales to a unit diagonal: `q <- q / sqrt(d_u d_v)`, `c <- c /
    /// sqrt(d)`. Returns the scale vector `sqrt(d)`; solutions map back as
    /// `x_original = x_normalized / scale`.
    pub fn normalize(&self) -> (TreeInstance, Vec<f64>) {
        let scale: Vec<f64> = self.diag.iter().map(|d| d.sqrt()).collect();
        let edges = self
            .edges
            .iter()
            .map(|e| TreeEdge { u: e.u, v: e.v, q: e.q / (scale[e.u] * scale[e.v]) })
            .collect();
        let c = self.c.iter().zip(&scale).map(|(c, s)| c / s).collect();
        let inst = TreeInstance {
            n: self.n,
            diag: vec![1.0; self.n],
            edges,
            c,
            lambda: self.lambda.clone(),
        };
        (inst, scale)
    }

    /// Any nonpositive indicator weight is paid unconditionally: the node's
    /// indicator is dropped and the weight moves into a constant.
    pub fn preprocess_lambda(&self) -> LambdaPreprocessed {
        let mut instance = self.clone();
        let mut has_indicator = vec![true; self.n];
        let mut fixed_one = Vec::new();
        let mut constant = 0.0;
        for i in 0..self.n {
            if self.lambda[i] <= 0.0 {
                has_indicator[i] = false;
                fixed_one.push(i);
                constant += self.lambda[i];
                instance.lambda[i] = 0.0;
            }
        }
        LambdaPreprocessed { instance, has_indicator, fixed_one, constant }
    }

    /// A positive lower bound on the smallest eigenvalue of `Q`, or `0` when
    /// `Q` is numerically not positive definite.
    ///
    /// Tries the Gershgorin bound first; when that is nonpositive, bisects on
    /// the shift using the fill-in-free factorization along the tree order
    /// (the sign count of the pivots of `Q - sigma I` is the inertia) down to
    /// relative width `tol`.
    pub fn lambda_min_lower_bound(&self, tol: f64) -> f64 {
        let mut row_off = vec![0.0; self.n];
        for e in &self.edges {
            row_off[e.u] += e.q.abs();
            row_off[e.v] += e.q.abs();
        }
        let gershgorin = (0..self.n)
            .map(|i| self.diag[i] - row_off[i])
            .fold(f64::INFINITY, f64::min);
        if gershgorin > 0.0 {
            return gershgorin;
        }
        let order = self.topological_order(None).expect("validated instance");
        let adj = self.adjacency();
        let positive_definite = |sigma: f64| -> bool {
            let mut pivot = vec![0.0f64; self.n];
            for &u in &order.order {
                let mut d = self.diag[u] - sigma;
                for &(v, q) in &adj[u] {
                    if Some(u) == order.child[v] {
                        d -= q * q / pivot[v];
                    }
                }
                if d <= 1e-12 * (1.0 + self.diag[u].abs()) {
                    return false;
                }
                pivot[u] = d;
            }
            true
        };
        if !positive_definite(0.0) {
            return 0.0;
        }
        let mut lo = 0.0f64;
        let mut hi = self.diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if positive_definite(hi) {
            return hi;
        }
        while hi - lo > tol * hi {
            let mid = 0.5 * (lo + hi);
            if positive_definite(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// The objective `1/2 x'Qx + c'x + lambda'z` evaluated directly.
    pub fn objective(&self, x: &[f64], z: &[u8]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.n {
            quad += 0.5 * self.diag[i] * x[i] * x[i] + self.c[i] * x[i];
        }
        for e in &self.edges {
            quad += e.q * x[e.u] * x[e.v];
        }
        quad + self
            .lambda
            .iter()
            .zip(z)
            .map(|(l, &zi)| if zi != 0 { *l } else { 0.0 })
            .sum::<f64>()
    }

    /// Feasibility of a solution pair for the complementarity constraint.
    pub fn is_feasible(&self, x: &[f64], z: &[u8]) -> bool {
        x.len() == self.n
            && z.len() == self.n
            && x.iter().zip(z).all(|(&xi, &zi)| zi == 1 || xi == 0.0)
    }

    pub fn norm_c(&self) -> f64 {
        self.c.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// On-disk instance schema. `diag` defaults to all ones; `generator` is
/// optional provenance written by the instance generators; any other unknown
/// field is rejected.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    pub edges: Vec<TreeEdge>,
    pub c: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<TreeInstance, TreeError> {
        let diag = self.diag.unwrap_or_else(|| vec![1.0; self.n]);
        TreeInstance::new(self.n, diag, self.edges, self.c, self.lambda)
    }

    pub fn from_instance(inst: &TreeInstance, generator: Option<String>) -> Self {
        InstanceFile {
            n: inst.n,
            diag: Some(inst.diag.clone()),
            edges: inst.edges.clone(),
            c: inst.c.clone(),
            lambda: inst.lambda.clone(),
            generator,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> TreeInstance {
        TreeInstance::new(
            3,
            vec![1.0, 1.0, 1.0],
            vec![TreeEdge { u: 0, v: 1, q: -0.5 }, TreeEdge { u: 1, v: 2, q: -0.5 }],
            vec![1.0, -1.0, 0.5],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn validate_accepts_path() {
        path3();
    }

    #[test]
    fn validate_detects_cycle() {
        let r = TreeInstance::new(
            3,
            vec![1.0; 3],
            vec![
                TreeEdge { u: 0, v: 1, q: 0.1 },
                TreeEdge { u: 1, v: 2, q: 0.1 },
                TreeEdge { u: 2, v: 0, q: 0.1 },
            ],
            vec![0.0; 3],
            vec![1.0; 3],
        );
        assert_eq!(r.unwrap_err(), TreeError::Cycle);
    }

    #[test]
    fn validate_detects_disconnected() {
        let r = TreeInstance::new(
            4,
            vec![1.0; 4],
            vec![TreeEdge { u: 0, v: 1, q: 0.1 }, TreeEdge { u: 2, v: 3, q: 0.1 }],
            vec![0.0; 4],
            vec![1.0; 4],
        );
        assert_eq!(r.unwrap_err(), TreeError::Disconnected(2, 4));
    }

    #[test]
    fn validate_rejects_bad_diagonal_and_dup_edges() {
        let r = TreeInstance::new(
            2,
            vec![1.0, 0.0],
            vec![TreeEdge { u: 0, v: 1, q: 0.1 }],
            vec![0.0; 2],
            vec![1.0; 2],
        );
        assert!(matches!(r, Err(TreeError::NonpositiveDiagonal { index: 1, .. })));
        let r = TreeInstance::new(
            3,
            vec![1.0; 3],
            vec![
                TreeEdge { u: 0, v: 1, q: 0.1 },
                TreeEdge { u: 1, v: 0, q: 0.2 },
            ],
            vec![0.0; 3],
            vec![1.0; 3],
        );
        assert!(matches!(r, Err(TreeError::DuplicateEdge(1, 0))));
    }

    #[test]
    fn order_on_path() {
        let inst = path3();
        let ord = inst.topological_order(Some(2)).unwrap();
        assert_eq!(ord.order, vec![0, 1, 2]);
        assert_eq!(ord.child[0], Some(1));
        assert_eq!(ord.child[1], Some(2));
        assert_eq!(ord.child[2], None);
    }

    #[test]
    fn order_on_star() {
        let inst = TreeInstance::new(
            4,
            vec![1.0; 4],
            vec![
                TreeEdge { u: 0, v: 3, q: 0.1 },
                TreeEdge { u: 1, v: 3, q: 0.1 },
                TreeEdge { u: 2, v: 3, q: 0.1 },
            ],
            vec![0.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        let ord = inst.topological_order(None).unwrap();
        assert_eq!(ord.root, 3);
        assert_eq!(ord.parents[3], vec![0, 1, 2]);
        assert_eq!(ord.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn order_reproduces_reference_tree_labeling() {
        // The 12-node example: labels are already topological, so ordering
        // must keep them. Nodes are given 0-based; the published labeling is
        // 1-based, hence child(3)=4 and parents(3)={1,2} here corresponds to
        // child(4)=5, par(4)={2,3} there.
        let edges = [
            (11, 7),
            (7, 4),
            (4, 3),
            (3, 1),
            (1, 0),
            (3, 2),
            (11, 10),
            (7, 6),
            (6, 5),
            (10, 8),
            (10, 9),
        ];
        let inst = TreeInstance::new(
            12,
            vec![1.0; 12],
            edges
                .iter()
                .map(|&(u, v)| TreeEdge { u, v, q: -0.1 })
                .collect(),
            vec![0.0; 12],
            vec![1.0; 12],
        )
        .unwrap();
        let ord = inst.topological_order(None).unwrap();
        assert_eq!(ord.order, (0..12).collect::<Vec<_>>());
        assert_eq!(ord.child[3], Some(4));
        assert_eq!(ord.parents[3], vec![1, 2]);
        // u < child(u) for every non-root node.
        for u in 0..12 {
            if let Some(cu) = ord.child[u] {
                assert!(ord.label_of(u) < ord.label_of(cu));
            }
        }
    }

    #[test]
    fn normalize_scales_and_is_idempotent() {
        let inst = TreeInstance::new(
            2,
            vec![4.0, 1.0],
            vec![TreeEdge { u: 0, v: 1, q: 2.0 }],
            vec![4.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let (norm, scale) = inst.normalize();
        assert_eq!(norm.diag, vec![1.0, 1.0]);
        assert_eq!(norm.edges[0].q, 1.0);
        assert_eq!(norm.c, vec![2.0, 1.0]);
        assert_eq!(scale, vec![2.0, 1.0]);
        let (again, scale2) = norm.normalize();
        assert_eq!(again.c, norm.c);
        assert_eq!(again.edges[0].q, norm.edges[0].q);
        assert_eq!(scale2, vec![1.0, 1.0]);
    }

    #[test]
    fn preprocess_flags_nonpositive_lambda() {
        let mut inst = path3();
        inst.lambda = vec![-1.0, 2.0, 0.0];
        let pre = inst.preprocess_lambda();
        assert_eq!(pre.fixed_one, vec![0, 2]);
        assert_eq!(pre.constant, -1.0);
        assert_eq!(pre.has_indicator, vec![false, true, false]);
        assert_eq!(pre.instance.lambda, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn gershgorin_bound_on_diagonally_dominant() {
        // diag = 1 + sum |q| gives a Gershgorin bound of exactly 1.
        let inst = TreeInstance::new(
            3,
            vec![1.5, 2.0, 1.5],
            vec![TreeEdge { u: 0, v: 1, q: -0.5 }, TreeEdge { u: 1, v: 2, q: -0.5 }],
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        assert_eq!(inst.lambda_min_lower_bound(1e-6), 1.0);
    }

    #[test]
    fn identity_bound_is_one() {
        let inst = TreeInstance::new(1, vec![1.0], vec![], vec![0.0], vec![1.0]).unwrap();
        assert_eq!(inst.lambda_min_lower_bound(1e-6), 1.0);
    }

    #[test]
    fn bisection_bound_on_weak_diagonal() {
        // Tridiagonal with diag 1, off -0.51: the middle row's Gershgorin
        // bound is negative, forcing the bisection path.
        // lambda_min = 1 - 1.02 cos(pi/4).
        let inst = TreeInstance::new(
            3,
            vec![1.0; 3],
            vec![TreeEdge { u: 0, v: 1, q: -0.51 }, TreeEdge { u: 1, v: 2, q: -0.51 }],
            vec![1.0; 3],
            vec![1.0; 3],
        )
        .unwrap();
        let truth = 1.0 - 2.0 * 0.51 * (std::f64::consts::PI / 4.0).cos();
        let bound = inst.lambda_min_lower_bound(1e-6);
        assert!(bound > 0.0);
        assert!(bound <= truth + 1e-9, "bound {bound} exceeds lambda_min {truth}");
        assert!(bound >= (1.0 - 1e-5) * truth, "bound {bound} too loose vs {truth}");
    }

    #[test]
    fn instance_file_round_trip_rejects_unknown_fields() {
        let text = r#"{"n": 2, "edges": [{"u":0,"v":1,"q":-0.5}], "c": [1.0, -1.0], "lambda": [1.0, 1.0]}"#;
        let file: InstanceFile = serde_json::from_str(text).unwrap();
        let inst = file.into_instance().unwrap();
        assert_eq!(inst.diag, vec![1.0, 1.0]);
        let bad = r#"{"n": 1, "edges": [], "c": [0.0], "lambda": [1.0], "mystery": 3}"#;
        assert!(serde_json::from_str::<InstanceFile>(bad).is_err());
    }
}
