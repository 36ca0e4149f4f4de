//! The parametric tree solver.
//!
//! Forward pass, in topological order: each node's subtree cost as a function
//! of the node's own value is the node quadratic minus the sum of the
//! parents' conjugates composed with the edge weights,
//!
//! ```text
//!     f_u(t) = 1/2 Q[u,u] t^2 + c_u t + lambda_u [t != 0]
//!              - sum over parents v of f_v*(-Q[u,v] t)
//! ```
//!
//! and its conjugate is produced by the breakpoint sweep before moving on.
//! At the root, minimizing `f_root` yields the optimal value; a backward
//! sweep recovers each coordinate as the argmin of its stored cost shifted by
//! the already-fixed child value.
//!
//! When clipping is enabled, breakpoints outside the certified solution box
//! are discarded as they appear, which is what keeps very deep instances
//! numerically stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pwq::{sum_scaled, Conjugate, IndicatorCost, PiecewiseQuadratic, PwqError, Quadratic};
use crate::tree::{RootedOrder, TreeError, TreeInstance};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("instance error: {0}")]
    Instance(#[from] TreeError),
    #[error("not positive definite: node {node} produced a nonconvex piece")]
    NotPositiveDefinite { node: usize },
    #[error("piecewise algebra failed at node {node}: {source}")]
    Pwq { node: usize, source: PwqError },
    #[error("instance is not a path")]
    NotAPath,
}

/// How the clipping radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ClipMode {
    /// Clip at `||c||_2 / lower_bound(lambda_min)` when the bound is
    /// positive; otherwise run unclipped.
    #[default]
    Auto,
    Off,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub clip: ClipMode,
    /// Rescale to a unit diagonal before solving. The answer is identical;
    /// this is occasionally useful diagnostically.
    pub normalize: bool,
    /// Root override; default is the highest node id.
    pub root: Option<usize>,
    /// Relative tolerance of the eigenvalue-bound bisection.
    pub eigen_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { clip: ClipMode::Auto, normalize: false, root: None, eigen_tol: 0.05 }
    }
}

/// Cached per-node functions from the forward pass.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub cost: IndicatorCost,
    pub conj: Conjugate,
    pub pieces: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveStats {
    pub pieces_mean: f64,
    pub pieces_max: usize,
    pub time_ms: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Solution {
    pub objective: f64,
    pub x: Vec<f64>,
    pub z: Vec<u8>,
    pub stats: SolveStats,
}

/// Runs the forward conjugation pass; `states[u]` is the cost/conjugate pair
/// of node `u`. `has_indicator` comes from the lambda preprocessing.
pub fn forward_pass(
    inst: &TreeInstance,
    order: &RootedOrder,
    has_indicator: &[bool],
    clip_m: Option<f64>,
) -> Result<Vec<NodeState>, SolveError> {
    let adj = inst.adjacency();
    let mut states: Vec<Option<NodeState>> = vec![None; inst.n];
    for &u in &order.order {
        let node_quad = Quadratic::new(0.5 * inst.diag[u], inst.c[u], 0.0);
        let base = if order.parents[u].is_empty() {
            PiecewiseQuadratic::single(node_quad)
        } else {
            let parts: Vec<(&Conjugate, f64)> = order.parents[u]
                .iter()
                .map(|&v| {
                    let q = adj[u].iter().find(|&&(w, _)| w == v).unwrap().1;
                    (&states[v].as_ref().unwrap().conj, -q)
                })
                .collect();
            let g = sum_scaled(&parts).map_err(|source| SolveError::Pwq { node: u, source })?;
            g.negate().add_quadratic(&node_quad).merged_identical()
        };
        if base.pieces().iter().any(|p| p.a <= 0.0) {
            return Err(SolveError::NotPositiveDefinite { node: u });
        }
        let cost = if has_indicator[u] {
            IndicatorCost::with_indicator(base, inst.lambda[u])
        } else {
            IndicatorCost::without_indicator(base)
        };
        let conj = cost
            .conjugate()
            .map_err(|source| SolveError::Pwq { node: u, source })?;
        // Piece statistics reflect the merged cost the sweep worked on,
        // before clipping trims the tails for storage.
        let pieces = cost.base.piece_count();
        let (cost, conj) = match clip_m {
            None => (cost, conj),
            Some(m) => {
                let clipped_base = cost.base.clip(m);
                // The conjugate is only ever read at slopes -Q[child,u] * t
                // with |t| <= m, so its useful range is scaled by the edge
                // weight toward the root.
                let conj = match order.child[u] {
                    Some(cu) => {
                        let q = adj[u].iter().find(|&&(w, _)| w == cu).unwrap().1;
                        conj.clip(q.abs() * m)
                    }
                    None => conj,
                };
                (IndicatorCost { base: clipped_base, ..cost }, conj)
            }
        };
        states[u] = Some(NodeState { cost, conj, pieces });
    }
    Ok(states.into_iter().map(|s| s.unwrap()).collect())
}

/// Solves the instance exactly.
pub fn solve_tree(inst: &TreeInstance, opts: &SolveOptions) -> Result<Solution, SolveError> {
    inst.validate()?;
    let started = std::time::Instant::now();
    let pre = inst.preprocess_lambda();
    let (work, scale) = if opts.normalize {
        let (w, s) = pre.instance.normalize();
        (w, Some(s))
    } else {
        (pre.instance.clone(), None)
    };
    let order = work.topological_order(opts.root)?;
    let clip_m = match opts.clip {
        ClipMode::Off => None,
        ClipMode::Fixed(m) => Some(m),
        ClipMode::Auto => {
            let bound = work.lambda_min_lower_bound(opts.eigen_tol);
            let norm_c = work.norm_c();
            (bound > 0.0 && norm_c > 0.0).then(|| norm_c / bound)
        }
    };
    let states = forward_pass(&work, &order, &pre.has_indicator, clip_m)?;

    let mut x = vec![0.0f64; inst.n];
    let (x_root, objective) = states[order.root].cost.minimize();
    x[order.root] = x_root;
    let adj = work.adjacency();
    let mut worklist: Vec<usize> = order.parents[order.root].clone();
    while let Some(u) = worklist.pop() {
        let cu = order.child[u].expect("non-root node has a child");
        let q = adj[u].iter().find(|&&(w, _)| w == cu).unwrap().1;
        let shifted = IndicatorCost {
            base: states[u].cost.base.add_quadratic(&Quadratic::new(0.0, q * x[cu], 0.0)),
            ..states[u].cost.clone()
        };
        let (xu, _) = shifted.minimize();
        x[u] = xu;
        worklist.extend_from_slice(&order.parents[u]);
    }
    if let Some(scale) = scale {
        for (xi, s) in x.iter_mut().zip(&scale) {
            *xi /= s;
        }
    }
    let z: Vec<u8> = (0..inst.n)
        .map(|i| u8::from(x[i] != 0.0 || !pre.has_indicator[i]))
        .collect();
    let total_pieces: usize = states.iter().map(|s| s.pieces).sum();
    Ok(Solution {
        objective: objective + pre.constant,
        x,
        z,
        stats: SolveStats {
            pieces_mean: total_pieces as f64 / inst.n as f64,
            pieces_max: states.iter().map(|s| s.pieces).max().unwrap_or(0),
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            clipped: clip_m.is_some(),
        },
    })
}

/// Path specialization: validates the shape, then runs the tree solver,
/// whose per-node update degenerates to the single-parent recurrence on path
/// inputs. The returned solution is identical to [`solve_tree`]'s.
pub fn solve_path(inst: &TreeInstance, opts: &SolveOptions) -> Result<Solution, SolveError> {
    inst.validate()?;
    if !inst.is_path() {
        return Err(SolveError::NotAPath);
    }
    solve_tree(inst, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::brute_force_solve;
    use crate::tree::TreeEdge;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn single(c: f64, lambda: f64) -> TreeInstance {
        TreeInstance::new(1, vec![1.0], vec![], vec![c], vec![lambda]).unwrap()
    }

    pub(crate) fn random_tree_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
        lambda_range: (f64, f64),
    ) -> TreeInstance {
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        for i in 1..n {
            let parent = rng.gen_range(0..i);
            let q = loop {
                let v: f64 = rng.gen_range(-1.0..=0.0);
                if v != 0.0 {
                    break v;
                }
            };
            edges.push(TreeEdge { u: parent, v: i, q });
        }
        let mut diag = vec![1.0; n];
        for e in &edges {
            diag[e.u] += e.q.abs();
            diag[e.v] += e.q.abs();
        }
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let lambda: Vec<f64> =
            (0..n).map(|_| rng.gen_range(lambda_range.0..lambda_range.1)).collect();
        TreeInstance::new(n, diag, edges, c, lambda).unwrap()
    }

    #[test]
    fn single_node_keep() {
        let sol = solve_tree(&single(-2.0, 1.0), &SolveOptions::default()).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-12);
        assert_eq!(sol.x, vec![2.0]);
        assert_eq!(sol.z, vec![1]);
    }

    #[test]
    fn single_node_drop() {
        let sol = solve_tree(&single(-2.0, 3.0), &SolveOptions::default()).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.x, vec![0.0]);
        assert_eq!(sol.z, vec![0]);
    }

    #[test]
    fn leaf_cost_is_node_quadratic() {
        let inst = single(-2.0, 1.0);
        let order = inst.topological_order(None).unwrap();
        let states = forward_pass(&inst, &order, &[true], None).unwrap();
        assert_eq!(states[0].pieces, 1);
        let p = states[0].cost.base.pieces()[0];
        assert_eq!((p.a, p.b, p.c), (0.5, -2.0, 0.0));
        assert!(states[0].cost.has_indicator);
    }

    #[test]
    fn two_node_path_piece_bound() {
        let inst = TreeInstance::new(
            2,
            vec![1.0, 1.0],
            vec![TreeEdge { u: 0, v: 1, q: -0.5 }],
            vec![1.0, -1.0],
            vec![0.4, 0.4],
        )
        .unwrap();
        let order = inst.topological_order(None).unwrap();
        let states = forward_pass(&inst, &order, &[true, true], None).unwrap();
        assert!(states[1].pieces <= 3, "got {} pieces", states[1].pieces);
    }

    #[test]
    fn star_matches_support_enumeration() {
        let inst = TreeInstance::new(
            3,
            vec![1.0; 3],
            vec![TreeEdge { u: 0, v: 2, q: -0.4 }, TreeEdge { u: 1, v: 2, q: -0.4 }],
            vec![-1.0, -2.0, -3.0],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        let sol = solve_tree(&inst, &SolveOptions::default()).unwrap();
        let bf = brute_force_solve(&inst).unwrap();
        assert!((sol.objective - bf.objective).abs() <= 1e-8 * (1.0 + bf.objective.abs()));
        assert!(inst.is_feasible(&sol.x, &sol.z));
        let eval = inst.objective(&sol.x, &sol.z);
        assert!((eval - sol.objective).abs() <= 1e-8 * (1.0 + eval.abs()));
    }

    #[test]
    fn fuzzed_trees_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..60 {
            let n = rng.gen_range(2..=12);
            let inst = random_tree_instance(&mut rng, n, (0.1, 8.0));
            let sol = solve_tree(&inst, &SolveOptions::default()).unwrap();
            let bf = brute_force_solve(&inst).unwrap();
            assert!(
                (sol.objective - bf.objective).abs() <= 1e-6,
                "trial {trial} n={n}: {} vs {}",
                sol.objective,
                bf.objective
            );
            assert!(inst.is_feasible(&sol.x, &sol.z));
            let eval = inst.objective(&sol.x, &sol.z);
            assert!((eval - sol.objective).abs() <= 1e-7 * (1.0 + eval.abs()));
        }
    }

    #[test]
    fn mixed_sign_lambda_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let n = rng.gen_range(2..=10);
            let inst = random_tree_instance(&mut rng, n, (-2.0, 4.0));
            let sol = solve_tree(&inst, &SolveOptions::default()).unwrap();
            let bf = brute_force_solve(&inst).unwrap();
            assert!(
                (sol.objective - bf.objective).abs() <= 1e-6,
                "{} vs {}",
                sol.objective,
                bf.objective
            );
            let eval = inst.objective(&sol.x, &sol.z);
            assert!((eval - sol.objective).abs() <= 1e-7 * (1.0 + eval.abs()));
        }
    }

    #[test]
    fn root_choice_does_not_change_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inst = random_tree_instance(&mut rng, 9, (0.2, 6.0));
        let base = solve_tree(&inst, &SolveOptions::default()).unwrap();
        for root in 0..inst.n {
            let sol = solve_tree(
                &inst,
                &SolveOptions { root: Some(root), ..SolveOptions::default() },
            )
            .unwrap();
            assert!((sol.objective - base.objective).abs() <= 1e-8 * (1.0 + base.objective.abs()));
            for i in 0..inst.n {
                assert!(
                    (sol.x[i] - base.x[i]).abs() <= 1e-6 * (1.0 + base.x[i].abs()),
                    "x[{i}] differs when rooted at {root}"
                );
            }
        }
    }

    #[test]
    fn normalization_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = rng.gen_range(2..=10);
            let inst = random_tree_instance(&mut rng, n, (0.1, 6.0));
            let plain = solve_tree(&inst, &SolveOptions::default()).unwrap();
            let normed = solve_tree(
                &inst,
                &SolveOptions { normalize: true, ..SolveOptions::default() },
            )
            .unwrap();
            assert!((plain.objective - normed.objective).abs() <= 1e-9 * (1.0 + plain.objective.abs()));
            for i in 0..n {
                assert!((plain.x[i] - normed.x[i]).abs() <= 1e-7 * (1.0 + plain.x[i].abs()));
            }
        }
    }

    #[test]
    fn path_solver_equals_tree_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for n in [1usize, 2, 17] {
            let edges = (1..n)
                .map(|i| TreeEdge { u: i - 1, v: i, q: rng.gen_range(-1.0..-0.1) })
                .collect::<Vec<_>>();
            let mut diag = vec![1.0; n];
            for e in &edges {
                diag[e.u] += e.q.abs();
                diag[e.v] += e.q.abs();
            }
            let c = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let lambda = (0..n).map(|_| rng.gen_range(0.5..7.0)).collect();
            let inst = TreeInstance::new(n, diag, edges, c, lambda).unwrap();
            let a = solve_path(&inst, &SolveOptions::default()).unwrap();
            let b = solve_tree(&inst, &SolveOptions::default()).unwrap();
            assert_eq!(a.objective, b.objective);
            assert_eq!(a.x, b.x);
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn path_solver_rejects_trees() {
        let inst = TreeInstance::new(
            4,
            vec![1.0; 4],
            vec![
                TreeEdge { u: 0, v: 3, q: -0.3 },
                TreeEdge { u: 1, v: 3, q: -0.3 },
                TreeEdge { u: 2, v: 3, q: -0.3 },
            ],
            vec![1.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        assert!(matches!(
            solve_path(&inst, &SolveOptions::default()),
            Err(SolveError::NotAPath)
        ));
    }

    #[test]
    fn clipping_does_not_change_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..20 {
            let n = rng.gen_range(3..=40);
            let inst = random_tree_instance(&mut rng, n, (0.2, 8.0));
            let on = solve_tree(&inst, &SolveOptions::default()).unwrap();
            let off = solve_tree(
                &inst,
                &SolveOptions { clip: ClipMode::Off, ..SolveOptions::default() },
            )
            .unwrap();
            assert!(on.stats.clipped);
            assert!(!off.stats.clipped);
            assert!(
                (on.objective - off.objective).abs() <= 1e-6 * (1.0 + off.objective.abs()),
                "{} vs {}",
                on.objective,
                off.objective
            );
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        // Off-diagonal 2 with unit diagonal: eigenvalues 1 +- 2.
        let inst = TreeInstance::new(
            2,
            vec![1.0, 1.0],
            vec![TreeEdge { u: 0, v: 1, q: 2.0 }],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let r = solve_tree(
            &inst,
            &SolveOptions { clip: ClipMode::Off, ..SolveOptions::default() },
        );
        assert!(matches!(r, Err(SolveError::NotPositiveDefinite { .. })));
    }
}
