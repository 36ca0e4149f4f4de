//! Exact solver for convex quadratic minimization with indicator variables
//! when the Hessian's support graph is a tree.
//!
//! The problem solved is
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x + lambda' z
//!     subject to  x_i (1 - z_i) = 0,   z in {0,1}^n
//! ```
//!
//! with `Q` positive definite and `supp(Q)` a tree. The solver runs a
//! forward pass that maintains, per node, the exact cost of the subtree as a
//! piecewise-quadratic function of the node's value, propagating Fenchel
//! conjugates toward the root, then recovers the minimizer in a backward
//! sweep. Worst-case time and memory are O(n^2); on typical instances the
//! piece counts stay small and the runtime is close to linear.
//!
//! The crate also ships independent reference solvers ([`baselines`]), the
//! robust Gaussian hidden-Markov smoother built on top of the tree solver
//! ([`ghmm`]), synthetic instance generators ([`generators`]), and the
//! `treeqp` command-line tool.
//!
//! ```
//! use treeqp::tree::TreeInstance;
//! use treeqp::solver::{solve_tree, SolveOptions};
//!
//! // minimize 1/2 x^2 - 2x + z over x(1-z)=0: keeping x=2 costs -2+1 = -1.
//! let inst = TreeInstance::new(1, vec![1.0], vec![], vec![-2.0], vec![1.0]).unwrap();
//! let sol = solve_tree(&inst, &SolveOptions::default()).unwrap();
//! assert!((sol.objective - (-1.0)).abs() < 1e-12);
//! assert_eq!(sol.x, vec![2.0]);
//! ```

pub mod baselines;
pub mod cli;
pub mod generators;
pub mod ghmm;
pub mod pwq;
pub mod solver;
pub mod tree;

// The user guide's code blocks double as doc-tests; `cargo test --doc`
// keeps the book in sync with the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/piecewise-quadratics.md")]
    mod piecewise_quadratics {}
    #[doc = include_str!("../../../book/src/breakpoint-algorithm.md")]
    mod breakpoint_algorithm {}
    #[doc = include_str!("../../../book/src/tree-solver.md")]
    mod tree_solver {}
    #[doc = include_str!("../../../book/src/robust-smoothing.md")]
    mod robust_smoothing {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}
