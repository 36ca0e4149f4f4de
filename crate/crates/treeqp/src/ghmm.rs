//! Robust inference of Gaussian hidden Markov models.
//!
//! A chain of hidden states `x_t` is observed through windows of noisy
//! readings `y_{k,t} = x_t + noise + outlier`. Estimating the states while
//! classifying outliers is the quadratic program
//!
//! ```text
//!   minimize  sum_{t,k} (y_{k,t} - x_t - w_{k,t})^2 / nu^2
//!           + x_1^2 / sigma_1^2 + sum_{t>1} (x_t - x_{t-1})^2 / sigma^2
//!           + lambda_w * #outliers + gamma_x * #active states
//! ```
//!
//! over sparse `w` (per-observation outlier corrections) and sparse `x`.
//! Its Hessian support is a tree: the state chain with one leaf per
//! observation, so the tree solver applies directly. `w_{k,t} = y_{k,t} -
//! x_t` at optimality wherever an observation is flagged, which removes that
//! observation's influence entirely.
//!
//! The online mode keeps the frontier state's cost function; a new window
//! only has to extend the chain by one conjugation and a handful of
//! three-piece leaf conjugates, so each step costs microseconds instead of a
//! batch re-solve.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pwq::{sum_scaled, Conjugate, IndicatorCost, PiecewiseQuadratic, PwqError, Quadratic};
use crate::solver::{solve_tree, Solution, SolveError, SolveOptions, SolveStats};
use crate::tree::{TreeEdge, TreeInstance};

#[derive(Debug, Error)]
pub enum GhmmError {
    #[error("parameter {name} must be positive, got {value}")]
    NonpositiveParameter { name: &'static str, value: f64 },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("no observations")]
    NoObservations,
    #[error("empty observation window")]
    EmptyWindow,
    #[error("model is not positive definite")]
    NotPositiveDefinite,
    #[error("piecewise algebra failed: {0}")]
    Pwq(#[from] PwqError),
    #[error("solver failed: {0}")]
    Solve(#[from] SolveError),
}

/// Model parameters; all variances and penalties are constant over time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhmmParams {
    /// State transition variance.
    pub sigma2: f64,
    /// Variance of the first state's prior.
    pub sigma2_initial: f64,
    /// Observation noise variance.
    pub nu2: f64,
    /// Penalty per flagged outlier observation.
    pub lambda_w: f64,
    /// Penalty per nonzero hidden state.
    pub gamma_x: f64,
    /// Window size: observations grouped per hidden state.
    pub window: usize,
}

impl GhmmParams {
    pub fn validate(&self) -> Result<(), GhmmError> {
        for (name, value) in [
            ("sigma2", self.sigma2),
            ("sigma2_initial", self.sigma2_initial),
            ("nu2", self.nu2),
            ("lambda_w", self.lambda_w),
            ("gamma_x", self.gamma_x),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(GhmmError::NonpositiveParameter { name, value });
            }
        }
        if self.window == 0 {
            return Err(GhmmError::ZeroWindow);
        }
        Ok(())
    }
}

/// Node ids of the assembled instance plus the constant dropped when
/// completing the square.
#[derive(Debug, Clone)]
pub struct GhmmInstanceMap {
    pub x_nodes: Vec<usize>,
    pub w_nodes: Vec<Vec<usize>>,
    /// `sum y^2 / nu^2`; the model objective is the quadratic-program
    /// objective plus this.
    pub constant: f64,
}

/// Batch solution in model coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhmmSolution {
    /// Estimated hidden state per window.
    pub x: Vec<f64>,
    /// `[t, k]` indices of observations flagged as outliers.
    pub outliers: Vec<(usize, usize)>,
    /// Support indicator of the hidden states.
    pub s: Vec<u8>,
    /// Optimal value of the quadratic program.
    pub objective_miqp: f64,
    /// Same plus the data constant: the model objective.
    pub objective_model: f64,
}

/// Groups a flat observation stream into windows of `k` (last window may be
/// shorter).
pub fn windows_of(stream: &[f64], k: usize) -> Vec<Vec<f64>> {
    assert!(k >= 1);
    stream.chunks(k).map(|c| c.to_vec()).collect()
}

/// Assembles the tree instance of the windowed model.
///
/// Per window `t`: one state node `x_t` after its observation leaves, so the
/// final state carries the highest id and the default root is the frontier.
/// The quadratic form doubles into `1/2 x'Qx`: each observation contributes
/// `2/nu^2` on the leaf diagonal and coupling, each transition `2/sigma^2` on
/// both endpoint diagonals and `-2/sigma^2` on the coupling.
pub fn build_instance(
    windows: &[Vec<f64>],
    p: &GhmmParams,
) -> Result<(TreeInstance, GhmmInstanceMap), GhmmError> {
    p.validate()?;
    if windows.is_empty() {
        return Err(GhmmError::NoObservations);
    }
    if windows.iter().any(|w| w.is_empty()) {
        return Err(GhmmError::EmptyWindow);
    }
    let t_count = windows.len();
    let n = t_count + windows.iter().map(|w| w.len()).sum::<usize>();
    let mut diag = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut x_nodes = Vec::with_capacity(t_count);
    let mut w_nodes = Vec::with_capacity(t_count);
    let mut constant = 0.0;
    let mut id = 0;
    for (t, window) in windows.iter().enumerate() {
        let kt = window.len();
        let x_id = id + kt;
        let mut wt = Vec::with_capacity(kt);
        for &y in window {
            diag[id] = 2.0 / p.nu2;
            c[id] = -2.0 * y / p.nu2;
            lambda[id] = p.lambda_w;
            edges.push(TreeEdge { u: id, v: x_id, q: 2.0 / p.nu2 });
            constant += y * y / p.nu2;
            wt.push(id);
            id += 1;
        }
        let first = if t == 0 { p.sigma2_initial } else { p.sigma2 };
        let next = if t + 1 < t_count { 2.0 / p.sigma2 } else { 0.0 };
        diag[x_id] = 2.0 * kt as f64 / p.nu2 + 2.0 / first + next;
        c[x_id] = -2.0 * window.iter().sum::<f64>() / p.nu2;
        lambda[x_id] = p.gamma_x;
        if t > 0 {
            edges.push(TreeEdge { u: x_nodes[t - 1], v: x_id, q: -2.0 / p.sigma2 });
        }
        x_nodes.push(x_id);
        w_nodes.push(wt);
        id = x_id + 1;
    }
    let inst = TreeInstance::new(n, diag, edges, c, lambda)
        .expect("assembled instance is a valid tree");
    Ok((inst, GhmmInstanceMap { x_nodes, w_nodes, constant }))
}

/// Batch solve: build the instance, run the tree solver, unpack.
pub fn solve_batch(
    windows: &[Vec<f64>],
    p: &GhmmParams,
    opts: &SolveOptions,
) -> Result<(GhmmSolution, SolveStats), GhmmError> {
    let (inst, map) = build_instance(windows, p)?;
    let sol = solve_tree(&inst, opts)?;
    Ok((unpack(&sol, &map), sol.stats))
}

/// Recovered `w` value of an observation: `y - x_t` at optimality for
/// flagged ones, zero otherwise.
pub fn outlier_correction(sol: &Solution, map: &GhmmInstanceMap, t: usize, k: usize) -> f64 {
    sol.x[map.w_nodes[t][k]]
}

/// Maps a raw solver solution back to model coordinates.
pub fn unpack(sol: &Solution, map: &GhmmInstanceMap) -> GhmmSolution {
    let x: Vec<f64> = map.x_nodes.iter().map(|&i| sol.x[i]).collect();
    let s: Vec<u8> = map
        .x_nodes
        .iter()
        .map(|&i| u8::from(sol.x[i] != 0.0))
        .collect();
    let mut outliers = Vec::new();
    for (t, wt) in map.w_nodes.iter().enumerate() {
        for (k, &i) in wt.iter().enumerate() {
            if sol.x[i] != 0.0 {
                outliers.push((t, k));
            }
        }
    }
    GhmmSolution {
        x,
        outliers,
        s,
        objective_miqp: sol.objective,
        objective_model: sol.objective + map.constant,
    }
}

/// Result of one online step.
#[derive(Debug, Clone)]
pub struct OnlineStepResult {
    /// The most recent states, oldest first; the last entry is the new
    /// frontier state. Length is `min(keep, horizon)`.
    pub x_suffix: Vec<f64>,
    pub objective_miqp: f64,
    pub objective_model: f64,
}

/// Minimum number of past states retained regardless of the caller's `keep`.
const RETAIN_DEFAULT: usize = 64;

/// Rolling solver state for streaming inference.
///
/// Holds the frontier state's cost function before the next transition term
/// arrives (extending the horizon changes the frontier's diagonal, so its
/// conjugation is deferred), plus finished cost functions of recent states
/// for the backward updates.
#[derive(Debug, Clone)]
pub struct OnlineState {
    params: GhmmParams,
    horizon: usize,
    frontier: Option<IndicatorCost>,
    recent: VecDeque<IndicatorCost>,
    constant: f64,
}

impl OnlineState {
    pub fn new(params: GhmmParams) -> Result<Self, GhmmError> {
        params.validate()?;
        Ok(OnlineState {
            params,
            horizon: 0,
            frontier: None,
            recent: VecDeque::new(),
            constant: 0.0,
        })
    }

    /// Number of windows consumed so far.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Consumes one observation window, returning the optimal objective at
    /// the extended horizon and the updated `keep` most recent states.
    ///
    /// `keep` larger than the retained history is truncated to what is
    /// available.
    pub fn step(&mut self, window: &[f64], keep: usize) -> Result<OnlineStepResult, GhmmError> {
        if window.is_empty() {
            return Err(GhmmError::EmptyWindow);
        }
        let nu2 = self.params.nu2;
        let s2 = self.params.sigma2;
        let sum_y: f64 = window.iter().sum();
        self.constant += window.iter().map(|y| y * y).sum::<f64>() / nu2;

        let mut leaf_conjs = Vec::with_capacity(window.len());
        for &y in window {
            let leaf = IndicatorCost::with_indicator(
                PiecewiseQuadratic::single(Quadratic::new(1.0 / nu2, -2.0 * y / nu2, 0.0)),
                self.params.lambda_w,
            );
            leaf_conjs.push(leaf.conjugate()?);
        }
        // The new transition adds 2/sigma^2 to the old frontier's diagonal;
        // only now is that diagonal final, so conjugation was deferred.
        let prev_conj = match self.frontier.take() {
            None => None,
            Some(prev) => {
                let full = IndicatorCost {
                    base: prev.base.add_quadratic(&Quadratic::new(1.0 / s2, 0.0, 0.0)),
                    ..prev
                };
                let conj = full.conjugate()?;
                self.recent.push_front(full);
                Some(conj)
            }
        };
        let mut parts: Vec<(&Conjugate, f64)> = Vec::with_capacity(window.len() + 1);
        if let Some(pc) = &prev_conj {
            // Edge weight to the predecessor state is -2/sigma^2; the sum
            // composes with its negation.
            parts.push((pc, 2.0 / s2));
        }
        for lc in &leaf_conjs {
            parts.push((lc, -2.0 / nu2));
        }
        let g = sum_scaled(&parts)?;
        let first = if self.horizon == 0 { self.params.sigma2_initial } else { s2 };
        let dxx = 2.0 * window.len() as f64 / nu2 + 2.0 / first;
        let node_quad = Quadratic::new(0.5 * dxx, -2.0 * sum_y / nu2, 0.0);
        let base = g.negate().add_quadratic(&node_quad).merged_identical();
        if base.pieces().iter().any(|p| p.a <= 0.0) {
            return Err(GhmmError::NotPositiveDefinite);
        }
        let cost = IndicatorCost::with_indicator(base, self.params.gamma_x);
        let (x_new, objective) = cost.minimize();

        let mut xs = vec![x_new];
        let mut child_x = x_new;
        for past in self.recent.iter().take(keep.saturating_sub(1)) {
            let shifted = IndicatorCost {
                base: past
                    .base
                    .add_quadratic(&Quadratic::new(0.0, -2.0 / s2 * child_x, 0.0)),
                ..past.clone()
            };
            let (xu, _) = shifted.minimize();
            xs.push(xu);
            child_x = xu;
        }
        xs.reverse();

        self.frontier = Some(cost);
        self.horizon += 1;
        self.recent.truncate(keep.max(RETAIN_DEFAULT));
        Ok(OnlineStepResult {
            x_suffix: xs,
            objective_miqp: objective,
            objective_model: objective + self.constant,
        })
    }
}
