//! Independent reference solvers.
//!
//! Everything here is deliberately written against the problem statement, not
//! against the parametric solver's internals, so it can serve as ground truth
//! in tests and behind the CLI's `--check` flag:
//!
//! * [`brute_force_solve`] enumerates supports and solves the restricted
//!   linear system per support (tree elimination, no fill-in).
//! * [`parametric_oracle`] evaluates a node's subtree cost from the
//!   closed-form quadratic per support mask.
//! * [`direct_dp_path`] is the window dynamic program for path instances.
//! * [`GridConjugate`] approximates a conjugate by brute maximization over a
//!   dense grid.

use thiserror::Error;

use crate::pwq::IndicatorCost;
use crate::solver::{Solution, SolveStats};
use crate::tree::{TreeError, TreeInstance};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("instance error: {0}")]
    Instance(#[from] TreeError),
    #[error("{got} nodes exceeds the brute-force limit of {limit}")]
    TooLarge { got: usize, limit: usize },
    #[error("restricted system is singular; input is not positive definite")]
    SingularSystem,
    #[error("instance is not a path")]
    NotAPath,
}

const BRUTE_LIMIT: usize = 25;
const ORACLE_LIMIT: usize = 20;

/// Exhaustive minimization over all `2^n` supports.
///
/// For a support `J`, the restricted optimum solves `Q[J,J] x = -c[J]` and
/// scores `1/2 c[J]' x + sum_{i in J} lambda_i`. Ties prefer the smaller
/// support, then the lexicographically smaller `z`.
pub fn brute_force_solve(inst: &TreeInstance) -> Result<Solution, BaselineError> {
    inst.validate()?;
    let n = inst.n;
    if n > BRUTE_LIMIT {
        return Err(BaselineError::TooLarge { got: n, limit: BRUTE_LIMIT });
    }
    let order = inst.topological_order(None)?;
    let adj = inst.adjacency();
    let started = std::time::Instant::now();

    // Tree-ordered LDL solve restricted to the mask; parents carry smaller
    // labels, so one ascending pass factorizes and one descending pass
    // back-substitutes.
    let mut pivot = vec![0.0f64; n];
    let mut y = vec![0.0f64; n];
    let mut x = vec![0.0f64; n];
    let mut solve_restricted = |mask: u32, x: &mut Vec<f64>| -> Option<f64> {
        let in_j = |u: usize| mask & (1 << u) != 0;
        for &u in &order.order {
            if !in_j(u) {
                continue;
            }
            let mut d = inst.diag[u];
            let mut rhs = -inst.c[u];
            for &(v, q) in &adj[u] {
                if Some(u) == order.child[v] && in_j(v) {
                    d -= q * q / pivot[v];
                    rhs -= q / pivot[v] * y[v];
                }
            }
            if d <= 1e-12 {
                return None;
            }
            pivot[u] = d;
            y[u] = rhs;
        }
        let mut value = 0.0;
        for &u in order.order.iter().rev() {
            if !in_j(u) {
                x[u] = 0.0;
                continue;
            }
            let mut xu = y[u] / pivot[u];
            if let Some(cu) = order.child[u] {
                if in_j(cu) {
                    let q = adj[u].iter().find(|&&(v, _)| v == cu).unwrap().1;
                    xu -= q / pivot[u] * x[cu];
                }
            }
            x[u] = xu;
            value += 0.5 * inst.c[u] * xu + inst.lambda[u];
        }
        Some(value)
    };

    let lex_less = |a: u32, b: u32| -> bool {
        for i in 0..n {
            let (za, zb) = (a >> i & 1, b >> i & 1);
            if za != zb {
                return za < zb;
            }
        }
        false
    };

    let mut best_mask = 0u32;
    let mut best_value = 0.0f64; // empty support scores zero
    for mask in 1..(1u32 << n) {
        let value = solve_restricted(mask, &mut x).ok_or(BaselineError::SingularSystem)?;
        let tol = 1e-12 * (1.0 + best_value.abs());
        if value < best_value - tol {
            best_value = value;
            best_mask = mask;
        } else if value <= best_value + tol {
            let (pc, bpc) = (mask.count_ones(), best_mask.count_ones());
            if pc < bpc || (pc == bpc && lex_less(mask, best_mask)) {
                best_mask = mask;
                best_value = best_value.min(value);
            }
        }
    }
    if best_mask == 0 {
        x.iter_mut().for_each(|v| *v = 0.0);
    } else {
        solve_restricted(best_mask, &mut x);
    }
    let z: Vec<u8> = (0..n).map(|i| (best_mask >> i & 1) as u8).collect();
    Ok(Solution {
        objective: best_value,
        x,
        z,
        stats: SolveStats {
            pieces_mean: 0.0,
            pieces_max: 0,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            clipped: false,
        },
    })
}

/// Dense Gaussian elimination with partial pivoting for the oracle's small
/// systems; `rhs` columns are solved in place.
fn dense_solve(a: &mut [f64], n: usize, rhs: &mut [f64], m: usize) -> Option<()> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-13 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            for k in 0..m {
                rhs.swap(col * m + k, piv * m + k);
            }
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                rhs[r * m + k] -= f * rhs[col * m + k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..m {
            let mut v = rhs[col * m + k];
            for j in col + 1..n {
                v -= a[col * n + j] * rhs[j * m + k];
            }
            rhs[col * m + k] = v / a[col * n + col];
        }
    }
    Some(())
}

/// Subtree cost of node `u` pinned to each value in `alphas`, computed from
/// first principles: enumerate which subtree nodes are active, split the
/// active set into connected components, and use the closed-form quadratic of
/// the component containing `u` plus the constants of the others.
pub fn parametric_oracle(
    inst: &TreeInstance,
    u: usize,
    alphas: &[f64],
) -> Result<Vec<f64>, BaselineError> {
    inst.validate()?;
    let order = inst.topological_order(None)?;
    // Collect the subtree of u: u plus everything draining into it.
    let mut sub = vec![u];
    let mut i = 0;
    while i < sub.len() {
        sub.extend(order.parents[sub[i]].iter().copied());
        i += 1;
    }
    if sub.len() > ORACLE_LIMIT {
        return Err(BaselineError::TooLarge { got: sub.len(), limit: ORACLE_LIMIT });
    }
    let others: Vec<usize> = sub[1..].to_vec();
    let m = others.len();
    let pos: std::collections::HashMap<usize, usize> =
        others.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let adj = inst.adjacency();
    let in_subtree = |v: usize| sub.contains(&v);

    // Per-mask closed-form coefficients of the quadratic in alpha.
    let mut coeffs: Vec<(f64, f64, f64)> = Vec::with_capacity(1 << m);
    for mask in 0u32..(1 << m) {
        let active = |v: usize| -> bool {
            v == u || pos.get(&v).is_some_and(|&k| mask >> k & 1 == 1)
        };
        // Component of u within the active set, excluding u itself.
        let mut comp_u: Vec<usize> = Vec::new();
        let mut stack = vec![u];
        let mut seen = vec![u];
        while let Some(w) = stack.pop() {
            for &(v, _) in &adj[w] {
                if in_subtree(v) && active(v) && !seen.contains(&v) {
                    seen.push(v);
                    comp_u.push(v);
                    stack.push(v);
                }
            }
        }
        let solve_component = |nodes: &[usize]| -> Option<(Vec<f64>, Vec<f64>)> {
            // Returns (Q^{-1} c, Q^{-1} q_u) on the nodes, where q_u is the
            // coupling column to u (zeros if absent).
            let k = nodes.len();
            let mut a = vec![0.0; k * k];
            let mut rhs = vec![0.0; k * 2];
            for (r, &w) in nodes.iter().enumerate() {
                a[r * k + r] = inst.diag[w];
                rhs[r * 2] = inst.c[w];
                for &(v, q) in &adj[w] {
                    if let Some(cidx) = nodes.iter().position(|&t| t == v) {
                        a[r * k + cidx] = q;
                    }
                    if v == u {
                        rhs[r * 2 + 1] = q;
                    }
                }
            }
            dense_solve(&mut a, k, &mut rhs, 2)?;
            let vc: Vec<f64> = (0..k).map(|r| rhs[r * 2]).collect();
            let vq: Vec<f64> = (0..k).map(|r| rhs[r * 2 + 1]).collect();
            Some((vc, vq))
        };

        let (mut a2, mut a1, mut a0) = (0.5 * inst.diag[u], inst.c[u], 0.0);
        if !comp_u.is_empty() {
            let (vc, vq) =
                solve_component(&comp_u).ok_or(BaselineError::SingularSystem)?;
            let (mut qtvq, mut qtvc, mut ctvc) = (0.0, 0.0, 0.0);
            for (r, &w) in comp_u.iter().enumerate() {
                let quw = adj[u]
                    .iter()
                    .find(|&&(v, _)| v == w)
                    .map(|&(_, q)| q)
                    .unwrap_or(0.0);
                qtvq += quw * vq[r];
                qtvc += quw * vc[r];
                ctvc += inst.c[w] * vc[r];
                a0 += inst.lambda[w];
            }
            a2 -= 0.5 * qtvq;
            a1 -= qtvc;
            a0 -= 0.5 * ctvc;
        }
        // Remaining active nodes form components detached from u.
        let mut remaining: Vec<usize> = others
            .iter()
            .copied()
            .filter(|&v| active(v) && !comp_u.contains(&v))
            .collect();
        while let Some(start) = remaining.pop() {
            let mut comp = vec![start];
            let mut stack = vec![start];
            while let Some(w) = stack.pop() {
                let mut keep = Vec::new();
                for v in remaining.drain(..) {
                    if adj[w].iter().any(|&(t, _)| t == v) {
                        comp.push(v);
                        stack.push(v);
                    } else {
                        keep.push(v);
                    }
                }
                remaining = keep;
            }
            let (vc, _) = solve_component(&comp).ok_or(BaselineError::SingularSystem)?;
            let mut ctvc = 0.0;
            for (r, &w) in comp.iter().enumerate() {
                ctvc += inst.c[w] * vc[r];
                a0 += inst.lambda[w];
            }
            a0 -= 0.5 * ctvc;
        }
        coeffs.push((a2, a1, a0));
    }

    Ok(alphas
        .iter()
        .map(|&alpha| {
            let best = coeffs
                .iter()
                .map(|&(a2, a1, a0)| (a2 * alpha + a1) * alpha + a0)
                .fold(f64::INFINITY, f64::min);
            let charge = if alpha != 0.0 && inst.lambda[u] > 0.0 {
                inst.lambda[u]
            } else {
                0.0
            };
            best + charge
        })
        .collect())
}

/// The window dynamic program for path instances.
///
/// Streams over left endpoints: for each start of an all-active window, the
/// tridiagonal factorization extends one node at a time, so every window
/// optimum `q*[a..l]` costs O(1) amortized and the whole table never
/// materializes.
pub fn direct_dp_path(inst: &TreeInstance) -> Result<Solution, BaselineError> {
    inst.validate()?;
    if !inst.is_path() {
        return Err(BaselineError::NotAPath);
    }
    let started = std::time::Instant::now();
    let n = inst.n;
    let path = path_order(inst);
    let adj = inst.adjacency();
    let d: Vec<f64> = path.iter().map(|&v| inst.diag[v]).collect();
    let cc: Vec<f64> = path.iter().map(|&v| inst.c[v]).collect();
    let ll: Vec<f64> = path.iter().map(|&v| inst.lambda[v]).collect();
    let off: Vec<f64> = path
        .windows(2)
        .map(|w| adj[w[0]].iter().find(|&&(v, _)| v == w[1]).unwrap().1)
        .collect();

    // g[i] = optimal value over positions 0..=i; cand accumulates window
    // contributions; choice[i] records the winning left endpoint, with
    // choice[i] == i+1 meaning "position i inactive".
    let mut g = vec![f64::INFINITY; n];
    let mut cand = vec![f64::INFINITY; n];
    let mut choice = vec![0usize; n];
    let mut finalized = 0usize; // g[0..finalized] are final
    let finalize_up_to = |k: usize,
                              g: &mut Vec<f64>,
                              cand: &Vec<f64>,
                              choice: &mut Vec<usize>,
                              finalized: &mut usize| {
        while *finalized < k.min(n) {
            let i = *finalized;
            let skip = if i == 0 { 0.0 } else { g[i - 1] };
            if skip < cand[i] {
                g[i] = skip;
                choice[i] = i + 1;
            } else {
                g[i] = cand[i];
            }
            *finalized += 1;
        }
    };
    for a in 0..n {
        finalize_up_to(a.saturating_sub(1), &mut g, &cand, &mut choice, &mut finalized);
        let weight = if a >= 2 { g[a - 2] } else { 0.0 };
        let mut pivot = 0.0;
        let mut y = 0.0;
        let mut h = 0.0;
        let mut lam = 0.0;
        for l in a..n {
            if l == a {
                pivot = d[l];
                y = cc[l];
            } else {
                let t = off[l - 1] / pivot;
                pivot = d[l] - off[l - 1] * t;
                y = cc[l] - t * y;
            }
            if pivot <= 1e-12 {
                return Err(BaselineError::SingularSystem);
            }
            h += y * y / pivot;
            lam += ll[l];
            let value = weight + (-0.5 * h + lam);
            if value < cand[l] {
                cand[l] = value;
                choice[l] = a;
            }
        }
    }
    finalize_up_to(n, &mut g, &cand, &mut choice, &mut finalized);

    // Backtrack the argmin chain and solve the chosen windows.
    let mut xp = vec![0.0f64; n];
    let mut zp = vec![0u8; n];
    let mut i = n as isize - 1;
    while i >= 0 {
        let iu = i as usize;
        let a = choice[iu];
        if a == iu + 1 {
            i -= 1;
            continue;
        }
        solve_window(&d, &off, &cc, a, iu, &mut xp);
        zp[a..=iu].fill(1);
        i = a as isize - 2;
    }
    let mut x = vec![0.0; n];
    let mut z = vec![0u8; n];
    for (pos, &node) in path.iter().enumerate() {
        x[node] = xp[pos];
        z[node] = zp[pos];
    }
    Ok(Solution {
        objective: g[n - 1],
        x,
        z,
        stats: SolveStats {
            pieces_mean: 0.0,
            pieces_max: 0,
            time_ms: started.elapsed().as_secs_f64() * 1e3,
            clipped: false,
        },
    })
}

/// Nodes of a path instance in adjacency order, starting from the smaller
/// endpoint id.
fn path_order(inst: &TreeInstance) -> Vec<usize> {
    let n = inst.n;
    if n == 1 {
        return vec![0];
    }
    let adj = inst.adjacency();
    let start = (0..n).find(|&v| adj[v].len() == 1).unwrap();
    let mut path = Vec::with_capacity(n);
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        path.push(cur);
        let next = adj[cur].iter().map(|&(v, _)| v).find(|&v| v != prev);
        match next {
            Some(v) => {
                prev = cur;
                cur = v;
            }
            None => break,
        }
    }
    path
}

/// Tridiagonal solve of `Q[a..=b] x = -c[a..=b]` into `x` (path positions).
fn solve_window(d: &[f64], off: &[f64], c: &[f64], a: usize, b: usize, x: &mut [f64]) {
    let k = b - a + 1;
    let mut pivot = vec![0.0; k];
    let mut y = vec![0.0; k];
    for t in 0..k {
        if t == 0 {
            pivot[0] = d[a];
            y[0] = -c[a];
        } else {
            let f = off[a + t - 1] / pivot[t - 1];
            pivot[t] = d[a + t] - off[a + t - 1] * f;
            y[t] = -c[a + t] - f * y[t - 1];
        }
    }
    for t in (0..k).rev() {
        let mut v = y[t] / pivot[t];
        if t + 1 < k {
            v -= off[a + t] / pivot[t] * x[a + t + 1];
        }
        x[a + t] = v;
    }
}

/// Grid approximation of a conjugate: `max over alpha in the grid (and alpha
/// = 0 exactly) of s*alpha - f(alpha)`. Test oracle only; the grid values of
/// `f` are precomputed once.
pub struct GridConjugate {
    alphas: Vec<f64>,
    values: Vec<f64>,
}

impl GridConjugate {
    pub fn new(f: &IndicatorCost, m: f64, step: f64) -> Self {
        assert!(m > 0.0 && step > 0.0);
        let npts = (2.0 * m / step).ceil() as usize;
        let mut alphas = Vec::with_capacity(npts + 2);
        let mut values = Vec::with_capacity(npts + 2);
        for i in 0..=npts {
            let t = -m + step * i as f64;
            alphas.push(t);
            values.push(f.eval(t));
        }
        alphas.push(0.0);
        values.push(f.eval(0.0));
        GridConjugate { alphas, values }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.alphas
            .iter()
            .zip(&self.values)
            .map(|(&a, &v)| s * a - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
