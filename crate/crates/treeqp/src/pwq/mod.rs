//! Piecewise-quadratic function algebra.
//!
//! Everything the tree solver manipulates is a continuous piecewise-quadratic
//! function on the real line: per-node subtree costs, their Fenchel
//! conjugates, and sums of rescaled conjugates. A function with `N` pieces is
//! stored as `N + 1` ordered breakpoints (with `-inf` and `+inf` sentinels)
//! plus `N` quadratics, one per interval.
//!
//! Two structural classes matter:
//!
//! * **consistent** functions: every piece is strongly convex and the function
//!   equals the pointwise *minimum* of all its pieces evaluated globally.
//!   Subtree costs have this shape.
//! * **conjugates**: convex functions equal to the pointwise *maximum* of
//!   their (convex) pieces. Conjugating an indicator-regularized consistent
//!   function adds at most two pieces: a flat plateau carved in around the
//!   slope interval where keeping the variable at zero wins.
//!
//! The conjugation sweep itself lives in [`conjugate`] (re-exported here).

mod conjugate;

pub use conjugate::{common_tangent_slope, envelope_roots, SweepStep};

use std::fmt;
use thiserror::Error;

/// Relative tolerance for deciding that two pieces are the same quadratic.
pub const COEF_TOL: f64 = 1e-9;
/// Relative tolerance for value agreement of adjacent pieces at a breakpoint.
pub const CONT_TOL: f64 = 1e-7;
/// Slack in the ADD/DELETE slope comparison of the conjugation sweep.
pub const SLOPE_SLACK: f64 = 1e-12;
/// Tolerance under which minimization ties prefer the sparser candidate.
pub const MIN_TIE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PwqError {
    #[error("piece is not strongly convex (quadratic coefficient {0})")]
    DegeneratePiece(f64),
    #[error("common tangent of identical pieces is undefined; merge them first")]
    IdenticalPieces,
    #[error("zero scale in conjugate sum")]
    ZeroScale,
    #[error("conjugate sum needs at least one function")]
    EmptySum,
    #[error("breakpoint sweep did not resolve; input is not semi-consistent")]
    Inconsistent,
    #[error("indicator envelope equation has fewer than two roots")]
    EnvelopeDegenerate,
    #[error("indicator weight must be positive, got {0}")]
    NonpositiveLambda(f64),
    #[error("invalid piecewise representation: {0}")]
    Malformed(String),
}

pub(crate) fn rel_close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs()))
}

/// Real roots of `a x^2 + b x + c = 0`, ascending. Uses the cancellation-free
/// form so a tiny leading coefficient degrades gracefully into one huge and
/// one accurate root.
pub(crate) fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    if disc == 0.0 {
        return vec![-b / (2.0 * a)];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    if q == 0.0 {
        // b == 0 and disc == 0 were handled; here b == 0, c/a < 0.
        let r = (-c / a).sqrt();
        return vec![-r, r];
    }
    let mut roots = vec![q / a, c / q];
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

/// One quadratic `a*t^2 + b*t + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Quadratic { a, b, c }
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.a * t + self.b) * t + self.c
    }

    pub fn deriv(&self, t: f64) -> f64 {
        2.0 * self.a * t + self.b
    }

    /// Unconstrained minimizer `-b / 2a`; requires `a > 0`.
    pub fn argmin(&self) -> f64 {
        -self.b / (2.0 * self.a)
    }

    /// Fenchel conjugate `sup_t {s t - p(t)} = (s - b)^2 / 4a - c` of a
    /// strongly convex quadratic, as a quadratic in the slope `s`.
    pub fn conjugate(&self) -> Result<Quadratic, PwqError> {
        if self.a <= 0.0 {
            return Err(PwqError::DegeneratePiece(self.a));
        }
        Ok(Quadratic {
            a: 1.0 / (4.0 * self.a),
            b: -self.b / (2.0 * self.a),
            c: self.b * self.b / (4.0 * self.a) - self.c,
        })
    }

    /// Slope at which the tangent to this piece touches at `t`, inverted:
    /// tangency point for a given slope `s`.
    pub fn tangency_point(&self, s: f64) -> f64 {
        (s - self.b) / (2.0 * self.a)
    }

    /// Derivative at `t`, or `fallback` when `t` is infinite.
    pub(crate) fn deriv_at_or(&self, t: f64, fallback: f64) -> f64 {
        if t.is_finite() {
            self.deriv(t)
        } else {
            fallback
        }
    }

    /// Coefficient-wise comparison under the merge tolerance.
    pub fn approx_same(&self, other: &Quadratic) -> bool {
        rel_close(self.a, other.a, COEF_TOL)
            && rel_close(self.b, other.b, COEF_TOL)
            && rel_close(self.c, other.c, COEF_TOL)
    }

    pub fn add(&self, other: &Quadratic) -> Quadratic {
        Quadratic::new(self.a + other.a, self.b + other.b, self.c + other.c)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

impl fmt::Display for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*t^2 + {}*t + {}", self.a, self.b, self.c)
    }
}

/// A continuous piecewise-quadratic function.
///
/// `breakpoints` has length `pieces.len() + 1`, is strictly increasing, and
/// starts/ends with the infinite sentinels. Piece `k` is active on
/// `[breakpoints[k], breakpoints[k+1]]`; adjacent pieces agree at their shared
/// breakpoint.
#[derive(Debug, Clone)]
pub struct PiecewiseQuadratic {
    breakpoints: Vec<f64>,
    pieces: Vec<Quadratic>,
}

impl PiecewiseQuadratic {
    /// Validated constructor.
    pub fn from_parts(breakpoints: Vec<f64>, pieces: Vec<Quadratic>) -> Result<Self, PwqError> {
        if pieces.is_empty() {
            return Err(PwqError::Malformed("no pieces".into()));
        }
        if breakpoints.len() != pieces.len() + 1 {
            return Err(PwqError::Malformed(format!(
                "{} breakpoints for {} pieces",
                breakpoints.len(),
                pieces.len()
            )));
        }
        if breakpoints[0] != f64::NEG_INFINITY
            || *breakpoints.last().unwrap() != f64::INFINITY
        {
            return Err(PwqError::Malformed("missing infinite sentinels".into()));
        }
        if !breakpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(PwqError::Malformed("breakpoints not strictly increasing".into()));
        }
        if pieces.iter().any(|p| !p.is_finite()) {
            return Err(PwqError::Malformed("non-finite piece coefficients".into()));
        }
        Ok(PiecewiseQuadratic { breakpoints, pieces })
    }

    /// A single quadratic on the whole line.
    pub fn single(q: Quadratic) -> Self {
        PiecewiseQuadratic {
            breakpoints: vec![f64::NEG_INFINITY, f64::INFINITY],
            pieces: vec![q],
        }
    }

    /// The pointwise minimum of a family of strongly convex quadratics, as a
    /// consistent piecewise-quadratic. This is the canonical way to build
    /// test inputs: the result satisfies the consistency contract by
    /// construction.
    pub fn lower_envelope(quads: &[Quadratic]) -> Result<Self, PwqError> {
        if quads.is_empty() {
            return Err(PwqError::Malformed("empty family".into()));
        }
        for q in quads {
            if q.a <= 0.0 {
                return Err(PwqError::DegeneratePiece(q.a));
            }
        }
        // Candidate switch points are pairwise intersections.
        let mut cuts: Vec<f64> = Vec::new();
        for i in 0..quads.len() {
            for j in i + 1..quads.len() {
                let (p, q) = (&quads[i], &quads[j]);
                for r in quadratic_roots(p.a - q.a, p.b - q.b, p.c - q.c) {
                    if r.is_finite() {
                        cuts.push(r);
                    }
                }
            }
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup_by(|a, b| rel_close(*a, *b, 1e-12));
        let argmin_at = |t: f64| -> usize {
            let mut best = 0;
            for (k, q) in quads.iter().enumerate() {
                if q.eval(t) < quads[best].eval(t) {
                    best = k;
                }
            }
            best
        };
        // Sample each interval between cuts and keep the winning piece.
        let mut bps = vec![f64::NEG_INFINITY];
        let mut pieces: Vec<Quadratic> = Vec::new();
        let mut probes: Vec<f64> = Vec::with_capacity(cuts.len() + 1);
        if cuts.is_empty() {
            probes.push(0.0);
        } else {
            probes.push(cuts[0] - 1.0 - cuts[0].abs());
            for w in cuts.windows(2) {
                probes.push(0.5 * (w[0] + w[1]));
            }
            probes.push(cuts[cuts.len() - 1] + 1.0 + cuts[cuts.len() - 1].abs());
        }
        for (i, &t) in probes.iter().enumerate() {
            let k = argmin_at(t);
            match pieces.last() {
                Some(last) if last.approx_same(&quads[k]) => {}
                _ => {
                    if !pieces.is_empty() {
                        bps.push(cuts[i - 1]);
                    }
                    pieces.push(quads[k]);
                }
            }
        }
        bps.push(f64::INFINITY);
        PiecewiseQuadratic::from_parts(bps, pieces)
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Quadratic] {
        &self.pieces
    }

    /// Interval of piece `k`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        (self.breakpoints[k], self.breakpoints[k + 1])
    }

    /// Index of the piece whose interval contains `t` (left piece at a shared
    /// breakpoint; continuity makes the choice immaterial for values).
    pub fn piece_index(&self, t: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b < t);
        k.saturating_sub(1).min(self.pieces.len() - 1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.pieces[self.piece_index(t)].eval(t)
    }

    /// Adds a common quadratic to every piece. Breakpoints are unchanged, and
    /// adding a common function commutes with the pointwise min, so
    /// consistency is preserved.
    pub fn add_quadratic(&self, q: &Quadratic) -> Self {
        PiecewiseQuadratic {
            breakpoints: self.breakpoints.clone(),
            pieces: self.pieces.iter().map(|p| p.add(q)).collect(),
        }
    }

    /// Coefficient-wise negation of every piece.
    pub fn negate(&self) -> Self {
        PiecewiseQuadratic {
            breakpoints: self.breakpoints.clone(),
            pieces: self
                .pieces
                .iter()
                .map(|p| Quadratic::new(-p.a, -p.b, -p.c))
                .collect(),
        }
    }

    /// Collapses runs of adjacent identical pieces (coefficient-wise, under
    /// the merge tolerance) into one.
    pub fn merged_identical(&self) -> Self {
        if self.pieces.len() <= 1 {
            return self.clone();
        }
        let mut bps = vec![f64::NEG_INFINITY];
        let mut pieces = vec![self.pieces[0]];
        for k in 1..self.pieces.len() {
            if pieces.last().unwrap().approx_same(&self.pieces[k]) {
                continue;
            }
            bps.push(self.breakpoints[k]);
            pieces.push(self.pieces[k]);
        }
        bps.push(f64::INFINITY);
        PiecewiseQuadratic { breakpoints: bps, pieces }
    }

    /// Drops every breakpoint outside `[-m, m]`; the surviving outermost
    /// pieces extend to the infinities. With no surviving breakpoint the
    /// result is the single piece active at zero. The function is unchanged
    /// on `[-m, m]`.
    pub fn clip(&self, m: f64) -> Self {
        assert!(m > 0.0, "clip radius must be positive");
        let interior = &self.breakpoints[1..self.breakpoints.len() - 1];
        let lo = interior.partition_point(|&t| t < -m);
        let hi = interior.partition_point(|&t| t <= m);
        if lo >= hi {
            return PiecewiseQuadratic::single(self.pieces[self.piece_index(0.0)]);
        }
        let mut bps = Vec::with_capacity(hi - lo + 2);
        bps.push(f64::NEG_INFINITY);
        bps.extend_from_slice(&interior[lo..hi]);
        bps.push(f64::INFINITY);
        let pieces = self.pieces[lo..=hi].to_vec();
        PiecewiseQuadratic { breakpoints: bps, pieces }
    }

    /// Checks value continuity at every finite breakpoint.
    pub fn is_continuous(&self, tol: f64) -> bool {
        (1..self.pieces.len()).all(|k| {
            let t = self.breakpoints[k];
            rel_close(self.pieces[k - 1].eval(t), self.pieces[k].eval(t), tol)
        })
    }

    /// Pointwise minimum over all pieces evaluated globally. Equals `eval`
    /// exactly when the function is consistent.
    pub fn min_over_pieces(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Pointwise maximum over all pieces evaluated globally. Equals `eval`
    /// exactly for conjugates.
    pub fn max_over_pieces(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.eval(t))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Global minimum of the function as represented (each piece restricted
    /// to its interval).
    pub fn min_value(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (k, p) in self.pieces.iter().enumerate() {
            let (lo, hi) = self.interval(k);
            let v = if p.a > 0.0 {
                p.eval(p.argmin().clamp(lo, hi))
            } else if p.a == 0.0 && p.b == 0.0 {
                p.c
            } else {
                // Linear or concave pieces on infinite intervals are
                // unbounded below; finite ends bound them.
                let ends = [lo, hi];
                ends.iter()
                    .map(|&t| if t.is_finite() { p.eval(t) } else { f64::NEG_INFINITY })
                    .fold(f64::INFINITY, f64::min)
            };
            best = best.min(v);
        }
        best
    }
}

impl fmt::Display for PiecewiseQuadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "piecewise quadratic, {} pieces:", self.pieces.len())?;
        for (k, p) in self.pieces.iter().enumerate() {
            writeln!(
                f,
                "  [{}, {}]: {}",
                self.breakpoints[k],
                self.breakpoints[k + 1],
                p
            )?;
        }
        Ok(())
    }
}

/// A consistent cost plus an optional fixed charge for being nonzero:
/// `f(t) = base(t) + lambda * [t != 0]`.
///
/// Preprocessing removes indicators with nonpositive weight, so
/// `has_indicator` implies `lambda > 0` throughout the solver.
#[derive(Debug, Clone)]
pub struct IndicatorCost {
    pub base: PiecewiseQuadratic,
    pub lambda: f64,
    pub has_indicator: bool,
}

impl IndicatorCost {
    pub fn with_indicator(base: PiecewiseQuadratic, lambda: f64) -> Self {
        IndicatorCost { base, lambda, has_indicator: true }
    }

    pub fn without_indicator(base: PiecewiseQuadratic) -> Self {
        IndicatorCost { base, lambda: 0.0, has_indicator: false }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let charge = if self.has_indicator && t != 0.0 { self.lambda } else { 0.0 };
        self.base.eval(t) + charge
    }

    /// Global minimizer and value.
    ///
    /// Candidates are the zero point (no indicator charge) and every piece's
    /// unconstrained minimizer evaluated as a global quadratic, which is
    /// valid because consistency makes the base the pointwise min of its
    /// pieces. Ties within [`MIN_TIE_TOL`] prefer zero, then the smaller
    /// magnitude, then the smaller argument.
    pub fn minimize(&self) -> (f64, f64) {
        let candidate = |k: Option<usize>| -> (f64, f64) {
            match k {
                None => (0.0, self.base.eval(0.0)),
                Some(k) => {
                    let p = &self.base.pieces()[k];
                    let t = p.argmin();
                    let mut v = p.eval(t);
                    if self.has_indicator && t != 0.0 {
                        v += self.lambda;
                    }
                    (t, v)
                }
            }
        };
        let ids = std::iter::once(None).chain((0..self.base.piece_count()).map(Some));
        let vmin = ids
            .clone()
            .map(|k| candidate(k).1)
            .fold(f64::INFINITY, f64::min);
        let tol = MIN_TIE_TOL * (1.0 + vmin.abs());
        // Lexicographic preference among near-ties: zero first, then smaller
        // magnitude, then smaller argument.
        let mut best: Option<(f64, f64)> = None;
        for k in ids {
            let (t, v) = candidate(k);
            if v > vmin + tol {
                continue;
            }
            let better = match best {
                None => true,
                Some((bt, _)) => {
                    let key = (t != 0.0, t.abs(), t);
                    let bkey = (bt != 0.0, bt.abs(), bt);
                    key < bkey
                }
            };
            if better {
                best = Some((t, v));
            }
        }
        best.unwrap()
    }
}

/// The Fenchel conjugate of an [`IndicatorCost`]: convex, equal to the
/// pointwise max of its pieces, possibly containing one flat plateau piece
/// from the indicator envelope.
#[derive(Debug, Clone)]
pub struct Conjugate {
    inner: PiecewiseQuadratic,
}

impl Conjugate {
    pub(crate) fn from_inner(inner: PiecewiseQuadratic) -> Self {
        Conjugate { inner }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.inner.eval(s)
    }

    pub fn piece_count(&self) -> usize {
        self.inner.piece_count()
    }

    pub fn as_pwq(&self) -> &PiecewiseQuadratic {
        &self.inner
    }

    pub fn clip(&self, m: f64) -> Self {
        Conjugate { inner: self.inner.clip(m) }
    }

    /// Convexity check: one-sided slopes must be non-decreasing across every
    /// finite breakpoint (up to tolerance). Used by tests.
    pub fn is_convex(&self, tol: f64) -> bool {
        let bps = self.inner.breakpoints();
        let pieces = self.inner.pieces();
        if pieces.iter().any(|p| p.a < -tol) {
            return false;
        }
        (1..pieces.len()).all(|k| {
            let t = bps[k];
            pieces[k - 1].deriv(t) <= pieces[k].deriv(t) + tol * (1.0 + t.abs())
        })
    }
}

/// Sum of rescaled conjugates: `sum_l f_l(scale_l * s)`.
///
/// The breakpoints of the result are the merged union of the rescaled
/// breakpoint lists (a negative scale reverses a list), merged in a single
/// linear pass; identical adjacent pieces are collapsed.
pub fn sum_scaled(parts: &[(&Conjugate, f64)]) -> Result<PiecewiseQuadratic, PwqError> {
    if parts.is_empty() {
        return Err(PwqError::EmptySum);
    }
    struct View {
        bps: Vec<f64>,
        pieces: Vec<Quadratic>,
        at: usize,
    }
    let mut views = Vec::with_capacity(parts.len());
    for &(f, s) in parts {
        if s == 0.0 {
            return Err(PwqError::ZeroScale);
        }
        let src = f.as_pwq();
        let n = src.piece_count();
        let mut bps: Vec<f64> = Vec::with_capacity(n + 1);
        let mut pieces: Vec<Quadratic> = Vec::with_capacity(n);
        // t -> p(s*t): breakpoint tau maps to tau/s; order flips when s < 0.
        if s > 0.0 {
            bps.extend(src.breakpoints().iter().map(|&t| t / s));
            pieces.extend_from_slice(src.pieces());
        } else {
            bps.extend(src.breakpoints().iter().rev().map(|&t| t / s));
            pieces.extend(src.pieces().iter().rev());
        }
        bps[0] = f64::NEG_INFINITY;
        let last = bps.len() - 1;
        bps[last] = f64::INFINITY;
        for p in &mut pieces {
            *p = Quadratic::new(p.a * s * s, p.b * s, p.c);
        }
        views.push(View { bps, pieces, at: 0 });
    }

    let mut bps = vec![f64::NEG_INFINITY];
    let mut pieces: Vec<Quadratic> = Vec::new();
    loop {
        let upper = views
            .iter()
            .map(|v| v.bps[v.at + 1])
            .fold(f64::INFINITY, f64::min);
        let mut sum = Quadratic::new(0.0, 0.0, 0.0);
        for v in &views {
            sum = sum.add(&v.pieces[v.at]);
        }
        pieces.push(sum);
        if upper == f64::INFINITY {
            break;
        }
        bps.push(upper);
        for v in &mut views {
            if v.bps[v.at + 1] == upper {
                v.at += 1;
            }
        }
    }
    bps.push(f64::INFINITY);
    Ok(PiecewiseQuadratic { breakpoints: bps, pieces }.merged_identical())
}
