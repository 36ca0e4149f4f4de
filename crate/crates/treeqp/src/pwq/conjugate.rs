//! Conjugation of indicator-regularized consistent functions in linear time.
//!
//! The conjugate of a consistent function equals, on each slope interval, the
//! conjugate of a single piece. Which piece wins switches exactly at the
//! slopes of *feasible common tangents*: lines tangent to two pieces inside
//! their own breakpoint intervals. The sweep below discovers those switch
//! slopes left to right, maintaining a stack of (slope, piece) pairs the same
//! way a convex-hull scan maintains its extreme points: a new piece either
//! extends the envelope (ADD) or reveals the stack top as interior to the
//! epigraph and evicts it (DELETE).
//!
//! The indicator term is folded in afterwards: subtracting `lambda` from the
//! conjugate of the base and carving in the flat plateau at level `-f(0)`
//! between the two slopes where the shifted conjugate crosses it.

use super::{
    quadratic_roots, rel_close, Conjugate, IndicatorCost, PiecewiseQuadratic, PwqError,
    Quadratic, SLOPE_SLACK,
};

/// Containment in `[lo, hi]` with a small relative slack; tangency points
/// that land on a breakpoint are legitimate.
fn in_interval(t: f64, lo: f64, hi: f64) -> bool {
    in_interval_slack(t, lo, hi, 0.0)
}

fn in_interval_slack(t: f64, lo: f64, hi: f64, slack: f64) -> bool {
    let tol = 1e-9 * (1.0 + t.abs()) + slack;
    t >= lo - tol && t <= hi + tol
}

/// Slope of the feasible common tangent of two strongly convex pieces, if one
/// exists.
///
/// `pk` lives on `[k_lo, k_hi]`, `pl` on `[l_lo, l_hi]`, with `k_hi <= l_lo`.
/// The candidate slopes are the intersections of the conjugates (equal
/// tangent intercepts); a candidate is feasible when both tangency points
/// fall inside their piece's interval. At most one candidate is feasible.
/// Returns `+inf` when no candidate is tangent to `pl` inside its interval,
/// `-inf` when `pl` admits an in-interval tangency but `pk` does not.
pub fn common_tangent_slope(
    pk: &Quadratic,
    (k_lo, k_hi): (f64, f64),
    pl: &Quadratic,
    (l_lo, l_hi): (f64, f64),
) -> Result<f64, PwqError> {
    if pk.a <= 0.0 {
        return Err(PwqError::DegeneratePiece(pk.a));
    }
    if pl.a <= 0.0 {
        return Err(PwqError::DegeneratePiece(pl.a));
    }
    if pk.approx_same(pl) {
        return Err(PwqError::IdenticalPieces);
    }
    // Equal tangent slopes and intercepts reduce to one quadratic in the
    // left tangency point t1,
    //
    //     4 ak da t1^2 + 4 ak db t1 + (4 al dc - db^2) = 0,
    //
    // in the raw coefficient differences. The pieces produced along deep
    // chains are nearly parallel (differences many orders below the
    // coefficients themselves), and this form stays exact there, where the
    // textbook conjugate-intersection quadratic cancels catastrophically.
    let da = pl.a - pk.a;
    let db = pl.b - pk.b;
    let dc = pl.c - pk.c;
    let qa = 4.0 * pk.a * da;
    let qb = 4.0 * pk.a * db;
    let qc = 4.0 * pl.a * dc - db * db;
    // Coefficient differences at or below rounding noise carry no
    // information; treat the equation at the highest order that is real.
    let eps = f64::EPSILON;
    let err_a = 4.0 * pk.a * eps * (pk.a.abs() + pl.a.abs());
    let err_b = 4.0 * pk.a * eps * (pk.b.abs() + pl.b.abs());
    let err_c = 4.0 * pl.a * eps * (pk.c.abs() + pl.c.abs()) + eps * db * db;
    let mut eff_err_a = err_a;
    let t1_roots = if qa.abs() > 8.0 * err_a {
        quadratic_roots(qa, qb, qc)
    } else if qb.abs() > 8.0 * err_b {
        // Parallel up to noise: the conjugates cross once; the dropped
        // curvature term joins the error budget.
        eff_err_a = err_a.max(qa.abs());
        vec![-qc / qb]
    } else {
        // Vertical shifts of one another: the lower piece dominates
        // outright and no common tangent exists.
        return Ok(if dc < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY });
    };
    // First-order error bound on a root: residual of the perturbed
    // coefficients over the derivative at the root. Near-parallel pairs at
    // large coordinates are decided far outside any fixed tolerance, so the
    // containment slack has to track the conditioning.
    let root_err = |t: f64| {
        let denom = (2.0 * qa * t + qb).abs().max(1e-300);
        let bound = (eff_err_a * t * t + err_b * t.abs() + err_c) / denom;
        let cap = 1e-2 * (1.0 + t.abs());
        (bound.min(cap), bound > cap)
    };
    let dist = |t: f64, lo: f64, hi: f64| (lo - t).max(t - hi).max(0.0);
    let mut l_hit = false;
    // When the error bound exceeds what any containment test can absorb, the
    // classification is undecidable in doubles; the least-violating finite
    // slope is as good an answer as exists and keeps the sweep well-formed.
    let mut fog: Option<(f64, f64)> = None;
    for &t1 in &t1_roots {
        if !t1.is_finite() {
            continue;
        }
        let (slack, foggy) = root_err(t1);
        let t2 = (2.0 * pk.a * t1 - db) / (2.0 * pl.a);
        let l_in = in_interval_slack(t2, l_lo, l_hi, slack);
        l_hit |= l_in;
        if l_in && in_interval_slack(t1, k_lo, k_hi, slack) {
            return Ok(2.0 * pk.a * t1 + pk.b);
        }
        if foggy {
            let violation = dist(t1, k_lo, k_hi) + dist(t2, l_lo, l_hi);
            if fog.is_none_or(|(v, _)| violation < v) {
                fog = Some((violation, 2.0 * pk.a * t1 + pk.b));
            }
        }
    }
    if let Some((_, s)) = fog {
        // Any feasible tangent slope lies in both pieces' tangent ranges;
        // clamping there keeps an undecidable answer local so it cannot
        // corrupt the envelope far away.
        let lo = pk.deriv_at_or(k_lo, f64::NEG_INFINITY).max(pl.deriv_at_or(l_lo, f64::NEG_INFINITY));
        let hi = pk.deriv_at_or(k_hi, f64::INFINITY).min(pl.deriv_at_or(l_hi, f64::INFINITY));
        return Ok(s.clamp(lo.min(hi), hi.max(lo)));
    }
    Ok(if l_hit { f64::NEG_INFINITY } else { f64::INFINITY })
}

/// One step of the conjugation sweep, reported to the trace hook together
/// with the candidate-breakpoint list and piece list as they stand after the
/// step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepStep {
    Add { slope: f64, piece: usize },
    Delete { slope: f64, piece: usize },
}

/// The ADD/DELETE sweep over the pieces of a semi-consistent base. Returns
/// the breakpoint list (with infinite sentinels) and the selected piece
/// indices of the conjugate of the base.
fn breakpoint_sweep<H>(
    base: &PiecewiseQuadratic,
    hook: &mut H,
) -> Result<(Vec<f64>, Vec<usize>), PwqError>
where
    H: FnMut(SweepStep, &[f64], &[usize]),
{
    let n = base.piece_count();
    let mut slopes = vec![f64::NEG_INFINITY];
    let mut picked = vec![0usize];
    let mut j = 1;
    while j < n {
        let i = *picked.last().unwrap();
        let s = match common_tangent_slope(
            &base.pieces()[i],
            base.interval(i),
            &base.pieces()[j],
            base.interval(j),
        ) {
            // A non-adjacent duplicate of the stack top contributes the same
            // conjugate piece, so the envelope does not change; but later
            // tangency tests must run against the duplicate's interval, the
            // rightmost place this quadratic is active.
            Err(PwqError::IdenticalPieces) => {
                *picked.last_mut().unwrap() = j;
                j += 1;
                continue;
            }
            other => other?,
        };
        let end = *slopes.last().unwrap();
        let add = if end == f64::NEG_INFINITY {
            s != f64::NEG_INFINITY
        } else if end == f64::INFINITY {
            false
        } else {
            // Ties go to DELETE: equal slopes mean the middle piece is
            // redundant for the envelope.
            s > end + SLOPE_SLACK * (1.0 + end.abs())
        };
        if add {
            slopes.push(s);
            picked.push(j);
            hook(SweepStep::Add { slope: s, piece: j }, &slopes, &picked);
            j += 1;
        } else {
            if picked.len() == 1 {
                // The leftmost piece can never leave the envelope of a
                // semi-consistent function; having to evict it means the
                // tangency order broke down.
                return Err(PwqError::Inconsistent);
            }
            let slope = slopes.pop().unwrap();
            let piece = picked.pop().unwrap();
            hook(SweepStep::Delete { slope, piece }, &slopes, &picked);
        }
    }
    if *slopes.last().unwrap() == f64::INFINITY {
        // An infeasible tangent survived to the end; the representation
        // cannot be completed.
        return Err(PwqError::Inconsistent);
    }
    slopes.push(f64::INFINITY);
    Ok((slopes, picked))
}

/// Both solutions of `gstar(s) - lambda = -g0`, ascending.
///
/// `gstar` must be the conjugate of a function with strongly convex pieces,
/// so it is strictly convex and dips below `lambda - g0` at the slope tangent
/// at zero; the equation then has exactly two roots. Fewer roots after the
/// scan signal numerical corruption upstream.
pub fn envelope_roots(
    gstar: &PiecewiseQuadratic,
    lambda: f64,
    g0: f64,
) -> Result<(f64, f64), PwqError> {
    if lambda <= 0.0 {
        return Err(PwqError::NonpositiveLambda(lambda));
    }
    let mut roots: Vec<f64> = Vec::with_capacity(2);
    for (k, p) in gstar.pieces().iter().enumerate() {
        let (lo, hi) = gstar.interval(k);
        for r in quadratic_roots(p.a, p.b, p.c - lambda + g0) {
            if in_interval(r, lo, hi) && !roots.iter().any(|&x| rel_close(x, r, 1e-9)) {
                roots.push(r);
            }
        }
    }
    if roots.len() < 2 {
        return Err(PwqError::EnvelopeDegenerate);
    }
    let lo = roots.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = roots.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Incremental builder that tolerates zero-width segments produced by
/// coincident breakpoints.
struct Builder {
    bps: Vec<f64>,
    pieces: Vec<Quadratic>,
}

impl Builder {
    fn new() -> Self {
        Builder { bps: vec![f64::NEG_INFINITY], pieces: Vec::new() }
    }

    /// Appends `piece` on `(last, upper]`, skipping empty segments.
    fn push(&mut self, piece: Quadratic, upper: f64) {
        let last = *self.bps.last().unwrap();
        if upper <= last || (upper - last) <= 1e-13 * (1.0 + upper.abs().min(last.abs())) {
            return;
        }
        self.pieces.push(piece);
        if upper != f64::INFINITY {
            self.bps.push(upper);
        }
    }

    fn finish(mut self) -> Result<PiecewiseQuadratic, PwqError> {
        self.bps.push(f64::INFINITY);
        Ok(PiecewiseQuadratic::from_parts(self.bps, self.pieces)?.merged_identical())
    }
}

impl IndicatorCost {
    /// The Fenchel conjugate, computed by the breakpoint sweep in time linear
    /// in the number of pieces. The result has at most two pieces more than
    /// the base.
    pub fn conjugate(&self) -> Result<Conjugate, PwqError> {
        self.conjugate_traced(&mut |_: SweepStep, _: &[f64], _: &[usize]| {})
    }

    /// Same as [`IndicatorCost::conjugate`], invoking `hook` after every
    /// ADD/DELETE step of the sweep with the lists as they stand. Tests use
    /// this to check that both lists stay strictly increasing throughout.
    pub fn conjugate_traced<H>(&self, hook: &mut H) -> Result<Conjugate, PwqError>
    where
        H: FnMut(SweepStep, &[f64], &[usize]),
    {
        if self.has_indicator && self.lambda <= 0.0 {
            return Err(PwqError::NonpositiveLambda(self.lambda));
        }
        for p in self.base.pieces() {
            if p.a <= 0.0 {
                return Err(PwqError::DegeneratePiece(p.a));
            }
        }
        let (slopes, picked) = breakpoint_sweep(&self.base, hook)?;
        let mut conj_pieces = Vec::with_capacity(picked.len());
        for &k in &picked {
            conj_pieces.push(self.base.pieces()[k].conjugate()?);
        }
        let gstar = PiecewiseQuadratic::from_parts(slopes, conj_pieces)?.merged_identical();
        if !self.has_indicator {
            return Ok(Conjugate::from_inner(gstar));
        }

        // Carve in the plateau: f*(s) = max(-f(0), gstar(s) - lambda).
        let g0 = self.base.eval(0.0);
        let (s1, s2) = match envelope_roots(&gstar, self.lambda, g0) {
            Ok(roots) => roots,
            Err(PwqError::EnvelopeDegenerate) => {
                // The plateau can be empty: when the base sits strictly above
                // its convex envelope at zero by more than lambda, the flat
                // level -f(0) never wins and the conjugate is just the
                // shifted conjugate of the base. Confirm rather than assume.
                let gmin = gstar.min_value();
                if gmin - self.lambda >= -g0 - 1e-9 * (1.0 + g0.abs()) {
                    let shifted =
                        gstar.add_quadratic(&Quadratic::new(0.0, 0.0, -self.lambda));
                    return Ok(Conjugate::from_inner(shifted));
                }
                return Err(PwqError::EnvelopeDegenerate);
            }
            Err(e) => return Err(e),
        };
        let drop = Quadratic::new(0.0, 0.0, -self.lambda);
        let flat = Quadratic::new(0.0, 0.0, -g0);
        let i1 = gstar.piece_index(s1);
        let i2 = gstar.piece_index(s2);
        let mut out = Builder::new();
        for k in 0..=i1 {
            let upper = gstar.interval(k).1.min(s1);
            out.push(gstar.pieces()[k].add(&drop), upper);
        }
        out.push(flat, s2);
        for k in i2..gstar.piece_count() {
            let upper = gstar.interval(k).1;
            if upper <= s2 {
                continue;
            }
            out.push(gstar.pieces()[k].add(&drop), upper);
        }
        Ok(Conjugate::from_inner(out.finish()?))
    }
}
