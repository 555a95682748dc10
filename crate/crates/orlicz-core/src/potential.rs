//! Piecewise-monotone potentials.
//!
//! A potential is a measurable φ: ℝ → [0, ∞] represented as a finite union
//! of strictly monotone C¹ pieces with pairwise-disjoint interiors, +∞ off
//! the union. Each piece carries one branch of φ on which the inverse is
//! single-valued, which makes level sets finite and preimage enumeration
//! exact. Constant pieces are rejected at construction.
//!
//! Pieces are drawn from a fixed expression grammar (`c|s|^p + d`,
//! `c e^{b s}`, affine), which keeps derivatives, inverses and integrals in
//! closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default monotone bound witness: unbounded intervals are evaluated at
/// ±1e9 to certify piece ranges and bracket roots.
const WITNESS: f64 = 1e9;

/// Samples used to spot-check monotonicity and derivative sign.
const MONO_SAMPLES: usize = 64;

/// Relative root tolerance for preimage solving.
const ROOT_TOL: f64 = 1e-12;
const ROOT_MAX_ITER: usize = 200;

/// One expression from the piece grammar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expr", rename_all = "snake_case")]
pub enum PieceExpr {
    /// `c * |s|^p + d`
    PowerAbs { c: f64, p: f64, d: f64 },
    /// `c * exp(b * s)`
    Exp { c: f64, b: f64 },
    /// `a * s + b`
    Affine { a: f64, b: f64 },
}

impl PieceExpr {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            PieceExpr::PowerAbs { c, p, d } => c * s.abs().powf(p) + d,
            PieceExpr::Exp { c, b } => c * (b * s).exp(),
            PieceExpr::Affine { a, b } => a * s + b,
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match *self {
            PieceExpr::PowerAbs { c, p, .. } => {
                if s == 0.0 {
                    // One-sided limit; sign is irrelevant at a measure-zero point.
                    if p > 1.0 {
                        0.0
                    } else if p == 1.0 {
                        c
                    } else {
                        f64::INFINITY
                    }
                } else {
                    c * p * s.abs().powf(p - 1.0) * s.signum()
                }
            }
            PieceExpr::Exp { c, b } => c * b * (b * s).exp(),
            PieceExpr::Affine { a, .. } => a,
        }
    }

    /// Closed-form inverse on the branch containing `s_hint`'s sign; `y`
    /// must lie in the branch range.
    fn invert(&self, y: f64, negative_branch: bool) -> f64 {
        match *self {
            PieceExpr::PowerAbs { c, p, d } => {
                let r = ((y - d) / c).max(0.0).powf(1.0 / p);
                if negative_branch {
                    -r
                } else {
                    r
                }
            }
            PieceExpr::Exp { c, b } => (y / c).ln() / b,
            PieceExpr::Affine { a, b } => (y - b) / a,
        }
    }

    /// Antiderivative of the expression.
    fn antiderivative(&self, s: f64) -> f64 {
        match *self {
            PieceExpr::PowerAbs { c, p, d } => c * s.signum() * s.abs().powf(p + 1.0) / (p + 1.0) + d * s,
            PieceExpr::Exp { c, b } => c / b * (b * s).exp(),
            PieceExpr::Affine { a, b } => 0.5 * a * s * s + b * s,
        }
    }

    fn is_constant(&self) -> bool {
        match *self {
            PieceExpr::PowerAbs { c, p, .. } => c == 0.0 || p == 0.0,
            PieceExpr::Exp { c, b } => c == 0.0 || b == 0.0,
            PieceExpr::Affine { a, .. } => a == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// One strictly monotone branch of a potential.
#[derive(Debug, Clone)]
pub struct MonotonePiece {
    lo: f64,
    hi: f64,
    expr: PieceExpr,
    direction: Direction,
    /// Range of φ over the piece as (min, max), computed at construction.
    y_lo: f64,
    y_hi: f64,
}

impl MonotonePiece {
    pub fn new(lo: f64, hi: f64, expr: PieceExpr) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidPotential(format!("degenerate interval [{lo}, {hi}]")));
        }
        if expr.is_constant() {
            return Err(Error::InvalidPotential(
                "constant piece rejected: level sets must be finite".into(),
            ));
        }
        if let PieceExpr::PowerAbs { .. } = expr {
            if lo < 0.0 && hi > 0.0 {
                return Err(Error::InvalidPotential(
                    "power piece straddles 0 and is not monotone there".into(),
                ));
            }
        }
        let (lo_w, hi_w) = sample_window(&expr, lo.max(-WITNESS), hi.min(WITNESS));
        // Strict monotonicity and derivative sign at equispaced samples.
        let mut last = f64::NAN;
        let mut dir: Option<Direction> = None;
        for i in 0..MONO_SAMPLES {
            let frac = (i as f64 + 0.5) / MONO_SAMPLES as f64;
            let s = lo_w + frac * (hi_w - lo_w);
            let v = expr.eval(s);
            if !v.is_finite() || v == 0.0 {
                // Overflow/underflow region of an admissible piece; samples
                // there cannot distinguish strict monotonicity.
                continue;
            }
            if last.is_finite() {
                let step_dir = if v > last {
                    Direction::Increasing
                } else if v < last {
                    Direction::Decreasing
                } else {
                    return Err(Error::InvalidPotential(format!(
                        "piece is not strictly monotone near s = {s}"
                    )));
                };
                match dir {
                    None => dir = Some(step_dir),
                    Some(d) if d != step_dir => {
                        return Err(Error::InvalidPotential(format!(
                            "piece changes monotonicity near s = {s}"
                        )))
                    }
                    _ => {}
                }
            }
            let want_sign = match dir {
                Some(Direction::Increasing) => 1.0,
                Some(Direction::Decreasing) => -1.0,
                None => 0.0,
            };
            if want_sign != 0.0 {
                let ds = expr.deriv(s);
                if ds.is_finite() && ds * want_sign <= 0.0 {
                    return Err(Error::InvalidPotential(format!(
                        "derivative sign disagrees with monotone direction at s = {s}"
                    )));
                }
            }
            last = v;
        }
        let direction = dir.ok_or_else(|| {
            Error::InvalidPotential("could not certify a monotone direction".into())
        })?;
        let v_lo = limit_value(&expr, lo, lo_w);
        let v_hi = limit_value(&expr, hi, hi_w);
        let (y_lo, y_hi) = if v_lo <= v_hi { (v_lo, v_hi) } else { (v_hi, v_lo) };
        if y_lo < -1e-12 {
            return Err(Error::InvalidPotential(format!(
                "potential takes negative value {y_lo} on [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi, expr, direction, y_lo: y_lo.max(0.0), y_hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn expr(&self) -> &PieceExpr {
        &self.expr
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Range of the piece as `(min, max)`.
    pub fn range(&self) -> (f64, f64) {
        (self.y_lo, self.y_hi)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.expr.eval(s)
    }

    pub fn deriv(&self, s: f64) -> f64 {
        self.expr.deriv(s)
    }

    fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }

    fn negative_branch(&self) -> bool {
        // Only meaningful for PowerAbs pieces, which cannot straddle 0.
        self.hi <= 0.0
    }

    /// Closed-form preimage of `y` on this piece (clamped to the interval).
    pub fn invert(&self, y: f64) -> f64 {
        let s = self.expr.invert(y, self.negative_branch());
        s.clamp(self.lo, self.hi)
    }

    /// Bisection-refined root of `φ(s) = y`, accurate to `1e-12` relative.
    /// Returns `None` when `y` lies outside the piece range.
    pub fn solve(&self, y: f64) -> Option<f64> {
        let pad = 1e-12 * (1.0 + y.abs());
        if y < self.y_lo - pad || y > self.y_hi + pad {
            return None;
        }
        let y = y.clamp(self.y_lo, self.y_hi);
        let mut lo = self.lo.max(-WITNESS);
        let mut hi = self.hi.min(WITNESS);
        // Signed residual that is increasing in s.
        let sgn = match self.direction {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        };
        let f = |s: f64| sgn * (self.expr.eval(s) - y);
        let (mut f_lo, mut f_hi) = (f(lo), f(hi));
        if f_lo > 0.0 {
            return Some(lo);
        }
        if f_hi < 0.0 {
            return Some(hi);
        }
        for _ in 0..ROOT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= ROOT_TOL * mid.abs().max(1.0) {
                return Some(mid);
            }
            let fm = f(mid);
            if fm == 0.0 {
                return Some(mid);
            }
            if fm < 0.0 {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
        }
        let _ = (f_lo, f_hi);
        Some(0.5 * (lo + hi))
    }

    /// `∫ φ(s) ds` over the piece.
    fn integral(&self, index: usize) -> Result<f64> {
        let v = self.expr.antiderivative(self.hi) - self.expr.antiderivative(self.lo);
        if !v.is_finite() {
            return Err(Error::PieceIntegral {
                piece: index,
                reason: format!("antiderivative overflowed on [{}, {}]", self.lo, self.hi),
            });
        }
        Ok(v)
    }

    /// Sub-interval of the piece where `φ <= b`, or `None` when empty.
    pub fn sublevel(&self, b: f64) -> Option<(f64, f64)> {
        if b < self.y_lo {
            return None;
        }
        if b >= self.y_hi {
            return Some((self.lo, self.hi));
        }
        let s_b = self.invert(b);
        match self.direction {
            Direction::Increasing => Some((self.lo, s_b)),
            Direction::Decreasing => Some((s_b, self.hi)),
        }
    }
}

/// Shrinks a sampling interval to where the expression stays representable
/// (exponential pieces overflow/underflow on astronomically long intervals).
fn sample_window(expr: &PieceExpr, lo: f64, hi: f64) -> (f64, f64) {
    if let PieceExpr::Exp { c, b } = *expr {
        // Keep |b s + ln c| within ±300 so values stay normal floats.
        let (w_lo, w_hi) = ((-300.0 - c.abs().ln()) / b, (300.0 - c.abs().ln()) / b);
        let (w_lo, w_hi) = if w_lo <= w_hi { (w_lo, w_hi) } else { (w_hi, w_lo) };
        let a = lo.max(w_lo);
        let b2 = hi.min(w_hi);
        if a < b2 {
            return (a, b2);
        }
    }
    (lo, hi)
}

fn limit_value(expr: &PieceExpr, endpoint: f64, _witness: f64) -> f64 {
    if endpoint.is_finite() {
        return expr.eval(endpoint);
    }
    // Analytic limit at an infinite endpoint.
    let toward_plus = endpoint == f64::INFINITY;
    match *expr {
        PieceExpr::PowerAbs { c, d, .. } => {
            if c > 0.0 {
                f64::INFINITY
            } else {
                d
            }
        }
        PieceExpr::Exp { c, b } => {
            if (b > 0.0) == toward_plus {
                c.signum() * f64::INFINITY
            } else {
                0.0
            }
        }
        PieceExpr::Affine { a, .. } => {
            if (a > 0.0) == toward_plus {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
    }
}

/// A potential φ: ℝ → [0, ∞].
#[derive(Debug, Clone)]
pub struct Potential {
    pieces: Vec<MonotonePiece>,
    domain_measure: f64,
    t_sup: f64,
    t_crit: f64,
    alpha_max: f64,
    spec: PotentialSpec,
}

impl Potential {
    /// `φ(s) = |s|^p` on all of ℝ, for `p > 0`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::InvalidPotential(format!("power exponent must be positive, got {p}")));
        }
        let expr = PieceExpr::PowerAbs { c: 1.0, p, d: 0.0 };
        Self::assemble(
            vec![
                MonotonePiece::new(f64::NEG_INFINITY, 0.0, expr)?,
                MonotonePiece::new(0.0, f64::INFINITY, expr)?,
            ],
            PotentialSpec::Power { p },
            true,
        )
    }

    /// `φ(s) = s` on `[0, ∞)`, +∞ on the negatives; the simplex potential.
    pub fn simplex() -> Self {
        let piece =
            MonotonePiece::new(0.0, f64::INFINITY, PieceExpr::Affine { a: 1.0, b: 0.0 }).expect("valid piece");
        Self::assemble(vec![piece], PotentialSpec::Simplex, true).expect("valid potential")
    }

    /// `φ(s) = |s|` on `[-a, a]`, +∞ outside.
    pub fn abs_bounded(a: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidPotential(format!("half-width must be positive and finite, got {a}")));
        }
        Self::assemble(
            vec![
                MonotonePiece::new(-a, 0.0, PieceExpr::Affine { a: -1.0, b: 0.0 })?,
                MonotonePiece::new(0.0, a, PieceExpr::Affine { a: 1.0, b: 0.0 })?,
            ],
            PotentialSpec::AbsBounded { a },
            true,
        )
    }

    /// `φ(s) = s` on the first `m` dyadic intervals `[k, k + 2^{-k})`.
    ///
    /// The classical counterexample domain: disconnected, non-symmetric and
    /// far from the origin. The infimum of φ here is 1 rather than 0, so the
    /// essential-infimum check is waived for this builtin.
    pub fn dyadic_ladder(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidPotential("ladder needs at least one interval".into()));
        }
        let mut pieces = Vec::with_capacity(m);
        let mut specs = Vec::with_capacity(m);
        for k in 1..=m {
            let lo = k as f64;
            let hi = k as f64 + (0.5f64).powi(k as i32);
            pieces.push(MonotonePiece::new(lo, hi, PieceExpr::Affine { a: 1.0, b: 0.0 })?);
            specs.push(PieceSpec { lo: Some(lo), hi: Some(hi), expr: PieceExpr::Affine { a: 1.0, b: 0.0 } });
        }
        Self::assemble(pieces, PotentialSpec::Pieces { pieces: specs }, false)
    }

    /// Builds a potential from explicit pieces. The essential infimum over
    /// the pieces must be zero.
    pub fn from_pieces(pieces: Vec<MonotonePiece>) -> Result<Self> {
        let specs = pieces
            .iter()
            .map(|p| PieceSpec {
                lo: if p.lo.is_finite() { Some(p.lo) } else { None },
                hi: if p.hi.is_finite() { Some(p.hi) } else { None },
                expr: p.expr,
            })
            .collect();
        Self::assemble(pieces, PotentialSpec::Pieces { pieces: specs }, true)
    }

    fn assemble(mut pieces: Vec<MonotonePiece>, spec: PotentialSpec, check_inf: bool) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidPotential("potential needs at least one piece".into()));
        }
        pieces.sort_by(|a, b| a.lo.partial_cmp(&b.lo).expect("finite ordering"));
        for w in pieces.windows(2) {
            if w[1].lo < w[0].hi - 1e-12 * (1.0 + w[0].hi.abs()) {
                return Err(Error::InvalidPotential(format!(
                    "pieces [{}, {}] and [{}, {}] overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        let ess_inf = pieces.iter().map(|p| p.y_lo).fold(f64::INFINITY, f64::min);
        if check_inf && ess_inf > 1e-9 {
            return Err(Error::InvalidPotential(format!(
                "essential infimum must be 0, found {ess_inf}"
            )));
        }
        let domain_measure: f64 = pieces.iter().map(|p| p.hi - p.lo).sum();
        let t_sup = pieces.iter().map(|p| p.y_hi).fold(0.0, f64::max);
        let t_crit = if domain_measure.is_finite() {
            let mut total = 0.0;
            for (i, p) in pieces.iter().enumerate() {
                total += p.integral(i)?;
            }
            total / domain_measure
        } else {
            f64::INFINITY
        };
        // With finitely many pieces, a finite domain forces a bounded φ, so
        // Z(α) is finite for every α; an infinite domain forces Z(α) = ∞ for
        // all α >= 0.
        let alpha_max = if domain_measure.is_finite() { f64::INFINITY } else { 0.0 };
        Ok(Self { pieces, domain_measure, t_sup, t_crit, alpha_max, spec })
    }

    pub fn pieces(&self) -> &[MonotonePiece] {
        &self.pieces
    }

    /// Lebesgue measure of the domain `{φ < ∞}` (possibly +∞).
    pub fn domain_measure(&self) -> f64 {
        self.domain_measure
    }

    /// Essential supremum of φ on its domain.
    pub fn t_sup(&self) -> f64 {
        self.t_sup
    }

    /// Domain average of φ (+∞ when the domain has infinite measure).
    pub fn t_crit(&self) -> f64 {
        self.t_crit
    }

    /// Supremum of tilts with a finite partition function.
    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    /// `(t_sup, t_crit)`.
    pub fn thresholds(&self) -> (f64, f64) {
        (self.t_sup, self.t_crit)
    }

    /// φ(s); +∞ off the domain.
    pub fn eval(&self, s: f64) -> f64 {
        for p in &self.pieces {
            if p.contains(s) {
                return p.eval(s).max(0.0);
            }
        }
        f64::INFINITY
    }

    /// All solutions of `φ(s) = y`, one bisection-refined root per piece
    /// whose range contains `y`. Empty when `y` misses every piece range.
    pub fn preimage(&self, y: f64) -> Vec<f64> {
        let mut roots: Vec<f64> = self.pieces.iter().filter_map(|p| p.solve(y)).collect();
        roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + a.abs()));
        roots
    }

    /// Intervals `{φ <= b}` as a finite union across pieces.
    pub fn sublevel_intervals(&self, b: f64) -> Vec<(f64, f64)> {
        self.pieces.iter().filter_map(|p| p.sublevel(b)).collect()
    }

    /// Domain intervals (clamped to the bound witness when unbounded).
    pub fn domain_intervals(&self) -> Vec<(f64, f64)> {
        self.pieces.iter().map(|p| (p.lo, p.hi)).collect()
    }

    /// A point where φ attains its essential infimum.
    pub fn minimizer(&self) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for p in &self.pieces {
            let s = match p.direction {
                Direction::Increasing => p.lo.max(-WITNESS),
                Direction::Decreasing => p.hi.min(WITNESS),
            };
            let v = p.eval(s);
            if v < best.0 {
                best = (v, s);
            }
        }
        best.1
    }

    /// Serializable description (round-trips bit-exactly through JSON).
    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.spec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PotentialSpec = serde_json::from_str(text)?;
        Self::from_spec(&spec)
    }

    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        match spec {
            PotentialSpec::Power { p } => Self::power(*p),
            PotentialSpec::Simplex => Ok(Self::simplex()),
            PotentialSpec::AbsBounded { a } => Self::abs_bounded(*a),
            PotentialSpec::Pieces { pieces } => {
                let built: Result<Vec<MonotonePiece>> = pieces
                    .iter()
                    .map(|ps| {
                        MonotonePiece::new(
                            ps.lo.unwrap_or(f64::NEG_INFINITY),
                            ps.hi.unwrap_or(f64::INFINITY),
                            ps.expr,
                        )
                    })
                    .collect();
                // Keep the original spec so serialization round-trips even
                // for the infimum-waived ladder builtin.
                let mut p = Self::assemble(built?, spec.clone(), false)?;
                p.spec = spec.clone();
                Ok(p)
            }
        }
    }
}

/// Serialized form of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Power { p: f64 },
    Simplex,
    AbsBounded { a: f64 },
    Pieces { pieces: Vec<PieceSpec> },
}

/// Serialized piece; `lo = null` means −∞ and `hi = null` means +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    #[serde(flatten)]
    pub expr: PieceExpr,
}
