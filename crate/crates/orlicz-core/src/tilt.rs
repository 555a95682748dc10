//! Exponential tilting: partition function, tilt solver, rate function and
//! the tilted coordinate law.
//!
//! A `TiltFamily` wraps a base density on the level axis — either the
//! pushforward ψ of a potential or a user-supplied probability density —
//! and exposes the cumulant pipeline `Z(α)`, `W(α) = ∂_α log Z`,
//! `σ²(α) = ∂²_α log Z`, the inverse map `t ↦ α_t` with `W(α_t) = t`, and
//! the rate function `I(t) = t α_t − log(Z(α_t)/Z(0))`.
//!
//! All quadrature runs on the base lattice in log domain, so the family is
//! exactly the exponential family of the discretized base measure; `W` is
//! strictly increasing and the tilt equation has a unique lattice solution.
//! A geometric tail certificate guards every evaluation: tilts whose mass
//! is not resolved by the grid are reported as divergent rather than
//! silently truncated.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, KahanSum};
use crate::potential::Potential;
use crate::pushforward::{build_psi, certify_tail};

/// Solver tolerance: `|W(α_t) − t| <= 1e-10 · max(1, t)`.
const SOLVE_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 30;

#[derive(Debug, Clone, Copy)]
struct CachePoint {
    log_z: f64,
    w: f64,
    sigma2: f64,
}

/// Cached evaluators for the tilted family of one base density.
pub struct TiltFamily {
    potential: Option<Potential>,
    psi: GridDensity,
    /// `log Z(0)`: log of the lattice mass of the base. Only meaningful as a
    /// normalizer when the base has finite total mass (finite domain or a
    /// probability density).
    log_z0: f64,
    z0_valid: bool,
    t_sup: f64,
    alpha_max_est: f64,
    cache: Mutex<BTreeMap<u64, CachePoint>>,
    samplers: Mutex<BTreeMap<u64, Arc<InverseCdfTable>>>,
}

impl TiltFamily {
    /// Builds the family over the pushforward ψ of a potential, tabulated on
    /// `[0, y_max]` with `n_grid` nodes.
    pub fn from_potential(potential: &Potential, y_max: f64, n_grid: usize) -> Result<Self> {
        let psi = build_psi(potential, y_max, n_grid)?;
        let z0_valid = potential.domain_measure().is_finite();
        let t_sup = potential.t_sup();
        let alpha_max_est = estimate_alpha_max(&psi);
        Ok(Self {
            potential: Some(potential.clone()),
            log_z0: psi.mass().ln(),
            z0_valid,
            t_sup,
            alpha_max_est,
            cache: Mutex::new(BTreeMap::new()),
            samplers: Mutex::new(BTreeMap::new()),
            psi,
        })
    }

    /// Builds the family over an explicit base density on the level axis.
    pub fn from_density(base: GridDensity) -> Result<Self> {
        if !(base.mass() > 0.0) {
            return Err(Error::Domain("base density has no mass".into()));
        }
        let t_sup = if base.bounded_support() {
            // Essential sup of the support.
            let last = base.values().iter().rposition(|&v| v > 0.0).unwrap_or(0);
            base.node(last)
        } else {
            f64::INFINITY
        };
        let alpha_max_est = estimate_alpha_max(&base);
        Ok(Self {
            potential: None,
            log_z0: base.mass().ln(),
            z0_valid: true,
            t_sup,
            alpha_max_est,
            cache: Mutex::new(BTreeMap::new()),
            samplers: Mutex::new(BTreeMap::new()),
            psi: base,
        })
    }

    pub fn psi(&self) -> &GridDensity {
        &self.psi
    }

    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }

    pub fn t_sup(&self) -> f64 {
        self.t_sup
    }

    /// Largest certifiable tilt of the form ±2^j on this grid.
    pub fn alpha_max_est(&self) -> f64 {
        self.alpha_max_est
    }

    fn point(&self, alpha: f64) -> Result<CachePoint> {
        {
            let cache = self.cache.lock().expect("tilt cache poisoned");
            if let Some(p) = cache.get(&alpha.to_bits()) {
                return Ok(*p);
            }
        }
        // Verify the tilt is resolved by the grid before trusting it.
        self.certify(alpha)?;
        let log_z = lattice_log_z(&self.psi, alpha);
        let w = lattice_w(&self.psi, alpha);
        let sigma2 = self.sigma2_fd(alpha);
        if !(sigma2 > 0.0) {
            return Err(Error::PartitionDiverged {
                alpha,
                reason: format!("tilted variance {sigma2} is not positive"),
            });
        }
        let p = CachePoint { log_z, w, sigma2 };
        self.cache.lock().expect("tilt cache poisoned").insert(alpha.to_bits(), p);
        Ok(p)
    }

    /// Richardson-extrapolated centered difference of W.
    fn sigma2_fd(&self, alpha: f64) -> f64 {
        let h = 1e-4 * alpha.abs().max(1.0);
        let d = |h: f64| (lattice_w(&self.psi, alpha + h) - lattice_w(&self.psi, alpha - h)) / (2.0 * h);
        let d_h = d(h);
        let d_h2 = d(0.5 * h);
        (4.0 * d_h2 - d_h) / 3.0
    }

    fn certify(&self, alpha: f64) -> Result<()> {
        let tilted = tilted_values(&self.psi, alpha)?;
        certify_tail(&tilted, alpha)
    }

    /// `Z(α)` by grid quadrature with a certified tail bound. When the grid
    /// cannot certify the tail the evaluation retries on a doubled grid
    /// (potential-backed families only, twice) before reporting divergence.
    pub fn partition(&self, alpha: f64) -> Result<f64> {
        Ok(self.log_partition(alpha)?.exp())
    }

    /// `log Z(α)`.
    pub fn log_partition(&self, alpha: f64) -> Result<f64> {
        match self.point(alpha) {
            Ok(p) => Ok(p.log_z),
            Err(e) => {
                if let Some(pot) = &self.potential {
                    // Lemma-style retry: double y_max (keeping dy) twice.
                    for doubling in 1..=2u32 {
                        let factor = 1usize << doubling;
                        let psi = build_psi(
                            pot,
                            self.psi.y_max() * factor as f64,
                            (self.psi.len() - 1) * factor + 1,
                        )?;
                        let tilted = tilted_values(&psi, alpha)?;
                        if certify_tail(&tilted, alpha).is_ok() {
                            return Ok(lattice_log_z(&psi, alpha));
                        }
                    }
                    Err(Error::PartitionDiverged {
                        alpha,
                        reason: "alpha beyond alpha_max: tail unresolved after doubling y_max twice"
                            .into(),
                    })
                } else {
                    Err(e)
                }
            }
        }
    }

    /// `W(α) = ∂_α log Z(α)`, the mean of the α-tilted base.
    pub fn w(&self, alpha: f64) -> Result<f64> {
        Ok(self.point(alpha)?.w)
    }

    /// `σ²(α) = ∂²_α log Z(α)` by Richardson-extrapolated differences of W.
    pub fn sigma2(&self, alpha: f64) -> Result<f64> {
        Ok(self.point(alpha)?.sigma2)
    }

    /// Solves `W(α_t) = t` by bracketing bisection with a Newton polish.
    pub fn solve_alpha(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("tilt target must be positive and finite, got {t}")));
        }
        if t >= self.t_sup {
            return Err(Error::NoTilt { t, t_sup: self.t_sup });
        }
        // Lattice W is strictly increasing with range the open hull of the
        // base support, so bracket expansion terminates for admissible t.
        let w0 = lattice_w(&self.psi, 0.0);
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        if w0 < t {
            let mut step = 1.0;
            while lattice_w(&self.psi, hi) < t {
                hi += step;
                step *= 2.0;
                if hi > 1e9 {
                    return Err(Error::NoTilt { t, t_sup: self.t_sup });
                }
            }
            lo = (hi - step / 2.0).min(0.0);
        } else {
            let mut step = 1.0;
            while lattice_w(&self.psi, lo) > t {
                lo -= step;
                step *= 2.0;
                if lo < -1e9 {
                    return Err(Error::Domain(format!(
                        "t = {t} below the resolvable range of the base grid"
                    )));
                }
            }
            hi = (lo + step / 2.0).max(0.0);
        }
        let mut alpha = 0.5 * (lo + hi);
        for _ in 0..200 {
            if hi - lo <= 1e-15 * alpha.abs().max(1.0) {
                break;
            }
            alpha = 0.5 * (lo + hi);
            if lattice_w(&self.psi, alpha) < t {
                lo = alpha;
            } else {
                hi = alpha;
            }
            if (lattice_w(&self.psi, alpha) - t).abs() <= 0.5 * SOLVE_TOL * t.abs().max(1.0) {
                break;
            }
        }
        // Newton polish on the residual W(α) − t with derivative σ²(α).
        for _ in 0..NEWTON_MAX_ITER {
            let r = lattice_w(&self.psi, alpha) - t;
            if r.abs() <= SOLVE_TOL * t.abs().max(1.0) {
                break;
            }
            let s2 = self.sigma2_fd(alpha);
            if !(s2 > 0.0) {
                break;
            }
            let next = alpha - r / s2;
            alpha = if next.is_finite() && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        // The answer is only trusted if the grid resolves this tilt.
        self.certify(alpha)?;
        Ok(alpha)
    }

    /// Rate function and tilted variance: `I(t) = t α_t − log(Z(α_t)/Z(0))`,
    /// `σ²_t`. Needs a normalizable base (finite-measure domain).
    pub fn rate_function(&self, t: f64) -> Result<(f64, f64)> {
        if !self.z0_valid {
            return Err(Error::Domain(
                "rate function needs a finite-measure base (|D| < ∞ or a probability density)".into(),
            ));
        }
        let alpha = self.solve_alpha(t)?;
        let p = self.point(alpha)?;
        let i = t * alpha - (p.log_z - self.log_z0);
        debug_assert!(i > -1e-9, "rate function came out negative: {i}");
        Ok((i.max(0.0), p.sigma2))
    }

    /// The α-tilted base as a normalized grid density.
    pub fn tilted_base(&self, alpha: f64) -> Result<GridDensity> {
        self.certify(alpha)?;
        tilted_values(&self.psi, alpha)?.normalized()
    }

    /// The Gibbs coordinate density `γ(s) ∝ e^{α φ(s)} 1_D(s)` tabulated on
    /// `[s_min, s_max]` with `n` nodes. Potential-backed families only.
    pub fn gibbs_coordinate_density(&self, alpha: f64, s_grid: (f64, f64, usize)) -> Result<GridDensity> {
        let pot = self.potential.as_ref().ok_or_else(|| {
            Error::Domain("coordinate density needs a potential-backed family".into())
        })?;
        let (s_min, s_max, n) = s_grid;
        if !(s_min < s_max) || n < 16 {
            return Err(Error::Domain("degenerate coordinate grid".into()));
        }
        if alpha >= self.alpha_max_est && !self.psi.bounded_support() {
            return Err(Error::PartitionDiverged {
                alpha,
                reason: "alpha at or beyond the certified tilt range".into(),
            });
        }
        let ds = (s_max - s_min) / (n - 1) as f64;
        let mut values = vec![0.0; n];
        for piece in pot.pieces() {
            let p_lo = piece.lo();
            let p_hi = piece.hi();
            for (i, v) in values.iter_mut().enumerate() {
                let s = s_min + i as f64 * ds;
                let cell_lo = (s - 0.5 * ds).max(s_min);
                let cell_hi = (s + 0.5 * ds).min(s_max);
                let ov_lo = cell_lo.max(p_lo);
                let ov_hi = cell_hi.min(p_hi);
                if !(ov_lo < ov_hi) {
                    continue;
                }
                // Cell-averaged at partially covered cells, pointwise inside.
                let full = ov_lo <= cell_lo && ov_hi >= cell_hi;
                let at = if full { s } else { 0.5 * (ov_lo + ov_hi) };
                let weight = if full { 1.0 } else { (ov_hi - ov_lo) / (cell_hi - cell_lo) };
                *v += (alpha * piece.eval(at).max(0.0)).exp() * weight;
            }
        }
        // Tail certificate: mass escaping the window must be negligible.
        let peak = values.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::Domain("coordinate window misses the domain".into()));
        }
        for piece in pot.pieces() {
            for (edge, outside) in [(s_min, piece.lo() < s_min - 1e-12), (s_max, piece.hi() > s_max + 1e-12)]
            {
                if !outside {
                    continue;
                }
                let y_edge = piece.eval(edge).max(0.0);
                let v_edge = (alpha * y_edge).exp();
                let slope = alpha * piece.deriv(edge);
                // Outward decay rate of e^{αφ} along the piece.
                let outward = if edge == s_min { -slope } else { slope };
                let escaped = if outward < 0.0 { v_edge / (-outward) } else { f64::INFINITY };
                if !(escaped <= 1e-10 * peak * (s_max - s_min)) {
                    return Err(Error::PartitionDiverged {
                        alpha,
                        reason: format!(
                            "coordinate window [{s_min}, {s_max}] does not contain the tilted mass"
                        ),
                    });
                }
            }
        }
        GridDensity::from_values(s_min, ds, values)?.normalized()
    }

    /// Draws one coordinate from `γ_{φ,α}` by inverse CDF with linear
    /// interpolation on an automatically sized s-grid.
    pub fn sample_coordinate<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> Result<f64> {
        let table = self.sampler_table(alpha)?;
        Ok(table.draw(rng.gen::<f64>()))
    }

    fn sampler_table(&self, alpha: f64) -> Result<Arc<InverseCdfTable>> {
        {
            let tables = self.samplers.lock().expect("sampler cache poisoned");
            if let Some(t) = tables.get(&alpha.to_bits()) {
                return Ok(t.clone());
            }
        }
        let pot = self.potential.as_ref().ok_or_else(|| {
            Error::Domain("coordinate sampling needs a potential-backed family".into())
        })?;
        // Window: sublevel hull at the level where the tilt has decayed to
        // e^{-45} (α < 0), or the full domain hull for α >= 0.
        let (s_min, s_max) = if alpha < 0.0 {
            let y_cap = 45.0 / (-alpha);
            hull(&pot.sublevel_intervals(y_cap))
                .ok_or_else(|| Error::Domain("empty sublevel set".into()))?
        } else {
            if !pot.domain_measure().is_finite() {
                return Err(Error::PartitionDiverged {
                    alpha,
                    reason: "non-negative tilt over an infinite domain".into(),
                });
            }
            hull(&pot.domain_intervals()).ok_or_else(|| Error::Domain("empty domain".into()))?
        };
        let pad = 1e-9 * (s_max - s_min);
        let density = self.gibbs_coordinate_density(alpha, (s_min - pad, s_max + pad, 1 << 13))?;
        let table = Arc::new(InverseCdfTable::new(&density));
        self.samplers.lock().expect("sampler cache poisoned").insert(alpha.to_bits(), table.clone());
        Ok(table)
    }
}

fn hull(intervals: &[(f64, f64)]) -> Option<(f64, f64)> {
    if intervals.is_empty() {
        return None;
    }
    let lo = intervals.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).max(-1e9);
    let hi = intervals.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).min(1e9);
    Some((lo, hi))
}

/// Inverse-CDF sampler over a tabulated density.
pub(crate) struct InverseCdfTable {
    y0: f64,
    dy: f64,
    cdf: Vec<f64>,
}

impl InverseCdfTable {
    pub(crate) fn new(density: &GridDensity) -> Self {
        let mut cdf = density.cdf();
        let total = *cdf.last().expect("nonempty cdf");
        for v in &mut cdf {
            *v /= total;
        }
        Self { y0: density.y0(), dy: density.dy(), cdf }
    }

    pub(crate) fn draw(&self, u: f64) -> f64 {
        let idx = self.cdf.partition_point(|&c| c < u);
        if idx == 0 {
            return self.y0;
        }
        if idx >= self.cdf.len() {
            return self.y0 + self.dy * (self.cdf.len() - 1) as f64;
        }
        let c0 = self.cdf[idx - 1];
        let c1 = self.cdf[idx];
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.y0 + self.dy * ((idx - 1) as f64 + frac)
    }
}

/// Largest α of the form ±2^j whose tilt is certified on this grid.
fn estimate_alpha_max(psi: &GridDensity) -> f64 {
    if psi.bounded_support() {
        return f64::INFINITY;
    }
    let ok = |alpha: f64| -> bool {
        tilted_values(psi, alpha).map(|g| certify_tail(&g, alpha).is_ok()).unwrap_or(false)
    };
    for j in (-40..=40).rev() {
        let alpha = (2.0f64).powi(j);
        if ok(alpha) {
            return alpha;
        }
    }
    for j in -40..=40 {
        let alpha = -((2.0f64).powi(j));
        if ok(alpha) {
            return alpha;
        }
    }
    f64::NEG_INFINITY
}

fn tilted_values(psi: &GridDensity, alpha: f64) -> Result<GridDensity> {
    let vals: Vec<f64> = (0..psi.len()).map(|i| (alpha * psi.node(i)).exp() * psi.values()[i]).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::PartitionDiverged { alpha, reason: "tilted values overflow".into() });
    }
    let mut g = GridDensity::from_values(psi.y0(), psi.dy(), vals)?;
    if psi.bounded_support() {
        g = g.mark_bounded_support();
    }
    Ok(g)
}

/// `log Σ w_j ψ_j e^{α y_j}` with a max shift.
fn lattice_log_z(psi: &GridDensity, alpha: f64) -> f64 {
    let mut shift = f64::NEG_INFINITY;
    for (i, &v) in psi.values().iter().enumerate() {
        if v > 0.0 {
            shift = shift.max(alpha * psi.node(i) + v.ln());
        }
    }
    let mut acc = KahanSum::default();
    for (i, &v) in psi.values().iter().enumerate() {
        if v > 0.0 {
            acc.add(psi.weight(i) * (alpha * psi.node(i) + v.ln() - shift).exp());
        }
    }
    shift + acc.value().ln()
}

/// Mean of the α-tilted lattice measure.
fn lattice_w(psi: &GridDensity, alpha: f64) -> f64 {
    let mut shift = f64::NEG_INFINITY;
    for (i, &v) in psi.values().iter().enumerate() {
        if v > 0.0 {
            shift = shift.max(alpha * psi.node(i) + v.ln());
        }
    }
    let mut num = KahanSum::default();
    let mut den = KahanSum::default();
    for (i, &v) in psi.values().iter().enumerate() {
        if v > 0.0 {
            let w = psi.weight(i) * (alpha * psi.node(i) + v.ln() - shift).exp();
            num.add(w * psi.node(i));
            den.add(w);
        }
    }
    num.value() / den.value()
}
