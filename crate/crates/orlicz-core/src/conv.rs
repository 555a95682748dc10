//! Convolution powers of grid densities.
//!
//! Two engines share the lattice conventions of `GridDensity`:
//!
//! * `conv_power` — the k-fold convolution by FFT exponentiation in the
//!   transform domain, zero-padded to the full support `k · y_max`. Exact to
//!   grid resolution, with negative ringing clipped and accounted.
//! * `windowed_power` — iterated squaring with re-windowing around the
//!   running mean, for m-fold convolutions of *tilted* (mean-centered)
//!   bases where the full support would not fit in memory. The window is
//!   sized in standard deviations so the clipped mass is below double
//!   precision.
//!
//! `LogTailTable` turns a windowed convolution into the stable log-integral
//! `H(x) = log ∫_{u <= x} e^{-α(u-x)} g(u) du` (or the mirrored upper
//! version) via a one-pass recurrence; conditioned sum densities and
//! log-domain tail probabilities are built from differences of H values, so
//! no partition-function powers ever materialize.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{GridDensity, KahanSum};

/// Largest FFT length `conv_power` will attempt.
const MAX_FFT_LEN: usize = 1 << 24;

/// Ringing clip budget: clipped negative mass must stay below this.
const CLIP_GATE: f64 = 1e-8;

/// Window half-width in standard deviations for iterated squaring. At 48σ
/// the discarded Gaussian-scale mass is below the double-precision floor.
const WINDOW_SIGMAS: f64 = 48.0;

/// A k-fold convolution power of a probability density.
#[derive(Debug, Clone)]
pub struct ConvPower {
    pub k: usize,
    pub density: GridDensity,
    /// Negative ringing mass removed by the clip.
    pub clip_mass: f64,
}

/// k-fold convolution of a probability density by FFT exponentiation.
pub fn conv_power(base: &GridDensity, k: usize) -> Result<ConvPower> {
    if k == 0 {
        return Err(Error::Domain("convolution power needs k >= 1".into()));
    }
    if (base.mass() - 1.0).abs() > 1e-3 {
        return Err(Error::Domain(format!(
            "convolution power expects a probability density, mass = {}",
            base.mass()
        )));
    }
    if k == 1 {
        return Ok(ConvPower { k, density: base.clone(), clip_mass: 0.0 });
    }
    let n = base.len();
    let out_len = k * (n - 1) + 1;
    let fft_len = out_len.next_power_of_two();
    if fft_len > MAX_FFT_LEN {
        return Err(Error::Domain(format!(
            "full-support convolution needs FFT length {fft_len} > {MAX_FFT_LEN}; use a coarser grid or smaller k"
        )));
    }
    let dy = base.dy();
    // Trapezoid samples: end values carry half weight.
    let mut buf = vec![Complex::new(0.0, 0.0); fft_len];
    for i in 0..n {
        buf[i].re = base.values()[i] * base.weight(i);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(fft_len).process(&mut buf);
    for z in buf.iter_mut() {
        let r = z.norm();
        let theta = z.arg();
        let rk = r.powi(k as i32);
        let kt = k as f64 * theta;
        *z = Complex::new(rk * kt.cos(), rk * kt.sin());
    }
    planner.plan_fft_inverse(fft_len).process(&mut buf);
    let scale = 1.0 / (fft_len as f64 * dy);
    let mut clip = KahanSum::default();
    let values: Vec<f64> = buf[..out_len]
        .iter()
        .map(|z| {
            let v = z.re * scale;
            if v < 0.0 {
                clip.add(-v * dy);
                0.0
            } else {
                v
            }
        })
        .collect();
    let clip_mass = clip.value();
    if clip_mass >= CLIP_GATE {
        return Err(Error::GridTooCoarse { k, clip_mass });
    }
    let density = GridDensity::from_values(base.y0() * k as f64, dy, values)?.normalized()?;
    let density = if base.bounded_support() { density.mark_bounded_support() } else { density };
    Ok(ConvPower { k, density, clip_mass })
}

/// A density on a window of the global lattice `y = (start + i) · dy`.
#[derive(Debug, Clone)]
pub(crate) struct Windowed {
    pub dy: f64,
    pub start: i64,
    pub values: Vec<f64>,
    /// Mass lost to window trims across the construction.
    pub trimmed_mass: f64,
}

impl Windowed {
    /// Converts a grid density into windowed form (trapezoid end-halving
    /// baked into the values, so plain-`dy` sums are exact thereafter).
    pub(crate) fn from_density(g: &GridDensity) -> Self {
        let n = g.len();
        let values: Vec<f64> =
            (0..n).map(|i| g.values()[i] * (g.weight(i) / g.dy())).collect();
        let start = (g.y0() / g.dy()).round() as i64;
        Windowed { dy: g.dy(), start, values, trimmed_mass: 0.0 }
    }

    pub(crate) fn y(&self, i: usize) -> f64 {
        (self.start + i as i64) as f64 * self.dy
    }

    pub(crate) fn y_end(&self) -> f64 {
        self.y(self.values.len() - 1)
    }

    pub(crate) fn mass(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &v in &self.values {
            acc.add(v * self.dy);
        }
        acc.value()
    }

    pub(crate) fn mean(&self) -> f64 {
        let mut num = KahanSum::default();
        let mut den = KahanSum::default();
        for (i, &v) in self.values.iter().enumerate() {
            num.add(v * self.dy * self.y(i));
            den.add(v * self.dy);
        }
        num.value() / den.value()
    }

    /// Linear interpolation of the density at `x` (0 outside the window).
    pub(crate) fn value_at(&self, x: f64) -> f64 {
        let pos = x / self.dy - self.start as f64;
        if pos < 0.0 || pos > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let j = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = pos - j as f64;
        self.values[j] * (1.0 - frac) + self.values[j + 1] * frac
    }

    /// Trims the window to `center ± half_width`, accounting the lost mass.
    fn trim(&mut self, center: f64, half_width: f64) {
        let lo_y = center - half_width;
        let hi_y = center + half_width;
        let lo = self.values.iter().enumerate().position(|(i, _)| self.y(i) >= lo_y).unwrap_or(0);
        let hi = self
            .values
            .iter()
            .enumerate()
            .rposition(|(i, _)| self.y(i) <= hi_y)
            .unwrap_or(self.values.len() - 1);
        if lo == 0 && hi == self.values.len() - 1 {
            return;
        }
        let mut lost = KahanSum::default();
        for &v in self.values[..lo].iter().chain(self.values[hi + 1..].iter()) {
            lost.add(v * self.dy);
        }
        self.trimmed_mass += lost.value();
        self.values = self.values[lo..=hi].to_vec();
        self.start += lo as i64;
    }
}

/// Convolution of two windowed densities on the shared lattice.
fn convolve(a: &Windowed, b: &Windowed, planner: &mut FftPlanner<f64>) -> Windowed {
    debug_assert_eq!(a.dy, b.dy);
    let out_len = a.values.len() + b.values.len() - 1;
    let fft_len = out_len.next_power_of_two();
    let fft = planner.plan_fft_forward(fft_len);
    let mut fa = vec![Complex::new(0.0, 0.0); fft_len];
    for (i, &v) in a.values.iter().enumerate() {
        fa[i].re = v * a.dy;
    }
    fft.process(&mut fa);
    let mut fb = vec![Complex::new(0.0, 0.0); fft_len];
    for (i, &v) in b.values.iter().enumerate() {
        fb[i].re = v * b.dy;
    }
    fft.process(&mut fb);
    for (za, zb) in fa.iter_mut().zip(fb.iter()) {
        *za *= *zb;
    }
    planner.plan_fft_inverse(fft_len).process(&mut fa);
    let scale = 1.0 / (fft_len as f64 * a.dy);
    let values: Vec<f64> = fa[..out_len].iter().map(|z| (z.re * scale).max(0.0)).collect();
    Windowed {
        dy: a.dy,
        start: a.start + b.start,
        values,
        trimmed_mass: a.trimmed_mass + b.trimmed_mass,
    }
}

/// m-fold convolution of `base` by binary exponentiation with re-windowing
/// around the running mean. Intended for tilted bases whose m-fold law
/// concentrates at `m · mean`.
pub(crate) fn windowed_power(base: &GridDensity, m: usize) -> Result<Windowed> {
    if m == 0 {
        return Err(Error::Domain("windowed power needs m >= 1".into()));
    }
    let mean = base.mean();
    let var = base.variance();
    let base_extent = base.y_max() - base.y0();
    let mut planner = FftPlanner::new();
    let w0 = Windowed::from_density(base);
    let window = |w: &mut Windowed, fold: usize| {
        let half = WINDOW_SIGMAS * (var * fold as f64).sqrt() + base_extent;
        w.trim(mean * fold as f64, half);
    };
    let mut acc: Option<(Windowed, usize)> = None;
    let mut sq = w0;
    let mut sq_fold = 1usize;
    let mut bits = m;
    while bits > 0 {
        if bits & 1 == 1 {
            let merged = match &acc {
                None => (sq.clone(), sq_fold),
                Some((a, a_fold)) => {
                    let mut c = convolve(a, &sq, &mut planner);
                    window(&mut c, a_fold + sq_fold);
                    (c, a_fold + sq_fold)
                }
            };
            acc = Some(merged);
        }
        bits >>= 1;
        if bits > 0 {
            let mut c = convolve(&sq, &sq, &mut planner);
            sq_fold *= 2;
            window(&mut c, sq_fold);
            sq = c;
        }
    }
    let (result, fold) = acc.expect("m >= 1");
    debug_assert_eq!(fold, m);
    if result.trimmed_mass > 1e-9 {
        return Err(Error::Domain(format!(
            "windowed convolution lost mass {:.3e}; window undersized",
            result.trimmed_mass
        )));
    }
    Ok(result)
}

/// Which side of the threshold a tail table integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TailSide {
    /// `H(x) = log ∫_{u <= x} e^{-α(u-x)} g(u) du`, stable for α <= 0.
    Lower,
    /// `H(x) = log ∫_{u >= x} e^{-α(u-x)} g(u) du`, stable for α >= 0.
    Upper,
}

/// Log-domain exponential-weighted tail integrals of a windowed density.
pub(crate) struct LogTailTable {
    side: TailSide,
    alpha: f64,
    dy: f64,
    start: i64,
    /// `R_j = ∫ up to node j` (side-dependent), linearly scaled.
    partials: Vec<f64>,
    values: Vec<f64>,
}

impl LogTailTable {
    pub(crate) fn new(w: &Windowed, alpha: f64, side: TailSide) -> Self {
        let n = w.values.len();
        let mut partials = vec![0.0; n];
        match side {
            TailSide::Lower => {
                debug_assert!(alpha <= 0.0, "lower tails need a non-positive tilt");
                // R_j = e^{α dy} R_{j-1} + dy v_j, so R_j = Σ_{i<=j} dy v_i e^{-α(y_i-y_j)}.
                let decay = (alpha * w.dy).exp();
                let mut r = 0.0;
                for j in 0..n {
                    r = r * decay + w.dy * w.values[j];
                    partials[j] = r;
                }
            }
            TailSide::Upper => {
                debug_assert!(alpha >= 0.0, "upper tails need a non-negative tilt");
                let decay = (-alpha * w.dy).exp();
                let mut r = 0.0;
                for j in (0..n).rev() {
                    r = r * decay + w.dy * w.values[j];
                    partials[j] = r;
                }
            }
        }
        Self { side, alpha, dy: w.dy, start: w.start, partials, values: w.values.clone() }
    }

    /// `H(x)`; −∞ when the integral is empty.
    pub(crate) fn log_integral(&self, x: f64) -> f64 {
        let n = self.partials.len();
        let pos = x / self.dy - self.start as f64;
        match self.side {
            TailSide::Lower => {
                if pos < 0.0 {
                    return f64::NEG_INFINITY;
                }
                if pos >= (n - 1) as f64 {
                    // All mass is below x; it decays by e^{α(x - y_end)}.
                    let y_end = (self.start + n as i64 - 1) as f64 * self.dy;
                    return self.partials[n - 1].ln() + self.alpha * (x - y_end);
                }
                let j = pos.floor() as usize;
                let y_j = (self.start + j as i64) as f64 * self.dy;
                let extra = x - y_j;
                let r_at_j = self.partials[j] * (self.alpha * extra).exp();
                // Partial cell [y_j, x], midpoint value.
                let v_mid = self.value_between(j, 0.5 * extra / self.dy);
                let partial = extra * v_mid * (-self.alpha * 0.5 * extra).exp();
                (r_at_j + partial).ln()
            }
            TailSide::Upper => {
                if pos > (n - 1) as f64 {
                    return f64::NEG_INFINITY;
                }
                if pos <= 0.0 {
                    let y0 = self.start as f64 * self.dy;
                    return self.partials[0].ln() - self.alpha * (x - y0);
                }
                let j = pos.ceil() as usize;
                let y_j = (self.start + j as i64) as f64 * self.dy;
                let extra = y_j - x;
                let r_at_j = self.partials[j] * (self.alpha * extra).exp();
                let v_mid = self.value_between(j - 1, 1.0 - 0.5 * extra / self.dy);
                let partial = extra * v_mid * (self.alpha * 0.5 * extra).exp();
                (r_at_j + partial).ln()
            }
        }
    }

    fn value_between(&self, j: usize, frac: f64) -> f64 {
        if j + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        self.values[j] * (1.0 - frac) + self.values[j + 1] * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform01(n: usize) -> GridDensity {
        GridDensity::from_fn_on_support(0.0, 1.0, n, (0.0, 1.0), |_| 1.0).unwrap()
    }

    fn exp1(y_max: f64, n: usize) -> GridDensity {
        GridDensity::from_fn_on_support(0.0, y_max, n, (0.0, f64::INFINITY), |y| (-y).exp())
            .unwrap()
            .normalized()
            .unwrap()
    }

    #[test]
    fn conv_identity_at_k1() {
        let base = uniform01(1 << 12);
        let c = conv_power(&base, 1).unwrap();
        assert_eq!(c.density.values(), base.values());
    }

    #[test]
    fn conv_square_of_uniform_is_triangle() {
        let base = uniform01(1 << 14);
        let c = conv_power(&base, 2).unwrap();
        let tri = c.density;
        let dy = tri.dy();
        // Density y on [0,1], 2−y on [1,2]; kink smoothing is O(dy).
        for i in (0..tri.len()).step_by(211) {
            let y = tri.node(i);
            let expect = if y <= 1.0 { y } else { 2.0 - y };
            assert!(
                (tri.values()[i] - expect).abs() <= dy,
                "triangle({y}) = {} vs {expect}",
                tri.values()[i]
            );
        }
        let peak = tri.value_at(1.0);
        assert!((peak - 1.0).abs() <= dy, "peak {peak}");
    }

    #[test]
    fn conv_exponential_gives_gamma_density() {
        let base = exp1(25.0, 1 << 15);
        let c = conv_power(&base, 5).unwrap();
        let g = c.density;
        let mut max_err = 0.0f64;
        for i in (0..g.len() / 2).step_by(97) {
            let y = g.node(i);
            let expect = y.powi(4) * (-y).exp() / 24.0;
            max_err = max_err.max((g.values()[i] - expect).abs());
        }
        assert!(max_err < 1e-6, "max abs error {max_err:.2e} against Gamma(5,1)");
    }

    #[test]
    fn conv_mass_mean_variance_scale_with_k() {
        let base = exp1(30.0, 1 << 13);
        let mean = base.mean();
        let var = base.variance();
        for k in [2usize, 7, 20] {
            let c = conv_power(&base, k).unwrap();
            assert!((c.density.mass() - 1.0).abs() <= 1e-6);
            assert_relative_eq!(c.density.mean(), k as f64 * mean, max_relative = 1e-4);
            assert_relative_eq!(c.density.variance(), k as f64 * var, max_relative = 1e-3);
            assert!(c.clip_mass < CLIP_GATE);
        }
    }

    #[test]
    fn windowed_power_matches_full_convolution() {
        let base = exp1(30.0, 1 << 12);
        let m = 40;
        let full = conv_power(&base, m).unwrap().density;
        let win = windowed_power(&base, m).unwrap();
        assert!(win.trimmed_mass <= 1e-12);
        assert_relative_eq!(win.mass(), 1.0, max_relative = 1e-9);
        assert_relative_eq!(win.mean(), full.mean(), max_relative = 1e-6);
        for i in (0..win.values.len()).step_by(313) {
            let y = win.y(i);
            let v_full = full.value_at(y);
            if v_full > 1e-12 {
                assert_relative_eq!(win.values[i], v_full, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn lower_tail_table_matches_direct_quadrature() {
        let base = exp1(30.0, 1 << 12);
        let w = windowed_power(&base, 12).unwrap();
        let alpha = -0.35;
        let table = LogTailTable::new(&w, alpha, TailSide::Lower);
        for x in [6.0, 9.5, 12.0, 14.2501] {
            // Direct sum over the window.
            let mut acc = 0.0;
            for i in 0..w.values.len() {
                let y = w.y(i);
                if y <= x {
                    acc += w.dy * w.values[i] * (-alpha * (y - x)).exp();
                }
            }
            assert_relative_eq!(table.log_integral(x), acc.ln(), epsilon = 1e-6);
        }
    }

    #[test]
    fn upper_tail_table_matches_direct_quadrature() {
        let base = uniform01(1 << 12);
        let w = windowed_power(&base, 30).unwrap();
        let alpha = 1.2;
        let table = LogTailTable::new(&w, alpha, TailSide::Upper);
        for x in [14.0, 15.0, 16.7501, 20.0] {
            let mut acc = 0.0;
            for i in 0..w.values.len() {
                let y = w.y(i);
                if y >= x {
                    acc += w.dy * w.values[i] * (-alpha * (y - x)).exp();
                }
            }
            assert_relative_eq!(table.log_integral(x), acc.ln(), epsilon = 1e-6);
        }
    }

    #[test]
    fn tail_beyond_window_underflows_to_neg_infinity() {
        let base = uniform01(1 << 10);
        let w = windowed_power(&base, 8).unwrap();
        let lower = LogTailTable::new(&w, -0.5, TailSide::Lower);
        assert_eq!(lower.log_integral(-1.0), f64::NEG_INFINITY);
        let upper = LogTailTable::new(&w, 0.5, TailSide::Upper);
        assert_eq!(upper.log_integral(9.0), f64::NEG_INFINITY);
    }

    #[test]
    fn coarse_k_too_large_is_rejected() {
        let base = uniform01(1 << 14);
        assert!(matches!(conv_power(&base, 4000), Err(Error::Domain(_))));
    }
}
