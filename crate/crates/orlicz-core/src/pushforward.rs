//! The pushforward density ψ of a potential and its exponential tilts.
//!
//! For X uniform on the domain of φ, the level statistic y = φ(X) has
//! (unnormalized) density `ψ(y) = Σ_{s: φ(s)=y} 1/|φ'(s)|`. Everything
//! downstream — partition functions, tilted coordinate laws, convolution
//! powers — is computed against ψ on a uniform grid.
//!
//! Node values are pointwise except where that misrepresents the cell:
//! where φ' vanishes at a preimage the value blows up integrably, and near
//! piece-range boundaries a node's cell is only partially covered. Those
//! cells take the exact cell average instead, which for a monotone piece is
//! the inverse-image arc length divided by the cell width. This keeps the
//! trapezoid mass of ψ exact even where ψ(0+) is infinite.

use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::potential::{MonotonePiece, PieceExpr, Potential};

/// Cells within this many grid steps of a power-law singularity use the
/// analytic cell average; beyond it the pointwise value is indistinguishable
/// at grid accuracy.
const SMOOTH_CELLS: usize = 64;

/// Relative tail-mass gate for tilted densities.
const TAIL_GATE: f64 = 1e-9;

/// Tabulates ψ on the uniform grid `[0, y_max]` with `n_grid` nodes.
pub fn build_psi(potential: &Potential, y_max: f64, n_grid: usize) -> Result<GridDensity> {
    if !(y_max > 0.0) {
        return Err(Error::Domain(format!("y_max must be positive, got {y_max}")));
    }
    if n_grid < 256 {
        return Err(Error::Domain(format!("n_grid must be at least 256, got {n_grid}")));
    }
    let dy = y_max / (n_grid - 1) as f64;
    let mut values = vec![0.0; n_grid];
    for piece in potential.pieces() {
        let (r_lo, r_hi) = piece.range();
        let a = r_lo.max(0.0);
        let b = r_hi.min(y_max);
        if !(a < b) {
            continue;
        }
        let singular_y = power_singularity(piece);
        let i_lo = ((a - 0.5 * dy) / dy).floor().max(0.0) as usize;
        let i_hi = (((b + 0.5 * dy) / dy).ceil() as usize).min(n_grid - 1);
        for i in i_lo..=i_hi {
            let y = i as f64 * dy;
            let cell_lo = (y - 0.5 * dy).max(0.0);
            let cell_hi = (y + 0.5 * dy).min(y_max);
            let ov_lo = cell_lo.max(r_lo);
            let ov_hi = cell_hi.min(r_hi);
            if !(ov_lo < ov_hi) {
                continue;
            }
            let full_cell = ov_lo <= cell_lo && ov_hi >= cell_hi;
            let near_singularity = singular_y
                .map(|ys| (y - ys).abs() <= SMOOTH_CELLS as f64 * dy + 0.5 * dy)
                .unwrap_or(false);
            let contribution = if full_cell && !near_singularity {
                let point = pointwise_contribution(piece, y);
                if point.is_finite() {
                    point
                } else {
                    cell_average(piece, ov_lo, ov_hi, i, cell_hi - cell_lo)?
                }
            } else {
                cell_average(piece, ov_lo, ov_hi, i, cell_hi - cell_lo)?
            };
            values[i] += contribution;
        }
    }
    let g = GridDensity::from_values(0.0, dy, values)?;
    if potential.t_sup() <= y_max * (1.0 + 1e-12) {
        Ok(g.mark_bounded_support())
    } else {
        Ok(g)
    }
}

/// The y-level at which φ' vanishes inside a power piece, if any.
fn power_singularity(piece: &MonotonePiece) -> Option<f64> {
    match *piece.expr() {
        PieceExpr::PowerAbs { p, d, .. } if p != 1.0 && piece.lo() <= 0.0 && piece.hi() >= 0.0 => Some(d),
        _ => None,
    }
}

/// `1/|φ'(s)|` at the preimage of `y` on this piece.
fn pointwise_contribution(piece: &MonotonePiece, y: f64) -> f64 {
    let s = piece.invert(y);
    let d = piece.deriv(s).abs();
    if d > 0.0 {
        1.0 / d
    } else {
        f64::INFINITY
    }
}

/// Average of the piece's ψ-contribution over `[ov_lo, ov_hi]`, relative to
/// the full cell width. The integral of `1/|φ'|` between two levels is the
/// arc length of the inverse image, so power pieces are exact; other pieces
/// refine by midpoint sampling and flag divergence.
fn cell_average(piece: &MonotonePiece, ov_lo: f64, ov_hi: f64, cell: usize, width: f64) -> Result<f64> {
    match piece.expr() {
        PieceExpr::PowerAbs { .. } => {
            let arc = (piece.invert(ov_hi) - piece.invert(ov_lo)).abs();
            if arc.is_finite() {
                Ok(arc / width)
            } else {
                Err(Error::NonIntegrableSingularity { cell, y_lo: ov_lo, y_hi: ov_hi })
            }
        }
        _ => {
            let estimate = |m: usize| -> f64 {
                let h = (ov_hi - ov_lo) / m as f64;
                (0..m).map(|j| pointwise_contribution(piece, ov_lo + (j as f64 + 0.5) * h) * h).sum()
            };
            let e16 = estimate(16);
            let e32 = estimate(32);
            let e64 = estimate(64);
            let growing = e64 > e32 && e32 > e16;
            let unsettled =
                (e64 - e32).abs() > 0.05 * e64.abs() && (e32 - e16).abs() > 0.05 * e32.abs();
            if !e64.is_finite() || (growing && unsettled) {
                return Err(Error::NonIntegrableSingularity { cell, y_lo: ov_lo, y_hi: ov_hi });
            }
            Ok(e64 / width)
        }
    }
}

/// Evaluates `∫ f(φ(s)) ds` two ways: per-piece quadrature over s (left) and
/// grid quadrature against ψ (right). `f` must be supported in `[0, y_max]`.
/// The two must agree to about 1e-4 relative; used as a self-test of the
/// pushforward construction.
pub fn change_of_variables_check(
    potential: &Potential,
    f: impl Fn(f64) -> f64,
    y_max: f64,
) -> Result<(f64, f64)> {
    let mut lhs = 0.0;
    for piece in potential.pieces() {
        if let Some((s_lo, s_hi)) = piece.sublevel(y_max) {
            let s_lo = s_lo.max(-1e9);
            let s_hi = s_hi.min(1e9);
            if s_lo < s_hi {
                lhs += simpson(|s| f(piece.eval(s).max(0.0)), s_lo, s_hi, 1 << 13);
            }
        }
    }
    let psi = build_psi(potential, y_max, 1 << 16)?;
    let rhs = psi.integrate(&f);
    Ok((lhs, rhs))
}

/// Composite Simpson rule with `n` (even) intervals.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + j as f64 * h);
    }
    acc * h / 3.0
}

/// The α-tilted probability density `ψ_α(y) = e^{α y} ψ(y) / Z(α)`.
///
/// Fails when the tilted tail grows on the grid (α at or beyond the
/// partition function's divergence point) or cannot be certified below
/// `1e-9` of the total mass.
pub fn tilt_density(psi: &GridDensity, alpha: f64) -> Result<GridDensity> {
    let tilted: Vec<f64> =
        (0..psi.len()).map(|i| (alpha * psi.node(i)).exp() * psi.values()[i]).collect();
    if tilted.iter().any(|v| !v.is_finite()) {
        return Err(Error::PartitionDiverged { alpha, reason: "tilted values overflow".into() });
    }
    let mut g = GridDensity::from_values(psi.y0(), psi.dy(), tilted)?;
    if psi.bounded_support() {
        g = g.mark_bounded_support();
    }
    certify_tail(&g, alpha)?;
    g.normalized()
}

/// Requires the tilted density's off-grid mass (geometric extrapolation of
/// the last decade) to be negligible.
pub(crate) fn certify_tail(g: &GridDensity, alpha: f64) -> Result<()> {
    if g.bounded_support() {
        return Ok(());
    }
    let n = g.len();
    let start = n - (n / 10).max(8).min(n - 2);
    let tail = &g.values()[start..];
    if tail.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    let head = tail[..tail.len() / 2].iter().sum::<f64>();
    let back = tail[tail.len() / 2..].iter().sum::<f64>();
    if back >= head {
        return Err(Error::PartitionDiverged {
            alpha,
            reason: "partition function diverges: tilted tail is not decaying on the grid".into(),
        });
    }
    let est = g.tail_mass_estimate().map_err(|e| Error::PartitionDiverged {
        alpha,
        reason: format!("tail not certifiable: {e}"),
    })?;
    if est > TAIL_GATE * g.mass() {
        return Err(Error::PartitionDiverged {
            alpha,
            reason: format!(
                "tail mass {est:.3e} beyond y_max = {} not negligible; enlarge the grid",
                g.y_max()
            ),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Potential;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const SQRT_PI: f64 = 1.7724538509055159;

    #[test]
    fn psi_power2_pointwise_and_cell_averaged() {
        // ψ(y) = y^{-1/2}: two roots ±√y each contributing 1/(2√y).
        let p = Potential::power(2.0).unwrap();
        let psi = build_psi(&p, 25.0, 1 << 14).unwrap();
        let dy = psi.dy();
        for i in (SMOOTH_CELLS + 2)..psi.len() - 1 {
            let y = psi.node(i);
            assert_relative_eq!(psi.values()[i], y.powf(-0.5), max_relative = 1e-12);
        }
        // Smoothed cells hold the exact cell average of y^{-1/2}:
        // 2(√hi − √lo)/w over the cell, both pieces contributing.
        for i in 1..=SMOOTH_CELLS {
            let y = psi.node(i);
            let lo: f64 = y - 0.5 * dy;
            let hi: f64 = y + 0.5 * dy;
            let expect = 2.0 * (hi.sqrt() - lo.sqrt()) / (hi - lo);
            assert_relative_eq!(psi.values()[i], expect, max_relative = 1e-12);
        }
        // Half cell at the origin.
        let expect0 = 2.0 * (0.5 * dy).sqrt() / (0.5 * dy);
        assert_relative_eq!(psi.values()[0], expect0, max_relative = 1e-12);
    }

    #[test]
    fn psi_simplex_is_one() {
        let p = Potential::simplex();
        let psi = build_psi(&p, 10.0, 1 << 12).unwrap();
        for i in 0..psi.len() {
            assert_relative_eq!(psi.values()[i], 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn psi_abs_bounded_is_two_on_support() {
        let p = Potential::abs_bounded(1.0).unwrap();
        let psi = build_psi(&p, 2.0, 1 << 12).unwrap();
        for i in 0..psi.len() {
            let y = psi.node(i);
            let expect = if y < 1.0 - psi.dy() {
                2.0
            } else if y > 1.0 + psi.dy() {
                0.0
            } else {
                continue; // boundary cell is averaged
            };
            assert_relative_eq!(psi.values()[i], expect, max_relative = 1e-12);
        }
        // Total mass is |D| = 2 exactly.
        assert_relative_eq!(psi.mass(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn change_of_variables_examples() {
        // |D| both ways for an indicator.
        let p = Potential::abs_bounded(1.0).unwrap();
        let (lhs, rhs) = change_of_variables_check(&p, |_| 1.0, 1.0).unwrap();
        assert_relative_eq!(lhs, 2.0, max_relative = 1e-10);
        assert_relative_eq!(rhs, 2.0, max_relative = 1e-10);

        // Gaussian integral: ∫ e^{-s^2} ds = √π.
        let p = Potential::power(2.0).unwrap();
        let (lhs, rhs) = change_of_variables_check(&p, |y| (-y).exp(), 40.0).unwrap();
        assert_relative_eq!(lhs, SQRT_PI, max_relative = 1e-6);
        assert_relative_eq!(rhs, SQRT_PI, max_relative = 1e-4);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-4);

        // ∫_0^∞ e^{-y} dy = 1.
        let p = Potential::simplex();
        let (lhs, rhs) = change_of_variables_check(&p, |y| (-y).exp(), 40.0).unwrap();
        assert_relative_eq!(lhs, 1.0, max_relative = 1e-6);
        assert_relative_eq!(rhs, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn tilt_simplex_gives_exponential_law() {
        let p = Potential::simplex();
        let psi = build_psi(&p, 40.0, 1 << 14).unwrap();
        let t = tilt_density(&psi, -1.0).unwrap();
        assert!((t.mass() - 1.0).abs() <= 1e-8);
        // Z(-1) = 1; node values match e^{-y} to the grid's O(dy^2) bias.
        for i in (0..t.len() - 400).step_by(97) {
            let y = t.node(i);
            assert_relative_eq!(t.values()[i], (-y).exp(), max_relative = 2e-6);
        }
    }

    #[test]
    fn tilt_at_zero_is_normalized_psi() {
        let p = Potential::abs_bounded(1.0).unwrap();
        let psi = build_psi(&p, 1.0, 1 << 12).unwrap();
        let t = tilt_density(&psi, 0.0).unwrap();
        for i in 0..t.len() {
            assert_relative_eq!(t.values()[i], psi.values()[i] / psi.mass(), max_relative = 1e-14);
        }
    }

    #[test]
    fn tilt_power2_gives_chi_square_density() {
        // ψ_{-1/2}(y) ∝ y^{-1/2} e^{-y/2}, normalizing constant √(2π).
        let p = Potential::power(2.0).unwrap();
        let psi = build_psi(&p, 80.0, 1 << 15).unwrap();
        let t = tilt_density(&psi, -0.5).unwrap();
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        for i in ((SMOOTH_CELLS + 2)..t.len() / 2).step_by(59) {
            let y = t.node(i);
            let expect = y.powf(-0.5) * (-0.5 * y).exp() / norm;
            assert_relative_eq!(t.values()[i], expect, max_relative = 1e-5);
        }
    }

    #[test]
    fn tilt_beyond_alpha_max_fails() {
        let p = Potential::simplex();
        let psi = build_psi(&p, 40.0, 1 << 12).unwrap();
        assert!(matches!(tilt_density(&psi, 0.1), Err(Error::PartitionDiverged { .. })));
        assert!(matches!(tilt_density(&psi, -1e-4), Err(Error::PartitionDiverged { .. })));
    }

    #[test]
    fn non_integrable_singularity_is_flagged() {
        // φ(s) = e^s on (-∞, 0]: every sublevel set has infinite measure, so
        // ψ ~ 1/y at the origin is not integrable.
        let piece = crate::potential::MonotonePiece::new(
            f64::NEG_INFINITY,
            0.0,
            PieceExpr::Exp { c: 1.0, b: 1.0 },
        )
        .unwrap();
        let p = Potential::from_pieces(vec![piece]).unwrap();
        match build_psi(&p, 1.0, 1 << 10) {
            Err(Error::NonIntegrableSingularity { cell, .. }) => assert_eq!(cell, 0),
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn mean_of_psi0_is_t_crit() {
        for p in [Potential::abs_bounded(1.0).unwrap(), Potential::dyadic_ladder(5).unwrap()] {
            let psi = build_psi(&p, p.t_sup(), 1 << 14).unwrap();
            let psi0 = psi.normalized().unwrap();
            assert_relative_eq!(psi0.mean(), p.t_crit(), max_relative = 1e-4);
            assert_relative_eq!(psi.mass(), p.domain_measure(), max_relative = 1e-9);
        }
    }

    #[test]
    fn monte_carlo_histogram_matches_psi0() {
        // 1e5 uniform draws on D_φ; χ² of the level histogram against ψ_0.
        let p = Potential::abs_bounded(1.0).unwrap();
        let psi0 = build_psi(&p, 1.0, 1 << 12).unwrap().normalized().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n_samples = 100_000usize;
        let bins = 40usize;
        let mut counts = vec![0u64; bins];
        for _ in 0..n_samples {
            let s = rng.gen_range(-1.0..1.0);
            let y = p.eval(s);
            let b = ((y * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let cdf = psi0.cdf();
        let edge = |b: usize| -> f64 {
            let y = b as f64 / bins as f64;
            let idx = (y / psi0.dy()).round() as usize;
            cdf[idx.min(cdf.len() - 1)]
        };
        let mut chi2 = 0.0;
        for (b, count) in counts.iter().enumerate() {
            let p_bin = edge(b + 1) - edge(b);
            let expect = p_bin * n_samples as f64;
            chi2 += (*count as f64 - expect).powi(2) / expect;
        }
        let dof = (bins - 1) as f64;
        let pval = 1.0 - statrs::function::gamma::gamma_lr(dof / 2.0, chi2 / 2.0);
        assert!(pval > 0.001, "chi2 = {chi2:.1}, p = {pval:.5}");
    }
}
