//! Densities tabulated on uniform 1-D grids.
//!
//! `GridDensity` is the common currency of the pipeline: pushforward
//! densities, tilted densities, convolution powers and Gibbs coordinate
//! densities are all carried as non-negative values on a uniform grid with
//! trapezoid-rule mass bookkeeping. Node values at the two ends of the grid
//! carry half weight, so a node value is interchangeable with the average of
//! the density over the node's cell.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fit;

/// A non-negative density sampled on the uniform grid `y_i = y0 + i*dy`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    y0: f64,
    dy: f64,
    values: Vec<f64>,
    /// Trapezoid integral of `values`, maintained at construction.
    mass: f64,
    /// True when the density provably carries no mass beyond the grid.
    bounded: bool,
}

/// Kahan compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl GridDensity {
    /// Wraps raw node values. Values must be finite and non-negative.
    pub fn from_values(y0: f64, dy: f64, values: Vec<f64>) -> Result<Self> {
        if !(dy > 0.0) || !dy.is_finite() {
            return Err(Error::Domain(format!("grid step must be positive, got {dy}")));
        }
        if values.len() < 2 {
            return Err(Error::Domain("grid needs at least two nodes".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Domain(format!("node {i} holds invalid density value {v}")));
            }
        }
        let mass = trapezoid_mass(dy, &values);
        let bounded = values.last() == Some(&0.0);
        Ok(Self { y0, dy, values, mass, bounded })
    }

    /// Declares that the density has no mass beyond the end of the grid
    /// (e.g. the grid covers the full support of a bounded potential).
    pub fn mark_bounded_support(mut self) -> Self {
        self.bounded = true;
        self
    }

    /// Whether the grid provably covers the entire support.
    pub fn bounded_support(&self) -> bool {
        self.bounded
    }

    /// Samples `f` pointwise on `n` nodes spanning `[y0, y1]`.
    ///
    /// Nodes that land exactly on `support` boundaries take the half value
    /// `f(y)/2`, matching the cell-average reading of a jump node; this is
    /// what makes discrete convolutions of sampled densities agree with the
    /// trapezoid rule.
    pub fn from_fn_on_support(
        y0: f64,
        y1: f64,
        n: usize,
        support: (f64, f64),
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(y1 > y0) {
            return Err(Error::Domain("empty grid interval".into()));
        }
        let dy = (y1 - y0) / (n as f64 - 1.0);
        let boundary_tol = 1e-9 * dy;
        let values = (0..n)
            .map(|i| {
                let y = y0 + i as f64 * dy;
                if y < support.0 - boundary_tol || y > support.1 + boundary_tol {
                    0.0
                } else if (i > 0 && (y - support.0).abs() <= boundary_tol)
                    || (i + 1 < n && (y - support.1).abs() <= boundary_tol)
                {
                    // Interior jump node: cell-average reading. Grid-end
                    // nodes already carry half trapezoid weight.
                    0.5 * f(y)
                } else {
                    f(y)
                }
            })
            .collect();
        let mut g = Self::from_values(y0, dy, values)?;
        g.bounded = g.bounded || support.1 <= y1 + boundary_tol;
        Ok(g)
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn y_max(&self) -> f64 {
        self.y0 + self.dy * (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.y0 + self.dy * i as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Trapezoid weight of node `i` (`dy`, halved at the two ends).
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.values.len() {
            0.5 * self.dy
        } else {
            self.dy
        }
    }

    /// Linear interpolation of the tabulated values at `y` (0 outside).
    pub fn value_at(&self, y: f64) -> f64 {
        let x = (y - self.y0) / self.dy;
        if x < 0.0 || x > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let j = (x.floor() as usize).min(self.values.len() - 2);
        let frac = x - j as f64;
        self.values[j] * (1.0 - frac) + self.values[j + 1] * frac
    }

    /// Rescales all values so the trapezoid mass is exactly 1.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::Domain(format!("cannot normalize density of mass {}", self.mass)));
        }
        let inv = 1.0 / self.mass;
        let values: Vec<f64> = self.values.iter().map(|v| v * inv).collect();
        let mut out = Self { y0: self.y0, dy: self.dy, values, mass: 1.0, bounded: self.bounded };
        out.mass = trapezoid_mass(out.dy, &out.values);
        Ok(out)
    }

    /// Trapezoid integral of `f(y) * density(y)`.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = KahanSum::default();
        for (i, v) in self.values.iter().enumerate() {
            acc.add(self.weight(i) * v * f(self.node(i)));
        }
        acc.value()
    }

    /// Mean of the (not necessarily normalized) density.
    pub fn mean(&self) -> f64 {
        self.integrate(|y| y) / self.mass
    }

    /// Central moment of order `j` about the mean.
    pub fn central_moment(&self, j: u32) -> f64 {
        let m = self.mean();
        self.integrate(|y| (y - m).powi(j as i32)) / self.mass
    }

    pub fn variance(&self) -> f64 {
        self.central_moment(2)
    }

    /// Raw moment `E[y^j]`.
    pub fn raw_moment(&self, j: u32) -> f64 {
        self.integrate(|y| y.powi(j as i32)) / self.mass
    }

    /// Total variation distance `∫ |self - other|` on a shared grid.
    pub fn tv_distance(&self, other: &Self) -> Result<f64> {
        if (self.y0 - other.y0).abs() > 1e-12 * self.dy
            || (self.dy - other.dy).abs() > 1e-12 * self.dy
            || self.values.len() != other.values.len()
        {
            return Err(Error::Domain("total variation requires a shared grid".into()));
        }
        let mut acc = KahanSum::default();
        for i in 0..self.values.len() {
            acc.add(self.weight(i) * (self.values[i] - other.values[i]).abs());
        }
        Ok(acc.value())
    }

    /// Cumulative trapezoid integral: `out[i] = ∫_{y0}^{y_i}`.
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = KahanSum::default();
        out.push(0.0);
        for i in 1..self.values.len() {
            acc.add(0.5 * self.dy * (self.values[i - 1] + self.values[i]));
            out.push(acc.value());
        }
        out
    }

    /// Fits an exponential envelope `v(y) <= C e^{-c y}` to the last decade
    /// (final 10% of nodes) of the tabulated values. Fails when the tail is
    /// not positive or not decaying.
    pub fn tail_envelope(&self) -> Result<(f64, f64)> {
        let n = self.values.len();
        let start = n - (n / 10).max(8).min(n - 2);
        let pts: Vec<(f64, f64)> = (start..n)
            .filter(|&i| self.values[i] > 0.0)
            .map(|i| (self.node(i), self.values[i].ln()))
            .collect();
        if pts.len() < 4 {
            return Err(Error::TailFit("tail holds too few positive values".into()));
        }
        let f = fit::linear_fit(&pts);
        if !(f.slope < 0.0) {
            return Err(Error::TailFit(format!("tail is not decaying (fitted rate {:.3e})", f.slope)));
        }
        if f.r2 < 0.9 {
            return Err(Error::TailFit(format!("tail is not exponential (R^2 = {:.3})", f.r2)));
        }
        let c = -f.slope;
        // Envelope constant: raise the fitted intercept until it dominates
        // the sampled tail values.
        let mut log_c = f.intercept;
        for &(y, lv) in &pts {
            log_c = log_c.max(lv + c * y);
        }
        Ok((log_c.exp(), c))
    }

    /// Mass beyond the end of the grid, estimated by geometric extrapolation
    /// of the fitted tail envelope. Zero when the tail values are exactly 0.
    pub fn tail_mass_estimate(&self) -> Result<f64> {
        let n = self.values.len();
        let start = n - (n / 10).max(8).min(n - 2);
        if self.values[start..].iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let (c_env, c) = self.tail_envelope()?;
        Ok(c_env * (-c * self.y_max()).exp() / c)
    }

    /// Averages runs of `factor` cells onto a coarser, mass-preserving grid
    /// with step `factor * dy`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor < 2 {
            return Ok(self.clone());
        }
        let n_coarse = (self.values.len() - 1) / factor + 1;
        if n_coarse < 2 {
            return Err(Error::Domain("grid too short to coarsen".into()));
        }
        let dy_c = self.dy * factor as f64;
        let mut values = vec![0.0; n_coarse];
        // Node i of the coarse grid averages the fine mass in
        // [Y_i - dy_c/2, Y_i + dy_c/2] (clipped at the grid ends).
        for i in 0..n_coarse {
            let center = i * factor;
            let lo = center.saturating_sub(factor / 2);
            let hi = (center + factor.div_ceil(2)).min(self.values.len() - 1);
            let mut mass = 0.0;
            for j in lo..hi {
                mass += 0.5 * self.dy * (self.values[j] + self.values[j + 1]);
            }
            let width = (hi - lo) as f64 * self.dy;
            if width > 0.0 {
                values[i] = mass / width;
            }
        }
        let mut g = Self::from_values(self.y0, dy_c, values)?;
        g.bounded = g.bounded || self.bounded;
        Ok(g)
    }

    /// CSV export: header `y,value`, one row per node, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "y,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.node(i), v)?;
        }
        Ok(())
    }
}

fn trapezoid_mass(dy: f64, values: &[f64]) -> f64 {
    let mut acc = KahanSum::default();
    for (i, v) in values.iter().enumerate() {
        let w = if i == 0 || i + 1 == values.len() { 0.5 * dy } else { dy };
        acc.add(w * v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_density(y_max: f64, n: usize) -> GridDensity {
        GridDensity::from_fn_on_support(0.0, y_max, n, (0.0, f64::INFINITY), |y| (-y).exp()).unwrap()
    }

    #[test]
    fn mass_is_trapezoid_integral() {
        let g = exp_density(40.0, 1 << 12);
        // Trapezoid error for e^{-y} is O(dy^2); jump node at 0 carries 1/2.
        assert_relative_eq!(g.mass(), 1.0, max_relative = 1e-4);
        let manual: f64 = (0..g.len()).map(|i| g.weight(i) * g.values()[i]).sum();
        assert_relative_eq!(g.mass(), manual, max_relative = 1e-12);
    }

    #[test]
    fn normalized_density_has_unit_mass() {
        let g = exp_density(30.0, 4096).normalized().unwrap();
        assert!((g.mass() - 1.0).abs() <= 1e-8);
        assert_relative_eq!(g.mean(), 1.0, max_relative = 1e-3);
    }

    #[test]
    fn tail_envelope_recovers_exponential_rate() {
        let g = exp_density(50.0, 1 << 13);
        let (c_env, c) = g.tail_envelope().unwrap();
        assert_relative_eq!(c, 1.0, max_relative = 1e-2);
        assert!(c_env >= 0.5 && c_env <= 2.0, "envelope constant {c_env}");
        let tail = g.tail_mass_estimate().unwrap();
        assert_relative_eq!(tail, (-50.0f64).exp(), max_relative = 0.1);
    }

    #[test]
    fn coarsen_preserves_mass_and_mean() {
        let g = exp_density(40.0, 1 << 12);
        let c = g.coarsen(8).unwrap();
        assert_relative_eq!(c.mass(), g.mass(), max_relative = 1e-3);
        assert_relative_eq!(c.mean(), g.mean(), max_relative = 1e-3);
    }

    #[test]
    fn rejects_negative_values() {
        assert!(GridDensity::from_values(0.0, 0.1, vec![1.0, -0.5, 0.2]).is_err());
    }

    #[test]
    fn csv_has_header_and_17_digits() {
        let g = GridDensity::from_values(0.0, 0.5, vec![1.0, 2.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("y,value"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,1.0000000000000000e0"), "{first}");
    }
}
