//! Piecewise-linear basis dictionary over the label axis.
//!
//! A [`KnotGrid`] with points `p_0 < … < p_L` splits the real line into
//! `L + 2` bins. The piecewise-linear dictionary maps a label `y` to
//!
//! ```text
//! h(y) = [1, h_0(y), h_1(y), …, h_L(y), h_{L+1}(y)]
//! h_0(y)     = min(y − p_0, 0)
//! h_j(y)     = clamp(y − p_{j−1}, 0, δ_j)       1 ≤ j ≤ L
//! h_{L+1}(y) = max(y − p_L, 0)
//! ```
//!
//! so that `h(y)ᵀu` is continuous, piecewise linear in `y` with slope
//! `u[1 + bin(y)]` on each bin. Bins are half-open `[p_j, p_{j+1})`, which
//! fixes the derivative at a knot to the right derivative.

use crate::error::{ensure_finite, Error, Result};
use serde::{Deserialize, Serialize};

/// Strictly ascending knot points and their spacings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KnotGrid {
    points: Vec<f64>,
    deltas: Vec<f64>,
}

impl KnotGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("knot grid needs at least one point".into()));
        }
        for &p in &points {
            ensure_finite(p, "knot")?;
        }
        let deltas: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(j) = deltas.iter().position(|&d| d <= 0.0) {
            return Err(Error::DegenerateKnots(format!(
                "knots {} and {} are not strictly ascending ({} vs {})",
                j,
                j + 1,
                points[j],
                points[j + 1]
            )));
        }
        Ok(Self { points, deltas })
    }

    /// Evenly spaced knots `start, start + step, …` (`count` points).
    pub fn uniform(start: f64, step: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    /// Knots at empirical quantiles of `samples`.
    ///
    /// Quantile `q` is read at fractional index `q·(n−1)` of the sorted
    /// samples with linear interpolation between neighbours.
    pub fn from_quantiles(samples: &[f64], qs: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("quantile knots need samples".into()));
        }
        if qs.is_empty() {
            return Err(Error::InvalidInput("quantile list is empty".into()));
        }
        for &q in qs {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidInput(format!("quantile {q} outside (0, 1)")));
            }
        }
        if qs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("quantiles must be strictly ascending".into()));
        }
        for &s in samples {
            ensure_finite(s, "sample")?;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::DegenerateKnots(format!(
                "all samples equal {}, every quantile ties",
                sorted[0]
            )));
        }
        let points = qs.iter().map(|&q| empirical_quantile(&sorted, q)).collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Spacings `δ_j = p_j − p_{j−1}`, `j = 1..=L`.
    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// `L`, the index of the last knot.
    pub fn last_index(&self) -> usize {
        self.points.len() - 1
    }

    /// Number of bins, `L + 2`.
    pub fn num_bins(&self) -> usize {
        self.points.len() + 1
    }

    /// Bin containing `y`: 0 below `p_0`, `j + 1` on `[p_j, p_{j+1})`,
    /// `L + 1` at or above `p_L`.
    pub fn active_bin(&self, y: f64) -> Result<usize> {
        ensure_finite(y, "y")?;
        Ok(self.bin_unchecked(y))
    }

    #[inline]
    pub(crate) fn bin_unchecked(&self, y: f64) -> usize {
        self.points.partition_point(|&p| p <= y)
    }
}

impl TryFrom<Vec<f64>> for KnotGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<KnotGrid> for Vec<f64> {
    fn from(grid: KnotGrid) -> Self {
        grid.points
    }
}

/// Linear-interpolation quantile of already sorted data.
pub(crate) fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        sorted[lo.min(sorted.len() - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Basis family for the label transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Dictionary {
    PiecewiseLinear { knots: KnotGrid },
    /// `h(y) = [1, y]`: transformations affine in the label.
    Affine,
}

impl Dictionary {
    pub fn piecewise(knots: KnotGrid) -> Self {
        Dictionary::PiecewiseLinear { knots }
    }

    /// Length of `h(y)`.
    pub fn dim(&self) -> usize {
        match self {
            Dictionary::PiecewiseLinear { knots } => knots.points.len() + 2,
            Dictionary::Affine => 2,
        }
    }

    pub fn knots(&self) -> Option<&KnotGrid> {
        match self {
            Dictionary::PiecewiseLinear { knots } => Some(knots),
            Dictionary::Affine => None,
        }
    }

    /// `h(y)`.
    pub fn eval(&self, y: f64) -> Result<Vec<f64>> {
        ensure_finite(y, "y")?;
        let mut out = vec![0.0; self.dim()];
        self.eval_into(y, &mut out);
        Ok(out)
    }

    /// `h'(y)`, right derivative at knots.
    pub fn deriv(&self, y: f64) -> Result<Vec<f64>> {
        ensure_finite(y, "y")?;
        let mut out = vec![0.0; self.dim()];
        out[self.slope_index(y)] = 1.0;
        Ok(out)
    }

    /// Position of the single non-zero entry of `h'(y)`.
    #[inline]
    pub fn slope_index(&self, y: f64) -> usize {
        match self {
            Dictionary::PiecewiseLinear { knots } => 1 + knots.bin_unchecked(y),
            Dictionary::Affine => 1,
        }
    }

    /// Writes `h(y)` into `out` (length `dim()`); `y` must be finite.
    pub(crate) fn eval_into(&self, y: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out[0] = 1.0;
        match self {
            Dictionary::Affine => out[1] = y,
            Dictionary::PiecewiseLinear { knots } => {
                let p = &knots.points;
                let last = p.len() - 1;
                out[1] = (y - p[0]).min(0.0);
                for (j, &delta) in knots.deltas.iter().enumerate() {
                    let rel = y - p[j];
                    out[j + 2] = if rel <= 0.0 {
                        0.0
                    } else if rel >= delta {
                        delta
                    } else {
                        rel
                    };
                }
                out[last + 2] = (y - p[last]).max(0.0);
            }
        }
    }
}
