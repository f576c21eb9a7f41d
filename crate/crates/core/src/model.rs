//! The conditional nonparanormal model.
//!
//! A label `y` given features `x` is modelled through a monotone map
//! `g(y; x) = h(y)ᵀ u(x)` with `u(x) = A ψ(x) + b` such that
//! `g(y; x) ~ N(0, 1)`. Writing `u(x) = [μ, α_0, …, α_{L+1}]`, `g` is
//! continuous and piecewise linear in `y` with slope `α_j` on bin `j`, so the
//! conditional density is `α_j φ(g(y; x))` on that bin. The model is valid at
//! `x` when every slope is strictly positive.

use crate::data::Dataset;
use crate::dictionary::Dictionary;
use crate::error::{ensure_finite, Error, Result};
use crate::features::FeatureMap;
use crate::normal::{std_normal_cdf, std_normal_mass, std_normal_pdf, std_normal_sf, HALF_LN_2PI};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Parameters `θ = {A, b}` together with the dictionary and feature map that
/// give them meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct CnrParams {
    dict: Dictionary,
    feature_map: FeatureMap,
    input_dim: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// `u(x)` unpacked into the intercept, per-bin slopes and cumulative rises.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub mu: f64,
    /// `[α_0, …, α_{L+1}]`; a single slope for the affine dictionary.
    pub alphas: Vec<f64>,
    /// `[Δ_0, …, Δ_L]` with `Δ_0 = 0` and `Δ_j = Δ_{j−1} + δ_j α_j`.
    pub cum: Vec<f64>,
}

impl CoefVector {
    pub fn is_valid(&self) -> bool {
        self.is_valid_with_floor(0.0)
    }

    pub fn is_valid_with_floor(&self, floor: f64) -> bool {
        self.alphas.iter().all(|&a| a > floor)
    }
}

/// Piecewise view shared by the piecewise and affine dictionaries. The affine
/// case is a single knot at zero with equal slopes on both sides.
struct Segments<'a> {
    mu: f64,
    knots: &'a [f64],
    /// `L + 2` slopes.
    alphas: Vec<f64>,
    /// `L + 1` cumulative rises.
    cum: Vec<f64>,
}

const AFFINE_KNOT: [f64; 1] = [0.0];

impl<'a> Segments<'a> {
    fn new(dict: &'a Dictionary, coef: CoefVector) -> Self {
        match dict {
            Dictionary::PiecewiseLinear { knots } => Segments {
                mu: coef.mu,
                knots: knots.points(),
                alphas: coef.alphas,
                cum: coef.cum,
            },
            Dictionary::Affine => {
                let v = coef.alphas[0];
                Segments { mu: coef.mu, knots: &AFFINE_KNOT, alphas: vec![v, v], cum: vec![0.0] }
            }
        }
    }

    fn posterior_mean(&self) -> f64 {
        let (mu, p, al, cum) = (self.mu, self.knots, &self.alphas, &self.cum);
        let last = p.len() - 1;
        let mut total = -std_normal_pdf(mu) / al[0] + (p[0] - mu / al[0]) * std_normal_cdf(mu);
        for j in 0..last {
            let lo = mu + cum[j];
            let hi = mu + cum[j + 1];
            let slope = al[j + 1];
            total += (std_normal_pdf(lo) - std_normal_pdf(hi)) / slope
                + (p[j] - lo / slope) * std_normal_mass(lo, hi);
        }
        let top = mu + cum[last];
        let slope = al[last + 1];
        total + std_normal_pdf(top) / slope + (p[last] - top / slope) * std_normal_sf(top)
    }

    fn inverse(&self, z: f64) -> f64 {
        let p = self.knots;
        let last = p.len() - 1;
        let base = z - self.mu;
        if base < self.cum[0] {
            return p[0] + base / self.alphas[0];
        }
        // Largest j with Δ_j ≤ z − μ.
        let j = self.cum.partition_point(|&c| c <= base) - 1;
        if j == last {
            p[last] + (base - self.cum[last]) / self.alphas[last + 1]
        } else {
            p[j] + (base - self.cum[j]) / self.alphas[j + 1]
        }
    }
}

impl CnrParams {
    /// `a` is `dict.dim() × k` with `k = feature_map.output_dim(input_dim)`;
    /// `b` has length `dict.dim()`.
    pub fn new(
        dict: Dictionary,
        feature_map: FeatureMap,
        input_dim: usize,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self> {
        let dim = dict.dim();
        let k = feature_map.output_dim(input_dim);
        if a.nrows() != dim || a.ncols() != k || b.len() != dim {
            return Err(Error::InvalidInput(format!(
                "parameter shapes A {}x{}, b {} do not match dictionary dim {dim} and {k} features",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self { dict, feature_map, input_dim, a, b })
    }

    pub fn zeros(dict: Dictionary, feature_map: FeatureMap, input_dim: usize) -> Self {
        let dim = dict.dim();
        let k = feature_map.output_dim(input_dim);
        Self { dict, feature_map, input_dim, a: DMatrix::zeros(dim, k), b: DVector::zeros(dim) }
    }

    /// Rebuilds parameters from `w = [vec_row(A); b]`.
    pub fn from_flat(
        dict: Dictionary,
        feature_map: FeatureMap,
        input_dim: usize,
        w: &[f64],
    ) -> Result<Self> {
        let dim = dict.dim();
        let k = feature_map.output_dim(input_dim);
        if w.len() != dim * (k + 1) {
            return Err(Error::InvalidInput(format!(
                "flat parameter length {} does not match {}",
                w.len(),
                dim * (k + 1)
            )));
        }
        let a = DMatrix::from_row_slice(dim, k, &w[..dim * k]);
        let b = DVector::from_column_slice(&w[dim * k..]);
        Self::new(dict, feature_map, input_dim, a, b)
    }

    /// `w = [vec_row(A); b]`.
    pub fn flatten(&self) -> Vec<f64> {
        let (dim, k) = self.a.shape();
        let mut w = Vec::with_capacity(dim * (k + 1));
        for r in 0..dim {
            for c in 0..k {
                w.push(self.a[(r, c)]);
            }
        }
        w.extend(self.b.iter());
        w
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    /// Raw feature dimension accepted by the model.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "expected {} features, got {}",
                self.input_dim,
                x.len()
            )));
        }
        x.iter().try_for_each(|&v| ensure_finite(v, "feature"))
    }

    /// `u(x) = A ψ(x) + b`.
    pub fn u(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let psi = self.feature_map.apply(x);
        let (dim, k) = self.a.shape();
        Ok((0..dim)
            .map(|r| {
                let mut acc = self.b[r];
                for c in 0..k {
                    acc += self.a[(r, c)] * psi[c];
                }
                acc
            })
            .collect())
    }

    pub fn coef(&self, x: &[f64]) -> Result<CoefVector> {
        let u = self.u(x)?;
        let mu = u[0];
        let alphas = u[1..].to_vec();
        let cum = match &self.dict {
            Dictionary::Affine => vec![0.0],
            Dictionary::PiecewiseLinear { knots } => {
                let mut cum = Vec::with_capacity(knots.points().len());
                cum.push(0.0);
                let mut acc = 0.0;
                for (j, &delta) in knots.deltas().iter().enumerate() {
                    acc += delta * alphas[j + 1];
                    cum.push(acc);
                }
                cum
            }
        };
        Ok(CoefVector { mu, alphas, cum })
    }

    /// `g(y; x) = h(y)ᵀ u(x)`.
    pub fn transform(&self, x: &[f64], y: f64) -> Result<f64> {
        let h = self.dict.eval(y)?;
        let u = self.u(x)?;
        Ok(h.iter().zip(&u).map(|(h, u)| h * u).sum())
    }

    /// `g'(y; x) = h'(y)ᵀ u(x)`, the slope of the bin containing `y`.
    pub fn transform_deriv(&self, x: &[f64], y: f64) -> Result<f64> {
        ensure_finite(y, "y")?;
        let u = self.u(x)?;
        Ok(u[self.dict.slope_index(y)])
    }

    /// Whether every slope of `u(x)` is strictly positive.
    pub fn is_valid(&self, x: &[f64]) -> Result<bool> {
        self.is_valid_with_floor(x, 0.0)
    }

    /// Validity with every slope required to exceed `floor`.
    pub fn is_valid_with_floor(&self, x: &[f64], floor: f64) -> Result<bool> {
        Ok(self.coef(x)?.is_valid_with_floor(floor))
    }

    /// Returns `(g, g')` at each sample, failing on the first non-positive slope.
    fn pointwise(&self, data: &Dataset) -> Result<Vec<(f64, f64)>> {
        if data.k() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "dataset has {} features, model expects {}",
                data.k(),
                self.input_dim
            )));
        }
        let mut h = vec![0.0; self.dict.dim()];
        (0..data.n())
            .map(|i| {
                let u = self.u(data.row(i))?;
                let y = data.y()[i];
                self.dict.eval_into(y, &mut h);
                let g: f64 = h.iter().zip(&u).map(|(h, u)| h * u).sum();
                let slope = u[self.dict.slope_index(y)];
                if slope > 0.0 {
                    Ok((g, slope))
                } else {
                    Err(Error::InfeasiblePoint { index: Some(i) })
                }
            })
            .collect()
    }

    /// `Σ_i g_i² − 2 log g'_i`, the fitting objective with constants dropped.
    pub fn nll_objective(&self, data: &Dataset) -> Result<f64> {
        Ok(self.pointwise(data)?.iter().map(|&(g, d)| g * g - 2.0 * d.ln()).sum())
    }

    /// Mean negative log-likelihood including all constants.
    pub fn nll_reported(&self, data: &Dataset) -> Result<f64> {
        let pts = self.pointwise(data)?;
        let total: f64 = pts.iter().map(|&(g, d)| 0.5 * g * g - d.ln() + HALF_LN_2PI).sum();
        Ok(total / pts.len() as f64)
    }

    fn valid_coef(&self, x: &[f64]) -> Result<CoefVector> {
        let coef = self.coef(x)?;
        if coef.is_valid() {
            Ok(coef)
        } else {
            Err(Error::InfeasiblePoint { index: None })
        }
    }

    /// `p(y | x) = g'(y; x) φ(g(y; x))`.
    pub fn density(&self, x: &[f64], y: f64) -> Result<f64> {
        self.valid_coef(x)?;
        let g = self.transform(x, y)?;
        Ok(self.transform_deriv(x, y)? * std_normal_pdf(g))
    }

    pub fn log_density(&self, x: &[f64], y: f64) -> Result<f64> {
        self.valid_coef(x)?;
        let g = self.transform(x, y)?;
        Ok(self.transform_deriv(x, y)?.ln() - 0.5 * g * g - HALF_LN_2PI)
    }

    /// Closed-form `E[y | x]`, summing the first moment over every bin.
    pub fn posterior_mean(&self, x: &[f64]) -> Result<f64> {
        let coef = self.valid_coef(x)?;
        Ok(Segments::new(&self.dict, coef).posterior_mean())
    }

    /// The unique `y` with `g(y; x) = z`.
    pub fn inverse_transform(&self, x: &[f64], z: f64) -> Result<f64> {
        ensure_finite(z, "z")?;
        let coef = self.valid_coef(x)?;
        Ok(Segments::new(&self.dict, coef).inverse(z))
    }

    /// Draws `y ~ p(· | x)` by pushing a standard normal draw through `g⁻¹`.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let coef = self.valid_coef(x)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(Segments::new(&self.dict, coef).inverse(z))
    }

    pub fn to_record(&self) -> ParamsRecord {
        ParamsRecord {
            dictionary: self.dict.clone(),
            feature_map: self.feature_map,
            input_dim: self.input_dim,
            rows: self.a.nrows(),
            cols: self.a.ncols(),
            a: self.flatten()[..self.a.nrows() * self.a.ncols()].to_vec(),
            b: self.b.iter().copied().collect(),
        }
    }

    pub fn from_record(rec: ParamsRecord) -> Result<Self> {
        if rec.a.len() != rec.rows * rec.cols {
            return Err(Error::InvalidInput(format!(
                "A has {} entries, expected {}x{}",
                rec.a.len(),
                rec.rows,
                rec.cols
            )));
        }
        let a = DMatrix::from_row_slice(rec.rows, rec.cols, &rec.a);
        let b = DVector::from_vec(rec.b);
        Self::new(rec.dictionary, rec.feature_map, rec.input_dim, a, b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_record(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Serialized form of a fitted model; `a` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsRecord {
    pub dictionary: Dictionary,
    pub feature_map: FeatureMap,
    pub input_dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}
