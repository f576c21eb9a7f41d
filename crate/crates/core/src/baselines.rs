//! Linear regression (LR) and heteroscedastic Gaussian regression (GR)
//! baselines.
//!
//! LR is `y | x ~ N(wᵀx, σ²)` fitted by least squares with the ML variance.
//! GR is the CNR with the affine dictionary, `g = u(x) + v(x) y`, which is
//! `y | x ~ N(−u/v, 1/v²)`; it is fitted with the same ADMM.

use crate::data::{gaussian_log_pdf, Dataset};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::CnrParams;
use crate::solver::{admm_fit, assemble, AdmmConfig, FitDiagnostics};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub w: Vec<f64>,
    pub sigma2: f64,
}

/// Least-squares fit on the features as given (no implicit intercept).
pub fn lr_fit(data: &Dataset) -> Result<LrModel> {
    let (n, k) = (data.n(), data.k());
    if n < 2 {
        return Err(Error::InsufficientData(format!("linear regression needs 2 samples, got {n}")));
    }
    let x = DMatrix::from_row_slice(n, k, data.x());
    let y = DVector::from_column_slice(data.y());
    let gram = x.tr_mul(&x);
    let rhs = x.tr_mul(&y);
    let chol = Cholesky::new(gram.clone())
        .or_else(|| {
            let mut g = gram;
            for i in 0..k {
                g[(i, i)] += 1e-10;
            }
            Cholesky::new(g)
        })
        .ok_or_else(|| Error::InvalidInput("feature Gram matrix is singular".into()))?;
    let w = chol.solve(&rhs);
    let resid = &y - &x * &w;
    let sigma2 = resid.norm_squared() / n as f64;
    if sigma2 < 1e-12 {
        return Err(Error::ZeroVariance);
    }
    Ok(LrModel { w: w.iter().copied().collect(), sigma2 })
}

impl LrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum()
    }

    pub fn log_density(&self, x: &[f64], y: f64) -> f64 {
        gaussian_log_pdf(y, self.predict(x), self.sigma2)
    }

    /// Mean negative log-likelihood including constants.
    pub fn nll(&self, data: &Dataset) -> f64 {
        -data.rows().zip(data.y()).map(|(x, &y)| self.log_density(x, y)).sum::<f64>()
            / data.n() as f64
    }

    /// The same Gaussian written as an affine-dictionary CNR:
    /// `g = (y − wᵀx)/σ`, i.e. `u = −w/σ`, `v = 1/σ`.
    pub fn to_cnr_params(&self) -> CnrParams {
        let k = self.w.len();
        let sigma = self.sigma2.sqrt();
        let a = DMatrix::from_fn(2, k, |r, c| if r == 0 { -self.w[c] / sigma } else { 0.0 });
        let b = DVector::from_vec(vec![0.0, 1.0 / sigma]);
        CnrParams::new(Dictionary::Affine, FeatureMap::Identity, k, a, b)
            .expect("shapes follow from w")
    }
}

/// Mean test NLL together with how many points fell back to LR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallbackEval {
    pub nll: f64,
    pub fallback: usize,
}

/// Heteroscedastic Gaussian regression in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct GrModel {
    pub inner: CnrParams,
}

/// Fits the affine-dictionary CNR by ADMM, with `feature_map` applied to the
/// features (identity reproduces the plain canonical-form Gaussian).
pub fn gr_fit(
    data: &Dataset,
    feature_map: FeatureMap,
    config: &AdmmConfig,
) -> Result<(GrModel, FitDiagnostics)> {
    let design = assemble(data, &Dictionary::Affine, feature_map)?;
    let (inner, diag) = admm_fit(&design, config)?;
    Ok((GrModel { inner }, diag))
}

impl GrModel {
    pub fn from_params(inner: CnrParams) -> Result<Self> {
        if inner.dictionary() != &Dictionary::Affine {
            return Err(Error::InvalidInput("GR needs the affine dictionary".into()));
        }
        Ok(Self { inner })
    }

    /// `(u(x), v(x))`.
    pub fn canonical(&self, x: &[f64]) -> Result<(f64, f64)> {
        let u = self.inner.u(x)?;
        Ok((u[0], u[1]))
    }

    /// Mean `−u/v`, or `None` where `v ≤ 0`.
    pub fn mean(&self, x: &[f64]) -> Result<Option<f64>> {
        let (u, v) = self.canonical(x)?;
        Ok((v > 0.0).then(|| -u / v))
    }

    /// Variance `1/v²`, or `None` where `v ≤ 0`.
    pub fn variance(&self, x: &[f64]) -> Result<Option<f64>> {
        let (_, v) = self.canonical(x)?;
        Ok((v > 0.0).then(|| 1.0 / (v * v)))
    }

    /// Prediction with LR fallback; the flag is `true` when the fallback was used.
    pub fn predict(&self, x: &[f64], fallback: &LrModel) -> Result<(f64, bool)> {
        Ok(match self.mean(x)? {
            Some(m) => (m, false),
            None => (fallback.predict(x), true),
        })
    }

    pub fn log_density(&self, x: &[f64], y: f64, fallback: &LrModel) -> Result<(f64, bool)> {
        if self.inner.is_valid(x)? {
            Ok((self.inner.log_density(x, y)?, false))
        } else {
            Ok((fallback.log_density(x, y), true))
        }
    }

    pub fn nll(&self, data: &Dataset, fallback: &LrModel) -> Result<FallbackEval> {
        let mut total = 0.0;
        let mut count = 0;
        for (x, &y) in data.rows().zip(data.y()) {
            let (ld, fell) = self.log_density(x, y, fallback)?;
            total -= ld;
            count += usize::from(fell);
        }
        Ok(FallbackEval { nll: total / data.n() as f64, fallback: count })
    }
}
