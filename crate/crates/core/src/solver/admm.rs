//! ADMM for the CNR likelihood.
//!
//! The log terms are split off through `z = P'w`, `z > 0`, giving the
//! augmented Lagrangian
//!
//! ```text
//! wᵀPw − 2 Σ log z_i + λᵀ(P'w − z) + (ρ/2)‖P'w − z‖²
//! ```
//!
//! whose `w`-step is a fixed linear system and whose `z`-step decouples into
//! scalar quadratics `ρ z² − v z − 2 = 0` with `v = ρ[P'w]_i + λ_i`.

use super::design::{sum_ln, DesignMatrices};
use crate::error::{Error, Result};
use crate::model::CnrParams;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Penalty parameter `ρ > 0`.
    pub rho: f64,
    pub max_iters: usize,
    /// Primal tolerance, scaled by `√n`.
    pub tol_primal: f64,
    /// Dual tolerance, scaled by `√m`.
    pub tol_dual: f64,
    /// Ridge added to the `w`-step system to keep it invertible.
    pub ridge: f64,
    /// Initial value of every `z_i`.
    pub z_init: f64,
    /// Weight of an optional `‖w‖²` penalty added to the objective.
    pub penalty: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 50_000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            ridge: 1e-8,
            z_init: 1.0,
            penalty: 0.0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho > 0.0
            && self.tol_primal > 0.0
            && self.tol_dual > 0.0
            && self.ridge >= 0.0
            && self.z_init > 0.0
            && self.penalty >= 0.0
            && [self.rho, self.tol_primal, self.tol_dual, self.ridge, self.z_init, self.penalty]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid ADMM configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Split objective `wᵀPw − 2 Σ log z_i` after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Objective at the returned parameters (`+∞` if some training slope is
    /// not positive).
    pub objective: f64,
}

/// Positive root of `ρ z² − v z − 2 = 0`.
pub fn z_update(v: f64, rho: f64) -> f64 {
    let s = (v * v + 8.0 * rho).sqrt();
    if v >= 0.0 {
        (v + s) / (2.0 * rho)
    } else {
        // Same root, without cancelling v against s.
        4.0 / (s - v)
    }
}

/// Factored `w`-step: `w = −½ M⁻¹ P'ᵀ(λ − ρ z)` with
/// `M = P + (ρ/2) P'ᵀP' + (penalty + ridge) I`.
pub struct WStep<'a> {
    design: &'a DesignMatrices,
    system: DMatrix<f64>,
    /// `P'ᵀP'`.
    cross: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    rho: f64,
}

impl<'a> WStep<'a> {
    pub fn new(design: &'a DesignMatrices, config: &AdmmConfig) -> Result<Self> {
        let cross = design.deriv().weighted_gram(|_| 1.0);
        let mut system = &cross * (0.5 * config.rho);
        system += design.gram();
        for i in 0..system.nrows() {
            system[(i, i)] += config.penalty + config.ridge;
        }
        let chol = Cholesky::new(system.clone()).ok_or_else(|| {
            Error::InvalidInput("w-step system is not positive definite; raise the ridge".into())
        })?;
        Ok(Self { design, system, cross, chol, rho: config.rho })
    }

    /// `½ P'ᵀ(λ − ρ z)`.
    pub fn rhs(&self, lambda: &[f64], z: &[f64]) -> DVector<f64> {
        let v: Vec<f64> = lambda.iter().zip(z).map(|(l, z)| l - self.rho * z).collect();
        self.design.deriv().tr_mul(&v) * 0.5
    }

    pub fn solve(&self, lambda: &[f64], z: &[f64]) -> DVector<f64> {
        -self.chol.solve(&self.rhs(lambda, z))
    }

    /// The same step from the projections `P'ᵀλ` and `P'ᵀz`.
    fn solve_projected(&self, pt_lambda: &DVector<f64>, pt_z: &DVector<f64>) -> DVector<f64> {
        -self.chol.solve(&((pt_lambda - pt_z * self.rho) * 0.5))
    }

    /// `‖M w + ½ P'ᵀ(λ − ρ z)‖`, the residual of the linear system at `w`.
    pub fn residual(&self, w: &DVector<f64>, lambda: &[f64], z: &[f64]) -> f64 {
        (&self.system * w + self.rhs(lambda, z)).norm()
    }
}

fn penalized(design: &DesignMatrices, w: &[f64], penalty: f64) -> f64 {
    design.objective(w) + penalty * w.iter().map(|v| v * v).sum::<f64>()
}

/// Minimizes the CNR objective by ADMM, returning the fitted parameters and
/// run diagnostics. When `max_iters` is reached without convergence the
/// feasible iterate with the lowest objective is returned.
pub fn admm_fit(
    design: &DesignMatrices,
    config: &AdmmConfig,
) -> Result<(CnrParams, FitDiagnostics)> {
    config.validate()?;
    let n = design.n();
    let m = design.m();
    let step = WStep::new(design, config)?;
    let rho = config.rho;
    let primal_tol = config.tol_primal * (n as f64).sqrt();
    let dual_tol = config.tol_dual * (m as f64).sqrt();

    let mut z = vec![config.z_init; n];
    let mut lambda = vec![0.0; n];
    let mut w = step.solve(&lambda, &z);
    // `P'ᵀz` and `P'ᵀλ` are carried along incrementally, which saves a pass
    // over the rows per iteration, and recomputed exactly every
    // `REFRESH` iterations to keep rounding from accumulating.
    const REFRESH: usize = 64;
    let mut pt_z = design.deriv().tr_mul(&z);
    let mut pt_lambda = DVector::zeros(m);

    let mut trace = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let slopes = design.deriv().mul(w.as_slice());
        let mut dz = vec![0.0; n];
        let mut primal_sq = 0.0;
        for i in 0..n {
            let z_new = z_update(rho * slopes[i] + lambda[i], rho);
            dz[i] = z_new - z[i];
            z[i] = z_new;
            let r = slopes[i] - z_new;
            lambda[i] += rho * r;
            primal_sq += r * r;
        }
        primal = primal_sq.sqrt();
        let pt_dz = design.deriv().tr_mul(&dz);
        dual = rho * pt_dz.norm();
        let quad = design.quadratic(w.as_slice()) + config.penalty * w.norm_squared();
        let split = quad - 2.0 * sum_ln(&z).unwrap_or(f64::NAN);
        if !split.is_finite() || !primal.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: iterations });
        }
        trace.push(split);

        // The objective at the current w reuses its slopes.
        if let Some(logs) = sum_ln(&slopes) {
            let obj = quad - 2.0 * logs;
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, w.clone()));
            }
        }
        if primal <= primal_tol && dual <= dual_tol {
            converged = true;
            break;
        }
        if iterations % REFRESH == 0 {
            pt_z = design.deriv().tr_mul(&z);
            pt_lambda = design.deriv().tr_mul(&lambda);
        } else {
            pt_z += pt_dz;
            pt_lambda += (&step.cross * &w - &pt_z) * rho;
        }
        w = step.solve_projected(&pt_lambda, &pt_z);
    }

    if !converged && iterations > 0 {
        if let Some((_, bw)) = best {
            w = bw;
        }
    }
    let objective = penalized(design, w.as_slice(), config.penalty);
    let params = design.to_params(w.as_slice())?;
    Ok((
        params,
        FitDiagnostics {
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            objective_trace: trace,
            converged,
            objective,
        },
    ))
}
