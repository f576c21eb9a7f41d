//! Damped Newton minimization of the CNR objective, kept separate from the
//! ADMM so the two can be checked against each other.
//!
//! The `−2 Σ log [P'w]_i` term is itself a log-barrier on the training
//! slopes, so every iterate stays strictly feasible: steps are halved until
//! the trial point is feasible and satisfies the Armijo condition.

use super::design::{assemble, DesignMatrices};
use crate::data::Dataset;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::model::CnrParams;
use nalgebra::{Cholesky, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptions {
    /// Stop once the gradient norm falls to this level.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Weight of an optional `‖w‖²` penalty, matching the ADMM option.
    pub penalty: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iters: 500, penalty: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceFit {
    pub params: CnrParams,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Standardizing start: every slope `1/sd(y)` and `g` equal to the
/// z-score of `y`, with `A = 0`. Always feasible when `sd(y) > 0`.
pub fn feasible_start(data: &Dataset, dict: &Dictionary, feature_map: FeatureMap) -> Result<Vec<f64>> {
    let n = data.n() as f64;
    if data.n() == 0 {
        return Err(Error::InfeasibleStart("no samples".into()));
    }
    let mean = data.y().iter().sum::<f64>() / n;
    let sd = (data.y().iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::InfeasibleStart("labels have zero spread".into()));
    }
    let dim = dict.dim();
    let k = feature_map.output_dim(data.k());
    let mut w = vec![0.0; dim * (k + 1)];
    let b = &mut w[dim * k..];
    b[0] = match dict {
        Dictionary::PiecewiseLinear { knots } => (knots.points()[0] - mean) / sd,
        Dictionary::Affine => -mean / sd,
    };
    for slope in &mut b[1..] {
        *slope = 1.0 / sd;
    }
    Ok(w)
}

/// Value, gradient and Hessian of the (penalized) objective over the free
/// coordinates; `None` when infeasible.
fn local_model(
    design: &DesignMatrices,
    w: &DVector<f64>,
    penalty: f64,
) -> Option<(f64, DVector<f64>, nalgebra::DMatrix<f64>)> {
    let slopes = design.deriv().mul(w.as_slice());
    if slopes.iter().any(|&s| s <= 0.0) {
        return None;
    }
    let pw = design.gram() * w;
    let value = w.dot(&pw) + penalty * w.norm_squared()
        - 2.0 * slopes.iter().map(|s| s.ln()).sum::<f64>();
    let inv: Vec<f64> = slopes.iter().map(|s| 1.0 / s).collect();
    let grad = pw * 2.0 + w * (2.0 * penalty) - design.deriv().tr_mul(&inv) * 2.0;
    let mut hess = design.deriv().weighted_gram(|i| 2.0 * inv[i] * inv[i]);
    hess += design.gram() * 2.0;
    for i in 0..hess.nrows() {
        hess[(i, i)] += 2.0 * penalty;
    }
    Some((value, grad, hess))
}

fn value_at(design: &DesignMatrices, w: &DVector<f64>, penalty: f64) -> f64 {
    design.objective(w.as_slice()) + penalty * w.norm_squared()
}

/// Newton iterations from a feasible full-length start `start`.
pub fn reference_fit_design(
    design: &DesignMatrices,
    start: &[f64],
    options: &ReferenceOptions,
) -> Result<ReferenceFit> {
    let mut w = DVector::from_vec(design.project(start));
    let Some((mut value, mut grad, mut hess)) = local_model(design, &w, options.penalty) else {
        return Err(Error::InfeasibleStart("start violates a training slope".into()));
    };
    let mut iterations = 0;
    while grad.norm() > options.grad_tol && iterations < options.max_iters {
        iterations += 1;
        let scale = (0..hess.nrows()).map(|i| hess[(i, i)]).fold(1.0, f64::max);
        let mut reg = 1e-14 * scale;
        let dir = loop {
            let mut h = hess.clone();
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
            if let Some(ch) = Cholesky::new(h) {
                break -ch.solve(&grad);
            }
            reg *= 100.0;
            if reg > scale {
                return Err(Error::Diverged { iteration: iterations });
            }
        };
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial = &w + &dir * t;
            let v = value_at(design, &trial, options.penalty);
            if v.is_finite() && v <= value + 1e-4 * t * slope {
                accepted = local_model(design, &trial, options.penalty).map(|m| (trial, m));
                break;
            }
            // Near the minimum the decrease drops below the rounding of the
            // objective; the full step is then judged by the gradient instead.
            if t == 1.0 && v.is_finite() && (v - value).abs() <= 1e-12 * value.abs().max(1.0) {
                if let Some(m) = local_model(design, &trial, options.penalty) {
                    if m.1.norm() < grad.norm() {
                        accepted = Some((trial, m));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((next, model)) = accepted else {
            // Rounding floor: no representable decrease along the Newton direction.
            break;
        };
        w = next;
        (value, grad, hess) = model;
        if !value.is_finite() || value < -1e15 {
            return Err(Error::Diverged { iteration: iterations });
        }
    }
    Ok(ReferenceFit {
        params: design.to_params(w.as_slice())?,
        objective: value,
        grad_norm: grad.norm(),
        iterations,
    })
}

/// Fits the CNR objective on `data` from the standardizing start.
pub fn reference_fit(
    data: &Dataset,
    dict: &Dictionary,
    feature_map: FeatureMap,
    options: &ReferenceOptions,
) -> Result<ReferenceFit> {
    let design = assemble(data, dict, feature_map)?;
    let start = feasible_start(data, dict, feature_map)?;
    reference_fit_design(&design, &start, options)
}
