use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Named feature map `ψ` applied to raw features before the linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `ψ(x) = x`.
    #[default]
    Identity,
    /// `ψ(x) = [x, x_i·x_j for i ≤ j]`.
    Quadratic,
    /// Degree-two Hermite products, orthonormal under standard normal
    /// inputs: `[x, x_i·x_j for i < j, (x_i² − 1)/√2]`. Spans the same model
    /// class as `Quadratic` (with the intercept) but conditions the fit better.
    Hermite,
}

impl FeatureMap {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::Quadratic => "quadratic",
            FeatureMap::Hermite => "hermite",
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::Quadratic | FeatureMap::Hermite => {
                input_dim + input_dim * (input_dim + 1) / 2
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        self.apply_into(x, &mut out);
        out
    }

    pub(crate) fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(x);
        match self {
            FeatureMap::Identity => {}
            FeatureMap::Quadratic => {
                for i in 0..x.len() {
                    for j in i..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
            }
            FeatureMap::Hermite => {
                for i in 0..x.len() {
                    for j in i + 1..x.len() {
                        out.push(x[i] * x[j]);
                    }
                }
                out.extend(x.iter().map(|v| (v * v - 1.0) * std::f64::consts::FRAC_1_SQRT_2));
            }
        }
    }
}

impl std::str::FromStr for FeatureMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(FeatureMap::Identity),
            "quadratic" => Ok(FeatureMap::Quadratic),
            "hermite" => Ok(FeatureMap::Hermite),
            other => Err(Error::InvalidInput(format!("unknown feature map '{other}'"))),
        }
    }
}
