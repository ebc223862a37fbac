//! Regularization coefficient `λ_N`.

use serde::{Deserialize, Serialize};

use super::rls::ExcitationStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSchedule {
    /// `λ_N = N^alpha`
    Power { alpha: f64 },
    /// `λ_N = (ln λ_max / λ_min)^(1/2 + eps)`, `0 < eps < 1/2`
    RatioPower { eps: f64 },
}

impl LambdaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaSchedule::Power { alpha } if !alpha.is_finite() => {
                Err(Error::param(format!("power schedule needs a finite alpha, got {alpha}")))
            }
            LambdaSchedule::RatioPower { eps } if !(eps > 0.0 && eps < 0.5) => Err(Error::param(
                format!("ratio_power schedule needs 0 < eps < 1/2, got {eps}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, n_obs: usize, stats: &ExcitationStats) -> Result<f64> {
        self.validate()?;
        if n_obs == 0 {
            return Err(Error::param("schedule is defined for N ≥ 1"));
        }
        let lambda = match *self {
            LambdaSchedule::Power { alpha } => (n_obs as f64).powf(alpha),
            LambdaSchedule::RatioPower { eps } => {
                if !(stats.ratio > 0.0) || !stats.ratio.is_finite() {
                    return Err(Error::DegenerateSchedule(format!(
                        "ratio_power needs a positive excitation ratio, got {}",
                        stats.ratio
                    )));
                }
                stats.ratio.powf(0.5 + eps)
            }
        };
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::DegenerateSchedule(format!("λ_N evaluated to {lambda}")));
        }
        Ok(lambda)
    }
}
