//! Two-stage online recovery: an unconstrained first-stage estimate followed
//! by adaptive weighted singular-value soft-thresholding.

pub mod rls;
pub mod schedule;
pub mod svd;
pub mod threshold;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
pub use rls::{batch_ls, ExcitationStats, FirstStage, RlsState};
pub use schedule::LambdaSchedule;
pub use svd::{singular_values_desc, svd_descending, SvdFactors};
pub use threshold::{
    adaptive_weights, estimate_rank, numerical_rank, soft_threshold, thresholded_values,
    weighted_nuclear_objective, WeightVector, NUMERICAL_RANK_TOL,
};

/// Result of one thresholding pass.
#[derive(Debug, Clone)]
pub struct RecoveryOutput {
    /// The recovered low-rank matrix `X_{N+1}`.
    pub x: DMatrix<f64>,
    pub rank_est: usize,
    /// Full SVD of the first-stage estimate that was thresholded.
    pub svd: SvdFactors,
    /// `max(σ_i − λ w_i, 0)`, the singular values of `x`.
    pub sigma_thresholded: DVector<f64>,
    pub weights: WeightVector,
    pub lambda_used: f64,
    pub excitation: ExcitationStats,
}

impl RecoveryOutput {
    /// Singular values of the first-stage estimate.
    pub fn sigma(&self) -> &DVector<f64> {
        &self.svd.sigma
    }

    /// The first `r` left singular vectors of the first-stage estimate.
    pub fn leading_left(&self, r: usize) -> DMatrix<f64> {
        self.svd.leading_left(r)
    }
}

/// Threshold the current estimate of `state`. Does not modify the state.
pub fn recover(state: &impl FirstStage, schedule: &LambdaSchedule) -> Result<RecoveryOutput> {
    let excitation = state.excitation()?;
    recover_from_parts(state.estimate(), state.observations(), excitation, schedule)
}

/// Same as [`recover`] with the estimate and excitation supplied directly.
pub fn recover_from_parts(
    theta: &DMatrix<f64>,
    n_obs: usize,
    excitation: ExcitationStats,
    schedule: &LambdaSchedule,
) -> Result<RecoveryOutput> {
    if n_obs == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let svd = svd_descending(theta)?;
    let sigma = svd.sigma.as_slice();
    let weights = adaptive_weights(sigma, &excitation)?;
    let lambda_used = schedule.eval(n_obs, &excitation)?;
    let sigma_thresholded = DVector::from_vec(thresholded_values(sigma, lambda_used, &weights)?);
    let x = svd.compose(&sigma_thresholded);
    let rank_est = estimate_rank(sigma, lambda_used, &weights)?;
    Ok(RecoveryOutput {
        x,
        rank_est,
        svd,
        sigma_thresholded,
        weights,
        lambda_used,
        excitation,
    })
}
