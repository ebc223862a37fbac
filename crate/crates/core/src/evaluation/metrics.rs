//! Accuracy metrics and their Monte-Carlo aggregate.

use nalgebra::{ComplexField, DMatrix, Scalar};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NMSE_DB_FLOOR: f64 = -300.0;

fn check_reference<T: Scalar + ComplexField<RealField = f64>>(
    truth: &DMatrix<T>,
    what: &str,
) -> Result<f64> {
    let norm = truth.norm();
    if !(norm > 0.0) {
        return Err(Error::param(format!("{what} must be nonzero")));
    }
    Ok(norm)
}

fn check_shape<T: Scalar>(est: &DMatrix<T>, truth: &DMatrix<T>, j: usize) -> Result<()> {
    if est.shape() != truth.shape() {
        return Err(Error::dim(format!(
            "estimate {j} is {:?}, reference is {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// `‖X − Θ‖_F / ‖Θ‖_F` for one estimate.
pub fn relative_error<T: Scalar + ComplexField<RealField = f64>>(
    est: &DMatrix<T>,
    truth: &DMatrix<T>,
) -> Result<f64> {
    let norm = check_reference(truth, "reference matrix")?;
    check_shape(est, truth, 0)?;
    Ok((est - truth).norm() / norm)
}

/// Mean relative Frobenius error over a set of estimates.
pub fn para_est_err(estimates: &[DMatrix<f64>], theta: &DMatrix<f64>) -> Result<f64> {
    let norm = check_reference(theta, "Θ")?;
    if estimates.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (j, x) in estimates.iter().enumerate() {
        check_shape(x, theta, j)?;
        sum += (x - theta).norm() / norm;
    }
    Ok(sum / estimates.len() as f64)
}

/// Mean absolute rank error.
pub fn rank_est_err(ranks: &[usize], true_rank: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let sum: usize = ranks.iter().map(|r| r.abs_diff(true_rank)).sum();
    Ok(sum as f64 / ranks.len() as f64)
}

/// `10 log₁₀(nmse)`, clamped below at [`NMSE_DB_FLOOR`].
pub fn to_db(nmse: f64) -> f64 {
    if nmse > 0.0 {
        (10.0 * nmse.log10()).max(NMSE_DB_FLOOR)
    } else {
        NMSE_DB_FLOOR
    }
}

/// Mean of `‖Ĥ − H‖² / ‖H‖²` over the estimates, linear and in dB.
pub fn nmse<T: Scalar + ComplexField<RealField = f64>>(
    estimates: &[DMatrix<T>],
    h: &DMatrix<T>,
) -> Result<(f64, f64)> {
    let norm = check_reference(h, "channel matrix")?;
    if estimates.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (j, e) in estimates.iter().enumerate() {
        check_shape(e, h, j)?;
        sum += ((e - h).norm() / norm).powi(2);
    }
    let value = sum / estimates.len() as f64;
    Ok((value, to_db(value)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub para_err: f64,
    pub rank_err: f64,
    pub nmse: f64,
}

impl TrialMetrics {
    /// Metrics of one estimate against its own reference.
    pub fn of<T: Scalar + ComplexField<RealField = f64>>(
        est: &DMatrix<T>,
        truth: &DMatrix<T>,
        rank_est: usize,
        true_rank: usize,
    ) -> Result<Self> {
        let para_err = relative_error(est, truth)?;
        Ok(Self {
            para_err,
            rank_err: rank_est.abs_diff(true_rank) as f64,
            nmse: para_err * para_err,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub para_est_err: f64,
    pub rank_est_error: f64,
    pub nmse: f64,
    pub nmse_db: f64,
    pub trials: usize,
    pub per_trial: Vec<TrialMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation_trace: Option<Vec<(usize, f64)>>,
}

impl MetricsReport {
    /// Aggregate per-trial metrics, summing in the given order.
    pub fn from_trials(per_trial: Vec<TrialMetrics>) -> Result<Self> {
        if per_trial.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let t = per_trial.len() as f64;
        let mean = |f: fn(&TrialMetrics) -> f64| per_trial.iter().map(f).sum::<f64>() / t;
        let nmse = mean(|m| m.nmse);
        Ok(Self {
            para_est_err: mean(|m| m.para_err),
            rank_est_error: mean(|m| m.rank_err),
            nmse,
            nmse_db: to_db(nmse),
            trials: per_trial.len(),
            per_trial,
            excitation_trace: None,
        })
    }

    pub fn with_excitation_trace(mut self, trace: Vec<(usize, f64)>) -> Self {
        self.excitation_trace = Some(trace);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn parameter_error_cases() {
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(para_est_err(&[theta.clone(), theta.clone()], &theta).unwrap(), 0.0);
        assert!((para_est_err(&[&theta * 2.0], &theta).unwrap() - 1.0).abs() < 1e-15);
        assert!(para_est_err(std::slice::from_ref(&theta), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn rank_error_cases() {
        assert_eq!(rank_est_err(&[4, 4, 4], 4).unwrap(), 0.0);
        assert_eq!(rank_est_err(&[40; 20], 4).unwrap(), 36.0);
        assert_eq!(rank_est_err(&[4, 5], 4).unwrap(), 0.5);
        assert_eq!(rank_est_err(&[2], 4).unwrap(), 2.0);
    }

    #[test]
    fn nmse_cases() {
        let h = DMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 1.0, j as f64 - 0.5));
        let (v, db) = nmse(std::slice::from_ref(&h), &h).unwrap();
        assert_eq!((v, db), (0.0, NMSE_DB_FLOOR));
        let (v, db) = nmse(&[DMatrix::zeros(3, 2)], &h).unwrap();
        assert!((v - 1.0).abs() < 1e-15 && db.abs() < 1e-12);
        let mut e = DMatrix::zeros(3, 2);
        e[(0, 0)] = Complex64::new(0.1 * h.norm(), 0.0);
        let (v, db) = nmse(&[&h + e], &h).unwrap();
        assert!((v - 0.01).abs() < 1e-12 && (db + 20.0).abs() < 1e-9);
    }

    #[test]
    fn report_aggregates_are_means() {
        let per = vec![
            TrialMetrics { para_err: 0.1, rank_err: 0.0, nmse: 0.01 },
            TrialMetrics { para_err: 0.3, rank_err: 2.0, nmse: 0.09 },
            TrialMetrics { para_err: 0.2, rank_err: 1.0, nmse: 0.04 },
        ];
        let r = MetricsReport::from_trials(per).unwrap();
        assert!((r.para_est_err - 0.2).abs() < 1e-12);
        assert!((r.rank_est_error - 1.0).abs() < 1e-12);
        assert!((r.nmse - 0.14 / 3.0).abs() < 1e-12);
        assert_eq!(r.trials, 3);
        assert!(MetricsReport::from_trials(vec![]).is_err());
    }

    #[test]
    fn single_trial_report_equals_trial() {
        let m = TrialMetrics::of(&DMatrix::from_element(2, 1, 2.0), &DMatrix::from_element(2, 1, 1.0), 3, 1)
            .unwrap();
        let r = MetricsReport::from_trials(vec![m]).unwrap();
        assert_eq!((r.para_est_err, r.rank_est_error, r.nmse), (m.para_err, m.rank_err, m.nmse));
        assert!((m.para_err - 1.0).abs() < 1e-15 && m.rank_err == 2.0);
    }
}
