//! Moment diagnostics for the limiting Gaussian law of the recovered
//! estimate.
//!
//! Full-rank case: `vec(C_N (X − Θ))` with `C_N = (Σφφᵀ)^{1/2}` should be
//! close to `N(0, σ² I)`.
//!
//! Low-rank case: `vec(C_N Û₁Û₁ᵀ (X − Θ))` with `C_N = √N Σ^{1/2}` should be
//! close to `N(0, σ² I_n ⊗ MMᵀ)` where `M = Σ^{1/2} U₁U₁ᵀ Σ^{−1/2}`. Here `Σ`
//! is the regressor covariance, `U₁` spans the column space of `Θ`, and
//! `Û₁` holds the leading left singular vectors of the first-stage estimate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const MIN_NORMALITY_SAMPLES: usize = 100;

/// Square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues down to `−1e-12` (relative to the largest magnitude) are
/// treated as rounding and clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim(format!("expected a square matrix, got {:?}", m.shape())));
    }
    ensure_finite(m.iter(), "matrix passed to psd_sqrt")?;
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::param("matrix is not symmetric"));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    if eig.eigenvalues.iter().any(|l| *l < -1e-12 * scale) {
        return Err(Error::param("matrix is not positive semidefinite"));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

fn psd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    if eig.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::param("matrix is not positive definite"));
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalityMode {
    FullRank,
    LowRank,
}

#[derive(Debug, Clone)]
pub struct NormalityPlan {
    pub mode: NormalityMode,
    pub c_n: DMatrix<f64>,
    /// Identity in full-rank mode.
    pub m_mat: DMatrix<f64>,
    pub sigma2: f64,
    /// Basis of the column space of `Θ` (low-rank mode only).
    pub u1: Option<DMatrix<f64>>,
    /// Number of columns of `Θ`.
    pub n: usize,
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::param(format!("noise variance must be positive, got {sigma2}")));
    }
    Ok(())
}

impl NormalityPlan {
    /// `C_N = (Σφφᵀ)^{1/2}`, `M = I`.
    pub fn full_rank(gram: &DMatrix<f64>, n: usize, sigma2: f64) -> Result<Self> {
        check_sigma2(sigma2)?;
        let c_n = psd_sqrt(gram)?;
        let d = gram.nrows();
        Ok(Self {
            mode: NormalityMode::FullRank,
            c_n,
            m_mat: DMatrix::identity(d, d),
            sigma2,
            u1: None,
            n,
        })
    }

    /// `C_N = √N Σ^{1/2}`, `M = Σ^{1/2} U₁U₁ᵀ Σ^{−1/2}`.
    pub fn low_rank(
        cov: &DMatrix<f64>,
        n_obs: usize,
        u1: DMatrix<f64>,
        n: usize,
        sigma2: f64,
    ) -> Result<Self> {
        check_sigma2(sigma2)?;
        let d = cov.nrows();
        if u1.nrows() != d || u1.ncols() == 0 || u1.ncols() > d {
            return Err(Error::dim(format!("U₁ must be {d}×r, got {:?}", u1.shape())));
        }
        if (u1.tr_mul(&u1) - DMatrix::identity(u1.ncols(), u1.ncols())).amax() > 1e-8 {
            return Err(Error::param("U₁ must have orthonormal columns"));
        }
        let root = psd_sqrt(cov)?;
        let inv_root = psd_inv_sqrt(cov)?;
        let m_mat = &root * (&u1 * u1.transpose()) * inv_root;
        Ok(Self {
            mode: NormalityMode::LowRank,
            c_n: root * (n_obs as f64).sqrt(),
            m_mat,
            sigma2,
            u1: Some(u1),
            n,
        })
    }

    pub fn d(&self) -> usize {
        self.c_n.nrows()
    }

    /// Limiting covariance of the column-major stacked statistic.
    pub fn theoretical_covariance(&self) -> DMatrix<f64> {
        let d = self.d();
        let block = match self.mode {
            NormalityMode::FullRank => DMatrix::identity(d, d),
            NormalityMode::LowRank => &self.m_mat * self.m_mat.transpose(),
        } * self.sigma2;
        DMatrix::identity(self.n, self.n).kronecker(&block)
    }
}

/// Column-major `vec` of the scaled error.
pub fn normality_statistic(
    x: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    plan: &NormalityPlan,
    u1_hat: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    if x.shape() != theta.shape() || x.nrows() != plan.d() || x.ncols() != plan.n {
        return Err(Error::dim(format!(
            "estimate {:?}, target {:?}, plan {}×{}",
            x.shape(),
            theta.shape(),
            plan.d(),
            plan.n
        )));
    }
    let err = x - theta;
    let scaled = match plan.mode {
        NormalityMode::FullRank => &plan.c_n * err,
        NormalityMode::LowRank => {
            let u = u1_hat.ok_or_else(|| {
                Error::param("low-rank statistic needs the estimated leading singular vectors")
            })?;
            if u.nrows() != plan.d() {
                return Err(Error::dim("Û₁ has the wrong number of rows"));
            }
            &plan.c_n * (u * u.tr_mul(&err))
        }
    };
    Ok(DVector::from_column_slice(scaled.as_slice()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalityDiagnostics {
    pub mode: NormalityMode,
    pub samples: usize,
    pub mean: Vec<f64>,
    /// Row-major.
    pub empirical_covariance: Vec<Vec<f64>>,
    pub theoretical_covariance: Vec<Vec<f64>>,
    /// `‖Ĉ − C‖_F / ‖C‖_F`.
    pub covariance_deviation: f64,
    /// `max_i |mean_i| / sqrt(C_ii)` over coordinates with nonzero theoretical
    /// variance.
    pub max_standardized_mean: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Compare sample moments of the statistic against the limiting law.
pub fn normality_check(samples: &[DVector<f64>], plan: &NormalityPlan) -> Result<NormalityDiagnostics> {
    if samples.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InsufficientSamples { needed: MIN_NORMALITY_SAMPLES, got: samples.len() });
    }
    let theory = plan.theoretical_covariance();
    let k = theory.nrows();
    if let Some(bad) = samples.iter().position(|s| s.len() != k) {
        return Err(Error::dim(format!("sample {bad} has length {}, expected {k}", samples[bad].len())));
    }
    let t = samples.len() as f64;
    let mut mean = DVector::zeros(k);
    for s in samples {
        mean += s;
    }
    mean /= t;
    let mut cov = DMatrix::zeros(k, k);
    for s in samples {
        let c = s - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= t - 1.0;

    let covariance_deviation = (&cov - &theory).norm() / theory.norm();
    let max_standardized_mean = (0..k)
        .filter(|&i| theory[(i, i)] > 1e-12)
        .map(|i| mean[i].abs() / theory[(i, i)].sqrt())
        .fold(0.0, f64::max);

    Ok(NormalityDiagnostics {
        mode: plan.mode,
        samples: samples.len(),
        mean: mean.iter().copied().collect(),
        empirical_covariance: rows(&cov),
        theoretical_covariance: rows(&theory),
        covariance_deviation,
        max_standardized_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn square_roots() {
        assert_eq!(psd_sqrt(&DMatrix::identity(3, 3)).unwrap(), DMatrix::identity(3, 3));
        let s = psd_sqrt(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
        let mut r = rng::stream(1, 0);
        for _ in 0..20 {
            let a = DMatrix::from_fn(5, 3, |_, _| r.sample::<f64, _>(StandardNormal));
            let m = &a * a.transpose();
            let s = psd_sqrt(&m).unwrap();
            assert!((&s * &s - &m).norm() <= 1e-8 * m.norm().max(1.0));
            assert!((&s - s.transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(psd_sqrt(&asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_sqrt(&indef).is_err());
    }

    fn full_identity_plan(d: usize, n: usize) -> NormalityPlan {
        NormalityPlan::full_rank(&DMatrix::identity(d, d), n, 1.0).unwrap()
    }

    #[test]
    fn statistic_basics() {
        let theta = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let plan = full_identity_plan(3, 2);
        assert_eq!(normality_statistic(&theta, &theta, &plan, None).unwrap(), DVector::zeros(6));
        let e = DMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64);
        let s = normality_statistic(&(&theta + &e), &theta, &plan, None).unwrap();
        assert_eq!(s.as_slice(), e.as_slice());
    }

    #[test]
    fn low_rank_statistic_ignores_orthogonal_error() {
        let cov = DMatrix::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let u1 = DMatrix::from_fn(4, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let plan = NormalityPlan::low_rank(&cov, 100, u1.clone(), 2, 1.0).unwrap();
        let theta = DMatrix::from_fn(4, 2, |i, j| if i == 0 { 1.0 + j as f64 } else { 0.0 });
        let x = &theta + DMatrix::from_element(4, 2, 0.3);
        let base = normality_statistic(&x, &theta, &plan, Some(&u1)).unwrap();
        let mut bump = DMatrix::zeros(4, 2);
        bump[(2, 0)] = 5.0;
        bump[(3, 1)] = -7.0;
        let moved = normality_statistic(&(&x + bump), &theta, &plan, Some(&u1)).unwrap();
        assert!((base - moved).amax() <= 1e-12);
        assert!(normality_statistic(&x, &theta, &plan, None).is_err());
    }

    fn gaussian_samples(cov: &DMatrix<f64>, t: usize, seed: u64) -> Vec<DVector<f64>> {
        let root = psd_sqrt(cov).unwrap();
        let mut r = rng::stream(seed, 0);
        (0..t)
            .map(|_| &root * DVector::from_fn(cov.nrows(), |_, _| r.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn calibrated_on_exact_gaussian_samples() {
        let plan = full_identity_plan(4, 2);
        let s = gaussian_samples(&plan.theoretical_covariance(), 1000, 7);
        let diag = normality_check(&s, &plan).unwrap();
        assert!(diag.covariance_deviation <= 0.2, "{}", diag.covariance_deviation);

        let cov = DMatrix::from_fn(6, 6, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let u1 = DMatrix::from_fn(6, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let plan = NormalityPlan::low_rank(&cov, 2000, u1, 4, 0.25).unwrap();
        let s = gaussian_samples(&plan.theoretical_covariance(), 1000, 8);
        let diag = normality_check(&s, &plan).unwrap();
        assert!(diag.covariance_deviation <= 0.2, "{}", diag.covariance_deviation);
    }

    #[test]
    fn zero_samples_deviate_fully() {
        let plan = full_identity_plan(2, 1);
        let diag = normality_check(&vec![DVector::zeros(2); 100], &plan).unwrap();
        assert!(diag.mean.iter().all(|m| *m == 0.0));
        assert!((diag.covariance_deviation - 1.0).abs() < 1e-15);
        assert!(normality_check(&vec![DVector::zeros(2); 99], &plan).is_err());
    }

    #[test]
    fn low_rank_plan_shapes() {
        let cov = DMatrix::identity(3, 3);
        let u1 = DMatrix::from_fn(3, 1, |i, _| if i == 1 { 1.0 } else { 0.0 });
        let plan = NormalityPlan::low_rank(&cov, 4, u1, 2, 2.0).unwrap();
        assert!((plan.c_n.clone() - DMatrix::identity(3, 3) * 2.0).amax() < 1e-14);
        let theory = plan.theoretical_covariance();
        assert_eq!(theory.shape(), (6, 6));
        // identity Σ makes M the projector onto e₂
        assert!((theory[(1, 1)] - 2.0).abs() < 1e-14 && (theory[(4, 4)] - 2.0).abs() < 1e-14);
        assert!(theory[(0, 0)].abs() < 1e-14);
        let bad = DMatrix::from_element(3, 1, 1.0);
        assert!(NormalityPlan::low_rank(&cov, 4, bad, 2, 1.0).is_err());
    }
}
