//! First stage: recursive least squares over a matrix-valued parameter.
//!
//! The estimator tracks `Θ_N` (d×n) and the inverse Gram matrix
//! `P_N = (Σ φφᵀ + P_1⁻¹)⁻¹`, starting from `P_1 = μ I_d` and `Θ_1 = 0`.
//! Each observation is absorbed with a rank-one correction, so the cost per
//! step is O(d² + dn) regardless of how much data has been seen.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A first-stage estimator whose output feeds the thresholding step.
///
/// Only [`RlsState`] ships; the trait keeps the second stage independent of
/// how the unconstrained estimate was produced.
pub trait FirstStage {
    /// Absorb one regressor/response pair.
    fn absorb(&mut self, phi: &DVector<f64>, y: &DVector<f64>) -> Result<()>;
    /// Current unconstrained estimate, d×n.
    fn estimate(&self) -> &DMatrix<f64>;
    /// Number of pairs absorbed so far.
    fn observations(&self) -> usize;
    /// Extreme eigenvalues of the regularized regressor Gram matrix.
    fn excitation(&self) -> Result<ExcitationStats>;
}

/// Extreme eigenvalues of `S_N = Σ φφᵀ + P_1⁻¹` and the excitation ratio
/// `ln λ_max / λ_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationStats {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub ratio: f64,
}

impl ExcitationStats {
    pub fn from_extremes(lambda_max: f64, lambda_min: f64) -> Result<Self> {
        if !(lambda_min > 0.0) || !lambda_max.is_finite() || lambda_max < lambda_min {
            return Err(Error::NumericalBreakdown(format!(
                "invalid Gram eigenvalues: max {lambda_max}, min {lambda_min}"
            )));
        }
        Ok(Self {
            lambda_max,
            lambda_min,
            ratio: lambda_max.ln() / lambda_min,
        })
    }

    /// `sqrt(ratio)`, the additive term of the adaptive weights and the
    /// almost-sure error rate of the first stage.
    pub fn rate(&self) -> f64 {
        self.ratio.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct RlsState {
    theta_hat: DMatrix<f64>,
    p_mat: DMatrix<f64>,
    mu: f64,
    n_obs: usize,
}

impl RlsState {
    /// `Θ_1 = 0`, `P_1 = μ I_d`.
    ///
    /// Requires `d ≥ n ≥ 1`; wide problems should be transposed by the
    /// caller. `μ` must be positive and finite.
    pub fn new(d: usize, n: usize, mu: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("n must be at least 1"));
        }
        if d < n {
            return Err(Error::dim(format!(
                "d ({d}) must be at least n ({n}); transpose the problem"
            )));
        }
        Self::with_initial_estimate(DMatrix::zeros(d, n), mu)
    }

    /// Start from an arbitrary `Θ_1`. Used by the self-tuning regulator,
    /// which needs an invertible input-gain block from the first step.
    pub fn with_initial_estimate(theta_1: DMatrix<f64>, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::param(format!("mu must be positive and finite, got {mu}")));
        }
        if theta_1.nrows() == 0 || theta_1.ncols() == 0 {
            return Err(Error::dim("empty parameter matrix"));
        }
        ensure_finite(theta_1.iter(), "initial estimate")?;
        let d = theta_1.nrows();
        Ok(Self {
            theta_hat: theta_1,
            p_mat: DMatrix::identity(d, d) * mu,
            mu,
            n_obs: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.theta_hat.nrows()
    }

    pub fn n(&self) -> usize {
        self.theta_hat.ncols()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn theta_hat(&self) -> &DMatrix<f64> {
        &self.theta_hat
    }

    pub fn p_mat(&self) -> &DMatrix<f64> {
        &self.p_mat
    }

    /// One RLS step:
    ///
    /// ```text
    /// a   = 1 / (1 + φᵀPφ)
    /// Θ  += a Pφ (yᵀ − φᵀΘ)
    /// P  -= a Pφ φᵀP,  then P = (P + Pᵀ)/2
    /// ```
    pub fn update(&mut self, phi: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if phi.len() != self.d() || y.len() != self.n() {
            return Err(Error::dim(format!(
                "expected phi of length {} and y of length {}, got {} and {}",
                self.d(),
                self.n(),
                phi.len(),
                y.len()
            )));
        }
        ensure_finite(phi.iter(), "regressor")?;
        ensure_finite(y.iter(), "response")?;

        let p_phi = &self.p_mat * phi;
        let denom = 1.0 + phi.dot(&p_phi);
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "1 + φᵀPφ = {denom} at observation {}",
                self.n_obs + 1
            )));
        }
        let gain = p_phi / denom;

        // innovation as a row vector: yᵀ − φᵀΘ
        let innovation = y.transpose() - phi.transpose() * &self.theta_hat;
        self.theta_hat += &gain * innovation;

        self.p_mat -= &gain * (&self.p_mat * phi).transpose();
        let sym = (&self.p_mat + self.p_mat.transpose()) * 0.5;
        self.p_mat = sym;

        self.n_obs += 1;
        Ok(())
    }

    /// Eigenvalues of `S_N` obtained by inverting the spectrum of `P`.
    ///
    /// Fails when `P` has a non-positive eigenvalue.
    pub fn excitation_stats(&self) -> Result<ExcitationStats> {
        let eig = SymmetricEigen::new(self.p_mat.clone());
        let p_min = eig.eigenvalues.min();
        let p_max = eig.eigenvalues.max();
        if !(p_min > 0.0) || !p_max.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "P lost positive definiteness after {} observations (smallest eigenvalue {p_min:e})",
                self.n_obs
            )));
        }
        ExcitationStats::from_extremes(1.0 / p_min, 1.0 / p_max)
    }
}

impl FirstStage for RlsState {
    fn absorb(&mut self, phi: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        self.update(phi, y)
    }

    fn estimate(&self) -> &DMatrix<f64> {
        &self.theta_hat
    }

    fn observations(&self) -> usize {
        self.n_obs
    }

    fn excitation(&self) -> Result<ExcitationStats> {
        self.excitation_stats()
    }
}

/// Closed-form batch estimate `(Σφφᵀ + μ⁻¹I)⁻¹ Σφyᵀ`.
///
/// Equal to the recursion started from `Θ_1 = 0`; kept as an oracle for it.
pub fn batch_ls(
    history: &[(DVector<f64>, DVector<f64>)],
    d: usize,
    n: usize,
    mu: f64,
) -> Result<DMatrix<f64>> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::param(format!("mu must be positive and finite, got {mu}")));
    }
    let mut gram = DMatrix::identity(d, d) / mu;
    let mut cross = DMatrix::zeros(d, n);
    for (k, (phi, y)) in history.iter().enumerate() {
        if phi.len() != d || y.len() != n {
            return Err(Error::dim(format!("pair {k} has wrong shape")));
        }
        ensure_finite(phi.iter(), "regressor")?;
        ensure_finite(y.iter(), "response")?;
        gram.ger(1.0, phi, phi, 1.0);
        cross.ger(1.0, phi, y, 1.0);
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NumericalBreakdown("normal matrix not positive definite".into()))?;
    Ok(chol.solve(&cross))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn init_sets_zero_estimate_and_scaled_identity() {
        let s = RlsState::new(2, 1, 0.5).unwrap();
        assert_eq!(s.theta_hat(), &DMatrix::zeros(2, 1));
        assert_eq!(s.p_mat(), &(DMatrix::identity(2, 2) * 0.5));
        assert_eq!(s.n_obs(), 0);

        let s = RlsState::new(3, 3, 0.9).unwrap();
        assert_eq!(s.p_mat(), &(DMatrix::identity(3, 3) * 0.9));
    }

    #[test]
    fn init_rejects_wide_and_bad_mu() {
        assert!(matches!(RlsState::new(1, 2, 0.5), Err(Error::Dimension(_))));
        assert!(matches!(RlsState::new(2, 0, 0.5), Err(Error::Dimension(_))));
        for mu in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(RlsState::new(2, 1, mu), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn scalar_update_matches_hand_values() {
        let mut s = RlsState::new(1, 1, 0.5).unwrap();
        s.update(&v(&[1.0]), &v(&[2.0])).unwrap();
        // a = 1/(1 + 0.5) = 2/3; Θ = 2/3 · 0.5 · 1 · 2 = 2/3; P = 0.5 − 2/3 · 0.25 = 1/3
        assert!((s.theta_hat()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.p_mat()[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.n_obs(), 1);
    }

    #[test]
    fn zero_regressor_only_counts() {
        let mut s = RlsState::new(3, 2, 0.5).unwrap();
        s.update(&v(&[1.0, -2.0, 0.5]), &v(&[1.0, 3.0])).unwrap();
        let before = s.clone();
        s.update(&DVector::zeros(3), &v(&[7.0, -7.0])).unwrap();
        assert_eq!(s.theta_hat(), before.theta_hat());
        assert_eq!(s.p_mat(), before.p_mat());
        assert_eq!(s.n_obs(), before.n_obs() + 1);
    }

    #[test]
    fn orthogonal_regressors_match_batch_values() {
        let mut s = RlsState::new(2, 1, 0.5).unwrap();
        s.update(&v(&[1.0, 0.0]), &v(&[3.0])).unwrap();
        s.update(&v(&[0.0, 1.0]), &v(&[5.0])).unwrap();
        assert!((s.theta_hat()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s.theta_hat()[(1, 0)] - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut s = RlsState::new(2, 1, 0.5).unwrap();
        assert!(matches!(
            s.update(&v(&[1.0]), &v(&[1.0])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            s.update(&v(&[f64::NAN, 0.0]), &v(&[1.0])),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            s.update(&v(&[1.0, 0.0]), &v(&[f64::INFINITY])),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(s.n_obs(), 0);
    }

    #[test]
    fn batch_ls_edge_cases() {
        assert_eq!(batch_ls(&[], 3, 2, 0.5).unwrap(), DMatrix::zeros(3, 2));
        let est = batch_ls(&[(v(&[1.0]), v(&[2.0]))], 1, 1, 0.5).unwrap();
        assert!((est[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!(batch_ls(&[(v(&[f64::NAN]), v(&[2.0]))], 1, 1, 0.5).is_err());
    }

    #[test]
    fn excitation_of_fresh_and_scalar_states() {
        let s = RlsState::new(3, 2, 0.5).unwrap();
        let e = s.excitation_stats().unwrap();
        assert!((e.lambda_max - 2.0).abs() < 1e-12);
        assert!((e.lambda_min - 2.0).abs() < 1e-12);
        assert!((e.ratio - 2f64.ln() / 2.0).abs() < 1e-12);
        assert!((e.ratio - 0.34657).abs() < 1e-5);

        let mut s = RlsState::new(1, 1, 0.5).unwrap();
        s.update(&v(&[1.0]), &v(&[0.0])).unwrap();
        let e = s.excitation_stats().unwrap();
        assert!((e.lambda_max - 3.0).abs() < 1e-12);
        assert!((e.ratio - 3f64.ln() / 3.0).abs() < 1e-12);
    }

    fn trajectory(d: usize, n: usize, len: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let phi = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
                let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
                (phi, y)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn recursion_equals_batch(
            n in 1usize..6,
            extra in 0usize..8,
            len in 0usize..250,
            mu in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let d = n + extra;
            let data = trajectory(d, n, len, seed);
            let mut s = RlsState::new(d, n, mu).unwrap();
            for (phi, y) in &data {
                s.update(phi, y).unwrap();
            }
            let batch = batch_ls(&data, d, n, mu).unwrap();
            if batch.norm() > 0.0 {
                prop_assert!(rel_frob(s.theta_hat(), &batch) <= 1e-8);
            } else {
                prop_assert!(s.theta_hat().norm() == 0.0);
            }
            let e = s.excitation_stats().unwrap();
            prop_assert!(e.lambda_max >= e.lambda_min);
            prop_assert!(e.lambda_min >= 1.0 / mu * (1.0 - 1e-9));
            let asym = (s.p_mat() - s.p_mat().transpose()).amax();
            prop_assert!(asym <= 1e-10);
        }
    }
}
