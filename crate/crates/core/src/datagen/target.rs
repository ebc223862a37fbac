//! Low-rank targets `Θ = θ₁θ₂` and noisy linear observations of them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::recovery::{svd_descending, SvdFactors};
use crate::rng;

#[derive(Debug, Clone)]
pub struct LowRankTarget {
    pub theta: DMatrix<f64>,
    pub r: usize,
    /// d×r
    pub theta1: DMatrix<f64>,
    /// r×n
    pub theta2: DMatrix<f64>,
    svd: SvdFactors,
}

impl LowRankTarget {
    fn from_factors(theta1: DMatrix<f64>, theta2: DMatrix<f64>) -> Result<Self> {
        let r = theta1.ncols();
        let theta = &theta1 * &theta2;
        let svd = svd_descending(&theta)?;
        let s = &svd.sigma;
        if s[0] <= 0.0 || s[r - 1] <= 1e-8 * s[0] || (r < s.len() && s[r] > 1e-8 * s[0]) {
            return Err(Error::NumericalBreakdown(format!(
                "target does not have numerical rank {r}"
            )));
        }
        Ok(Self { theta, r, theta1, theta2, svd })
    }

    pub fn d(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n(&self) -> usize {
        self.theta.ncols()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.sigma
    }

    /// The `r` leading left singular vectors of `Θ`, d×r.
    pub fn left_basis(&self) -> DMatrix<f64> {
        self.svd.leading_left(self.r)
    }

    /// `Θ` with prescribed nonzero singular values and Haar-random singular
    /// vectors. The rank is the number of values given.
    pub fn with_spectrum(d: usize, n: usize, values: &[f64], seed: u64) -> Result<Self> {
        let r = values.len();
        check_shape(d, n, r)?;
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::param("singular values must be positive and finite"));
        }
        let mut rng = rng::stream(seed, 1);
        let u = random_orthonormal(d, r, &mut rng);
        let v = random_orthonormal(n, r, &mut rng);
        let mut theta1 = u;
        for (j, s) in values.iter().enumerate() {
            theta1.column_mut(j).scale_mut(*s);
        }
        Self::from_factors(theta1, v.transpose())
    }
}

fn check_shape(d: usize, n: usize, r: usize) -> Result<()> {
    if d < n || n == 0 {
        return Err(Error::dim(format!("target needs d ≥ n ≥ 1, got {d}×{n}")));
    }
    if r == 0 || r > n {
        return Err(Error::param(format!("rank must lie in 1..={n}, got {r}")));
    }
    Ok(())
}

/// d×r matrix with orthonormal columns, from the QR of a Gaussian matrix
/// with the signs of `R`'s diagonal folded into `Q`.
fn random_orthonormal<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Θ = θ₁θ₂` with i.i.d. `N(0, entry_std²)` factors.
pub fn make_lowrank_target(
    d: usize,
    n: usize,
    r: usize,
    entry_std: f64,
    seed: u64,
) -> Result<LowRankTarget> {
    check_shape(d, n, r)?;
    if !(entry_std > 0.0) || !entry_std.is_finite() {
        return Err(Error::param(format!("entry_std must be positive, got {entry_std}")));
    }
    let normal = Normal::new(0.0, entry_std).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng::stream(seed, 1);
    let theta1 = DMatrix::from_fn(d, r, |_, _| normal.sample(&mut rng));
    let theta2 = DMatrix::from_fn(r, n, |_, _| normal.sample(&mut rng));
    LowRankTarget::from_factors(theta1, theta2)
}

/// `Θᵀφ + N(0, noise_std² I)`.
pub fn lowrank_observe<R: Rng + ?Sized>(
    theta: &DMatrix<f64>,
    phi: &DVector<f64>,
    noise_std: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if phi.len() != theta.nrows() {
        return Err(Error::dim(format!(
            "regressor length {} does not match Θ with {} rows",
            phi.len(),
            theta.nrows()
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::param(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    let mut y = theta.tr_mul(phi);
    if noise_std > 0.0 {
        for v in y.iter_mut() {
            *v += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::singular_values_desc;

    #[test]
    fn product_target_has_requested_rank() {
        let t = make_lowrank_target(40, 40, 4, 2.0, 17).unwrap();
        assert_eq!(t.theta, &t.theta1 * &t.theta2);
        assert!(t.theta.norm() > 0.0);
        let s = singular_values_desc(&t.theta).unwrap();
        assert!(s[3] > 1e-8 * s[0]);
        assert!(s[4] <= 1e-8 * s[0]);
    }

    #[test]
    fn full_rank_and_deterministic() {
        let a = make_lowrank_target(6, 5, 5, 1.0, 2).unwrap();
        let b = make_lowrank_target(6, 5, 5, 1.0, 2).unwrap();
        assert_eq!(a.theta, b.theta);
        assert!(make_lowrank_target(6, 5, 0, 1.0, 2).is_err());
        assert!(make_lowrank_target(6, 5, 6, 1.0, 2).is_err());
    }

    #[test]
    fn prescribed_spectrum() {
        let t = LowRankTarget::with_spectrum(6, 4, &[5.0, 2.0], 8).unwrap();
        let s = singular_values_desc(&t.theta).unwrap();
        assert!((s[0] - 5.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12);
        assert!(s[2] < 1e-12);
        let u1 = t.left_basis();
        assert!((u1.tr_mul(&u1) - DMatrix::identity(2, 2)).norm() < 1e-10);
        // Θ lives in the span of its left basis
        assert!((&u1 * u1.tr_mul(&t.theta) - &t.theta).norm() < 1e-10);
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let t = make_lowrank_target(3, 2, 1, 1.0, 0).unwrap();
        let phi = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = lowrank_observe(&t.theta, &phi, 0.0, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(y, t.theta.transpose() * &phi);
    }

    #[test]
    fn zero_regressor_gives_pure_noise() {
        let theta = DMatrix::from_element(2, 2, 3.0);
        let mut r = rng::stream(4, 0);
        let mut sum_sq = 0.0;
        let reps = 20_000;
        for _ in 0..reps {
            let y = lowrank_observe(&theta, &DVector::zeros(2), 0.5f64.sqrt(), &mut r).unwrap();
            sum_sq += y.norm_squared();
        }
        let var = sum_sq / (2 * reps) as f64;
        assert!((var - 0.5).abs() < 0.03, "variance {var}");
    }
}
