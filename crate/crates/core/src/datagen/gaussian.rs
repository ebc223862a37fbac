//! Gaussian regressor designs: stationary `N(0, Σ)` and the time-growing
//! variant `φ_k ~ N(0, k^δ Σ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, Error, Result};
use crate::rng;

/// Draws `φ ~ N(0, k^δ Σ)`; `δ = 0` is the stationary design.
#[derive(Debug, Clone)]
pub struct GaussianRegressors {
    chol: DMatrix<f64>,
    delta: f64,
}

impl GaussianRegressors {
    pub fn stationary(cov: &DMatrix<f64>) -> Result<Self> {
        Self::growing(cov, 0.0)
    }

    pub fn growing(cov: &DMatrix<f64>, delta: f64) -> Result<Self> {
        if !cov.is_square() || cov.nrows() == 0 {
            return Err(Error::dim(format!("covariance must be square, got {:?}", cov.shape())));
        }
        ensure_finite(cov.iter(), "covariance")?;
        if (cov - cov.transpose()).amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::param("covariance is not symmetric"));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::param(format!("delta must lie in [0, 1), got {delta}")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::param("covariance is not positive definite"))?
            .unpack();
        Ok(Self { chol, delta })
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// The `k`-th regressor (`k ≥ 1`).
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = if self.delta == 0.0 { 1.0 } else { (k as f64).powf(0.5 * self.delta) };
        (&self.chol * z) * scale
    }
}

/// `count` i.i.d. draws from `N(0, cov)`.
pub fn gen_stationary_regressors(
    cov: &DMatrix<f64>,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let g = GaussianRegressors::stationary(cov)?;
    let mut rng = rng::stream(seed, 0);
    Ok((1..=count).map(|k| g.sample(k, &mut rng)).collect())
}

#[derive(Debug, Clone)]
pub struct NonStatGaussianConfig {
    pub delta: f64,
    pub sigma_mat: DMatrix<f64>,
    pub seed: u64,
}

impl NonStatGaussianConfig {
    pub fn d(&self) -> usize {
        self.sigma_mat.nrows()
    }
}

/// Independent `φ_k ~ N(0, k^δ Σ)` for `k = 1..=count`.
pub fn gen_nonstationary_gaussian(
    cfg: &NonStatGaussianConfig,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    let g = GaussianRegressors::growing(&cfg.sigma_mat, cfg.delta)?;
    let mut rng = rng::stream(cfg.seed, 0);
    Ok((1..=count).map(|k| g.sample(k, &mut rng)).collect())
}
