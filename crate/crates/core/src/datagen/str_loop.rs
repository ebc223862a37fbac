//! Closed-loop self-tuning regulator producing non-stationary regressors.
//!
//! Plant:
//!
//! ```text
//! y_{k+1} = −A₁y_k − A₂y_{k−1} + B₁u_k + B₂u_{k−1} + w_{k+1}
//! ```
//!
//! The regulator runs its own RLS on `φ_k = [y_k; y_{k−1}; u_k; u_{k−1}]`,
//! estimating the stacked block `Θ = [−A₁ −A₂ B₁ B₂]ᵀ`. With the row blocks
//! `T₀..T₃` of the current estimate, certainty-equivalence control asks for
//! `Θ̂ᵀφ_k = y*_{k+1}`. The `u_k` term appears on both sides of that
//! equation; solving for it gives
//!
//! ```text
//! u_k⁰ = (T₂ᵀ)⁻¹ (y*_{k+1} − T₀ᵀy_k − T₁ᵀy_{k−1} − T₃ᵀu_{k−1})
//! u_k  = u_k⁰ + ε_k / r_{k−1}^{ε̄/2}
//! ```
//!
//! where `ε_k` is uniform dither and `r_{k−1} = 1 + Σ_{i<k} ‖φ_i‖²`. The
//! regulator starts from `T₂ = I` (other blocks zero) so `u_1` is defined,
//! and the plant starts at rest.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::recovery::{singular_values_desc, RlsState};

const GAIN_SINGULAR_TOL: f64 = 1e-8;
const GAIN_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct StrConfig {
    pub dim: usize,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub noise_std: f64,
    pub ref_amplitude: f64,
    pub ref_period: usize,
    pub dither_halfwidth: f64,
    pub eps_bar: f64,
    /// Initialization scale of the regulator's own RLS.
    pub regulator_mu: f64,
}

impl StrConfig {
    /// Diagonal plant `A₁ = a1·I`, `A₂ = a2·I`, `B₁ = b1·I`, `B₂ = b2·I`.
    pub fn scalar_plant(dim: usize, a1: f64, a2: f64, b1: f64, b2: f64) -> Self {
        let id = DMatrix::<f64>::identity(dim, dim);
        Self {
            dim,
            a1: &id * a1,
            a2: &id * a2,
            b1: &id * b1,
            b2: &id * b2,
            noise_std: 0.5,
            ref_amplitude: 10.0,
            ref_period: 1000,
            dither_halfwidth: 0.1,
            eps_bar: 1.0 / 50.0,
            regulator_mu: 1e4,
        }
    }

    /// Length of the regressor `φ_k`.
    pub fn regressor_dim(&self) -> usize {
        4 * self.dim
    }

    /// The stacked parameter `[−A₁ −A₂ B₁ B₂]ᵀ` the regulator estimates.
    pub fn true_regulator_parameter(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut theta = DMatrix::zeros(4 * d, d);
        theta.view_mut((0, 0), (d, d)).copy_from(&(-self.a1.transpose()));
        theta.view_mut((d, 0), (d, d)).copy_from(&(-self.a2.transpose()));
        theta.view_mut((2 * d, 0), (d, d)).copy_from(&self.b1.transpose());
        theta.view_mut((3 * d, 0), (d, d)).copy_from(&self.b2.transpose());
        theta
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::param("STR dimension must be positive"));
        }
        for (name, m) in [("a1", &self.a1), ("a2", &self.a2), ("b1", &self.b1), ("b2", &self.b2)] {
            if m.shape() != (d, d) {
                return Err(Error::dim(format!("{name} must be {d}×{d}, got {:?}", m.shape())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("plant matrix"));
            }
        }
        if self.ref_period == 0 || !self.ref_period.is_multiple_of(2) {
            return Err(Error::param(format!(
                "reference period must be positive and even, got {}",
                self.ref_period
            )));
        }
        let nonneg = [
            ("noise_std", self.noise_std),
            ("dither_halfwidth", self.dither_halfwidth),
            ("eps_bar", self.eps_bar),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !self.ref_amplitude.is_finite() {
            return Err(Error::NonFinite("reference amplitude"));
        }
        if !(self.regulator_mu > 0.0) || !self.regulator_mu.is_finite() {
            return Err(Error::param(format!(
                "regulator_mu must be positive, got {}",
                self.regulator_mu
            )));
        }
        Ok(())
    }
}

/// Square wave: `+amplitude` on the first half of each period (k = 1, …,
/// period/2), `−amplitude` on the second.
pub fn reference_signal(cfg: &StrConfig, k: usize) -> DVector<f64> {
    let half = cfg.ref_period / 2;
    let level = if (k.max(1) - 1) % cfg.ref_period < half {
        cfg.ref_amplitude
    } else {
        -cfg.ref_amplitude
    };
    DVector::from_element(cfg.dim, level)
}

#[derive(Debug, Clone)]
pub struct StrState {
    pub y: DVector<f64>,
    pub y_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    /// `1 + Σ ‖φ_i‖²` over the regressors produced so far.
    pub r_sum: f64,
    pub regulator: RlsState,
    /// Index of the next step.
    pub k: usize,
}

impl StrState {
    pub fn new(cfg: &StrConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut theta_1 = DMatrix::zeros(4 * d, d);
        theta_1.view_mut((2 * d, 0), (d, d)).fill_with_identity();
        Self::with_regulator(cfg, RlsState::with_initial_estimate(theta_1, cfg.regulator_mu)?)
    }

    /// Start with a caller-supplied regulator estimator.
    pub fn with_regulator(cfg: &StrConfig, regulator: RlsState) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        if regulator.d() != 4 * d || regulator.n() != d {
            return Err(Error::dim(format!(
                "regulator must be {}×{d}, got {}×{}",
                4 * d,
                regulator.d(),
                regulator.n()
            )));
        }
        Ok(Self {
            y: DVector::zeros(d),
            y_prev: DVector::zeros(d),
            u_prev: DVector::zeros(d),
            r_sum: 1.0,
            regulator,
            k: 1,
        })
    }

    fn certainty_equivalence_input(&self, cfg: &StrConfig) -> Result<DVector<f64>> {
        let d = cfg.dim;
        let th = self.regulator.theta_hat();
        let block = |i: usize| th.view((i * d, 0), (d, d)).transpose();
        let target = reference_signal(cfg, self.k + 1)
            - block(0) * &self.y
            - block(1) * &self.y_prev
            - block(3) * &self.u_prev;
        let gain = block(2);
        let s = singular_values_desc(&gain)?;
        let solved = if s[d - 1] < GAIN_SINGULAR_TOL {
            None
        } else {
            gain.clone().lu().solve(&target)
        };
        match solved {
            Some(u) => Ok(u),
            None => (gain + DMatrix::identity(d, d) * GAIN_RIDGE)
                .lu()
                .solve(&target)
                .ok_or_else(|| Error::NumericalBreakdown("regularized gain is singular".into())),
        }
    }

    /// Advance the loop one step and return `φ_k`.
    pub fn step<R: Rng + ?Sized>(&mut self, cfg: &StrConfig, rng: &mut R) -> Result<DVector<f64>> {
        let d = cfg.dim;
        let mut u = self.certainty_equivalence_input(cfg)?;
        if cfg.dither_halfwidth > 0.0 {
            let h = cfg.dither_halfwidth;
            let dither = Uniform::new_inclusive(-h, h).map_err(|e| Error::param(e.to_string()))?;
            let damp = self.r_sum.powf(cfg.eps_bar / 2.0);
            for v in u.iter_mut() {
                *v += rng.sample(dither) / damp;
            }
        }

        let mut phi = DVector::zeros(4 * d);
        phi.rows_mut(0, d).copy_from(&self.y);
        phi.rows_mut(d, d).copy_from(&self.y_prev);
        phi.rows_mut(2 * d, d).copy_from(&u);
        phi.rows_mut(3 * d, d).copy_from(&self.u_prev);

        let mut y_next = -&cfg.a1 * &self.y - &cfg.a2 * &self.y_prev
            + &cfg.b1 * &u
            + &cfg.b2 * &self.u_prev;
        if cfg.noise_std > 0.0 {
            for v in y_next.iter_mut() {
                *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown(format!("plant output diverged at step {}", self.k)));
        }

        self.regulator.update(&phi, &y_next)?;
        self.r_sum += phi.norm_squared();
        self.y_prev = std::mem::replace(&mut self.y, y_next);
        self.u_prev = u;
        self.k += 1;
        Ok(phi)
    }
}
