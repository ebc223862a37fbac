//! Randomized property sweeps over the recovery primitives.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::recovery::{
    adaptive_weights, batch_ls, soft_threshold, svd_descending, weighted_nuclear_objective,
    ExcitationStats, RlsState,
};
use crate::rng;

use super::probes::sv_perturbation_sides;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    /// Largest observed value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(d: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub const RECURSION_TOL: f64 = 1e-8;

/// Chained RLS updates against the batch solution on random trajectories
/// with `d ≤ 20`, `n ≤ min(d, 10)`, `N ≤ 500`. Reports relative Frobenius
/// error.
pub fn recursion_batch_suite(trajectories: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = rng::stream(seed, 10);
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..trajectories {
        let d = rng.random_range(1..=20);
        let n = rng.random_range(1..=d.min(10));
        let len = rng.random_range(1..=500);
        let mu = 10f64.powf(rng.random_range(-1.0..1.0));
        let theta = gaussian_matrix(d, n, &mut rng);
        let mut state = RlsState::new(d, n, mu)?;
        let mut history = Vec::with_capacity(len);
        for _ in 0..len {
            let phi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = theta.tr_mul(&phi) + DVector::from_fn(n, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            state.update(&phi, &y)?;
            history.push((phi, y));
        }
        let batch = batch_ls(&history, d, n, mu)?;
        let err = (state.theta_hat() - &batch).norm() / batch.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
        if !(err <= RECURSION_TOL) {
            violations += 1;
        }
    }
    Ok(SuiteResult {
        name: "recursion_vs_batch".into(),
        cases: trajectories,
        violations,
        worst,
        tolerance: RECURSION_TOL,
    })
}

/// The closed-form thresholded matrix against `perturbations` random
/// neighbours each, for random inputs up to 8×5 with adaptive weights.
/// Reports the largest `J(X) − J(X + Δ)`, which must not be positive.
pub fn proximal_suite(inputs: usize, perturbations: usize, seed: u64) -> Result<SuiteResult> {
    const SCALES: [f64; 3] = [1e-3, 1e-1, 1.0];
    let mut rng = rng::stream(seed, 11);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..inputs {
        let n = rng.random_range(1..=5);
        let d = rng.random_range(n..=8);
        let target = gaussian_matrix(d, n, &mut rng) * rng.random_range(0.1..5.0);
        let svd = svd_descending(&target)?;
        let ratio: f64 = rng.random_range(1e-3..1.0);
        let stats = ExcitationStats { lambda_max: std::f64::consts::E, lambda_min: 1.0 / ratio, ratio };
        let weights = adaptive_weights(svd.sigma.as_slice(), &stats)?;
        let lambda = rng.random_range(0.01..5.0);
        let x = soft_threshold(&svd, lambda, &weights)?;
        let j_star = weighted_nuclear_objective(&target, &x, lambda, &weights.w)?;
        let slack = 1e-12 * j_star.abs().max(1.0);
        for k in 0..perturbations {
            let mut delta = gaussian_matrix(d, n, &mut rng);
            delta *= SCALES[k % SCALES.len()] / delta.norm();
            let j = weighted_nuclear_objective(&target, &(&x + delta), lambda, &weights.w)?;
            worst = worst.max(j_star - j);
            if j_star > j + slack {
                violations += 1;
            }
        }
    }
    Ok(SuiteResult {
        name: "proximal_optimality".into(),
        cases: inputs * perturbations,
        violations,
        worst,
        tolerance: 0.0,
    })
}

/// `Σ(σ_i(A) − σ_i(B))² ≤ ‖A − B‖²_F` on random pairs of random shape up to
/// 8×8. Reports the largest `lhs − rhs`.
pub fn perturbation_suite(pairs: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = rng::stream(seed, 12);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for k in 0..pairs {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=8);
        let a = gaussian_matrix(rows, cols, &mut rng);
        // mix far-apart and nearby pairs
        let b = if k % 2 == 0 {
            gaussian_matrix(rows, cols, &mut rng)
        } else {
            &a + gaussian_matrix(rows, cols, &mut rng) * 1e-3
        };
        let (lhs, rhs) = sv_perturbation_sides(&a, &b)?;
        worst = worst.max(lhs - rhs);
        if lhs > rhs + super::probes::PERTURBATION_SLACK {
            violations += 1;
        }
    }
    Ok(SuiteResult {
        name: "singular_value_perturbation".into(),
        cases: pairs,
        violations,
        worst,
        tolerance: super::probes::PERTURBATION_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweeps_pass() {
        assert!(recursion_batch_suite(5, 1).unwrap().passed());
        assert!(proximal_suite(5, 30, 1).unwrap().passed());
        let r = perturbation_suite(100, 1).unwrap();
        assert!(r.passed() && r.cases == 100);
    }

    #[test]
    fn deterministic() {
        assert_eq!(proximal_suite(3, 10, 4).unwrap(), proximal_suite(3, 10, 4).unwrap());
    }
}
