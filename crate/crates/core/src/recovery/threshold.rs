//! Second stage: adaptive weights, weighted singular-value soft-thresholding
//! and the rank estimate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::rls::ExcitationStats;
use super::svd::SvdFactors;
use crate::error::{ensure_finite, Error, Result};

/// Relative cut-off used to count the rank of an unthresholded estimate.
pub const NUMERICAL_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// `σ_i + sqrt(ln λ_max / λ_min)`
    pub sigma_hat: Vec<f64>,
    /// `1 / sigma_hat[i]`, nondecreasing.
    pub w: Vec<f64>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

fn check_descending(sigma: &[f64]) -> Result<()> {
    ensure_finite(sigma.iter(), "singular values")?;
    if sigma.iter().any(|s| *s < 0.0) {
        return Err(Error::param("singular values must be nonnegative"));
    }
    if let Some(i) = sigma.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::param(format!(
            "singular values must be nonincreasing (index {} < index {})",
            i,
            i + 1
        )));
    }
    Ok(())
}

fn check_weights(weights: &WeightVector, n: usize) -> Result<()> {
    if weights.len() != n || weights.sigma_hat.len() != n {
        return Err(Error::dim(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    ensure_finite(weights.w.iter(), "weights")?;
    if weights.w.iter().any(|w| *w < 0.0) {
        return Err(Error::param("weights must be nonnegative"));
    }
    if let Some(i) = weights.w.windows(2).position(|w| w[0] > w[1]) {
        return Err(Error::param(format!(
            "weights must be nondecreasing (w[{i}] > w[{}])",
            i + 1
        )));
    }
    Ok(())
}

/// `w_i = 1 / (σ_i + sqrt(ratio))`.
pub fn adaptive_weights(sigma: &[f64], stats: &ExcitationStats) -> Result<WeightVector> {
    check_descending(sigma)?;
    if !(stats.ratio >= 0.0) || !stats.ratio.is_finite() {
        return Err(Error::DegenerateSchedule(format!(
            "excitation ratio must be finite and nonnegative, got {}",
            stats.ratio
        )));
    }
    let offset = stats.ratio.sqrt();
    let mut sigma_hat = Vec::with_capacity(sigma.len());
    let mut w = Vec::with_capacity(sigma.len());
    for (i, s) in sigma.iter().enumerate() {
        let h = s + offset;
        if h == 0.0 {
            return Err(Error::DegenerateWeights { index: i });
        }
        sigma_hat.push(h);
        w.push(1.0 / h);
    }
    Ok(WeightVector { sigma_hat, w })
}

/// `max(σ_i − λ w_i, 0)` for each i.
pub fn thresholded_values(sigma: &[f64], lambda: f64, weights: &WeightVector) -> Result<Vec<f64>> {
    check_descending(sigma)?;
    check_weights(weights, sigma.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(sigma
        .iter()
        .zip(&weights.w)
        .map(|(s, w)| (s - lambda * w).max(0.0))
        .collect())
}

/// Closed-form minimizer of `½‖Y − X‖² + λ Σ w_i σ_i(X)` for nondecreasing
/// weights: shrink each singular value of `Y` by `λ w_i`, keep the vectors.
pub fn soft_threshold(svd: &SvdFactors, lambda: f64, weights: &WeightVector) -> Result<DMatrix<f64>> {
    let shrunk = thresholded_values(svd.sigma.as_slice(), lambda, weights)?;
    Ok(svd.compose(&DVector::from_vec(shrunk)))
}

/// Largest `i` with `σ_j ≥ λ w_j` for every `j ≤ i`.
///
/// The scan stops at the first failing index. A tie `σ_j = λ w_j` counts
/// toward the rank even though its thresholded value is zero.
pub fn estimate_rank(sigma: &[f64], lambda: f64, weights: &WeightVector) -> Result<usize> {
    check_descending(sigma)?;
    check_weights(weights, sigma.len())?;
    Ok(sigma
        .iter()
        .zip(&weights.w)
        .take_while(|(s, w)| **s >= lambda * **w)
        .count())
}

/// Count of singular values above `NUMERICAL_RANK_TOL · σ_1`.
pub fn numerical_rank(sigma: &[f64]) -> usize {
    let top = sigma.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|s| **s > NUMERICAL_RANK_TOL * top).count()
}

/// `½‖target − x‖² + λ Σ w_i σ_i(x)`, evaluated directly.
pub fn weighted_nuclear_objective(
    target: &DMatrix<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    weights: &[f64],
) -> Result<f64> {
    let sv = super::svd::singular_values_desc(x)?;
    let penalty: f64 = sv.iter().zip(weights).map(|(s, w)| s * w).sum();
    Ok(0.5 * (target - x).norm_squared() + lambda * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recovery::svd::svd_descending;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn weights(w: &[f64]) -> WeightVector {
        WeightVector {
            sigma_hat: w.iter().map(|x| 1.0 / x).collect(),
            w: w.to_vec(),
        }
    }

    fn stats_with_ratio(ratio: f64) -> ExcitationStats {
        ExcitationStats {
            lambda_max: 10.0,
            lambda_min: 10f64.ln() / ratio.max(1e-300),
            ratio,
        }
    }

    #[test]
    fn weights_from_hand_example() {
        let w = adaptive_weights(&[2.0, 0.0], &stats_with_ratio(0.01)).unwrap();
        assert!((w.sigma_hat[0] - 2.1).abs() < 1e-15);
        assert!((w.sigma_hat[1] - 0.1).abs() < 1e-15);
        assert!((w.w[0] - 1.0 / 2.1).abs() < 1e-15);
        assert!((w.w[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn equal_singular_values_give_equal_weights() {
        let w = adaptive_weights(&[5.0, 5.0], &stats_with_ratio(0.3)).unwrap();
        assert_eq!(w.w[0], w.w[1]);
    }

    #[test]
    fn zero_everything_is_degenerate() {
        let stats = ExcitationStats { lambda_max: 1.0, lambda_min: 1.0, ratio: 0.0 };
        assert!(matches!(
            adaptive_weights(&[1.0, 0.0], &stats),
            Err(Error::DegenerateWeights { index: 1 })
        ));
        let neg = ExcitationStats { lambda_max: 0.5, lambda_min: 0.5, ratio: 0.5f64.ln() / 0.5 };
        assert!(adaptive_weights(&[1.0], &neg).is_err());
    }

    #[test]
    fn soft_threshold_hand_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let f = svd_descending(&m).unwrap();
        let w = weights(&[1.0 / 3.0, 1.0]);

        let x = soft_threshold(&f, 0.6, &w).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.8, 0.4]));
        assert!((x - expect).amax() < 1e-12);

        let x = soft_threshold(&f, 3.0, &w).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert!((x - expect).amax() < 1e-12);

        let x = soft_threshold(&f, 0.0, &w).unwrap();
        assert!((x - m).amax() < 1e-12);
    }

    /// Derivative-free pattern search over all four entries of a 2×2 matrix;
    /// independent of the closed form it checks.
    fn pattern_search_minimum(target: &DMatrix<f64>, lambda: f64, w: &[f64]) -> DMatrix<f64> {
        let obj = |x: &DMatrix<f64>| weighted_nuclear_objective(target, x, lambda, w).unwrap();
        let mut x = target.clone();
        let mut best = obj(&x);
        let mut step = 0.5;
        while step > 1e-9 {
            let mut improved = false;
            for k in 0..4 {
                for sign in [1.0, -1.0] {
                    let mut cand = x.clone();
                    cand[k] += sign * step;
                    let val = obj(&cand);
                    if val < best {
                        best = val;
                        x = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        x
    }

    #[test]
    fn closed_form_agrees_with_direct_minimization() {
        let target = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let numeric = pattern_search_minimum(&target, 0.6, &[1.0 / 3.0, 1.0]);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![2.8, 0.4]));
        assert!((numeric - expect).amax() < 1e-6);
    }

    #[test]
    fn rank_hand_examples() {
        let w = weights(&[1.0 / 3.0, 1.0, 20.0]);
        assert_eq!(estimate_rank(&[3.0, 1.0, 0.05], 0.6, &w).unwrap(), 2);
        assert_eq!(estimate_rank(&[0.0, 0.0, 0.0], 0.6, &w).unwrap(), 0);
        assert!(estimate_rank(&[3.0, 0.1, 2.0], 0.6, &w).is_err());
    }

    #[test]
    fn rank_counts_exact_ties() {
        let w = weights(&[0.5, 1.0]);
        assert_eq!(estimate_rank(&[1.0, 0.5], 1.0, &w).unwrap(), 1);
        assert_eq!(estimate_rank(&[1.0, 0.5], 0.5, &w).unwrap(), 2);
        // the tie itself is thresholded to zero
        assert_eq!(thresholded_values(&[1.0, 0.5], 0.5, &w).unwrap()[1], 0.0);
    }

    #[test]
    fn decreasing_weights_rejected() {
        let m = DMatrix::identity(2, 2);
        let f = svd_descending(&m).unwrap();
        assert!(soft_threshold(&f, 0.1, &weights(&[2.0, 1.0])).is_err());
    }

    #[test]
    fn numerical_rank_uses_relative_cutoff() {
        assert_eq!(numerical_rank(&[5.0, 1e-3, 1e-11]), 2);
        assert_eq!(numerical_rank(&[0.0, 0.0]), 0);
    }

    fn random_problem(seed: u64) -> (DMatrix<f64>, f64, ExcitationStats) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let d = n + rng.random_range(0..=3);
        let m = DMatrix::from_fn(d, n, |_, _| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.01..2.0);
        (m, lambda, stats_with_ratio(rng.random_range(0.001..0.5)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn weights_are_nondecreasing(mut sigma in proptest::collection::vec(0.0f64..50.0, 1..10), ratio in 1e-6f64..5.0) {
            sigma.sort_by(|a, b| b.total_cmp(a));
            let w = adaptive_weights(&sigma, &stats_with_ratio(ratio)).unwrap();
            for pair in w.w.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
            for (h, wi) in w.sigma_hat.iter().zip(&w.w) {
                prop_assert_eq!(*wi, 1.0 / *h);
            }
        }

        #[test]
        fn rank_nonincreasing_in_lambda(seed in any::<u64>(), l1 in 0.0f64..5.0, l2 in 0.0f64..5.0) {
            let (m, _, stats) = random_problem(seed);
            let f = svd_descending(&m).unwrap();
            let w = adaptive_weights(f.sigma.as_slice(), &stats).unwrap();
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let r_lo = estimate_rank(f.sigma.as_slice(), lo, &w).unwrap();
            let r_hi = estimate_rank(f.sigma.as_slice(), hi, &w).unwrap();
            prop_assert!(r_hi <= r_lo);
        }

        #[test]
        fn output_spectrum_is_the_thresholded_one(seed in any::<u64>()) {
            let (m, lambda, stats) = random_problem(seed);
            let f = svd_descending(&m).unwrap();
            let w = adaptive_weights(f.sigma.as_slice(), &stats).unwrap();
            let x = soft_threshold(&f, lambda, &w).unwrap();
            let mut expect = thresholded_values(f.sigma.as_slice(), lambda, &w).unwrap();
            expect.sort_by(|a, b| b.total_cmp(a));
            let got = crate::recovery::svd::singular_values_desc(&x).unwrap();
            for (g, e) in got.iter().zip(&expect) {
                prop_assert!((g - e).abs() <= 1e-8);
            }
            let positive = expect.iter().filter(|s| **s > 0.0).count();
            prop_assert!(positive <= estimate_rank(f.sigma.as_slice(), lambda, &w).unwrap());
        }

        #[test]
        fn closed_form_beats_perturbations(seed in any::<u64>(), scale_idx in 0usize..3) {
            let (m, lambda, stats) = random_problem(seed);
            let f = svd_descending(&m).unwrap();
            let w = adaptive_weights(f.sigma.as_slice(), &stats).unwrap();
            let x = soft_threshold(&f, lambda, &w).unwrap();
            let base = weighted_nuclear_objective(&m, &x, lambda, &w.w).unwrap();
            let scale = [1e-3, 1e-1, 1.0][scale_idx];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..20 {
                let mut delta = DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| rng.random_range(-1.0..1.0));
                delta *= scale / delta.norm();
                let other = weighted_nuclear_objective(&m, &(&x + delta), lambda, &w.w).unwrap();
                prop_assert!(base <= other + 1e-12 * base.abs().max(1.0));
            }
        }
    }
}
