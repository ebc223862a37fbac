//! Error-rate probe and the singular-value perturbation inequality.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::{singular_values_desc, ExcitationStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    /// `‖X_N − Θ‖_F`
    pub err: f64,
    /// `err · sqrt(λ_min / ln λ_max)`
    pub normalized: f64,
}

/// Error of a single trajectory at increasing horizons.
///
/// `advance(N)` must bring the trajectory forward to horizon `N` and return
/// the recovered matrix together with the excitation at that point. It is
/// called once per horizon, in order.
pub fn error_rate_probe<F>(n_grid: &[usize], theta: &DMatrix<f64>, mut advance: F) -> Result<Vec<RatePoint>>
where
    F: FnMut(usize) -> Result<(DMatrix<f64>, ExcitationStats)>,
{
    if n_grid.is_empty() {
        return Err(Error::param("horizon grid is empty"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::param("horizon grid must be positive and strictly increasing"));
    }
    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let (x, stats) = advance(n)?;
        if x.shape() != theta.shape() {
            return Err(Error::dim(format!("estimate at N={n} has shape {:?}", x.shape())));
        }
        let err = (x - theta).norm();
        let rate = stats.rate();
        let normalized = if err == 0.0 { 0.0 } else { err / rate };
        out.push(RatePoint { n, err, normalized });
    }
    Ok(out)
}

pub fn strictly_decreasing(points: &[RatePoint]) -> bool {
    points.windows(2).all(|w| w[1].err < w[0].err)
}

/// `max / min` of the normalized errors; 1 when all of them are zero.
pub fn normalized_spread(points: &[RatePoint]) -> f64 {
    let max = points.iter().map(|p| p.normalized).fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|p| p.normalized).fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else {
        max / min
    }
}

/// Slack on the perturbation inequality.
pub const PERTURBATION_SLACK: f64 = 1e-10;

/// `Σ (σ_i(A) − σ_i(B))²` and `‖A − B‖²_F`.
pub fn sv_perturbation_sides(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let sa = singular_values_desc(a)?;
    let sb = singular_values_desc(b)?;
    let lhs = (sa - sb).norm_squared();
    let rhs = (a - b).norm_squared();
    Ok((lhs, rhs))
}

/// Whether `Σ (σ_i(A) − σ_i(B))² ≤ ‖A − B‖²_F + 1e-10`.
pub fn sv_perturbation_check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    let (lhs, rhs) = sv_perturbation_sides(a, b)?;
    Ok(lhs <= rhs + PERTURBATION_SLACK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> ExcitationStats {
        ExcitationStats::from_extremes(100.0, 10.0).unwrap()
    }

    #[test]
    fn exact_estimates_normalize_to_zero() {
        let theta = DMatrix::from_element(2, 2, 1.5);
        let pts = error_rate_probe(&[10, 20, 40], &theta, |_| Ok((theta.clone(), stats()))).unwrap();
        assert!(pts.iter().all(|p| p.err == 0.0 && p.normalized == 0.0));
        assert_eq!(normalized_spread(&pts), 1.0);
        assert!(!strictly_decreasing(&pts));
    }

    #[test]
    fn normalization_uses_the_rate() {
        let theta = DMatrix::zeros(1, 1);
        let pts = error_rate_probe(&[5], &theta, |_| Ok((DMatrix::from_element(1, 1, 2.0), stats()))).unwrap();
        let expected = 2.0 * (10.0 / 100f64.ln()).sqrt();
        assert!((pts[0].normalized - expected).abs() < 1e-12);
    }

    #[test]
    fn grid_must_increase() {
        let theta = DMatrix::zeros(1, 1);
        let probe = |g: &[usize]| error_rate_probe(g, &theta, |_| Ok((theta.clone(), stats())));
        assert!(probe(&[10, 10]).is_err());
        assert!(probe(&[]).is_err());
        assert!(probe(&[0, 1]).is_err());
    }

    #[test]
    fn perturbation_edge_cases() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i as f64 - j as f64).cos());
        let (lhs, _) = sv_perturbation_sides(&a, &a).unwrap();
        assert_eq!(lhs, 0.0);
        assert!(sv_perturbation_check(&a, &a).unwrap());
        let (lhs, rhs) = sv_perturbation_sides(&a, &DMatrix::zeros(4, 3)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * rhs);
        assert!(sv_perturbation_check(&a, &DMatrix::zeros(3, 4)).is_err());
    }
}
