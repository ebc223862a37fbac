//! Full SVD with singular values in descending order.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// `M = U · [diag(sigma); 0] · Vᵀ` for a d×n matrix with d ≥ n.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// d×d orthogonal.
    pub u: DMatrix<f64>,
    /// Length n, nonincreasing, nonnegative.
    pub sigma: DVector<f64>,
    /// n×n orthogonal.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    /// Rebuild `U · [diag(values); 0] · Vᵀ` for an arbitrary spectrum.
    pub fn compose(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let n = self.ncols();
        let mut left = self.u.columns(0, n).into_owned();
        for (j, s) in values.iter().enumerate() {
            left.column_mut(j).scale_mut(*s);
        }
        left * self.v.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.compose(&self.sigma)
    }

    /// The first `r` left singular vectors.
    pub fn leading_left(&self, r: usize) -> DMatrix<f64> {
        self.u.columns(0, r).into_owned()
    }
}

pub fn svd_descending(m: &DMatrix<f64>) -> Result<SvdFactors> {
    let (d, n) = m.shape();
    if n == 0 || d < n {
        return Err(Error::dim(format!("SVD expects d ≥ n ≥ 1, got {d}×{n}")));
    }
    ensure_finite(m.iter(), "matrix passed to SVD")?;

    let svd = nalgebra::SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::NumericalBreakdown("SVD did not converge".into()))?;
    let (Some(u_thin), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::NumericalBreakdown("SVD returned no singular vectors".into()));
    };

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the backend's order among exact ties
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let sigma = DVector::from_iterator(n, order.iter().map(|&j| svd.singular_values[j].max(0.0)));
    let mut u = DMatrix::zeros(d, d);
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        u.column_mut(dst).copy_from(&u_thin.column(src));
        v.column_mut(dst).copy_from(&v_t.row(src).transpose());
    }
    complete_orthonormal_basis(&mut u, n);

    Ok(SvdFactors { u, sigma, v })
}

/// Fill columns `filled..d` of `u` with an orthonormal complement of the
/// first `filled` columns, drawing candidates from the standard basis.
fn complete_orthonormal_basis(u: &mut DMatrix<f64>, filled: usize) {
    let d = u.nrows();
    let mut next = filled;
    for e in 0..d {
        if next == d {
            break;
        }
        let mut cand = DVector::zeros(d);
        cand[e] = 1.0;
        // two passes of Gram-Schmidt for numerical orthogonality
        for _ in 0..2 {
            for j in 0..next {
                let col = u.column(j);
                let proj = col.dot(&cand);
                cand.axpy(-proj, &col, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-6 {
            u.column_mut(next).copy_from(&(cand / norm));
            next += 1;
        }
    }
    debug_assert_eq!(next, d, "standard basis must span the complement");
}

/// Singular values in descending order, without vectors. Accepts any shape.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    ensure_finite(m.iter(), "matrix passed to SVD")?;
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let svd = nalgebra::SVD::try_new(m.clone(), false, false, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::NumericalBreakdown("SVD did not converge".into()))?;
    let mut values: Vec<f64> = svd.singular_values.iter().map(|s| s.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(values))
}
