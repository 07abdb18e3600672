//! Small dense linear algebra on top of nalgebra's SVD: numerical rank,
//! minimum-norm least squares, condition numbers.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for ranks and pseudo-inverses.
pub const RANK_REL_TOL: f64 = 1e-9;

fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    a.singular_values().iter().copied().collect()
}

/// Number of singular values above `rel * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, rel: f64) -> usize {
    let sv = singular_values(a);
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// `sigma_max / sigma_min` over all `min(rows, cols)` singular values;
/// infinite for a rank-deficient matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    if sv.is_empty() {
        return 1.0;
    }
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rel * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let ui = u.column(idx);
            let vi = vt.row(idx).transpose();
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b`, with the Euclidean
/// residual norm `|a x - b|`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub residual: f64,
}

pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel: f64) -> LeastSquares {
    let pinv = pseudo_inverse(a, rel);
    lstsq_with(&pinv, a, b)
}

/// Reuse a precomputed pseudo-inverse of `a`.
pub fn lstsq_with(pinv: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let solution = pinv * b;
    let residual = if a.ncols() == 0 {
        b.norm()
    } else {
        (a * &solution - b).norm()
    };
    LeastSquares { solution, residual }
}

/// Inverse with a condition-number guard.
pub fn checked_inverse(a: &DMatrix<f64>, max_condition: f64) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    let cond = condition_number(a);
    if !cond.is_finite() || cond > max_condition {
        return None;
    }
    a.clone().try_inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_duplicate_columns() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(numerical_rank(&a, RANK_REL_TOL), 1);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 2), RANK_REL_TOL), 0);
        assert!(condition_number(&a).is_infinite() || condition_number(&a) > 1e15);
    }

    #[test]
    fn min_norm_splits_redundant_columns() {
        let a = DMatrix::from_row_slice(1, 2, &[2.0, 2.0]);
        let b = DVector::from_vec(vec![4.0]);
        let ls = lstsq(&a, &b, RANK_REL_TOL);
        assert!((ls.solution[0] - 1.0).abs() < 1e-14);
        assert!((ls.solution[1] - 1.0).abs() < 1e-14);
        assert!(ls.residual < 1e-14);
    }

    #[test]
    fn residual_of_inconsistent_system() {
        let a = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let ls = lstsq(&a, &b, RANK_REL_TOL);
        assert!((ls.residual - 1.0).abs() < 1e-14);
        let empty = DMatrix::<f64>::zeros(2, 0);
        assert!((lstsq(&empty, &b, RANK_REL_TOL).residual - 1.0).abs() < 1e-14);
    }
}
