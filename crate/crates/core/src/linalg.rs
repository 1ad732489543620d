//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

/// A tall matrix counts as full column rank when its smallest singular value
/// exceeds this fraction of the largest.
pub const RANK_RATIO_TOL: f64 = 1e-9;

/// Ratio of smallest to largest singular value, 0 when the matrix has fewer
/// rows than columns or is all zeros.
pub fn singular_ratio(a: &DMatrix<f64>) -> f64 {
    if a.nrows() < a.ncols() {
        return 0.0;
    }
    let svd = a.clone().svd(false, false);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &s in svd.singular_values.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

pub fn is_full_column_rank(a: &DMatrix<f64>) -> bool {
    singular_ratio(a) > RANK_RATIO_TOL
}

/// Fix the sign of a direction vector deterministically: the entry with the
/// largest magnitude is made positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut idx = 0;
    let mut best = 0.0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}
