//! Inconsistency of a state against received measurements.
//!
//! For averaged measurements `y`, the inconsistency of a candidate state `x`
//! is the smallest weighted residual achievable after discarding the worst
//! `q` sensors:
//!
//! ```text
//! d_x(y) = min over subsets I of size m - q of  d_x(y, I)
//! d_x(y, I) = 1/2 * sum_{i in I} (y_i - h_i x)^2 / W_i
//! ```
//!
//! Equivalently, `d_x(y)` is the minimum over q-sparse injected biases of the
//! full weighted residual; discarding a sensor is the same as letting a bias
//! cancel it. The restricted term is a quadratic in `x` and splits into a
//! state-independent residue plus a quadratic form around the subset's
//! weighted least-squares point:
//!
//! ```text
//! d_x(y, I) = (x - k_I y_I)' Var(I) (x - k_I y_I) + Res(I)
//! Var(I) = 1/2 * H_I' W_I^-1 H_I
//! k_I    = (H_I' W_I^-1 H_I)^-1 H_I' W_I^-1
//! ```
//!
//! The gain `k_I`, curvature `Var(I)`, and its eigendecomposition do not
//! depend on `y`, so [`SubsetBasis`] computes them once per model and reuses
//! them across measurements.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::RANK_RATIO_TOL;
use crate::model::SensorModel;

/// Weighted least-squares fit restricted to one sensor subset.
#[derive(Debug, Clone)]
pub struct SubsetFit {
    pub subset: Vec<usize>,
    /// Gain mapping subset measurements to the fitted state, `n x |I|`.
    pub kappa: DMatrix<f64>,
    /// Curvature of the restricted inconsistency, `1/2 H_I' W_I^-1 H_I`.
    pub variance: DMatrix<f64>,
    pub wls_point: DVector<f64>,
    /// Restricted inconsistency at the fit point; its minimum over states.
    pub residue: f64,
}

/// Per-subset quantities that depend only on the model.
#[derive(Debug, Clone)]
pub struct SubsetGeometry {
    pub subset: Vec<usize>,
    pub h: DMatrix<f64>,
    pub w: DVector<f64>,
    pub kappa: DMatrix<f64>,
    pub variance: DMatrix<f64>,
    /// Eigendecomposition of `variance`; eigenvalues ascending is not
    /// guaranteed, `lambda_min` caches the smallest.
    pub eig_vals: DVector<f64>,
    pub eig_vecs: DMatrix<f64>,
    pub lambda_min: f64,
}

impl SubsetGeometry {
    pub fn new(model: &SensorModel, subset: &[usize]) -> Result<Self> {
        validate_subset(model, subset)?;
        let (h, w) = model.subset_rows(subset);
        let inv_sd = DVector::from_iterator(w.len(), w.iter().map(|v| 1.0 / v.sqrt()));
        let mut h_w = h.clone();
        for (r, s) in inv_sd.iter().enumerate() {
            h_w.row_mut(r).scale_mut(*s);
        }

        let svd = h_w.clone().svd(true, true);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &s in svd.singular_values.iter() {
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let ratio = if hi == 0.0 { 0.0 } else { lo / hi };
        if h_w.nrows() < h_w.ncols() || ratio <= RANK_RATIO_TOL {
            return Err(Error::SingularFit {
                subset: subset.to_vec(),
                ratio,
            });
        }

        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|_| Error::SingularFit {
                subset: subset.to_vec(),
                ratio,
            })?;
        // kappa = (H'W^-1 H)^-1 H'W^-1 = pinv(H_w) W^-1/2
        let mut kappa = pinv;
        for (c, s) in inv_sd.iter().enumerate() {
            kappa.column_mut(c).scale_mut(*s);
        }
        let mut variance = 0.5 * h_w.transpose() * &h_w;
        // Symmetrize to keep the eigensolver honest about rounding.
        variance = 0.5 * (&variance + variance.transpose());
        let eig = variance.clone().symmetric_eigen();
        let lambda_min = eig.eigenvalues.min();

        Ok(SubsetGeometry {
            subset: subset.to_vec(),
            h,
            w,
            kappa,
            variance,
            eig_vals: eig.eigenvalues,
            eig_vecs: eig.eigenvectors,
            lambda_min,
        })
    }

    /// Subset entries of a full measurement vector.
    pub fn gather(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.subset.len(), self.subset.iter().map(|&i| y[i]))
    }

    /// Weighted least-squares point and residue for this subset.
    pub fn fit(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let y_i = self.gather(y);
        let wls = &self.kappa * &y_i;
        let r = &y_i - &self.h * &wls;
        let residue: f64 = 0.5
            * r.iter()
                .zip(self.w.iter())
                .map(|(ri, wi)| ri * ri / wi)
                .sum::<f64>();
        (wls, residue)
    }
}

/// All subsets of a given size with their fit geometry, lexicographic order.
#[derive(Debug, Clone)]
pub struct SubsetBasis {
    pub m: usize,
    pub size: usize,
    pub entries: Vec<SubsetGeometry>,
}

impl SubsetBasis {
    pub fn new(model: &SensorModel, size: usize) -> Result<Self> {
        if size == 0 || size > model.m() {
            return Err(Error::InvalidArgument(format!(
                "subset size {size} out of range for m = {}",
                model.m()
            )));
        }
        let entries = (0..model.m())
            .combinations(size)
            .map(|subset| SubsetGeometry::new(model, &subset))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubsetBasis {
            m: model.m(),
            size,
            entries,
        })
    }

    /// Basis over the keep-sets of the attack budget, size `m - q`.
    pub fn for_model(model: &SensorModel) -> Result<Self> {
        SubsetBasis::new(model, model.m() - model.q())
    }
}

fn validate_subset(model: &SensorModel, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidSubset);
    }
    let mut seen = vec![false; model.m()];
    for &i in subset {
        if i >= model.m() || seen[i] {
            return Err(Error::InvalidSubset);
        }
        seen[i] = true;
    }
    Ok(())
}

fn validate_state_and_measurement(
    model: &SensorModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    if x.len() != model.n() {
        return Err(Error::InvalidArgument(format!(
            "state has dimension {}, model expects {}",
            x.len(),
            model.n()
        )));
    }
    if y.len() != model.m() {
        return Err(Error::InvalidArgument(format!(
            "measurement has {} entries, model expects {}",
            y.len(),
            model.m()
        )));
    }
    Ok(())
}

/// Weighted residual of `x` against the sensors in `subset`.
pub fn restricted_inconsistency(
    model: &SensorModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    subset: &[usize],
) -> Result<f64> {
    validate_subset(model, subset)?;
    validate_state_and_measurement(model, x, y)?;
    let h = model.h();
    let w = model.w();
    let mut total = 0.0;
    for &i in subset {
        let r = y[i] - h.row(i).dot(&x.transpose());
        total += r * r / w[i];
    }
    Ok(0.5 * total)
}

/// Weighted least-squares fit over one subset.
pub fn subset_fit(model: &SensorModel, y: &DVector<f64>, subset: &[usize]) -> Result<SubsetFit> {
    if y.len() != model.m() {
        return Err(Error::InvalidArgument(format!(
            "measurement has {} entries, model expects {}",
            y.len(),
            model.m()
        )));
    }
    let geom = SubsetGeometry::new(model, subset)?;
    let (wls_point, residue) = geom.fit(y);
    Ok(SubsetFit {
        subset: geom.subset,
        kappa: geom.kappa,
        variance: geom.variance,
        wls_point,
        residue,
    })
}

/// Inconsistency of `x` against `y`: the minimum restricted inconsistency
/// over all `(m - q)`-subsets, with the minimizing subset.
///
/// Ties keep the lexicographically smallest subset so results are stable.
pub fn inconsistency(
    model: &SensorModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<usize>)> {
    validate_state_and_measurement(model, x, y)?;
    let keep = model.m() - model.q();
    let h = model.h();
    let w = model.w();

    // Per-sensor terms once, then sums over subsets.
    let terms: Vec<f64> = (0..model.m())
        .map(|i| {
            let r = y[i] - h.row(i).dot(&x.transpose());
            0.5 * r * r / w[i]
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut best_subset = Vec::new();
    for subset in (0..model.m()).combinations(keep) {
        let value: f64 = subset.iter().map(|&i| terms[i]).sum();
        if value < best {
            best = value;
            best_subset = subset;
        }
    }
    Ok((best, best_subset))
}
