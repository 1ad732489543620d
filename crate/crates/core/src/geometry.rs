//! Confidence regions and their Chebyshev (minimax) centers.
//!
//! The set of states whose inconsistency stays at or below a level `phi` is a
//! union over keep-subsets `I` of ellipsoidal pieces
//!
//! ```text
//! { x : (x - k_I y_I)' Var(I) (x - k_I y_I) <= phi - Res(I) },
//! ```
//!
//! one per subset with `Res(I) <= phi`. Subsets with `Res(I) = phi` (up to a
//! relative tolerance) contribute a single point, subsets above `phi`
//! contribute nothing. The estimator of interest returns the Chebyshev center
//! of such a union: the point minimizing the maximum distance to the region.
//!
//! Distances to one piece are computed exactly. Maximizing `‖x - c‖` over an
//! ellipsoid is a trust-region-like problem: in the eigenbasis of the shape
//! the stationarity condition `u_i = d_i / (1 - nu * lambda_i)` leaves a
//! one-dimensional secular equation in the multiplier `nu`, decreasing on
//! `(1/lambda_min, inf)`, which safeguarded bisection solves to near machine
//! precision. When the query point has no component against the flattest
//! eigendirections the multiplier sits at `1/lambda_min` and the remaining
//! constraint slack goes into that eigenspace.
//!
//! The center itself comes from Polyak-step subgradient descent on
//! `f(c) = max over pieces of dist(c, piece)`, a convex function whose
//! subgradient at `c` is the unit vector pointing from the overall farthest
//! point towards `c`. Unions on a line, single pieces, and pairs of points
//! short-circuit to closed forms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inconsistency::SubsetBasis;
use crate::model::SensorModel;

/// A residue within this relative tolerance of `phi` counts as a point piece.
pub const POINT_PIECE_REL_TOL: f64 = 1e-9;

/// Iteration cap for the minimax center solver.
pub const CHEB_MAX_ITERS: usize = 100_000;

/// Default absolute tolerance on the minimax radius.
pub const CHEB_DEFAULT_TOL: f64 = 1e-8;

/// One piece of a confidence region: `(x - center)' shape (x - center) <= level`.
///
/// `level == 0` marks a degenerate piece consisting of the center alone.
/// The shape's eigendecomposition is cached at construction because every
/// farthest-point query consumes it.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
    /// Sensor subset this piece came from; empty for synthetic pieces.
    pub subset: Vec<usize>,
    eig_vals: DVector<f64>,
    eig_vecs: DMatrix<f64>,
    lambda_min: f64,
}

impl Ellipsoid {
    pub fn new(
        center: DVector<f64>,
        shape: DMatrix<f64>,
        level: f64,
        subset: Vec<usize>,
    ) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n || n == 0 {
            return Err(Error::InvalidArgument(
                "ellipsoid shape must be square and match the center dimension".into(),
            ));
        }
        if !level.is_finite() || level < 0.0 {
            return Err(Error::InvalidArgument(
                "ellipsoid level must be finite and non-negative".into(),
            ));
        }
        if center.iter().any(|v| !v.is_finite()) || shape.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "ellipsoid parameters must be finite".into(),
            ));
        }
        let sym = 0.5 * (&shape + shape.transpose());
        let asym = (&shape - shape.transpose()).norm();
        if asym > 1e-9 * (1.0 + sym.norm()) {
            return Err(Error::NotPositiveDefinite);
        }
        let eig = sym.clone().symmetric_eigen();
        let lambda_min = eig.eigenvalues.min();
        if lambda_min <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Ellipsoid {
            center,
            shape: sym,
            level,
            subset,
            eig_vals: eig.eigenvalues,
            eig_vecs: eig.eigenvectors,
            lambda_min,
        })
    }

    pub(crate) fn from_cached(
        center: DVector<f64>,
        shape: DMatrix<f64>,
        level: f64,
        subset: Vec<usize>,
        eig_vals: DVector<f64>,
        eig_vecs: DMatrix<f64>,
        lambda_min: f64,
    ) -> Self {
        Ellipsoid {
            center,
            shape,
            level,
            subset,
            eig_vals,
            eig_vecs,
            lambda_min,
        }
    }

    pub fn is_point(&self) -> bool {
        self.level == 0.0
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Largest semi-axis: the in-piece point farthest from the center.
    pub fn max_semi_axis(&self) -> f64 {
        (self.level / self.lambda_min).sqrt()
    }

    /// Membership with additive slack on the quadratic form.
    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> bool {
        let d = x - &self.center;
        (d.transpose() * &self.shape * &d)[(0, 0)] <= self.level + slack
    }
}

/// Union of ellipsoid pieces at one inconsistency level.
#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    pub pieces: Vec<Ellipsoid>,
    pub phi: f64,
    pub y: DVector<f64>,
}

impl ConfidenceRegion {
    pub fn from_pieces(pieces: Vec<Ellipsoid>, phi: f64, y: DVector<f64>) -> Self {
        ConfidenceRegion { pieces, phi, y }
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// State dimension, if the region has any piece.
    pub fn dim(&self) -> Option<usize> {
        self.pieces.first().map(|p| p.center.len())
    }
}

/// Subset fits for one measurement: centers and residues for every
/// keep-subset, ready to be sliced into regions at any level.
#[derive(Debug, Clone)]
pub struct RegionFamily {
    basis: Arc<SubsetBasis>,
    y: DVector<f64>,
    centers: Vec<DVector<f64>>,
    residues: Vec<f64>,
    upsilon: f64,
}

impl RegionFamily {
    pub fn new(model: &SensorModel, y: &DVector<f64>) -> Result<Self> {
        if y.len() != model.m() {
            return Err(Error::InvalidArgument(format!(
                "measurement has {} entries, model expects {}",
                y.len(),
                model.m()
            )));
        }
        let basis = Arc::new(SubsetBasis::for_model(model)?);
        Self::with_basis(basis, y)
    }

    pub fn with_basis(basis: Arc<SubsetBasis>, y: &DVector<f64>) -> Result<Self> {
        if y.len() != basis.m || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "measurement must be finite with {} entries",
                basis.m
            )));
        }
        let mut centers = Vec::with_capacity(basis.entries.len());
        let mut residues = Vec::with_capacity(basis.entries.len());
        let mut upsilon = f64::INFINITY;
        for entry in &basis.entries {
            let (wls, res) = entry.fit(y);
            upsilon = upsilon.min(res);
            centers.push(wls);
            residues.push(res);
        }
        Ok(RegionFamily {
            basis,
            y: y.clone(),
            centers,
            residues,
            upsilon,
        })
    }

    /// Smallest residue over keep-subsets: the lowest level with a non-empty region.
    pub fn upsilon(&self) -> f64 {
        self.upsilon
    }

    pub fn residues(&self) -> &[f64] {
        &self.residues
    }

    pub fn dim(&self) -> usize {
        self.basis.entries[0].h.ncols()
    }

    /// Subsets whose residue is at or below `phi` (within the point tolerance).
    pub fn subsets_at(&self, phi: f64) -> Vec<Vec<usize>> {
        let tol = POINT_PIECE_REL_TOL * phi.max(1.0);
        self.basis
            .entries
            .iter()
            .zip(&self.residues)
            .filter(|(_, &res)| res <= phi + tol)
            .map(|(e, _)| e.subset.clone())
            .collect()
    }

    /// Region at level `phi`. Residues within tolerance of `phi` become point
    /// pieces; residues below become full-dimensional pieces.
    pub fn region_at(&self, phi: f64) -> ConfidenceRegion {
        let tol = POINT_PIECE_REL_TOL * phi.max(1.0);
        let mut pieces = Vec::new();
        for (i, entry) in self.basis.entries.iter().enumerate() {
            let res = self.residues[i];
            let level = if (res - phi).abs() <= tol {
                0.0
            } else if res < phi {
                phi - res
            } else {
                continue;
            };
            pieces.push(Ellipsoid::from_cached(
                self.centers[i].clone(),
                entry.variance.clone(),
                level,
                entry.subset.clone(),
                entry.eig_vals.clone(),
                entry.eig_vecs.clone(),
                entry.lambda_min,
            ));
        }
        ConfidenceRegion::from_pieces(pieces, phi, self.y.clone())
    }

    /// Chebyshev center and radius at level `phi` without materializing
    /// pieces when a closed form applies.
    pub fn radius_at(
        &self,
        phi: f64,
        warm: Option<&DVector<f64>>,
        tol: f64,
    ) -> Result<(DVector<f64>, f64)> {
        if self.dim() == 1 {
            let pt_tol = POINT_PIECE_REL_TOL * phi.max(1.0);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (i, entry) in self.basis.entries.iter().enumerate() {
                let res = self.residues[i];
                if res > phi + pt_tol {
                    continue;
                }
                let halfwidth = if (res - phi).abs() <= pt_tol {
                    0.0
                } else {
                    ((phi - res) / entry.lambda_min).sqrt()
                };
                let c = self.centers[i][0];
                lo = lo.min(c - halfwidth);
                hi = hi.max(c + halfwidth);
            }
            if lo > hi {
                return Err(Error::EmptyRegion);
            }
            return Ok((
                DVector::from_element(1, 0.5 * (lo + hi)),
                0.5 * (hi - lo),
            ));
        }
        let region = self.region_at(phi);
        chebyshev_with_start(&region, warm, tol)
    }
}

/// Region of states whose inconsistency against `y` is at most `phi`.
pub fn build_region(model: &SensorModel, y: &DVector<f64>, phi: f64) -> Result<ConfidenceRegion> {
    if !phi.is_finite() || phi < 0.0 {
        return Err(Error::InvalidArgument(
            "level phi must be finite and non-negative".into(),
        ));
    }
    let family = RegionFamily::new(model, y)?;
    Ok(family.region_at(phi))
}

/// Point of one piece farthest from `c`, with its distance.
pub fn farthest_point(e: &Ellipsoid, c: &DVector<f64>) -> (DVector<f64>, f64) {
    if e.is_point() {
        let dist = (&e.center - c).norm();
        return (e.center.clone(), dist);
    }
    let n = e.center.len();
    let d = e.eig_vecs.transpose() * (c - &e.center);
    let lam = &e.eig_vals;
    let level = e.level;
    let nu_lo = 1.0 / e.lambda_min;

    let g = |nu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let t = d[i] / (1.0 - nu * lam[i]);
            s += lam[i] * t * t;
        }
        s
    };

    let mut u = DVector::zeros(n);
    let nu_eps = nu_lo * (1.0 + 1e-12);
    if g(nu_eps) < level {
        // No real component against the flattest axis: multiplier saturates
        // at 1/lambda_min and slack fills that eigendirection.
        let mut used = 0.0;
        for i in 0..n {
            let denom = 1.0 - nu_lo * lam[i];
            if denom.abs() > 1e-8 {
                u[i] = d[i] / denom;
                used += lam[i] * u[i] * u[i];
            }
        }
        let idx = (0..n)
            .find(|&i| lam[i] <= e.lambda_min * (1.0 + 1e-12))
            .unwrap_or(0);
        u[idx] += ((level - used).max(0.0) / lam[idx]).sqrt();
    } else {
        // g decreases from above `level` to 0 on (nu_lo, inf): bracket, bisect.
        let mut lo = nu_eps;
        let mut hi = nu_lo * 2.0;
        let mut guard = 0;
        while g(hi) >= level && guard < 300 {
            hi = nu_lo + (hi - nu_lo) * 4.0;
            guard += 1;
        }
        for _ in 0..160 {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= level {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let nu = 0.5 * (lo + hi);
        for i in 0..n {
            u[i] = d[i] / (1.0 - nu * lam[i]);
        }
    }

    let x = &e.center + &e.eig_vecs * u;
    let dist = (&x - c).norm();
    (x, dist)
}

/// Distance from `c` to the farthest point of the region.
pub fn region_distance(region: &ConfidenceRegion, c: &DVector<f64>) -> Result<f64> {
    Ok(farthest_in_region(region, c)?.1)
}

fn farthest_in_region(
    region: &ConfidenceRegion,
    c: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    for piece in &region.pieces {
        let (x, dist) = farthest_point(piece, c);
        match &best {
            Some((_, d)) if dist <= *d => {}
            _ => best = Some((x, dist)),
        }
    }
    Ok(best.unwrap())
}

/// Chebyshev center and radius of the region.
///
/// `tol` is an absolute tolerance on the radius. The returned radius is the
/// exact farthest-point distance evaluated at the returned center, so it
/// upper-bounds the true minimax radius by at most the solver gap.
pub fn chebyshev(region: &ConfidenceRegion, tol: f64) -> Result<(DVector<f64>, f64)> {
    chebyshev_with_start(region, None, tol)
}

pub(crate) fn chebyshev_with_start(
    region: &ConfidenceRegion,
    warm: Option<&DVector<f64>>,
    tol: f64,
) -> Result<(DVector<f64>, f64)> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument(
            "chebyshev tolerance must be positive".into(),
        ));
    }
    let pieces = &region.pieces;
    if pieces.len() == 1 {
        let p = &pieces[0];
        let r = if p.is_point() { 0.0 } else { p.max_semi_axis() };
        return Ok((p.center.clone(), r));
    }
    let n = pieces[0].center.len();
    if n == 1 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in pieces {
            let hw = if p.is_point() { 0.0 } else { p.max_semi_axis() };
            lo = lo.min(p.center[0] - hw);
            hi = hi.max(p.center[0] + hw);
        }
        return Ok((DVector::from_element(1, 0.5 * (lo + hi)), 0.5 * (hi - lo)));
    }
    if pieces.len() == 2 && pieces.iter().all(|p| p.is_point()) {
        let mid = 0.5 * (&pieces[0].center + &pieces[1].center);
        let r = 0.5 * (&pieces[0].center - &pieces[1].center).norm();
        return Ok((mid, r));
    }

    let (init, warmed) = match warm {
        Some(c) if c.len() == n => (c.clone(), true),
        _ => {
            let mut c = DVector::zeros(n);
            for p in pieces {
                c += &p.center;
            }
            (c / pieces.len() as f64, false)
        }
    };
    minimax_center(pieces, init, tol, warmed)
}

/// Polyak-step subgradient descent on the max of piece distances.
fn minimax_center(
    pieces: &[Ellipsoid],
    init: DVector<f64>,
    tol: f64,
    warmed: bool,
) -> Result<(DVector<f64>, f64)> {
    let eval = |c: &DVector<f64>| -> (f64, DVector<f64>) {
        let mut best_d = f64::NEG_INFINITY;
        let mut best_x = None;
        for p in pieces {
            let (x, dist) = farthest_point(p, c);
            if dist > best_d {
                best_d = dist;
                best_x = Some(x);
            }
        }
        (best_d, best_x.unwrap())
    };

    let mut c = init;
    let (mut f_c, mut far) = eval(&c);
    let mut c_best = c.clone();
    let mut f_best = f_c;
    // Target gap below the best value seen; halved whenever a sweep stalls.
    // A warm start is assumed near-optimal, so its gap starts small instead
    // of at half the radius.
    let mut gamma = if warmed {
        (1e-3 * f_best).max(8.0 * tol)
    } else {
        (0.5 * f_best).max(tol)
    };
    const SWEEP: usize = 64;
    let mut sweep_start = f_best;

    for it in 1..=CHEB_MAX_ITERS {
        if f_c <= f64::MIN_POSITIVE {
            return Ok((c, 0.0));
        }
        let step = f_c - (f_best - gamma);
        // Step of length `step` along the unit vector from c towards the
        // farthest point: c = (1 - step/f_c) c + (step/f_c) far.
        let scale = step / f_c;
        c.axpy(scale, &far, 1.0 - scale);
        let next = eval(&c);
        f_c = next.0;
        far = next.1;
        if f_c < f_best {
            f_best = f_c;
            c_best.copy_from(&c);
        }
        if it % SWEEP == 0 {
            let drop = sweep_start - f_best;
            if gamma <= tol && drop < tol {
                return Ok((c_best, f_best));
            }
            if drop < 0.25 * gamma {
                gamma = (0.5 * gamma).max(0.5 * tol);
            }
            sweep_start = f_best;
        }
    }
    Err(Error::NoConvergence {
        what: "chebyshev center",
        iterations: CHEB_MAX_ITERS,
        best: f_best,
    })
}

/// Chebyshev radius at each level in `phis`; `None` where the region is empty.
pub fn radius_curve(
    model: &SensorModel,
    y: &DVector<f64>,
    phis: &[f64],
) -> Result<Vec<(f64, Option<f64>)>> {
    let family = RegionFamily::new(model, y)?;
    let mut out = Vec::with_capacity(phis.len());
    let mut warm: Option<DVector<f64>> = None;
    for &phi in phis {
        if !phi.is_finite() || phi < 0.0 {
            return Err(Error::InvalidArgument(
                "level phi must be finite and non-negative".into(),
            ));
        }
        match family.radius_at(phi, warm.as_ref(), CHEB_DEFAULT_TOL * 0.1) {
            Ok((center, radius)) => {
                warm = Some(center);
                out.push((phi, Some(radius)));
            }
            Err(Error::EmptyRegion) => out.push((phi, None)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
