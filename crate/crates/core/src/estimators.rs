//! The estimators: the level-search Chebyshev estimator, the trimmed mean,
//! weighted least squares, and a LASSO baseline.
//!
//! The level-search estimator picks the largest inconsistency level `phi`
//! whose confidence region still fits inside a ball of radius `delta`, then
//! returns that region's Chebyshev center. The search starts at the smallest
//! subset residue (where the region is a point), brackets upward by doubling,
//! and bisects until the bracket is narrower than `eps / 2`; the returned
//! level is backed off by `eps / 2` so the guarantee holds with a margin. A
//! radius within `1e-6 * max(1, delta)` of `delta` ends the search early.

use nalgebra::DVector;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::RegionFamily;
use crate::inconsistency::SubsetGeometry;
use crate::model::SensorModel;

/// Relative tolerance for the `radius = delta` early exit.
pub const RADIUS_EQ_REL_TOL: f64 = 1e-6;

/// Largest bracketing offset tried above the minimum residue.
const BRACKET_CAP: f64 = (1u64 << 60) as f64;

/// Iteration cap for the alternating LASSO solver.
const LASSO_MAX_ITERS: usize = 50_000;

/// Outcome of one estimate, with the diagnostics the search produced.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub method: String,
    pub estimate: DVector<f64>,
    /// Terminal inconsistency level; level-search estimates only.
    pub phi_final: Option<f64>,
    /// Region radius at the terminal level; level-search estimates only.
    pub radius_final: Option<f64>,
    pub iterations: usize,
    /// Keep-subsets whose residue is at or below the terminal level.
    pub subsets_active: Vec<Vec<usize>>,
}

impl EstimateReport {
    pub fn plain(method: &str, estimate: DVector<f64>, iterations: usize) -> Self {
        EstimateReport {
            method: method.to_string(),
            estimate,
            phi_final: None,
            radius_final: None,
            iterations,
            subsets_active: Vec::new(),
        }
    }
}

impl Serialize for EstimateReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut out = s.serialize_struct("EstimateReport", 6)?;
        out.serialize_field("method", &self.method)?;
        out.serialize_field("estimate", &self.estimate.as_slice())?;
        out.serialize_field("phi_final", &self.phi_final)?;
        out.serialize_field("radius_final", &self.radius_final)?;
        out.serialize_field("iterations", &self.iterations)?;
        out.serialize_field("subsets_active", &self.subsets_active)?;
        out.end()
    }
}

/// Result of the level search: the terminal level with its region center
/// and radius. `feasible` is false when even the lowest level's region is
/// already wider than `delta` (tied minimum residues far apart); the center
/// of that lowest region is still reported.
#[derive(Debug, Clone)]
pub(crate) struct LevelSearch {
    pub phi: f64,
    pub center: DVector<f64>,
    pub radius: f64,
    pub evaluations: usize,
    pub feasible: bool,
}

/// Bracketing bisection for the largest level whose region radius stays at
/// or below `delta`.
pub(crate) fn phi_search(family: &RegionFamily, delta: f64, eps: f64) -> Result<LevelSearch> {
    let upsilon = family.upsilon();
    let radius_tol = RADIUS_EQ_REL_TOL * delta.max(1.0);
    let cheb_tol = (1e-3 * radius_tol).min(1e-8);
    let mut evaluations = 0usize;

    let (c0, r0) = family.radius_at(upsilon, None, cheb_tol)?;
    evaluations += 1;
    if (r0 - delta).abs() <= radius_tol {
        return Ok(LevelSearch {
            phi: upsilon,
            center: c0,
            radius: r0,
            evaluations,
            feasible: true,
        });
    }
    if r0 > delta {
        return Ok(LevelSearch {
            phi: upsilon,
            center: c0,
            radius: r0,
            evaluations,
            feasible: false,
        });
    }
    let mut warm = c0;

    // Bracket: radius(lo) <= delta < radius(hi).
    let mut lo = upsilon;
    let mut hi;
    let mut offset = 1.0;
    loop {
        if offset > BRACKET_CAP {
            return Err(Error::BracketFailed {
                phi_cap: upsilon + BRACKET_CAP,
            });
        }
        hi = upsilon + offset;
        let (c, r) = family.radius_at(hi, Some(&warm), cheb_tol)?;
        evaluations += 1;
        warm = c;
        if (r - delta).abs() <= radius_tol {
            return Ok(LevelSearch {
                phi: hi,
                center: warm,
                radius: r,
                evaluations,
                feasible: true,
            });
        }
        if r > delta {
            break;
        }
        lo = hi;
        offset *= 2.0;
    }

    while hi - lo >= eps / 2.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (c, r) = family.radius_at(mid, Some(&warm), cheb_tol)?;
        evaluations += 1;
        warm = c;
        if (r - delta).abs() <= radius_tol {
            return Ok(LevelSearch {
                phi: mid,
                center: warm,
                radius: r,
                evaluations,
                feasible: true,
            });
        }
        if r > delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let phi = (lo - eps / 2.0).max(upsilon);
    let (center, radius) = family.radius_at(phi, Some(&warm), cheb_tol)?;
    evaluations += 1;
    Ok(LevelSearch {
        phi,
        center,
        radius,
        evaluations,
        feasible: true,
    })
}

/// Chebyshev-center estimate at the largest level whose region fits in a
/// `delta`-ball, to accuracy `eps` in the level.
///
/// Requires a model whose every `(m - 2q)`-row block has full column rank;
/// without that the region can stay wider than `delta` at every level. In
/// the rare case of tied minimum residues spread wider than `2 * delta`, the
/// search is stuck at the lowest level and the report carries that level's
/// center with `radius_final > delta`.
pub fn estimate_optimal(
    model: &SensorModel,
    y: &DVector<f64>,
    delta: f64,
    eps: f64,
) -> Result<EstimateReport> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "delta must be finite and positive".into(),
        ));
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidArgument(
            "eps must be finite and positive".into(),
        ));
    }
    if !model.is_observable() {
        return Err(Error::NotObservable {
            witnesses: model.observability().deficient(),
        });
    }
    let family = RegionFamily::new(model, y)?;
    let search = phi_search(&family, delta, eps)?;
    Ok(EstimateReport {
        method: "optimal".to_string(),
        estimate: search.center,
        phi_final: Some(search.phi),
        radius_final: Some(search.radius),
        iterations: search.evaluations,
        subsets_active: family.subsets_at(search.phi),
    })
}

/// Checks the identical-sensor precondition of the trimmed mean: scalar
/// state, unit gains, equal noise variances.
pub fn require_homogeneous(model: &SensorModel) -> Result<()> {
    if model.n() != 1 {
        return Err(Error::NotHomogeneous(format!(
            "state dimension is {}, expected 1",
            model.n()
        )));
    }
    if (0..model.m()).any(|i| model.h()[(i, 0)] != 1.0) {
        return Err(Error::NotHomogeneous(
            "sensor gains must all equal 1".into(),
        ));
    }
    let w0 = model.w()[0];
    if model.w().iter().any(|&w| w != w0) {
        return Err(Error::NotHomogeneous(
            "noise variances must be identical".into(),
        ));
    }
    Ok(())
}

/// Mean of the measurement after dropping its `q` smallest and `q` largest
/// entries. Requires identical sensors: scalar state, unit gains, equal
/// noise variances.
pub fn estimate_trimmed_mean(model: &SensorModel, y: &DVector<f64>) -> Result<f64> {
    require_homogeneous(model)?;
    if y.len() != model.m() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "measurement must be finite with {} entries",
            model.m()
        )));
    }
    let (m, q) = (model.m(), model.q());
    // Index tie-break keeps the kept set deterministic under equal values.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let kept = &order[q..m - q];
    Ok(kept.iter().map(|&i| y[i]).sum::<f64>() / kept.len() as f64)
}

/// Weighted least-squares fit over all sensors; the non-resilient baseline.
pub fn estimate_least_squares(model: &SensorModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != model.m() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "measurement must be finite with {} entries",
            model.m()
        )));
    }
    let all: Vec<usize> = (0..model.m()).collect();
    let geom = SubsetGeometry::new(model, &all)?;
    Ok(geom.fit(y).0)
}

/// Converged LASSO solve with its bias vector and diagnostics.
#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub x: DVector<f64>,
    pub bias: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
}

/// Exact scalar-state solve. Profiling out the bias gives a sum of Huber
/// losses in `x`: piecewise quadratic, convex, kinks where a residual
/// magnitude crosses its threshold. The derivative is continuous and
/// nondecreasing, so the minimizer sits in the first breakpoint interval
/// where it turns non-negative; inside one interval it is affine.
fn lasso_scalar(model: &SensorModel, y: &DVector<f64>, kf: f64, lambda: f64) -> f64 {
    let m = model.m();
    let h: Vec<f64> = (0..m).map(|i| model.h()[(i, 0)]).collect();
    let c: Vec<f64> = (0..m).map(|i| kf / model.w()[i]).collect();
    let t: Vec<f64> = (0..m).map(|i| lambda * model.w()[i] / (2.0 * kf)).collect();
    let mut breakpoints = Vec::with_capacity(2 * m);
    for i in 0..m {
        if h[i] != 0.0 {
            breakpoints.push((y[i] - t[i]) / h[i]);
            breakpoints.push((y[i] + t[i]) / h[i]);
        }
    }
    breakpoints.sort_by(f64::total_cmp);
    let derivative = |x: f64| -> f64 {
        let mut g = 0.0;
        for i in 0..m {
            let r = y[i] - h[i] * x;
            let d = if r.abs() <= t[i] {
                2.0 * r
            } else {
                2.0 * t[i] * r.signum()
            };
            g -= c[i] * d * h[i];
        }
        g
    };
    let j = breakpoints.partition_point(|&b| derivative(b) < 0.0);
    // The derivative is constant outside the breakpoint span and changes
    // sign inside it, so these edge hits are rounding artifacts.
    if j == 0 {
        return breakpoints[0];
    }
    if j == breakpoints.len() {
        return breakpoints[j - 1];
    }
    let (lo, hi) = (breakpoints[j - 1], breakpoints[j]);
    let mid = 0.5 * (lo + hi);
    let mut slope = 0.0;
    for i in 0..m {
        if (y[i] - h[i] * mid).abs() <= t[i] {
            slope += 2.0 * c[i] * h[i] * h[i];
        }
    }
    if slope > 0.0 {
        (mid - derivative(mid) / slope).clamp(lo, hi)
    } else {
        // Flat stretch of exact ties; its midpoint is as canonical as any.
        mid
    }
}

/// Minimizes `sum_i (k / W_i) (y_i - H_i x - a_i)^2 + lambda * |a|_1` over
/// `(x, a)`. A scalar state is solved exactly through the Huber profile of
/// the objective; larger states alternate an exact weighted least-squares
/// step in `x` with coordinate-wise soft thresholding in `a`.
///
/// The `x` step ignores `k` (a uniform factor does not move a quadratic
/// minimum); `k` only sharpens the threshold `lambda * W_i / (2k)`.
pub fn estimate_lasso_full(
    model: &SensorModel,
    y: &DVector<f64>,
    k: u32,
    lambda: f64,
    tol: f64,
) -> Result<LassoSolution> {
    if k == 0 {
        return Err(Error::InvalidArgument("horizon k must be at least 1".into()));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidArgument(
            "lambda must be finite and positive".into(),
        ));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidArgument(
            "tolerance must be finite and positive".into(),
        ));
    }
    if y.len() != model.m() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "measurement must be finite with {} entries",
            model.m()
        )));
    }
    let all: Vec<usize> = (0..model.m()).collect();
    let geom = SubsetGeometry::new(model, &all)?;
    let m = model.m();
    let kf = f64::from(k);
    let h = model.h();
    let w = model.w();

    if model.n() == 1 {
        let xs = lasso_scalar(model, y, kf, lambda);
        let x = DVector::from_element(1, xs);
        let mut a = DVector::zeros(m);
        let mut obj = 0.0;
        for i in 0..m {
            let r = y[i] - h[(i, 0)] * xs;
            a[i] = soft(r, lambda * w[i] / (2.0 * kf));
            let resid = r - a[i];
            obj += kf / w[i] * resid * resid + lambda * a[i].abs();
        }
        return Ok(LassoSolution {
            x,
            bias: a,
            iterations: 1,
            objective: obj,
        });
    }

    let mut a = DVector::zeros(m);
    let mut x;
    let mut prev_obj = f64::INFINITY;
    for it in 1..=LASSO_MAX_ITERS {
        x = &geom.kappa * (y - &a);
        let fitted = h * &x;
        let mut obj = 0.0;
        for i in 0..m {
            let r = y[i] - fitted[i];
            let threshold = lambda * w[i] / (2.0 * kf);
            a[i] = soft(r, threshold);
            let resid = r - a[i];
            obj += kf / w[i] * resid * resid + lambda * a[i].abs();
        }
        if (prev_obj - obj).abs() <= tol * obj.max(1.0) {
            return Ok(LassoSolution {
                x,
                bias: a,
                iterations: it,
                objective: obj,
            });
        }
        prev_obj = obj;
    }
    Err(Error::NoConvergence {
        what: "lasso",
        iterations: LASSO_MAX_ITERS,
        best: prev_obj,
    })
}

/// LASSO estimate of the state; see [`estimate_lasso_full`].
pub fn estimate_lasso(
    model: &SensorModel,
    y: &DVector<f64>,
    k: u32,
    lambda: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    Ok(estimate_lasso_full(model, y, k, lambda, tol)?.x)
}

fn soft(r: f64, threshold: f64) -> f64 {
    if r > threshold {
        r - threshold
    } else if r < -threshold {
        r + threshold
    } else {
        0.0
    }
}
