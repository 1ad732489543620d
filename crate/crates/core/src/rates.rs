//! Decay-rate quantities for the worst-case error probability.
//!
//! Averaging k measurement rounds drives the worst-case probability of an
//! estimation error beyond `delta` to zero exponentially in k. This module
//! computes the exponent's model-only upper bound (an eigenvalue minimized
//! over attack supports), the level a specific measurement attains, the
//! adversarial observations that show the bound is the right target, and a
//! regression that recovers the exponent from Monte Carlo sweeps.

use itertools::Itertools;
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::phi_search;
use crate::geometry::RegionFamily;
use crate::linalg::normalize_sign;
use crate::model::SensorModel;

/// Monte Carlo points with fewer error events than this carry too much
/// relative noise to anchor a rate fit.
pub const MIN_RATE_EVENTS: u64 = 10;

/// Summary of the rate quantities for one model, for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    /// Worst-case exponent bound at unit radius.
    pub u_bar_1: f64,
    /// Attack support achieving the bound.
    pub argmin_support: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Bound at `delta`: `delta^2 * u_bar_1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_bar_delta: Option<f64>,
    /// Level attained by a supplied measurement at `delta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_y_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_rate: Option<RateFit>,
}

/// One Monte Carlo point: error probability `e_hat` at horizon `k`, with
/// the raw error-event count when known.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RatePoint {
    pub k: f64,
    pub e_hat: f64,
    pub events: Option<u64>,
}

/// Least-squares fit of `-ln(e_hat)` against `k`.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    /// Fitted decay exponent (the slope).
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    /// Points discarded for `e_hat` outside (0, 1) or too few events.
    pub dropped: usize,
}

/// Smallest eigenvalue of the information matrix restricted to `rows`,
/// clamped at zero, with its unit eigenvector.
fn reduced_spectrum(model: &SensorModel, rows: &[usize]) -> (f64, DVector<f64>) {
    let (h, w) = model.subset_rows(rows);
    let mut hw = h.clone();
    for (r, wi) in w.iter().enumerate() {
        hw.row_mut(r).scale_mut(1.0 / wi);
    }
    let mut info = 0.5 * h.transpose() * hw;
    info = 0.5 * (&info + info.transpose());
    let eig = info.symmetric_eigen();
    let mut idx = 0;
    for j in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[j] < eig.eigenvalues[idx] {
            idx = j;
        }
    }
    let mut vec = eig.eigenvectors.column(idx).into_owned();
    normalize_sign(&mut vec);
    (eig.eigenvalues[idx].max(0.0), vec)
}

/// Minimizing attack support with the reduced eigenvalue and eigenvector.
fn argmin_reduction(model: &SensorModel) -> (f64, Vec<usize>, DVector<f64>) {
    let m = model.m();
    let mut best: Option<(f64, Vec<usize>, DVector<f64>)> = None;
    for support in (0..m).combinations(2 * model.q()) {
        let complement: Vec<usize> = (0..m).filter(|i| !support.contains(i)).collect();
        let (value, vec) = reduced_spectrum(model, &complement);
        // Strict comparison keeps the lexicographically first support on ties.
        if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
            best = Some((value, support, vec));
        }
    }
    best.expect("m > 2q guarantees at least one support")
}

/// Worst-case decay exponent at unit radius, with the attack support that
/// achieves it.
///
/// Minimizes, over supports of `2q` sensors, the smallest eigenvalue of
/// the information matrix of the remaining rows. A rank-deficient remainder
/// makes the value zero; that is reported as-is (the exponent bound is then
/// vacuous) rather than as an error.
pub fn upper_bound_rate(model: &SensorModel) -> (f64, Vec<usize>) {
    let (value, support, _) = argmin_reduction(model);
    (value, support)
}

/// Worst-case decay exponent at radius `delta`, which scales as `delta^2`.
pub fn upper_bound_rate_at(model: &SensorModel, delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidArgument(
            "delta must be finite and non-negative".into(),
        ));
    }
    Ok(delta * delta * upper_bound_rate(model).0)
}

/// Largest inconsistency level whose confidence region for `y` still fits
/// in a ball of radius `delta`, to accuracy `eps`.
///
/// This is the level the region-based estimator would stop at for this
/// measurement; across adversarial measurements it stays below the
/// [`upper_bound_rate`] exponent.
pub fn u_of_y_delta(model: &SensorModel, y: &DVector<f64>, delta: f64, eps: f64) -> Result<f64> {
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
    if !search.feasible {
        return Err(Error::NoFeasibleLevel {
            radius: search.radius,
        });
    }
    Ok(search.phi)
}

/// Measurement that two states explain equally well under the attack
/// budget; returns `(y_star, x0, x1)` with `x0, x1` centered on `x` and
/// `2 * delta` apart, both at inconsistency at most `delta^2 * u_bar_1`.
///
/// The worst-case attack: sensors on the minimizing support are split in
/// half, one half reporting consistently with `x0`, the other with `x1`,
/// everyone else seeing the midpoint `x`. On a model with a rank-deficient
/// reduced block the pair comes from the null-space construction instead
/// and both inconsistencies are exactly zero.
pub fn ambiguous_observation(
    model: &SensorModel,
    x: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if x.len() != model.n() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "state must be finite with {} entries",
            model.n()
        )));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidArgument(
            "delta must be finite and non-negative".into(),
        ));
    }
    if !model.is_observable() && delta > 0.0 {
        if let Some(witness) = model.observability().deficient().first() {
            return deficiency_pair(model, x, delta, witness);
        }
    }

    let (lambda, support, direction) = argmin_reduction(model);
    let q = model.q();
    let h = model.h();
    let x0 = x - delta * &direction;
    let x1 = x + delta * &direction;
    let mut y_star = model.clean(x);
    for (slot, &i) in support.iter().enumerate() {
        let source = if slot < q { &x0 } else { &x1 };
        y_star[i] = h.row(i).dot(&source.transpose());
    }

    debug_assert!({
        let bound = lambda * delta * delta + 1e-9;
        let d0 = crate::inconsistency::inconsistency(model, &x0, &y_star)?.0;
        let d1 = crate::inconsistency::inconsistency(model, &x1, &y_star)?.0;
        d0 <= bound && d1 <= bound
    });
    Ok((y_star, x0, x1))
}

/// Measurement that two states more than `delta` apart both explain with
/// zero inconsistency; exists exactly when some reduced block of `H` loses
/// rank. Returns `(y_star, x1, x2)` with `x1 = 0`; errors with
/// [`Error::Observable`] when no such block exists.
pub fn observability_counterexample(
    model: &SensorModel,
    delta: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "delta must be finite and positive".into(),
        ));
    }
    let deficient = model.observability().deficient();
    let Some(witness) = deficient.first() else {
        return Err(Error::Observable);
    };
    deficiency_pair(model, &DVector::zeros(model.n()), delta, witness)
}

/// Null-space pair for a rank-deficient reduced block: the states differ by
/// `1.1 * delta` along the null direction and share the measurement.
fn deficiency_pair(
    model: &SensorModel,
    base: &DVector<f64>,
    delta: f64,
    witness: &[usize],
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (h_w, _) = model.subset_rows(witness);
    let mut gram = h_w.transpose() * &h_w;
    gram = 0.5 * (&gram + gram.transpose());
    let eig = gram.symmetric_eigen();
    let mut idx = 0;
    for j in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[j] < eig.eigenvalues[idx] {
            idx = j;
        }
    }
    let mut null_dir = eig.eigenvectors.column(idx).into_owned();
    normalize_sign(&mut null_dir);

    let x1 = base.clone();
    let x2 = base + 1.1 * delta * &null_dir;
    let q = model.q();
    let h = model.h();
    let in_witness: Vec<bool> = {
        let mut mask = vec![false; model.m()];
        for &i in witness {
            mask[i] = true;
        }
        mask
    };
    let outside: Vec<usize> = (0..model.m()).filter(|&i| !in_witness[i]).collect();
    let mut y_star = model.clean(&x1);
    // First q outside sensors stay with x1, the rest report x2.
    for &i in &outside[q..] {
        y_star[i] = h.row(i).dot(&x2.transpose());
    }

    debug_assert!({
        let d1 = crate::inconsistency::inconsistency(model, &x1, &y_star)?.0;
        let d2 = crate::inconsistency::inconsistency(model, &x2, &y_star)?.0;
        d1 <= 1e-9 && d2 <= 1e-9
    });
    Ok((y_star, x1, x2))
}

/// Fits the decay exponent from Monte Carlo error probabilities by
/// regressing `-ln(e_hat)` on `k`. Points with `e_hat` outside `(0, 1)`,
/// or with fewer than [`MIN_RATE_EVENTS`] recorded events, are dropped.
pub fn empirical_rate(points: &[RatePoint]) -> Result<RateFit> {
    let usable: Vec<&RatePoint> = points
        .iter()
        .filter(|p| {
            p.k.is_finite()
                && p.e_hat > 0.0
                && p.e_hat < 1.0
                && p.events.is_none_or(|e| e >= MIN_RATE_EVENTS)
        })
        .collect();
    let n = usable.len();
    if n < 3 {
        return Err(Error::TooFewRatePoints(n));
    }
    let nf = n as f64;
    let ks: Vec<f64> = usable.iter().map(|p| p.k).collect();
    let zs: Vec<f64> = usable.iter().map(|p| -p.e_hat.ln()).collect();
    let k_mean = ks.iter().sum::<f64>() / nf;
    let z_mean = zs.iter().sum::<f64>() / nf;
    let mut skk = 0.0;
    let mut skz = 0.0;
    for (k, z) in ks.iter().zip(&zs) {
        skk += (k - k_mean) * (k - k_mean);
        skz += (k - k_mean) * (z - z_mean);
    }
    if skk == 0.0 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least two distinct horizons".into(),
        ));
    }
    let rate = skz / skk;
    let intercept = z_mean - rate * k_mean;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (k, z) in ks.iter().zip(&zs) {
        let fitted = intercept + rate * k;
        ss_res += (z - fitted) * (z - fitted);
        ss_tot += (z - z_mean) * (z - z_mean);
    }
    let r_squared = if ss_tot <= 1e-30 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).max(0.0)
    };
    Ok(RateFit {
        rate,
        intercept,
        r_squared,
        points_used: n,
        dropped: points.len() - n,
    })
}
