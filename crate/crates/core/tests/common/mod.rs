//! Helpers shared by the integration suites: benchmark fixtures, random
//! model generators, and slow brute-force oracles the fast solvers are
//! checked against.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use secure_estimation::geometry::{ConfidenceRegion, Ellipsoid};
use secure_estimation::model::SensorModel;

/// Four-sensor planar benchmark: gains ((1,0),(0,1),(1,2),(2,1)),
/// variances (1,2,2,1), one corruptible sensor.
pub fn bench_model() -> SensorModel {
    let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 1.0]);
    let w = DVector::from_vec(vec![1.0, 2.0, 2.0, 1.0]);
    SensorModel::new(h, w, 1).unwrap()
}

/// Measurement used with the benchmark model throughout the suites.
pub fn bench_y() -> DVector<f64> {
    DVector::from_vec(vec![4.0, -4.0, 5.0, -5.0])
}

/// Keep-subset residues of `bench_y` under `bench_model`, ascending.
pub fn bench_residues() -> [f64; 4] {
    [891.0 / 242.0, 567.0 / 98.0, 13.5, 24.3]
}

/// Five identical scalar sensors, unit variance, one corruptible.
pub fn flat_model() -> SensorModel {
    SensorModel::new(
        DMatrix::from_element(5, 1, 1.0),
        DVector::from_element(5, 1.0),
        1,
    )
    .unwrap()
}

/// Random observable model with dimensions drawn from the given ranges.
pub fn random_observable_model(
    rng: &mut ChaCha8Rng,
    m_lo: usize,
    m_hi: usize,
    n_lo: usize,
    n_hi: usize,
) -> SensorModel {
    loop {
        let n = rng.random_range(n_lo..=n_hi);
        let m = rng.random_range(m_lo.max(n)..=m_hi);
        let max_q = (m - 1) / 2;
        let q = rng.random_range(0..=max_q);
        let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let w = DVector::from_fn(m, |_, _| rng.random_range(0.5..3.0));
        if let Ok(model) = SensorModel::new(h, w, q) {
            if m > 2 * q && model.is_observable() {
                return model;
            }
        }
    }
}

/// Random model with one reduced sensor block forced to lose rank: every row
/// of a chosen `(m - 2q)`-subset is a multiple of a single direction.
pub fn rank_deficient_model(rng: &mut ChaCha8Rng) -> SensorModel {
    loop {
        let n = rng.random_range(2..=3usize);
        let q = rng.random_range(1..=2usize);
        let m = rng.random_range((2 * q + 1).max(n + 1)..=7usize.max(2 * q + 1));
        let mut h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        if dir.norm() < 0.3 {
            continue;
        }
        let block = m - 2 * q;
        for i in 0..block {
            let scale = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
            for j in 0..n {
                h[(i, j)] = scale * dir[j];
            }
        }
        let w = DVector::from_fn(m, |_, _| rng.random_range(0.5..3.0));
        if let Ok(model) = SensorModel::new(h, w, q) {
            if !model.is_observable() {
                return model;
            }
        }
    }
}

/// Random planar union of full-dimensional ellipsoid pieces.
pub fn random_planar_region(rng: &mut ChaCha8Rng, pieces_lo: usize, pieces_hi: usize) -> ConfidenceRegion {
    let count = rng.random_range(pieces_lo..=pieces_hi);
    let mut pieces = Vec::with_capacity(count);
    for _ in 0..count {
        pieces.push(random_ellipse(rng));
    }
    ConfidenceRegion::from_pieces(pieces, f64::INFINITY, DVector::zeros(1))
}

/// Random well-conditioned planar ellipsoid.
pub fn random_ellipse(rng: &mut ChaCha8Rng) -> Ellipsoid {
    let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    let shape = &a * a.transpose() + DMatrix::identity(2, 2) * rng.random_range(0.1..0.5);
    Ellipsoid::new(
        DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)),
        shape,
        rng.random_range(0.3..4.0),
        vec![],
    )
    .unwrap()
}

/// Evenly spaced boundary points of a planar ellipsoid piece.
pub fn ellipse_boundary(e: &Ellipsoid, count: usize) -> Vec<DVector<f64>> {
    assert_eq!(e.center.len(), 2);
    let eig = e.shape.clone().symmetric_eigen();
    let semi: Vec<f64> = (0..2).map(|j| (e.level / eig.eigenvalues[j]).sqrt()).collect();
    let axis: Vec<DVector<f64>> = (0..2).map(|j| eig.eigenvectors.column(j).into_owned()).collect();
    (0..count)
        .map(|i| {
            let t = 2.0 * std::f64::consts::PI * (i as f64) / (count as f64);
            &e.center + semi[0] * t.cos() * &axis[0] + semi[1] * t.sin() * &axis[1]
        })
        .collect()
}

/// Minimax radius of a planar union by brute force on a membership grid.
///
/// Every piece is boxed, the union box is sampled on a `grid x grid` lattice,
/// lattice members are reduced to their convex hull, and every lattice point
/// competes as a center against the hull vertices. Returns the winning radius
/// together with the lattice pitch (one cell diagonal); the discretization
/// error of the radius is at most two pitches.
pub fn grid_chebyshev_oracle(region: &ConfidenceRegion, grid: usize) -> (f64, f64) {
    assert!(grid >= 2);
    assert_eq!(region.dim(), Some(2));
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &region.pieces {
        let reach = p.max_semi_axis();
        for j in 0..2 {
            lo[j] = lo[j].min(p.center[j] - reach);
            hi[j] = hi[j].max(p.center[j] + reach);
        }
    }
    let dx = (hi[0] - lo[0]).max(1e-9) / (grid - 1) as f64;
    let dy = (hi[1] - lo[1]).max(1e-9) / (grid - 1) as f64;
    let pitch = dx.hypot(dy);

    // Flattened piece parameters keep the membership scan allocation-free.
    let params: Vec<(f64, f64, f64, f64, f64, f64)> = region
        .pieces
        .iter()
        .map(|p| {
            (
                p.center[0],
                p.center[1],
                p.shape[(0, 0)],
                p.shape[(0, 1)],
                p.shape[(1, 1)],
                p.level,
            )
        })
        .collect();
    let mut members: Vec<(f64, f64)> = Vec::new();
    let mut lattice: Vec<(f64, f64)> = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let x = lo[0] + dx * i as f64;
            let y = lo[1] + dy * j as f64;
            lattice.push((x, y));
            let inside = params.iter().any(|&(cx, cy, s00, s01, s11, level)| {
                let ux = x - cx;
                let uy = y - cy;
                s00 * ux * ux + 2.0 * s01 * ux * uy + s11 * uy * uy <= level
            });
            if inside {
                members.push((x, y));
            }
        }
    }
    assert!(!members.is_empty(), "no lattice point fell inside the region");
    let hull = convex_hull(&mut members);

    let mut best = f64::INFINITY;
    for &(cx, cy) in &lattice {
        let mut worst = 0.0f64;
        for &(px, py) in &hull {
            let d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
            if d2 > worst {
                worst = d2;
                if worst >= best * best {
                    break;
                }
            }
        }
        best = best.min(worst.sqrt());
    }
    (best, pitch)
}

/// Convex hull (monotone chain), counterclockwise, no repeated endpoint.
fn convex_hull(points: &mut Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();
    if points.len() <= 2 {
        return points.clone();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len() + 1);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Binomial standard error of an empirical probability.
pub fn std_err(p_hat: f64, trials: u64) -> f64 {
    (p_hat * (1.0 - p_hat) / trials as f64).sqrt()
}
