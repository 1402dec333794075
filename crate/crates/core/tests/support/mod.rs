//! Reference computations shared by the integration and acceptance tests.
//! The oracles here never call into the code paths they check; `gradcheck`
//! drives the library only to compare it against finite differences.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub mod gradcheck;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` around `x`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Counts by full scan: (targets below t) / P, (nontargets at or above t) / N.
pub fn brute_rates(targets: &[f64], nontargets: &[f64], t: f64) -> (f64, f64) {
    let misses = targets.iter().filter(|&&s| s < t).count();
    let fas = nontargets.iter().filter(|&&s| s >= t).count();
    (
        misses as f64 / targets.len() as f64,
        fas as f64 / nontargets.len() as f64,
    )
}

/// Equal error rate read off a uniform grid of `10 (P + N)` thresholds
/// spanning the score range: the grid point minimising `|p_miss - p_fa|`,
/// reported as the mean of the two rates there.
pub fn grid_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut t_sorted = targets.to_vec();
    t_sorted.sort_by(f64::total_cmp);
    let mut n_sorted = nontargets.to_vec();
    n_sorted.sort_by(f64::total_cmp);
    let lo = t_sorted[0].min(n_sorted[0]) - 1.0;
    let hi = t_sorted[t_sorted.len() - 1].max(n_sorted[n_sorted.len() - 1]) + 1.0;
    let count = 10 * (targets.len() + nontargets.len());
    let mut best = (f64::INFINITY, f64::NAN);
    for i in 0..=count {
        let t = lo + (hi - lo) * i as f64 / count as f64;
        let p_miss = t_sorted.partition_point(|&s| s < t) as f64 / t_sorted.len() as f64;
        let p_fa =
            (n_sorted.len() - n_sorted.partition_point(|&s| s < t)) as f64 / n_sorted.len() as f64;
        let gap = (p_miss - p_fa).abs();
        if gap < best.0 {
            best = (gap, (p_miss + p_fa) / 2.0);
        }
    }
    best.1
}

/// Minimum raw DCF over every distinct score plus two outside thresholds,
/// each evaluated by full scan.
pub fn brute_min_dcf(
    targets: &[f64],
    nontargets: &[f64],
    c_miss: f64,
    c_fa: f64,
    p_tar: f64,
) -> f64 {
    let mut candidates: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    candidates.push(f64::NEG_INFINITY);
    candidates
        .into_iter()
        .map(|t| {
            let (p_miss, p_fa) = brute_rates(targets, nontargets, t);
            c_miss * p_tar * p_miss + c_fa * (1.0 - p_tar) * p_fa
        })
        .fold(f64::INFINITY, f64::min)
}

/// Upper tail of the standard normal.
fn normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse normal CDF by bisection on the tail probability. For `p > 0.5`
/// the complement `1 - p` is exact, so symmetry keeps full precision.
pub fn bisection_probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    if p > 0.5 {
        return -bisection_probit(1.0 - p);
    }
    // solve sf(-x) = p for x <= 0, i.e. sf(y) = p for y = -x >= 0
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if normal_sf(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    -0.5 * (lo + hi)
}

/// Random continuous score set: `P, N` uniform in the given range, target
/// scores shifted by a random separation.
pub fn random_scores(rng: &mut impl Rng, min: usize, max: usize) -> (Vec<f64>, Vec<f64>) {
    let p = rng.random_range(min..=max);
    let n = rng.random_range(min..=max);
    let shift = rng.random_range(-1.0..3.0);
    let scale = rng.random_range(0.5..2.0);
    let tar = Normal::new(shift, scale).unwrap();
    let non = Normal::new(0.0, 1.0).unwrap();
    (
        (0..p).map(|_| tar.sample(rng)).collect(),
        (0..n).map(|_| non.sample(rng)).collect(),
    )
}
