//! Independent oracles shared by the integration suites. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use crowdmap::{DensityMap, GaussianWindow, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `exp(-D²/2σ²)` from the printed 1-indexed formula.
pub fn window_formula(k: usize, sigma: f64, u: usize, v: usize) -> f64 {
    let c = (k as f64 + 1.0) / 2.0;
    let d2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// `1 / (1 + Σ |crop − W|)` with an explicit zero-padded crop.
pub fn brute_probability(map: &DensityMap, window: &GaussianWindow, x: usize, y: usize) -> f64 {
    let k = window.k() as i64;
    let half = (k - 1) / 2;
    let mut l1 = 0.0;
    for r in 0..k {
        for c in 0..k {
            let yy = y as i64 + r - half;
            let xx = x as i64 + c - half;
            let m = if yy >= 0 && xx >= 0 && (yy as usize) < map.height() && (xx as usize) < map.width() {
                map.values()[yy as usize * map.width() + xx as usize]
            } else {
                0.0
            };
            l1 += (m - window.values()[(r * k + c) as usize]).abs();
        }
    }
    1.0 / (1.0 + l1)
}

pub fn brute_probability_map(map: &DensityMap, window: &GaussianWindow) -> Vec<f64> {
    let mut out = Vec::with_capacity(map.len());
    for y in 0..map.height() {
        for x in 0..map.width() {
            out.push(brute_probability(map, window, x, y));
        }
    }
    out
}

/// Textbook SSIM: for every full 11×11 window, Gaussian-weighted means,
/// variances and covariance computed directly from centered values.
pub fn reference_ssim(a: &DensityMap, b: &DensityMap, range: f64) -> f64 {
    let side = 11usize;
    let sigma = 1.5f64;
    let mut w = vec![0.0; side * side];
    let c = (side / 2) as f64;
    for i in 0..side {
        for j in 0..side {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            w[i * side + j] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let (h, wd) = (a.height(), a.width());
    let mut acc = 0.0;
    let mut n = 0usize;
    for y0 in 0..=h - side {
        for x0 in 0..=wd - side {
            let at = |m: &DensityMap, i: usize, j: usize| m.values()[(y0 + i) * wd + x0 + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..side {
                for j in 0..side {
                    mx += w[i * side + j] * at(a, i, j);
                    my += w[i * side + j] * at(b, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..side {
                for j in 0..side {
                    let dx = at(a, i, j) - mx;
                    let dy = at(b, i, j) - my;
                    vx += w[i * side + j] * dx * dx;
                    vy += w[i * side + j] * dy * dy;
                    cxy += w[i * side + j] * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    acc / n as f64
}

pub fn random_map(rng: &mut impl Rng, h: usize, w: usize, lo: f64, hi: f64) -> DensityMap {
    let v = (0..h * w).map(|_| rng.gen_range(lo..hi)).collect();
    DensityMap::from_vec(h, w, v).unwrap()
}

/// Greedy nearest-neighbour matching: each found point claims the closest
/// unclaimed true point. Returns the Chebyshev distance per found point
/// (`usize::MAX` when nothing was left to claim).
pub fn greedy_match(truth: &[Point], found: &[Point]) -> Vec<usize> {
    let mut claimed = vec![false; truth.len()];
    found
        .iter()
        .map(|f| {
            let best = truth
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed[*i])
                .min_by_key(|(_, t)| t.chebyshev(*f));
            match best {
                Some((i, t)) => {
                    claimed[i] = true;
                    t.chebyshev(*f)
                }
                None => usize::MAX,
            }
        })
        .collect()
}

pub fn sorted(points: &[Point]) -> Vec<Point> {
    let mut v = points.to_vec();
    v.sort();
    v
}
