//! Seeded synthetic scenes for self-tests and benchmarks.

use rand::Rng;

use crate::density::{DensityMap, HeadList, Point};
use crate::error::{Error, Result};

/// Samples `count` heads with pairwise Chebyshev distance `>= min_sep` and at
/// least `margin` pixels from every edge, by rejection.
pub fn separated_heads<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    count: usize,
    min_sep: usize,
    margin: usize,
) -> Result<HeadList> {
    if 2 * margin >= height || 2 * margin >= width {
        return Err(Error::invalid(format!("margin {margin} leaves no room in {height}x{width}")));
    }
    let mut points: Vec<Point> = Vec::with_capacity(count);
    let budget = 1000 * count.max(1);
    let mut attempts = 0;
    while points.len() < count {
        attempts += 1;
        if attempts > budget {
            return Err(Error::invalid(format!(
                "could not place {count} heads with separation {min_sep} in {height}x{width}; placed {}",
                points.len()
            )));
        }
        let p = Point::new(
            rng.gen_range(margin..width - margin),
            rng.gen_range(margin..height - margin),
        );
        if points.iter().all(|q| q.chebyshev(p) >= min_sep) {
            points.push(p);
        }
    }
    HeadList::new(height, width, points)
}

/// Uniformly placed heads; overlaps and duplicates allowed.
pub fn uniform_heads<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    count: usize,
) -> Result<HeadList> {
    let points = (0..count)
        .map(|_| Point::new(rng.gen_range(0..width), rng.gen_range(0..height)))
        .collect();
    HeadList::new(height, width, points)
}

/// Map with i.i.d. values uniform in `[lo, hi)`.
pub fn uniform_map<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    lo: f64,
    hi: f64,
) -> Result<DensityMap> {
    let values = (0..height * width).map(|_| rng.gen_range(lo..hi)).collect();
    DensityMap::from_vec(height, width, values)
}

/// Adds i.i.d. noise uniform in `[-amplitude, amplitude]` to every pixel.
pub fn add_noise<R: Rng + ?Sized>(rng: &mut R, map: &DensityMap, amplitude: f64) -> DensityMap {
    let values = map
        .values()
        .iter()
        .map(|v| v + rng.gen_range(-amplitude..=amplitude))
        .collect();
    DensityMap::from_vec(map.height(), map.width(), values).expect("noise keeps values finite")
}
