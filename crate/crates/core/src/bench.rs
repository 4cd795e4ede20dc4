//! Timing of the two extraction modes on synthetic maps.
//!
//! Incremental per-head cost is measured after the initial probability map is
//! built, so it reflects only the pick-subtract-refresh loop. Naive mode is
//! timed on a short prefix of the same extraction, since each of its steps
//! rescans the whole raster.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{generate_density_map, make_window, BorderPolicy};
use crate::error::{Error, Result};
use crate::gpr::{GreedyExtractor, Mode};
use crate::synth::{add_noise, uniform_heads};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// `(height, width)` rasters to time.
    pub sizes: Vec<(usize, usize)>,
    /// Heads placed and extracted per raster in incremental mode.
    pub heads: usize,
    /// Leading extraction steps timed in naive mode.
    pub naive_heads: usize,
    pub k: usize,
    pub sigma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![(540, 960), (1080, 1920)],
            heads: 1000,
            naive_heads: 2,
            k: crate::DEFAULT_K,
            sigma: crate::DEFAULT_SIGMA,
            noise: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTiming {
    pub heads: usize,
    pub init_ms: f64,
    pub extract_ms: f64,
    pub total_ms: f64,
    pub per_head_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub height: usize,
    pub width: usize,
    pub incremental: ModeTiming,
    pub naive: ModeTiming,
    /// Whether naive extraction reproduced the incremental head sequence over
    /// the steps it ran.
    pub sequences_equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub k: usize,
    pub sigma: f64,
    pub sizes: Vec<SizeReport>,
    /// Incremental per-head time of the largest raster over the smallest.
    pub per_head_ratio: f64,
    pub all_sequences_equal: bool,
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn time_mode(
    coarse: &crate::DensityMap,
    window: &crate::GaussianWindow,
    mode: Mode,
    steps: usize,
) -> Result<(ModeTiming, Vec<crate::Point>)> {
    let start = Instant::now();
    let mut ex = GreedyExtractor::new(coarse, window, mode)?;
    let init_ms = ms(start);
    let loop_start = Instant::now();
    for _ in 0..steps {
        ex.step();
    }
    let extract_ms = ms(loop_start);
    let timing = ModeTiming {
        heads: steps,
        init_ms,
        extract_ms,
        total_ms: init_ms + extract_ms,
        per_head_us: if steps == 0 { 0.0 } else { extract_ms * 1e3 / steps as f64 },
    };
    Ok((timing, ex.extracted().to_vec()))
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.sizes.is_empty() {
        return Err(Error::invalid("bench needs at least one size"));
    }
    let window = make_window(config.k, config.sigma, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sizes = Vec::with_capacity(config.sizes.len());
    for &(height, width) in &config.sizes {
        if config.heads > height * width {
            return Err(Error::invalid(format!("{} heads do not fit {height}x{width}", config.heads)));
        }
        let heads = uniform_heads(&mut rng, height, width, config.heads)?;
        let clean = generate_density_map(&heads, &window, BorderPolicy::Truncate);
        let coarse = add_noise(&mut rng, &clean, config.noise);
        let (incremental, inc_seq) = time_mode(&coarse, &window, Mode::Incremental, config.heads)?;
        let naive_steps = config.naive_heads.min(config.heads);
        let (naive, naive_seq) = time_mode(&coarse, &window, Mode::Naive, naive_steps)?;
        sizes.push(SizeReport {
            height,
            width,
            incremental,
            naive,
            sequences_equal: inc_seq[..naive_steps] == naive_seq[..],
        });
    }
    let by_area = |s: &&SizeReport| s.height * s.width;
    let smallest = sizes.iter().min_by_key(by_area).unwrap();
    let largest = sizes.iter().max_by_key(by_area).unwrap();
    let per_head_ratio = if smallest.incremental.per_head_us > 0.0 {
        largest.incremental.per_head_us / smallest.incremental.per_head_us
    } else {
        1.0
    };
    Ok(BenchReport {
        seed: config.seed,
        k: config.k,
        sigma: config.sigma,
        all_sequences_equal: sizes.iter().all(|s| s.sequences_equal),
        per_head_ratio,
        sizes,
    })
}
