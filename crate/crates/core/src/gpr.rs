//! Gaussian-prior reconstruction of head positions from a coarse density map.
//!
//! Every pixel `p` gets a score `P(p) = 1 / (1 + ‖crop(p) − W‖₁)` where
//! `crop(p)` is the zero-padded `k × k` neighborhood of `p`. The extractor
//! then repeats, `N̂` times: take the argmax of `P`, subtract `W` from the
//! working map around it, and rescore every pixel whose crop overlaps the
//! change. The extracted points are stamped back into a clean pseudo label.
//!
//! Two modes share the exact per-pixel scoring routine, so they produce
//! bitwise-identical scores and head sequences:
//!
//! * [`Mode::Naive`] rescores the whole raster and scans it for the maximum
//!   on every step.
//! * [`Mode::Incremental`] rescores only the `(2k − 1)²` affected block and
//!   keeps per-block maxima (blocks of `k × k` pixels) in a tournament tree,
//!   so a step costs `O(k⁴ + log(HW / k²))`.
//!
//! Ties in the argmax go to the smallest row, then the smallest column.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{generate_density_map, BorderPolicy, Clip, DensityMap, GaussianWindow, HeadList, Point};
use crate::error::{Error, Result};

/// Per-pixel similarity to the window, every value in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_density_map(&self) -> DensityMap {
        DensityMap::from_vec(self.height, self.width, self.values.clone())
            .expect("probabilities are finite")
    }
}

/// L1 distance between the zero-padded crop at `center` and the window.
///
/// Cells are accumulated in window row-major order on both the interior and
/// the border path, so the result is identical to cropping first and summing.
fn crop_l1(map: &DensityMap, window: &GaussianWindow, center: Point) -> f64 {
    let k = window.k();
    let half = window.half();
    let clip = Clip::new(center, half, map.height(), map.width());
    let mut acc = 0.0;
    if clip.is_full(k) {
        for row in 0..k {
            let y = center.y + row - half;
            let src = &map.row(y)[center.x - half..center.x + half + 1];
            for (m, w) in src.iter().zip(window.row(row)) {
                acc += (m - w).abs();
            }
        }
        return acc;
    }
    for row in 0..k {
        let w_row = window.row(row);
        if row < clip.row0 || row >= clip.row1 {
            for w in w_row {
                acc += (0.0 - w).abs();
            }
            continue;
        }
        let map_row = map.row(center.y + row - half);
        for (col, w) in w_row.iter().enumerate() {
            if col < clip.col0 || col >= clip.col1 {
                acc += (0.0 - w).abs();
            } else {
                acc += (map_row[center.x + col - half] - w).abs();
            }
        }
    }
    acc
}

#[inline]
fn score(map: &DensityMap, window: &GaussianWindow, center: Point) -> f64 {
    1.0 / (1.0 + crop_l1(map, window, center))
}

fn check_window_fits(coarse: &DensityMap, window: &GaussianWindow) -> Result<()> {
    if window.k() > coarse.height().min(coarse.width()) {
        return Err(Error::invalid(format!(
            "window side {} exceeds {}x{} map",
            window.k(),
            coarse.height(),
            coarse.width()
        )));
    }
    Ok(())
}

/// Scores every pixel of `coarse` against `window`. Rows are computed in
/// parallel on the current rayon pool; the output does not depend on the
/// number of threads.
pub fn probability_map(coarse: &DensityMap, window: &GaussianWindow) -> Result<ProbabilityMap> {
    check_window_fits(coarse, window)?;
    let (height, width) = (coarse.height(), coarse.width());
    let mut values = vec![0.0; height * width];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, v) in row.iter_mut().enumerate() {
                *v = score(coarse, window, Point::new(x, y));
            }
        });
    Ok(ProbabilityMap {
        height,
        width,
        values,
    })
}

/// Position of the maximum probability; ties resolve to the first pixel in
/// row-major order.
pub fn select_candidate(prob: &ProbabilityMap) -> Point {
    let mut best = 0;
    for (i, &v) in prob.values.iter().enumerate() {
        if v > prob.values[best] {
            best = i;
        }
    }
    Point::new(best % prob.width, best / prob.width)
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        (self.x0..self.x1).contains(&p.x) && (self.y0..self.y1).contains(&p.y)
    }

    /// Pixels whose `k × k` crop can see a change made to the `k × k` window
    /// at `center`: the `(2k − 1)²` block around it, clipped to the raster.
    pub fn affected_by(center: Point, k: usize, height: usize, width: usize) -> Region {
        let reach = k - 1;
        Region {
            x0: center.x.saturating_sub(reach),
            y0: center.y.saturating_sub(reach),
            x1: (center.x + reach + 1).min(width),
            y1: (center.y + reach + 1).min(height),
        }
    }
}

/// Rescores the pixels affected by a modification of `coarse` inside the
/// window centered at `center` and returns the region that was recomputed.
/// Pixels outside the region are left untouched.
///
/// # Panics
///
/// If `prob` and `coarse` differ in shape.
pub fn refresh_region(
    prob: &mut ProbabilityMap,
    coarse: &DensityMap,
    window: &GaussianWindow,
    center: Point,
) -> Region {
    assert!(
        prob.height == coarse.height() && prob.width == coarse.width(),
        "probability map and coarse map differ in shape"
    );
    let region = Region::affected_by(center, window.k(), prob.height, prob.width);
    for y in region.y0..region.y1 {
        for x in region.x0..region.x1 {
            prob.values[y * prob.width + x] = score(coarse, window, Point::new(x, y));
        }
    }
    region
}

/// Subtracts the window centered at `center` from `map`, discarding the
/// part of the window that falls outside the raster. No clamping.
fn subtract_window(map: &mut DensityMap, window: &GaussianWindow, center: Point) {
    let half = window.half();
    let width = map.width();
    let clip = Clip::new(center, half, map.height(), width);
    let values = map.values_mut();
    for row in clip.row0..clip.row1 {
        let y = center.y + row - half;
        let x0 = center.x + clip.col0 - half;
        let n = clip.col1 - clip.col0;
        let dst = &mut values[y * width + x0..y * width + x0 + n];
        for (d, w) in dst.iter_mut().zip(&window.row(row)[clip.col0..clip.col1]) {
            *d -= w;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Best {
    value: f64,
    index: usize,
}

impl Best {
    const NONE: Best = Best {
        value: f64::NEG_INFINITY,
        index: usize::MAX,
    };

    #[inline]
    fn pick(a: Best, b: Best) -> Best {
        if a.value > b.value || (a.value == b.value && a.index <= b.index) {
            a
        } else {
            b
        }
    }
}

/// Per-block maxima of a probability map arranged in a tournament tree.
/// The root is the global maximum with row-major tie-breaking.
#[derive(Debug, Clone)]
struct BlockMaxIndex {
    side: usize,
    blocks_x: usize,
    blocks_y: usize,
    leaves: usize,
    tree: Vec<Best>,
}

impl BlockMaxIndex {
    fn build(prob: &ProbabilityMap, side: usize) -> Self {
        let blocks_x = prob.width.div_ceil(side);
        let blocks_y = prob.height.div_ceil(side);
        let leaves = (blocks_x * blocks_y).next_power_of_two();
        let mut index = BlockMaxIndex {
            side,
            blocks_x,
            blocks_y,
            leaves,
            tree: vec![Best::NONE; 2 * leaves],
        };
        for by in 0..blocks_y {
            for bx in 0..blocks_x {
                let b = by * blocks_x + bx;
                index.tree[leaves + b] = index.scan_block(prob, bx, by);
            }
        }
        for node in (1..leaves).rev() {
            index.tree[node] = Best::pick(index.tree[2 * node], index.tree[2 * node + 1]);
        }
        index
    }

    fn scan_block(&self, prob: &ProbabilityMap, bx: usize, by: usize) -> Best {
        let x0 = bx * self.side;
        let y0 = by * self.side;
        let x1 = (x0 + self.side).min(prob.width);
        let y1 = (y0 + self.side).min(prob.height);
        let mut best = Best::NONE;
        for y in y0..y1 {
            let base = y * prob.width;
            for (i, &v) in prob.values[base + x0..base + x1].iter().enumerate() {
                if v > best.value {
                    best = Best {
                        value: v,
                        index: base + x0 + i,
                    };
                }
            }
        }
        best
    }

    fn update(&mut self, prob: &ProbabilityMap, region: Region) {
        let bx0 = region.x0 / self.side;
        let bx1 = (region.x1 - 1) / self.side;
        let by0 = region.y0 / self.side;
        let by1 = (region.y1 - 1) / self.side;
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                let mut node = self.leaves + by * self.blocks_x + bx;
                self.tree[node] = self.scan_block(prob, bx, by);
                while node > 1 {
                    node /= 2;
                    self.tree[node] = Best::pick(self.tree[2 * node], self.tree[2 * node + 1]);
                }
            }
        }
        debug_assert!(by1 < self.blocks_y);
    }

    fn best(&self) -> Best {
        self.tree[1]
    }
}

/// How the probability map is maintained between extraction steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Incremental,
    Naive,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" => Ok(Mode::Incremental),
            "naive" => Ok(Mode::Naive),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// One extraction step: the 0-based step number, the selected pixel and its
/// probability at the moment it was selected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub j: usize,
    pub x: usize,
    pub y: usize,
    pub p: f64,
}

impl TraceEntry {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Extracted points in extraction order. A pixel may appear more than once.
    pub heads: HeadList,
    /// The extracted points stamped with the same window, truncated at borders.
    pub pseudo_map: DensityMap,
    pub count: usize,
    pub trace: Vec<TraceEntry>,
    /// Working map after all subtractions; may hold negative values.
    pub residual: DensityMap,
}

/// Step-by-step greedy extraction over a private working copy of the coarse
/// map.
#[derive(Debug, Clone)]
pub struct GreedyExtractor<'w> {
    window: &'w GaussianWindow,
    working: DensityMap,
    prob: ProbabilityMap,
    index: Option<BlockMaxIndex>,
    heads: Vec<Point>,
    trace: Vec<TraceEntry>,
}

impl<'w> GreedyExtractor<'w> {
    /// Copies `coarse` and computes the initial probability map.
    pub fn new(coarse: &DensityMap, window: &'w GaussianWindow, mode: Mode) -> Result<Self> {
        let prob = probability_map(coarse, window)?;
        let index = match mode {
            Mode::Incremental => Some(BlockMaxIndex::build(&prob, window.k())),
            Mode::Naive => None,
        };
        Ok(GreedyExtractor {
            window,
            working: coarse.clone(),
            prob,
            index,
            heads: Vec::new(),
            trace: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        if self.index.is_some() {
            Mode::Incremental
        } else {
            Mode::Naive
        }
    }

    pub fn probability(&self) -> &ProbabilityMap {
        &self.prob
    }

    pub fn working(&self) -> &DensityMap {
        &self.working
    }

    pub fn extracted(&self) -> &[Point] {
        &self.heads
    }

    /// Selects the current argmax, subtracts the window there and brings the
    /// probability map up to date.
    pub fn step(&mut self) -> TraceEntry {
        let (point, p) = match &self.index {
            Some(index) => {
                let best = index.best();
                (Point::new(best.index % self.prob.width, best.index / self.prob.width), best.value)
            }
            None => {
                let point = select_candidate(&self.prob);
                (point, self.prob.get(point.x, point.y))
            }
        };
        subtract_window(&mut self.working, self.window, point);
        match &mut self.index {
            Some(index) => {
                let region = refresh_region(&mut self.prob, &self.working, self.window, point);
                index.update(&self.prob, region);
            }
            None => {
                self.prob = probability_map(&self.working, self.window)
                    .expect("window fit was checked at construction");
            }
        }
        let entry = TraceEntry {
            j: self.heads.len(),
            x: point.x,
            y: point.y,
            p,
        };
        self.heads.push(point);
        self.trace.push(entry);
        entry
    }

    pub fn finish(self) -> ReconstructionResult {
        let heads = HeadList::new(self.working.height(), self.working.width(), self.heads)
            .expect("extracted points lie inside the raster");
        let pseudo_map = generate_density_map(&heads, self.window, BorderPolicy::Truncate);
        ReconstructionResult {
            count: heads.len(),
            heads,
            pseudo_map,
            trace: self.trace,
            residual: self.working,
        }
    }
}

/// Relative slack applied before truncating the map sum, so that a map built
/// from `n` unit-mass kernels counts as `n` despite summation round-off.
pub const COUNT_SLACK: f64 = 1e-6;

/// Head count implied by a map sum: truncation toward zero, negative sums
/// map to zero.
pub fn count_from_sum(sum: f64) -> usize {
    if !(sum > 0.0) {
        return 0;
    }
    (sum + COUNT_SLACK * sum.max(1.0)).floor() as usize
}

/// Runs the full extraction. `count_override` replaces the implied count
/// `int(sum(coarse))`. The input map is not modified.
pub fn reconstruct(
    coarse: &DensityMap,
    window: &GaussianWindow,
    count_override: Option<usize>,
    mode: Mode,
) -> Result<ReconstructionResult> {
    let pixels = coarse.len();
    let count = match count_override {
        Some(m) if m > pixels => {
            return Err(Error::invalid(format!(
                "count override {m} exceeds the {pixels} pixels of the map"
            )))
        }
        Some(m) => m,
        None => {
            let n = count_from_sum(coarse.sum());
            if n > pixels {
                return Err(Error::invalid(format!(
                    "map sum implies {n} heads, more than its {pixels} pixels"
                )));
            }
            n
        }
    };
    let mut extractor = GreedyExtractor::new(coarse, window, mode)?;
    for _ in 0..count {
        extractor.step();
    }
    Ok(extractor.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::make_window;

    fn window() -> GaussianWindow {
        make_window(15, 4.0, true).unwrap()
    }

    fn prob_from(height: usize, width: usize, values: Vec<f64>) -> ProbabilityMap {
        ProbabilityMap {
            height,
            width,
            values,
        }
    }

    #[test]
    fn zero_map_scores_one_half() {
        let w = window();
        let p = probability_map(&DensityMap::zeros(20, 24).unwrap(), &w).unwrap();
        for &v in p.values() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_kernel_scores_one() {
        let w = window();
        let heads = HeadList::new(40, 40, vec![Point::new(19, 22)]).unwrap();
        let m = generate_density_map(&heads, &w, BorderPolicy::Truncate);
        let p = probability_map(&m, &w).unwrap();
        assert_eq!(p.get(19, 22), 1.0);
        assert_eq!(select_candidate(&p), Point::new(19, 22));
        assert!(p.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert_eq!(p.values().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn window_larger_than_map_is_rejected() {
        let w = window();
        assert!(matches!(
            probability_map(&DensityMap::zeros(14, 40).unwrap(), &w),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn candidate_unique_max() {
        let mut values = vec![0.1; 10 * 10];
        values[7 * 10 + 3] = 0.9;
        assert_eq!(select_candidate(&prob_from(10, 10, values)), Point::new(3, 7));
    }

    #[test]
    fn candidate_constant_map_picks_origin() {
        assert_eq!(select_candidate(&prob_from(6, 9, vec![0.5; 54])), Point::new(0, 0));
    }

    #[test]
    fn candidate_tie_prefers_smaller_row() {
        let mut values = vec![0.2; 8 * 8];
        values[5 * 8 + 2] = 0.7; // x=2, y=5
        values[2 * 8 + 5] = 0.7; // x=5, y=2
        assert_eq!(select_candidate(&prob_from(8, 8, values)), Point::new(5, 2));
    }

    #[test]
    fn affected_region_sizes() {
        let r = Region::affected_by(Point::new(40, 40), 15, 100, 100);
        assert_eq!((r.width(), r.height()), (29, 29));
        assert_eq!((r.x0, r.y0), (26, 26));
        let r = Region::affected_by(Point::new(0, 0), 15, 100, 100);
        assert_eq!(r, Region { x0: 0, y0: 0, x1: 15, y1: 15 });
        let r = Region::affected_by(Point::new(99, 3), 15, 100, 100);
        assert_eq!(r, Region { x0: 85, y0: 0, x1: 100, y1: 18 });
    }

    #[test]
    fn refresh_leaves_outside_untouched() {
        let w = window();
        let mut m = DensityMap::zeros(60, 60).unwrap();
        let mut p = probability_map(&m, &w).unwrap();
        // Poison P so untouched pixels are recognizable.
        p.values.fill(2.0);
        subtract_window(&mut m, &w, Point::new(30, 30));
        let region = refresh_region(&mut p, &m, &w, Point::new(30, 30));
        assert_eq!(region.area(), 29 * 29);
        for y in 0..60 {
            for x in 0..60 {
                let inside = region.contains(Point::new(x, y));
                assert_eq!(p.get(x, y) == 2.0, !inside, "({x},{y})");
            }
        }
    }

    #[test]
    fn block_index_tracks_global_argmax() {
        let w = make_window(5, 1.0, true).unwrap();
        let values: Vec<f64> = (0..23 * 17).map(|i| ((i * 7919) % 101) as f64 / 200.0).collect();
        let coarse = DensityMap::from_vec(23, 17, values).unwrap();
        let mut prob = probability_map(&coarse, &w).unwrap();
        let mut index = BlockMaxIndex::build(&prob, w.k());
        let mut working = coarse.clone();
        for _ in 0..30 {
            let best = index.best();
            let naive = select_candidate(&prob);
            assert_eq!(best.index, naive.y * prob.width + naive.x);
            subtract_window(&mut working, &w, naive);
            let region = refresh_region(&mut prob, &working, &w, naive);
            index.update(&prob, region);
        }
    }

    #[test]
    fn count_truncates() {
        assert_eq!(count_from_sum(3.0), 3);
        assert_eq!(count_from_sum(3.7), 3);
        assert_eq!(count_from_sum(3.999), 3);
        assert_eq!(count_from_sum(0.999), 0);
        assert_eq!(count_from_sum(-5.0), 0);
        assert_eq!(count_from_sum(2.999_999_999_9), 3);
    }

    #[test]
    fn zero_map_reconstructs_nothing() {
        let w = window();
        let zeros = DensityMap::zeros(32, 32).unwrap();
        let r = reconstruct(&zeros, &w, None, Mode::Incremental).unwrap();
        assert_eq!(r.count, 0);
        assert!(r.heads.is_empty());
        assert!(r.pseudo_map.values().iter().all(|&v| v == 0.0));
        assert!(r.trace.is_empty());
    }

    #[test]
    fn count_follows_sum() {
        let w = window();
        let mut m = DensityMap::zeros(32, 32).unwrap();
        m.set(10, 10, 3.7).unwrap();
        let r = reconstruct(&m, &w, None, Mode::Incremental).unwrap();
        assert_eq!(r.count, 3);
        assert_eq!(r.heads.len(), 3);
    }

    #[test]
    fn override_on_zero_map_uses_tie_break() {
        let w = window();
        let zeros = DensityMap::zeros(32, 32).unwrap();
        for mode in [Mode::Incremental, Mode::Naive] {
            let r = reconstruct(&zeros, &w, Some(4), mode).unwrap();
            assert_eq!(r.count, 4);
            assert_eq!(r.heads.points()[0], Point::new(0, 0));
        }
    }

    #[test]
    fn override_larger_than_pixels_is_rejected() {
        let w = window();
        let zeros = DensityMap::zeros(16, 16).unwrap();
        assert!(reconstruct(&zeros, &w, Some(257), Mode::Incremental).is_err());
        assert!(reconstruct(&zeros, &w, Some(256), Mode::Incremental).is_ok());
    }

    #[test]
    fn two_separated_heads_round_trip() {
        let w = window();
        let truth = HeadList::new(64, 64, vec![Point::new(20, 20), Point::new(40, 40)]).unwrap();
        let coarse = generate_density_map(&truth, &w, BorderPolicy::Truncate);
        let before = coarse.clone();
        for mode in [Mode::Incremental, Mode::Naive] {
            let r = reconstruct(&coarse, &w, None, mode).unwrap();
            let mut got = r.heads.points().to_vec();
            got.sort();
            assert_eq!(got, vec![Point::new(20, 20), Point::new(40, 40)]);
            assert!(r.residual.values().iter().all(|v| v.abs() < 1e-12));
            assert!(r.trace.iter().all(|t| t.p == 1.0));
            assert_eq!(r.pseudo_map, generate_density_map(&r.heads, &w, BorderPolicy::Truncate));
        }
        assert_eq!(coarse, before);
    }

    #[test]
    fn overshoot_leaves_negative_residual() {
        let w = window();
        let mut m = DensityMap::zeros(30, 30).unwrap();
        m.set(15, 15, 1.0).unwrap();
        let r = reconstruct(&m, &w, None, Mode::Incremental).unwrap();
        assert_eq!(r.count, 1);
        assert!(r.residual.values().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("naive".parse::<Mode>().unwrap(), Mode::Naive);
        assert_eq!("incremental".parse::<Mode>().unwrap(), Mode::Incremental);
        assert!("fast".parse::<Mode>().is_err());
    }
}
