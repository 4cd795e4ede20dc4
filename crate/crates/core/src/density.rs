//! Gaussian windows, head lists and density-map stamping.
//!
//! A window `W` of odd side `k` holds `w(u, v) = exp(-D²(u, v) / 2σ²)` where
//! `D` is the distance from cell `(u, v)` to the window center. Cells are
//! addressed 0-indexed here, so the center sits at `(k - 1) / 2` in both
//! axes; the printed 1-indexed form `(u - (k + 1) / 2)` is the same offset.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer pixel position: column `x`, row `y`, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub const fn new(x: usize, y: usize) -> Self {
        Point { x, y }
    }

    /// Chebyshev (chessboard) distance.
    pub fn chebyshev(self, other: Point) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Discrete `k × k` Gaussian window, optionally scaled to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWindow {
    k: usize,
    sigma: f64,
    values: Vec<f64>,
    normalized: bool,
}

impl GaussianWindow {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Distance from the center cell to the window edge, `(k - 1) / 2`.
    pub fn half(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Row-major `k × k` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at window row `row`, column `col` (0-indexed).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.k + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.k..(row + 1) * self.k]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_map(&self) -> DensityMap {
        DensityMap {
            height: self.k,
            width: self.k,
            values: self.values.clone(),
        }
    }
}

/// Builds `W_{k,σ}`. With `normalized` the entries are divided by their sum;
/// otherwise the center value is exactly 1.
pub fn make_window(k: usize, sigma: f64, normalized: bool) -> Result<GaussianWindow> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!("window side must be odd and positive, got {k}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
    }
    let half = ((k - 1) / 2) as i64;
    let two_sigma_sq = 2.0 * sigma * sigma;
    let mut values = Vec::with_capacity(k * k);
    for row in 0..k as i64 {
        for col in 0..k as i64 {
            let du = row - half;
            let dv = col - half;
            let dist_sq = (du * du + dv * dv) as f64;
            values.push((-dist_sq / two_sigma_sq).exp());
        }
    }
    if normalized {
        let total: f64 = values.iter().sum();
        for v in &mut values {
            *v /= total;
        }
    }
    Ok(GaussianWindow {
        k,
        sigma,
        values,
        normalized,
    })
}

/// Ordered head annotations for one `height × width` image. Duplicates are
/// allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadList {
    height: usize,
    width: usize,
    points: Vec<Point>,
}

impl HeadList {
    pub fn new(height: usize, width: usize, points: Vec<Point>) -> Result<Self> {
        check_shape(height, width)?;
        if let Some(p) = points.iter().find(|p| p.x >= width || p.y >= height) {
            return Err(Error::invalid(format!(
                "head {p} outside {height}x{width} image"
            )));
        }
        Ok(HeadList {
            height,
            width,
            points,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, Vec::new())
    }

    /// Accepts sub-pixel annotations, rounding each coordinate half-up.
    pub fn from_fractional(height: usize, width: usize, coords: &[(f64, f64)]) -> Result<Self> {
        let points = coords
            .iter()
            .map(|&(x, y)| Ok(Point::new(round_half_up(x)?, round_half_up(y)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, points)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point) -> Result<()> {
        if p.x >= self.width || p.y >= self.height {
            return Err(Error::invalid(format!(
                "head {p} outside {}x{} image",
                self.height, self.width
            )));
        }
        self.points.push(p);
        Ok(())
    }
}

pub(crate) fn round_half_up(v: f64) -> Result<usize> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite coordinate {v}")));
    }
    let r = (v + 0.5).floor();
    if r < 0.0 || r > usize::MAX as f64 {
        return Err(Error::invalid(format!("coordinate {v} out of range")));
    }
    Ok(r as usize)
}

fn check_shape(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("raster shape must be positive, got {height}x{width}")));
    }
    if height.checked_mul(width).is_none() {
        return Err(Error::invalid(format!("raster shape {height}x{width} overflows")));
    }
    Ok(())
}

/// Real-valued `height × width` raster, row-major. Values are always finite.
///
/// The same type carries ground-truth and predicted density maps, pseudo
/// labels, and any other real grid the metrics consume (images, feature
/// channels, discriminator score maps).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_shape(height, width)?;
        Ok(DensityMap {
            height,
            width,
            values: vec![0.0; height * width],
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        if !value.is_finite() {
            return Err(Error::invalid(format!("non-finite fill value {value}")));
        }
        m.values.fill(value);
        Ok(m)
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(DensityMap {
            height,
            width,
            values,
        })
    }

    /// Copies a row-major 32-bit buffer, e.g. a host-language array.
    pub fn from_f32(height: usize, width: usize, data: &[f32]) -> Result<Self> {
        Self::from_vec(height, width, data.iter().map(|&v| v as f64).collect())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &DensityMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("non-finite value {value}")));
        }
        self.values[y * self.width + x] = value;
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies `f` elementwise; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<DensityMap> {
        Self::from_vec(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// What happens to window mass that falls outside the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderPolicy {
    /// Out-of-frame mass is dropped.
    #[default]
    Truncate,
    /// The clipped window is rescaled so each head keeps the full window mass.
    Renormalize,
}

/// Sums the window centered at every head, clipped to the raster. Heads are
/// accumulated in list order.
pub fn generate_density_map(
    heads: &HeadList,
    window: &GaussianWindow,
    policy: BorderPolicy,
) -> DensityMap {
    let (height, width) = (heads.height(), heads.width());
    let mut map = DensityMap {
        height,
        width,
        values: vec![0.0; height * width],
    };
    let total = window.sum();
    for &head in heads.points() {
        let clip = Clip::new(head, window.half(), height, width);
        let scale = match policy {
            BorderPolicy::Renormalize if !clip.is_full(window.k()) => {
                let mut inside = 0.0;
                for row in clip.row0..clip.row1 {
                    inside += window.row(row)[clip.col0..clip.col1].iter().sum::<f64>();
                }
                Some(total / inside)
            }
            _ => None,
        };
        for row in clip.row0..clip.row1 {
            let y = head.y + row - window.half();
            let x0 = head.x + clip.col0 - window.half();
            let dst = &mut map.values[y * width + x0..y * width + x0 + (clip.col1 - clip.col0)];
            let src = &window.row(row)[clip.col0..clip.col1];
            match scale {
                Some(s) => dst.iter_mut().zip(src).for_each(|(d, w)| *d += w * s),
                None => dst.iter_mut().zip(src).for_each(|(d, w)| *d += w),
            }
        }
    }
    map
}

/// Window cells `[row0, row1) × [col0, col1)` that land inside the raster when
/// the window is centered at a point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Clip {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Clip {
    pub(crate) fn new(center: Point, half: usize, height: usize, width: usize) -> Self {
        let k = 2 * half + 1;
        Clip {
            row0: half.saturating_sub(center.y),
            row1: k.min(height + half - center.y),
            col0: half.saturating_sub(center.x),
            col1: k.min(width + half - center.x),
        }
    }

    pub(crate) fn is_full(&self, k: usize) -> bool {
        self.row0 == 0 && self.col0 == 0 && self.row1 == k && self.col1 == k
    }
}

/// The `k × k` neighborhood of `center`, zero-padded outside the raster.
pub fn crop_window(map: &DensityMap, center: Point, k: usize) -> Result<DensityMap> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!("crop side must be odd and positive, got {k}")));
    }
    if !map.contains(center) {
        return Err(Error::invalid(format!(
            "crop center {center} outside {}x{} map",
            map.height(),
            map.width()
        )));
    }
    let half = (k - 1) / 2;
    let clip = Clip::new(center, half, map.height(), map.width());
    let mut out = vec![0.0; k * k];
    for row in clip.row0..clip.row1 {
        let y = center.y + row - half;
        let x0 = center.x + clip.col0 - half;
        let n = clip.col1 - clip.col0;
        out[row * k + clip.col0..row * k + clip.col1].copy_from_slice(&map.row(y)[x0..x0 + n]);
    }
    DensityMap::from_vec(k, k, out)
}
