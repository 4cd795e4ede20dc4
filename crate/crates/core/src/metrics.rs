//! Counting errors, density-map quality and forward loss values.
//!
//! MAE is the mean absolute count error; "MSE" follows crowd-counting
//! convention and is the *root* of the mean squared count error. PSNR and
//! SSIM follow the usual definitions (Gaussian 11 × 11, σ = 1.5 SSIM window,
//! `c1 = (0.01 L)²`, `c2 = (0.03 L)²`, valid-region mean).
//!
//! All map-valued losses reduce by mean so they do not depend on resolution.

use serde::{Serialize, Serializer};

use crate::density::DensityMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountPair {
    pub truth: f64,
    pub prediction: f64,
}

impl CountPair {
    pub const fn new(truth: f64, prediction: f64) -> Self {
        CountPair { truth, prediction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountingErrors {
    pub mae: f64,
    pub mse: f64,
}

pub fn counting_errors(pairs: &[CountPair]) -> Result<CountingErrors> {
    if pairs.is_empty() {
        return Err(Error::invalid("counting errors need at least one pair"));
    }
    let n = pairs.len() as f64;
    let (abs, sq) = pairs.iter().fold((0.0, 0.0), |(abs, sq), p| {
        let e = (p.truth - p.prediction).abs();
        (abs + e, sq + e * e)
    });
    Ok(CountingErrors {
        mae: abs / n,
        mse: (sq / n).sqrt(),
    })
}

fn check_same_shape(a: &DensityMap, b: &DensityMap) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared elementwise difference.
pub fn pixel_mse(a: &DensityMap, b: &DensityMap) -> Result<f64> {
    check_same_shape(a, b)?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Pixel-wise consistency between a recalled image and its source; the same
/// quantity as [`pixel_mse`].
pub fn reconstruction_loss(a: &DensityMap, b: &DensityMap) -> Result<f64> {
    pixel_mse(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityParams {
    pub dynamic_range: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        QualityParams {
            dynamic_range: 255.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl QualityParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.dynamic_range, self.ssim_sigma, self.k1, self.k2];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("quality parameters must be positive: {self:?}")));
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::invalid(format!(
                "ssim window must be odd and positive, got {}",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// How maps are brought to the metric's dynamic range before PSNR/SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormPolicy {
    /// Scale both maps by `255 / max(gt)`; maps stay unscaled when
    /// `max(gt) <= 0`. Applied per image.
    #[default]
    GtMax255,
    None,
}

fn normalize(pred: &DensityMap, gt: &DensityMap, policy: NormPolicy) -> (Vec<f64>, Vec<f64>) {
    let scale = match policy {
        NormPolicy::GtMax255 => {
            let max = gt.max();
            if max > 0.0 {
                255.0 / max
            } else {
                1.0
            }
        }
        NormPolicy::None => 1.0,
    };
    if scale == 1.0 {
        return (pred.values().to_vec(), gt.values().to_vec());
    }
    (
        pred.values().iter().map(|v| v * scale).collect(),
        gt.values().iter().map(|v| v * scale).collect(),
    )
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical maps.
pub fn psnr(
    pred: &DensityMap,
    gt: &DensityMap,
    params: &QualityParams,
    policy: NormPolicy,
) -> Result<f64> {
    check_same_shape(pred, gt)?;
    params.validate()?;
    let (p, g) = normalize(pred, gt, policy);
    let mse = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (params.dynamic_range * params.dynamic_range / mse).log10())
}

fn gaussian_taps(side: usize, sigma: f64) -> Vec<f64> {
    let half = (side / 2) as f64;
    let mut taps: Vec<f64> = (0..side)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable valid-region filtering of a row-major `height × width` buffer.
fn filter_valid(src: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let out_w = width - n + 1;
    let out_h = height - n + 1;
    let mut horizontal = vec![0.0; height * out_w];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..out_w {
            horizontal[y * out_w + x] = row[x..x + n].iter().zip(taps).map(|(a, t)| a * t).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += horizontal[(y + i) * out_w + x] * t;
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over every full Gaussian-weighted window.
pub fn ssim(
    pred: &DensityMap,
    gt: &DensityMap,
    params: &QualityParams,
    policy: NormPolicy,
) -> Result<f64> {
    check_same_shape(pred, gt)?;
    params.validate()?;
    let side = params.ssim_window;
    let (height, width) = (pred.height(), pred.width());
    if height.min(width) < side {
        return Err(Error::invalid(format!(
            "{height}x{width} map is smaller than the {side}x{side} ssim window"
        )));
    }
    let (x, y) = normalize(pred, gt, policy);
    let taps = gaussian_taps(side, params.ssim_sigma);
    let products = |f: fn(f64, f64) -> f64| -> Vec<f64> {
        x.iter().zip(&y).map(|(&a, &b)| f(a, b)).collect()
    };
    let mu_x = filter_valid(&x, height, width, &taps);
    let mu_y = filter_valid(&y, height, width, &taps);
    let xx = filter_valid(&products(|a, _| a * a), height, width, &taps);
    let yy = filter_valid(&products(|_, b| b * b), height, width, &taps);
    let xy = filter_valid(&products(|a, b| a * b), height, width, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = xx[i] - mx * mx;
        let var_y = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        total += num / den;
    }
    Ok(total / mu_x.len() as f64)
}

fn mean_sq_to(scores: &DensityMap, label: f64) -> f64 {
    scores.values().iter().map(|s| (s - label) * (s - label)).sum::<f64>() / scores.len() as f64
}

/// Least-squares discriminator loss against constant label maps:
/// `½·mean((a − label_a)²) + ½·mean((b − label_b)²)`.
pub fn lsgan_disc_loss(
    scores_a: &DensityMap,
    scores_b: &DensityMap,
    label_a: f64,
    label_b: f64,
) -> f64 {
    0.5 * mean_sq_to(scores_a, label_a) + 0.5 * mean_sq_to(scores_b, label_b)
}

/// Least-squares generator (inverse adversarial) loss:
/// `½·mean((scores − target)²)`.
pub fn lsgan_gen_loss(scores: &DensityMap, target_label: f64) -> f64 {
    0.5 * mean_sq_to(scores, target_label)
}

/// Number of input scales (0.5x and 1.0x) the translation discriminators see.
pub const TRANSLATION_SCALES: usize = 2;

/// Score maps for the two-scale translation adversarial losses.
#[derive(Debug, Clone, Copy)]
pub enum MultiScale<'a> {
    /// Discriminator side: per scale, scores on real inputs and on translated
    /// inputs with their labels.
    Discriminator {
        scales: &'a [(DensityMap, DensityMap)],
        label_real: f64,
        label_translated: f64,
    },
    /// Generator side: per scale, scores on translated inputs.
    Generator {
        scales: &'a [DensityMap],
        target_label: f64,
    },
}

/// `½ Σ_l {…}` over exactly two scales, the ½ outside the scale sum.
pub fn multiscale_loss(terms: &MultiScale<'_>) -> Result<f64> {
    let count = match terms {
        MultiScale::Discriminator { scales, .. } => scales.len(),
        MultiScale::Generator { scales, .. } => scales.len(),
    };
    if count != TRANSLATION_SCALES {
        return Err(Error::invalid(format!(
            "expected {TRANSLATION_SCALES} scales, got {count}"
        )));
    }
    let inner: f64 = match terms {
        MultiScale::Discriminator {
            scales,
            label_real,
            label_translated,
        } => scales
            .iter()
            .map(|(real, translated)| {
                mean_sq_to(real, *label_real) + mean_sq_to(translated, *label_translated)
            })
            .sum(),
        MultiScale::Generator {
            scales,
            target_label,
        } => scales.iter().map(|s| mean_sq_to(s, *target_label)).sum(),
    };
    Ok(0.5 * inner)
}

/// Perceptual consistency over pre-extracted feature layers: the mean over
/// layers of each layer's mean squared difference.
pub fn content_loss(features_a: &[DensityMap], features_b: &[DensityMap]) -> Result<f64> {
    if features_a.len() != features_b.len() {
        return Err(Error::invalid(format!(
            "feature lists differ in length: {} vs {}",
            features_a.len(),
            features_b.len()
        )));
    }
    if features_a.is_empty() {
        return Err(Error::invalid("content loss needs at least one feature layer"));
    }
    let mut total = 0.0;
    for (a, b) in features_a.iter().zip(features_b) {
        total += pixel_mse(a, b)?;
    }
    Ok(total / features_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    /// The weights used for training the feature segregation models.
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub task: f64,
    pub adv_content: f64,
    pub adv_to_source: f64,
    pub adv_to_target: f64,
    pub consistency: f64,
}

pub fn total_objective(parts: &LossParts, weights: &LossWeights) -> f64 {
    parts.task
        + weights.alpha * parts.adv_content
        + weights.beta * parts.adv_to_source
        + weights.gamma * parts.adv_to_target
        + parts.consistency
}

/// Count and quality figures for one predicted/ground-truth map pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEval {
    pub truth_count: f64,
    pub predicted_count: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate_pair(
    pred: &DensityMap,
    gt: &DensityMap,
    params: &QualityParams,
    policy: NormPolicy,
) -> Result<ImageEval> {
    Ok(ImageEval {
        truth_count: gt.sum(),
        predicted_count: pred.sum(),
        psnr: psnr(pred, gt, params, policy)?,
        ssim: ssim(pred, gt, params, policy)?,
    })
}

fn serialize_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// JSON evaluation report. `psnr` serializes as `"inf"` when infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    #[serde(serialize_with = "serialize_psnr")]
    pub psnr: f64,
    pub ssim: f64,
    /// Images whose infinite PSNR was left out of the average.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_inf_excluded: Option<usize>,
}

impl EvalReport {
    pub fn for_image(image: &ImageEval) -> Self {
        let err = (image.truth_count - image.predicted_count).abs();
        EvalReport {
            n: 1,
            mae: err,
            mse: err,
            psnr: image.psnr,
            ssim: image.ssim,
            psnr_inf_excluded: None,
        }
    }

    /// Counting errors over all images plus mean PSNR/SSIM. Infinite PSNR
    /// values are excluded from the mean; if every image is infinite the
    /// aggregate is infinite too.
    pub fn aggregate(images: &[ImageEval]) -> Result<Self> {
        let pairs: Vec<CountPair> = images
            .iter()
            .map(|i| CountPair::new(i.truth_count, i.predicted_count))
            .collect();
        let errors = counting_errors(&pairs)?;
        let finite: Vec<f64> = images.iter().map(|i| i.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Ok(EvalReport {
            n: images.len(),
            mae: errors.mae,
            mse: errors.mse,
            psnr,
            ssim: images.iter().map(|i| i.ssim).sum::<f64>() / images.len() as f64,
            psnr_inf_excluded: Some(images.len() - finite.len()),
        })
    }
}
