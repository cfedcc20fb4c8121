//! Histogram, skewness and kurtosis of pixel and weight distributions.
//!
//! Moments are the biased population estimators: `mₖ = mean((x − x̄)ᵏ)`,
//! skewness `g₁ = m₃ / m₂^{3/2}`, excess kurtosis `g₂ = m₄ / m₂² − 3`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::model::Network;
use crate::tensor::Tensor;

/// ITU-R BT.601 luma weights for RGB → gray.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramReport {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// `None` when the sample has zero variance.
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

struct Moments {
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

fn moments(samples: &[f64]) -> Moments {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    Moments {
        mean,
        m2: m2 / n,
        m3: m3 / n,
        m4: m4 / n,
    }
}

fn checked_moments(samples: &[f64], min_n: usize) -> Result<Moments> {
    if samples.len() < min_n {
        return Err(Error::UndefinedStatistic("too few samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moments"));
    }
    let m = moments(samples);
    let scale = samples.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m.m2 <= (1e-14 * scale).powi(2) {
        return Err(Error::UndefinedStatistic("zero variance"));
    }
    Ok(m)
}

pub fn skewness(samples: &[f64]) -> Result<f64> {
    let m = checked_moments(samples, 3)?;
    Ok(m.m3 / m.m2.powf(1.5))
}

/// Excess kurtosis.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    let m = checked_moments(samples, 4)?;
    Ok(m.m4 / (m.m2 * m.m2) - 3.0)
}

/// Equal-width histogram over `[min, max]`, last bin right-inclusive.
/// A constant sample gets the range `[v − 0.5, v + 0.5]`.
pub fn histogram(samples: &[f64], bins: usize) -> Result<HistogramReport> {
    if bins < 2 {
        return Err(Error::Config(format!(
            "histogram needs at least 2 bins, got {bins}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::UndefinedStatistic("empty sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("histogram"));
    }
    let (mut lo, mut hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let m = moments(samples);
    Ok(HistogramReport {
        bin_edges,
        counts,
        n: samples.len(),
        mean: m.mean,
        variance: m.m2,
        skewness: skewness(samples).ok(),
        kurtosis: kurtosis(samples).ok(),
    })
}

pub fn image_histogram(img: &Tensor, bins: usize) -> Result<HistogramReport> {
    histogram(img.data(), bins)
}

/// Distribution of all learnable scalars of a network.
pub fn weight_histogram(net: &Network, bins: usize, include_bias: bool) -> Result<HistogramReport> {
    let samples = weight_samples(net, include_bias);
    histogram(&samples, bins)
}

pub fn weight_samples(net: &Network, include_bias: bool) -> Vec<f64> {
    net.params()
        .iter()
        .filter(|p| include_bias || p.decay)
        .flat_map(|p| p.tensor.data().iter().copied())
        .collect()
}

/// Mean of per-image skewness values; images with undefined skewness
/// are skipped.
pub fn mean_skewness(reports: &[HistogramReport]) -> Option<f64> {
    let vals: Vec<f64> = reports.iter().filter_map(|r| r.skewness).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Loads a grayscale image as a `1×h×w` tensor.
///
/// Accepts binary PGM (P5) and PPM (P6, converted with [`LUMA_WEIGHTS`])
/// with pixel values in 0..=255, or a TNSR file whose tensor is returned
/// unchanged.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "tnsr" {
        return Tensor::load_tnsr(path);
    }
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                LUMA_WEIGHTS
                    .iter()
                    .zip(p.0)
                    .map(|(wt, c)| wt * f64::from(c))
                    .sum()
            })
            .collect(),
    };
    Tensor::new([1, h, w], data)
}

/// Writes a `h×w` (or `1×h×w`) tensor with values in 0..=255 as binary PGM.
pub fn save_pgm(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let dims = img.shape();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    std::fs::write(path, bytes)?;
    Ok(())
}
