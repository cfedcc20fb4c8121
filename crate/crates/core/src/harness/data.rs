//! Datasets: synthetic generators and on-disk sample directories.
//!
//! A sample directory holds `manifest.csv` with a header row and one row
//! per sample. Classification manifests have columns `image,label`,
//! segmentation manifests `image,mask`. Paths are relative to the
//! directory; images may be `.tnsr` (used as is) or PGM/PPM (scaled to
//! [0, 1]). Masks are binarized at 0.5 after scaling.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TaskKind;
use crate::error::{Error, Result};
use crate::imstats::load_image;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    /// One `1×h×w` binary mask per image.
    Masks(Vec<Tensor>),
}

/// Targets of one batch: labels, or masks stacked to `b×1×h×w`.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets {
    Labels(Vec<usize>),
    Masks(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `1×h×w` images, all the same size.
    pub images: Vec<Tensor>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(images: Vec<Tensor>, targets: Targets) -> Result<Self> {
        let n_targets = match &targets {
            Targets::Labels(l) => l.len(),
            Targets::Masks(m) => m.len(),
        };
        if images.is_empty() || images.len() != n_targets {
            return Err(Error::Config(format!(
                "dataset needs a target per image ({} images, {n_targets} targets)",
                images.len()
            )));
        }
        let shape = images[0].shape().to_vec();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(Error::Config(format!(
                "images must be 1×h×w, got {shape:?}"
            )));
        }
        for img in &images {
            if img.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "dataset",
                    left: shape.clone(),
                    right: img.shape().to_vec(),
                });
            }
        }
        if let Targets::Masks(masks) = &targets {
            for m in masks {
                if m.shape() != shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "dataset mask",
                        left: shape.clone(),
                        right: m.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { images, targets })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn kind(&self) -> TaskKind {
        match self.targets {
            Targets::Labels(_) => TaskKind::Classification,
            Targets::Masks(_) => TaskKind::Segmentation,
        }
    }

    pub fn image_hw(&self) -> (usize, usize) {
        let s = self.images[0].shape();
        (s[1], s[2])
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, BatchTargets)> {
        let (h, w) = self.image_hw();
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        let x = Tensor::new([indices.len(), 1, h, w], data)?;
        let t = match &self.targets {
            Targets::Labels(l) => BatchTargets::Labels(indices.iter().map(|&i| l[i]).collect()),
            Targets::Masks(m) => {
                let mut d = Vec::with_capacity(indices.len() * h * w);
                for &i in indices {
                    d.extend_from_slice(m[i].data());
                }
                BatchTargets::Masks(Tensor::new([indices.len(), 1, h, w], d)?)
            }
        };
        Ok((x, t))
    }

    /// Writes `manifest.csv` plus one `.tnsr` file per image and mask.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
        match &self.targets {
            Targets::Labels(labels) => {
                w.write_record(["image", "label"])?;
                for (i, (img, label)) in self.images.iter().zip(labels).enumerate() {
                    let name = format!("img_{i:05}.tnsr");
                    img.save_tnsr(dir.join(&name))?;
                    w.write_record([name, label.to_string()])?;
                }
            }
            Targets::Masks(masks) => {
                w.write_record(["image", "mask"])?;
                for (i, (img, mask)) in self.images.iter().zip(masks).enumerate() {
                    let name = format!("img_{i:05}.tnsr");
                    let mask_name = format!("mask_{i:05}.tnsr");
                    img.save_tnsr(dir.join(&name))?;
                    mask.save_tnsr(dir.join(&mask_name))?;
                    w.write_record([name, mask_name])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut r = csv::Reader::from_path(dir.join(MANIFEST))?;
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let is_mask = match cols.as_slice() {
            ["image", "label"] => false,
            ["image", "mask"] => true,
            _ => {
                return Err(Error::Format {
                    what: "manifest",
                    detail: format!(
                        "expected header image,label or image,mask, got {}",
                        cols.join(",")
                    ),
                })
            }
        };
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut masks = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            images.push(load_sample(&dir.join(&rec[0]))?);
            if is_mask {
                let m = load_sample(&dir.join(&rec[1]))?;
                masks.push(m.map(|v| if v > 0.5 { 1.0 } else { 0.0 }));
            } else {
                labels.push(rec[1].trim().parse::<usize>().map_err(|e| Error::Format {
                    what: "manifest",
                    detail: format!("bad label {:?}: {e}", &rec[1]),
                })?);
            }
        }
        let targets = if is_mask {
            Targets::Masks(masks)
        } else {
            Targets::Labels(labels)
        };
        Self::new(images, targets)
    }
}

fn load_sample(path: &Path) -> Result<Tensor> {
    let is_tnsr = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("tnsr"));
    let t = load_image(path)?;
    let t = if is_tnsr { t } else { t.scale(1.0 / 255.0) };
    match t.shape() {
        [h, w] => {
            let (h, w) = (*h, *w);
            t.reshape([1, h, w])
        }
        _ => Ok(t),
    }
}

/// Deterministic synthetic dataset for `kind` with `n` samples.
///
/// Classification: 32×32 noisy sinusoidal gratings in three orientation
/// classes (0°, 45°, 90°), balanced, passed through a gamma curve so the
/// intensity distribution is right-skewed.
///
/// Segmentation: 48×48 images of thin curved strokes on a dim, noisy,
/// shaded background, with the stroke pixels as the mask.
pub fn synth_dataset(kind: TaskKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        TaskKind::Classification => {
            let mut images = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let label = i % 3;
                images.push(grating(&mut rng, 32, label)?);
                labels.push(label);
            }
            Dataset::new(images, Targets::Labels(labels))
        }
        TaskKind::Segmentation => {
            let mut images = Vec::with_capacity(n);
            let mut masks = Vec::with_capacity(n);
            for _ in 0..n {
                let (img, mask) = strokes(&mut rng, 48)?;
                images.push(img);
                masks.push(mask);
            }
            Dataset::new(images, Targets::Masks(masks))
        }
    }
}

fn grating(rng: &mut ChaCha8Rng, size: usize, label: usize) -> Result<Tensor> {
    let noise = Normal::new(0.0, 0.12).expect("valid std");
    let theta = (label as f64 * 45.0 + rng.random_range(-8.0..8.0)) * PI / 180.0;
    let period: f64 = rng.random_range(4.0..8.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let contrast = rng.random_range(0.6..1.0);
    let (c, s) = (theta.cos(), theta.sin());
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 * c + y as f64 * s;
            let g =
                0.5 + 0.5 * contrast * (2.0 * PI * u / period + phase).sin() + noise.sample(rng);
            data.push(g.clamp(0.0, 1.0).powf(2.2));
        }
    }
    Tensor::new([1, size, size], data)
}

fn strokes(rng: &mut ChaCha8Rng, size: usize) -> Result<(Tensor, Tensor)> {
    let area = (size * size) as f64;
    let mask = loop {
        let mut mask = vec![0.0; size * size];
        let mut covered = 0usize;
        for _ in 0..6 {
            paint_stroke(rng, size, &mut mask, &mut covered);
            if covered as f64 / area >= 0.05 {
                break;
            }
        }
        let frac = covered as f64 / area;
        if (0.02..=0.15).contains(&frac) {
            break mask;
        }
    };
    let noise = Normal::new(0.0, 0.08).expect("valid std");
    let (gx, gy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let mut img = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let shade =
                0.25 + gx * (x as f64 / size as f64 - 0.5) + gy * (y as f64 / size as f64 - 0.5);
            img.push(shade + 0.45 * mask[y * size + x] + noise.sample(rng));
        }
    }
    Ok((
        Tensor::new([1, size, size], img)?,
        Tensor::new([1, size, size], mask)?,
    ))
}

/// A smooth random walk with a ~2.5 px wide footprint.
fn paint_stroke(rng: &mut ChaCha8Rng, size: usize, mask: &mut [f64], covered: &mut usize) {
    let bend = Normal::new(0.0, 0.15).expect("valid std");
    let lim = size as f64 - 1.0;
    let (mut x, mut y) = (
        rng.random_range(4.0..lim - 4.0),
        rng.random_range(4.0..lim - 4.0),
    );
    let mut angle = rng.random_range(0.0..2.0 * PI);
    let steps = rng.random_range(20..60);
    for _ in 0..steps {
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx * dx + dy * dy > 1 {
                    continue;
                }
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || py < 0 || px >= size as i64 || py >= size as i64 {
                    continue;
                }
                let idx = py as usize * size + px as usize;
                if mask[idx] == 0.0 {
                    mask[idx] = 1.0;
                    *covered += 1;
                }
            }
        }
        angle += bend.sample(rng);
        x += angle.cos();
        y += angle.sin();
        if x < 0.0 || y < 0.0 || x > lim || y > lim {
            // Reflect back into the frame.
            angle += PI;
            x = x.clamp(0.0, lim);
            y = y.clamp(0.0, lim);
        }
    }
}
