//! Lung-region masks.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::phantom::PhantomParams;

pub trait MaskProvider: Send + Sync {
    fn name(&self) -> &'static str;

    /// `meta` carries generator geometry when the image is a phantom.
    fn lung_mask(&self, image: &Image, meta: Option<&PhantomParams>) -> Result<Mask>;
}

/// Exact lung ellipses known to the phantom generator.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhantomTruth;

impl MaskProvider for PhantomTruth {
    fn name(&self) -> &'static str {
        "phantom_truth"
    }

    fn lung_mask(&self, image: &Image, meta: Option<&PhantomParams>) -> Result<Mask> {
        let meta = meta.ok_or_else(|| {
            Error::InvalidArgument("phantom_truth masks need phantom metadata".into())
        })?;
        Ok(meta.lung_mask(image.height(), image.width()))
    }
}

/// Otsu binarization selecting the dark class, followed by a 3x3 opening.
#[derive(Debug, Clone, Copy, Default)]
pub struct OtsuThreshold;

impl MaskProvider for OtsuThreshold {
    fn name(&self) -> &'static str {
        "threshold"
    }

    fn lung_mask(&self, image: &Image, _meta: Option<&PhantomParams>) -> Result<Mask> {
        let (h, w) = image.dims();
        let Some(level) = otsu_level(image) else {
            return Ok(Mask::empty(h, w));
        };
        let raw = Mask::from_fn(h, w, |y, x| bin(image.get(y, x)) <= level);
        Ok(dilate(&erode(&raw)))
    }
}

const BINS: usize = 256;

fn bin(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f64).round()) as usize
}

/// Histogram bin maximizing between-class variance; `None` for flat images.
pub fn otsu_level(image: &Image) -> Option<usize> {
    let mut hist = [0usize; BINS];
    for &p in image.pixels() {
        hist[bin(p)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total = image.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::MIN, 0usize);
    for (k, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    Some(best.1)
}

fn neighborhood_all(mask: &Mask, y: usize, x: usize, want: bool) -> bool {
    let (h, w) = mask.dims();
    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
            if mask.get(ny, nx) != want {
                return false;
            }
        }
    }
    true
}

/// 3x3 erosion; out-of-image neighbours are ignored.
pub fn erode(mask: &Mask) -> Mask {
    Mask::from_fn(mask.height(), mask.width(), |y, x| {
        neighborhood_all(mask, y, x, true)
    })
}

/// 3x3 dilation; out-of-image neighbours are ignored.
pub fn dilate(mask: &Mask) -> Mask {
    Mask::from_fn(mask.height(), mask.width(), |y, x| {
        !neighborhood_all(mask, y, x, false)
    })
}

/// Zeroes every pixel outside the mask.
pub fn apply_mask(image: &Image, mask: &Mask) -> Result<Image> {
    if image.dims() != mask.dims() {
        return Err(Error::shape(
            format!("mask {:?}", image.dims()),
            format!("{:?}", mask.dims()),
        ));
    }
    let pixels = image
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    Image::new(image.height(), image.width(), pixels)
}
