//! Bone suppression ratio, MSE, PSNR and a Sobel gradient-similarity score.
//!
//! `grad_sim` is a cheap structural proxy, not a learned perceptual metric.

use std::fmt::Write as _;
use std::io;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

pub const PSNR_CAP: f64 = 100.0;
/// Bone-signal threshold (fraction of the unit dynamic range) defining bone pixels.
pub const BONE_THRESHOLD: f64 = 0.02;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    b.ensure_same_dims(a.dims(), "image")
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    check_dims(pred, gt)?;
    let sse: f64 = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / pred.len() as f64)
}

/// `10 log10(1 / mse)` for unit-range images, `cap` when the images agree exactly.
pub fn psnr(pred: &Image, gt: &Image, cap: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?, cap))
}

pub fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse == 0.0 {
        cap
    } else {
        (10.0 * (1.0 / mse).log10()).min(cap)
    }
}

/// `1 - sum_bone (pred - soft)^2 / sum_bone (cxr - soft)^2`, or 1 when there is no bone.
pub fn bsr(pred: &Image, cxr: &Image, gt_soft: &Image, bone_mask: &Mask) -> Result<f64> {
    check_dims(pred, cxr)?;
    check_dims(pred, gt_soft)?;
    if bone_mask.dims() != pred.dims() {
        return Err(Error::shape(format!("{:?}", pred.dims()), format!("{:?}", bone_mask.dims())));
    }
    let (mut residual, mut bone) = (0.0, 0.0);
    for i in 0..pred.len() {
        if bone_mask.bits()[i] {
            let s = gt_soft.pixels()[i];
            residual += (pred.pixels()[i] - s).powi(2);
            bone += (cxr.pixels()[i] - s).powi(2);
        }
    }
    Ok(if bone == 0.0 { 1.0 } else { 1.0 - residual / bone })
}

fn sobel(img: &Image, y: usize, x: usize) -> (f64, f64) {
    let p = |dy: isize, dx: isize| img.get((y as isize + dy) as usize, (x as isize + dx) as usize);
    let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
    let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
    (gx, gy)
}

/// Mean cosine similarity of Sobel gradients over mask pixels off the image
/// border. Pixels where the reference gradient vanishes are skipped; a flat
/// prediction against a textured reference scores 0 there.
pub fn grad_sim(pred: &Image, gt: &Image, mask: &Mask) -> Result<f64> {
    check_dims(pred, gt)?;
    if mask.dims() != pred.dims() {
        return Err(Error::shape(format!("{:?}", pred.dims()), format!("{:?}", mask.dims())));
    }
    let (h, w) = pred.dims();
    let (mut acc, mut n) = (0.0, 0usize);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !mask.get(y, x) {
                continue;
            }
            let (gx, gy) = sobel(gt, y, x);
            let ng = (gx * gx + gy * gy).sqrt();
            if ng < 1e-9 {
                continue;
            }
            let (px, py) = sobel(pred, y, x);
            let np = (px * px + py * py).sqrt();
            if np > 0.0 {
                acc += (px * gx + py * gy) / (np * ng);
            }
            n += 1;
        }
    }
    Ok(if n == 0 { 1.0 } else { acc / n as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub bsr: f64,
    pub mse: f64,
    pub psnr: f64,
    pub grad_sim: f64,
}

/// Metrics of one prediction against its phantom ground truth.
pub fn evaluate(
    image_id: impl Into<String>,
    pred: &Image,
    cxr: &Image,
    gt_soft: &Image,
    bone_mask: &Mask,
    lung_mask: &Mask,
) -> Result<ImageMetrics> {
    let m = mse(pred, gt_soft)?;
    Ok(ImageMetrics {
        image_id: image_id.into(),
        bsr: bsr(pred, cxr, gt_soft, bone_mask)?,
        mse: m,
        psnr: psnr_from_mse(m, PSNR_CAP),
        grad_sim: grad_sim(pred, gt_soft, lung_mask)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn new(per_image: Vec<ImageMetrics>) -> Self {
        Self { per_image }
    }

    fn column(&self, f: impl Fn(&ImageMetrics) -> f64) -> MeanStd {
        MeanStd::of(&self.per_image.iter().map(f).collect::<Vec<_>>())
    }

    pub fn bsr(&self) -> MeanStd {
        self.column(|m| m.bsr)
    }

    pub fn mse(&self) -> MeanStd {
        self.column(|m| m.mse)
    }

    pub fn psnr(&self) -> MeanStd {
        self.column(|m| m.psnr)
    }

    pub fn grad_sim(&self) -> MeanStd {
        self.column(|m| m.grad_sim)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>10} {:>12} {:>9} {:>9}\n",
            "image_id", "BSR(%)", "MSE(1e-3)", "PSNR", "grad_sim"
        );
        for m in &self.per_image {
            writeln!(
                out,
                "{:<16} {:>10.3} {:>12.4} {:>9.3} {:>9.4}",
                m.image_id,
                100.0 * m.bsr,
                1e3 * m.mse,
                m.psnr,
                m.grad_sim
            )
            .unwrap();
        }
        let (b, e, p, g) = (self.bsr(), self.mse(), self.psnr(), self.grad_sim());
        writeln!(
            out,
            "{:<16} {:>6.3}±{:<6.3} {:>6.4}±{:<6.4} {:>6.3}±{:<6.3} {:>6.4}±{:<6.4}",
            "mean±std",
            100.0 * b.mean,
            100.0 * b.std,
            1e3 * e.mean,
            1e3 * e.std,
            p.mean,
            p.std,
            g.mean,
            g.std
        )
        .unwrap();
        out
    }

    /// CSV with columns `image_id,bsr,mse,psnr,grad_sim`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
        w.write_record(["image_id", "bsr", "mse", "psnr", "grad_sim"])
            .map_err(csv_err)?;
        for m in &self.per_image {
            w.write_record([
                m.image_id.clone(),
                m.bsr.to_string(),
                m.mse.to_string(),
                m.psnr.to_string(),
                m.grad_sim.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_and_psnr_basics() {
        let gt = Image::filled(4, 4, 0.3);
        assert_eq!(mse(&gt, &gt).unwrap(), 0.0);
        assert_eq!(psnr(&gt, &gt, PSNR_CAP).unwrap(), 100.0);
        let off = gt.map(|p| p + 0.1);
        assert!((mse(&off, &gt).unwrap() - 0.01).abs() < 1e-15);
        assert!((psnr(&off, &gt, PSNR_CAP).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr_from_mse(1e-3, PSNR_CAP) - 30.0).abs() < 1e-12);
        assert!(mse(&gt, &Image::filled(4, 5, 0.3)).is_err());
    }

    #[test]
    fn bsr_extremes() {
        let soft = Image::filled(3, 3, 0.3);
        let cxr = Image::from_fn(3, 3, |y, _| if y == 1 { 0.5 } else { 0.3 });
        let bone = Mask::from_fn(3, 3, |y, _| y == 1);
        assert_eq!(bsr(&soft, &cxr, &soft, &bone).unwrap(), 1.0);
        assert_eq!(bsr(&cxr, &cxr, &soft, &bone).unwrap(), 0.0);
        assert_eq!(bsr(&cxr, &cxr, &soft, &Mask::empty(3, 3)).unwrap(), 1.0);
        let half = Image::from_fn(3, 3, |y, _| if y == 1 { 0.4 } else { 0.3 });
        assert!((bsr(&half, &cxr, &soft, &bone).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn grad_sim_of_identical_and_flat() {
        let gt = Image::from_fn(8, 8, |y, x| ((x * x + y) % 5) as f64 / 5.0);
        let m = Mask::full(8, 8);
        assert!((grad_sim(&gt, &gt, &m).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(grad_sim(&Image::filled(8, 8, 0.5), &gt, &m).unwrap(), 0.0);
    }

    #[test]
    fn sample_std() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn csv_columns() {
        let report = MetricsReport::new(vec![ImageMetrics {
            image_id: "0003".into(),
            bsr: 0.5,
            mse: 0.25,
            psnr: 6.0,
            grad_sim: 0.75,
        }]);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "image_id,bsr,mse,psnr,grad_sim\n0003,0.5,0.25,6,0.75\n");
        assert!(report.to_table().contains("0003"));
    }
}
