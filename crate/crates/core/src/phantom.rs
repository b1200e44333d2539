//! Procedural chest phantoms with paired soft-tissue ground truth.
//!
//! Coordinates in [`Ellipse`] and [`Rib`] are fractions of the image size:
//! `u` runs left to right, `v` top to bottom, and pixel `(y, x)` sits at
//! `((x + 0.5) / w, (y + 0.5) / h)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::io;
use crate::metrics::BONE_THRESHOLD;
use crate::rng::rng_for;

pub const MIN_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cu: f64,
    pub cv: f64,
    /// Horizontal semi-axis.
    pub a: f64,
    /// Vertical semi-axis.
    pub b: f64,
}

impl Ellipse {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let du = (u - self.cu) / self.a;
        let dv = (v - self.cv) / self.b;
        du * du + dv * dv <= 1.0
    }

    pub fn within_unit_square(&self) -> bool {
        self.cu - self.a >= 0.0
            && self.cu + self.a <= 1.0
            && self.cv - self.b >= 0.0
            && self.cv + self.b <= 1.0
    }

    /// Area in pixels of an `height x width` raster.
    pub fn area_pixels(&self, height: usize, width: usize) -> f64 {
        PI * self.a * self.b * (height * width) as f64
    }
}

/// One rib: `v = v0 + curvature (u - 0.5)^2` with a Gaussian cross-profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rib {
    pub v0: f64,
    pub curvature: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Rib {
    pub fn value(&self, u: f64, v: f64) -> f64 {
        let d = v - (self.v0 + self.curvature * (u - 0.5) * (u - 0.5));
        self.amplitude * (-(d * d) / (2.0 * self.width * self.width)).exp()
    }
}

/// Generator descriptor of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub lungs: [Ellipse; 2],
    pub ribs: Vec<Rib>,
    /// Spatial frequency of the lung texture, in cycles per image width.
    pub texture_scale: f64,
}

impl PhantomParams {
    pub fn lung_mask(&self, height: usize, width: usize) -> Mask {
        Mask::from_fn(height, width, |y, x| {
            let (u, v) = pixel_center(y, x, height, width);
            self.lungs.iter().any(|e| e.contains(u, v))
        })
    }

    pub fn rib_count(&self) -> usize {
        self.ribs.len()
    }

    /// Largest rib amplitude, 0 without ribs.
    pub fn rib_amplitude(&self) -> f64 {
        self.ribs.iter().map(|r| r.amplitude).fold(0.0, f64::max)
    }
}

fn pixel_center(y: usize, x: usize, height: usize, width: usize) -> (f64, f64) {
    ((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)
}

/// Sampling ranges for the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub blob_count: (usize, usize),
    pub rib_count: (usize, usize),
    pub rib_amplitude: (f64, f64),
    pub rib_width: (f64, f64),
    /// How much darker the lung fields are than the surrounding tissue.
    pub lung_depth: (f64, f64),
    pub texture_amplitude: f64,
    pub texture_scale: (f64, f64),
}

impl PhantomConfig {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            blob_count: (5, 10),
            rib_count: (6, 10),
            rib_amplitude: (0.1, 0.3),
            rib_width: (0.010, 0.018),
            lung_depth: (0.28, 0.36),
            texture_amplitude: 0.025,
            texture_scale: (6.0, 12.0),
        }
    }

    /// Same geometry with bones removed.
    pub fn without_bones(mut self) -> Self {
        self.rib_amplitude = (0.0, 0.0);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.size < MIN_SIZE {
            return Err(Error::InvalidArgument(format!(
                "phantom size {} is below the minimum of {MIN_SIZE}",
                self.size
            )));
        }
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if self.blob_count.0 > self.blob_count.1
            || self.rib_count.0 > self.rib_count.1
            || !ordered(self.rib_amplitude.0, self.rib_amplitude.1)
            || !ordered(self.rib_width.0, self.rib_width.1)
            || self.rib_width.0 <= 0.0
            || !ordered(self.lung_depth.0, self.lung_depth.1)
            || !ordered(self.texture_scale.0, self.texture_scale.1)
            || !(self.texture_amplitude >= 0.0)
        {
            return Err(Error::InvalidArgument("phantom ranges must be ordered and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub index: usize,
    pub seed: u64,
    pub cxr: Image,
    pub soft: Image,
    pub lung_mask: Mask,
    pub bone_mask: Mask,
    pub params: PhantomParams,
}

impl PhantomSample {
    pub fn id(&self) -> String {
        format!("{:04}", self.index)
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

struct Blob {
    cu: f64,
    cv: f64,
    sigma: f64,
    amplitude: f64,
}

struct Wave {
    ku: f64,
    kv: f64,
    phase: f64,
    amplitude: f64,
}

/// Renders sample `index` of the dataset keyed by `seed`.
pub fn generate_one(config: &PhantomConfig, seed: u64, index: usize) -> Result<PhantomSample> {
    config.validate()?;
    let mut rng = rng_for(seed, &[0x7068_616e, index as u64]);
    let n = config.size;

    let blobs: Vec<Blob> = (0..count(&mut rng, config.blob_count))
        .map(|_| Blob {
            cu: rng.random_range(0.0..1.0),
            cv: rng.random_range(0.0..1.0),
            sigma: rng.random_range(0.15..0.35),
            amplitude: rng.random_range(-0.06..0.06),
        })
        .collect();

    let mut lung = |cu: f64| Ellipse {
        cu: cu + rng.random_range(-0.02..0.02),
        cv: 0.5 + rng.random_range(-0.03..0.03),
        a: rng.random_range(0.12..0.16),
        b: rng.random_range(0.25..0.32),
    };
    let lungs = [lung(0.32), lung(0.68)];
    let depth = uniform(&mut rng, config.lung_depth);

    let texture_scale = uniform(&mut rng, config.texture_scale);
    let waves: Vec<Wave> = (0..4)
        .map(|_| {
            let angle = rng.random_range(0.0..PI);
            let freq = texture_scale * rng.random_range(0.8..1.25);
            Wave {
                ku: 2.0 * PI * freq * angle.cos(),
                kv: 2.0 * PI * freq * angle.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: config.texture_amplitude / 4.0,
            }
        })
        .collect();

    let ribs_n = count(&mut rng, config.rib_count);
    let spacing = 0.6 / ribs_n as f64;
    let ribs: Vec<Rib> = (0..ribs_n)
        .map(|i| Rib {
            v0: 0.18 + spacing * (i as f64 + 0.5) + rng.random_range(-0.15..0.15) * spacing,
            curvature: rng.random_range(0.3..0.7),
            width: uniform(&mut rng, config.rib_width),
            amplitude: uniform(&mut rng, config.rib_amplitude),
        })
        .collect();

    let params = PhantomParams { lungs, ribs, texture_scale };
    let lung_mask = params.lung_mask(n, n);

    let soft = Image::from_fn(n, n, |y, x| {
        let (u, v) = pixel_center(y, x, n, n);
        let mut s = 0.62;
        for b in &blobs {
            let d2 = (u - b.cu).powi(2) + (v - b.cv).powi(2);
            s += b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        if lung_mask.get(y, x) {
            s -= depth;
            for w in &waves {
                s += w.amplitude * (w.ku * u + w.kv * v + w.phase).sin();
            }
        }
        s.clamp(0.0, 1.0)
    });
    let bone = Image::from_fn(n, n, |y, x| {
        let (u, v) = pixel_center(y, x, n, n);
        params.ribs.iter().map(|r| r.value(u, v)).sum()
    });
    let cxr = Image::from_fn(n, n, |y, x| (soft.get(y, x) + bone.get(y, x)).clamp(0.0, 1.0));
    let bone_mask = Mask::from_fn(n, n, |y, x| bone.get(y, x) > BONE_THRESHOLD);

    Ok(PhantomSample { index, seed, cxr, soft, lung_mask, bone_mask, params })
}

/// `count` samples; sample `i` depends only on `(seed, i)`.
pub fn generate_with(config: &PhantomConfig, seed: u64, count: usize) -> Result<Vec<PhantomSample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("phantom count must be at least 1".into()));
    }
    config.validate()?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(count);
    let chunk = count.div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..count)
            .step_by(chunk)
            .map(|start| {
                scope.spawn(move || {
                    (start..(start + chunk).min(count))
                        .map(|i| generate_one(config, seed, i))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(count);
        for h in handles {
            out.extend(h.join().expect("phantom worker panicked")?);
        }
        Ok(out)
    })
}

pub fn generate(seed: u64, count: usize, size: usize) -> Result<Vec<PhantomSample>> {
    generate_with(&PhantomConfig::new(size), seed, count)
}

/// Split sizes `floor(r0 n)`, `floor(r1 n)` and the remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let take = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = take(ratios[0]);
    let val = take(ratios[1]).min(n - train);
    let sizes = [train, val, n - train - val];
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("split of {n} items by {ratios:?} leaves an empty part")));
    }
    Ok(sizes)
}

/// Seeded shuffle followed by a contiguous train/val/test split.
pub fn split<T: Clone>(items: &[T], ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [train, val, _] = split_sizes(items.len(), ratios)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng_for(seed, &[0x73706c74]));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..train]), pick(&order[train..train + val]), pick(&order[train + val..])))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    seed: u64,
    index: usize,
    size: usize,
    left_cu: f64,
    left_cv: f64,
    left_a: f64,
    left_b: f64,
    right_cu: f64,
    right_cv: f64,
    right_a: f64,
    right_b: f64,
    rib_count: usize,
    rib_amplitude: f64,
    texture_scale: f64,
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes `{id}_cxr.pgm`, `{id}_soft.pgm`, `{id}_lung.pgm`, `{id}_bone.pgm` and `manifest.csv`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[PhantomSample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    let mut manifest = csv::Writer::from_path(dir.join(MANIFEST)).map_err(csv_err)?;
    for s in samples {
        let id = s.id();
        io::write_image(dir.join(format!("{id}_cxr.pgm")), &s.cxr)?;
        io::write_image(dir.join(format!("{id}_soft.pgm")), &s.soft)?;
        io::write_mask(dir.join(format!("{id}_lung.pgm")), &s.lung_mask)?;
        io::write_mask(dir.join(format!("{id}_bone.pgm")), &s.bone_mask)?;
        let [l, r] = s.params.lungs;
        manifest
            .serialize(ManifestRow {
                id,
                seed: s.seed,
                index: s.index,
                size: s.cxr.width(),
                left_cu: l.cu,
                left_cv: l.cv,
                left_a: l.a,
                left_b: l.b,
                right_cu: r.cu,
                right_cv: r.cv,
                right_a: r.a,
                right_b: r.b,
                rib_count: s.params.rib_count(),
                rib_amplitude: s.params.rib_amplitude(),
                texture_scale: s.params.texture_scale,
            })
            .map_err(csv_err)?;
    }
    manifest.flush()?;
    Ok(())
}

/// A sample as stored on disk: 8-bit planes plus the manifest descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub id: String,
    pub seed: u64,
    pub index: usize,
    pub cxr: Image,
    pub soft: Image,
    pub lung_mask: Mask,
    pub bone_mask: Mask,
    /// Lung geometry; ribs are not stored.
    pub params: PhantomParams,
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<StoredSample>> {
    let dir = dir.as_ref();
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    let mut reader = csv::Reader::from_path(dir.join(MANIFEST)).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(csv_err)?;
        let id = row.id;
        let lungs = [
            Ellipse { cu: row.left_cu, cv: row.left_cv, a: row.left_a, b: row.left_b },
            Ellipse { cu: row.right_cu, cv: row.right_cv, a: row.right_a, b: row.right_b },
        ];
        out.push(StoredSample {
            cxr: io::read_image(dir.join(format!("{id}_cxr.pgm")))?,
            soft: io::read_image(dir.join(format!("{id}_soft.pgm")))?,
            lung_mask: io::read_mask(dir.join(format!("{id}_lung.pgm")))?,
            bone_mask: io::read_mask(dir.join(format!("{id}_bone.pgm")))?,
            params: PhantomParams { lungs, ribs: Vec::new(), texture_scale: row.texture_scale },
            id,
            seed: row.seed,
            index: row.index,
        });
    }
    Ok(out)
}
