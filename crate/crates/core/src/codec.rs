//! Pixel space <-> latent space.
//!
//! Both codecs are deterministic and exactly invertible: a `-0.5` shift maps
//! `[0, 1]` intensities to a zero-mean range, then a linear rearrangement
//! produces the latent grid. Decoding undoes the rearrangement and shift and
//! clamps into `[0, 1]`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::latent::{Latent, Shape};

const SHIFT: f64 = 0.5;

pub trait Codec: Send + Sync {
    fn name(&self) -> String;

    /// Spatial downsampling factor; image sides must be divisible by it.
    fn factor(&self) -> usize;

    fn latent_shape(&self, height: usize, width: usize) -> Result<Shape> {
        let k = self.factor();
        if !height.is_multiple_of(k) || !width.is_multiple_of(k) {
            return Err(Error::InvalidArgument(format!(
                "image {height}x{width} is not divisible by the {} codec factor {k}",
                self.name()
            )));
        }
        Ok((k * k, height / k, width / k))
    }

    /// Linear (shift-free) part of `encode`.
    fn rearrange(&self, image: &Image) -> Result<Latent>;

    /// Inverse of [`Codec::rearrange`].
    fn restore(&self, latent: &Latent) -> Result<Image>;

    fn encode(&self, image: &Image) -> Result<Latent> {
        self.rearrange(&image.map(|p| p - SHIFT))
    }

    /// Decode without clamping; exact inverse of `encode`.
    fn decode_raw(&self, latent: &Latent) -> Result<Image> {
        Ok(self.restore(latent)?.map(|p| p + SHIFT))
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        Ok(self.decode_raw(latent)?.clamped())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl Codec for IdentityCodec {
    fn name(&self) -> String {
        "identity".into()
    }

    fn factor(&self) -> usize {
        1
    }

    fn rearrange(&self, image: &Image) -> Result<Latent> {
        Latent::new(1, image.height(), image.width(), image.pixels().to_vec())
    }

    fn restore(&self, latent: &Latent) -> Result<Image> {
        if latent.channels() != 1 {
            return Err(Error::shape("1 latent channel", latent.channels()));
        }
        Image::new(latent.height(), latent.width(), latent.values().to_vec())
    }
}

/// Space-to-depth with a `k x k` patch: `k^2` channels at `1/k` resolution.
/// Channel `dy * k + dx` holds the pixel at offset `(dy, dx)` of each patch.
#[derive(Debug, Clone, Copy)]
pub struct PatchCodec {
    k: usize,
}

impl PatchCodec {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("patch factor must be positive".into()));
        }
        Ok(Self { k })
    }
}

impl Codec for PatchCodec {
    fn name(&self) -> String {
        format!("patch{}", self.k)
    }

    fn factor(&self) -> usize {
        self.k
    }

    fn rearrange(&self, image: &Image) -> Result<Latent> {
        let shape = self.latent_shape(image.height(), image.width())?;
        let (c, h, w) = shape;
        let k = self.k;
        let mut values = vec![0.0; c * h * w];
        for ch in 0..c {
            let (dy, dx) = (ch / k, ch % k);
            for i in 0..h {
                for j in 0..w {
                    values[(ch * h + i) * w + j] = image.get(i * k + dy, j * k + dx);
                }
            }
        }
        Latent::from_shape_vec(shape, values)
    }

    fn restore(&self, latent: &Latent) -> Result<Image> {
        let k = self.k;
        let (c, h, w) = latent.shape();
        if c != k * k {
            return Err(Error::shape(format!("{} latent channels", k * k), c));
        }
        let mut image = Image::filled(h * k, w * k, 0.0);
        for ch in 0..c {
            let (dy, dx) = (ch / k, ch % k);
            let plane = latent.plane(ch);
            for i in 0..h {
                for j in 0..w {
                    image.set(i * k + dy, j * k + dx, plane[i * w + j]);
                }
            }
        }
        Ok(image)
    }
}
