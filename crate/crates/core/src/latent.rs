use crate::error::{Error, Result};

/// Channel-major `C x h x w` latent grid. Values are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

pub type Shape = (usize, usize, usize);

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(channels * height * width, values.len()));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros((channels, height, width): Shape) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_shape_vec(shape: Shape, values: Vec<f64>) -> Result<Self> {
        Self::new(shape.0, shape.1, shape.2, values)
    }

    pub fn shape(&self) -> Shape {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn ensure_shape(&self, shape: Shape, what: &str) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::shape(
                format!("{what} {:?}", shape),
                format!("{:?}", self.shape()),
            ));
        }
        Ok(())
    }

    /// `a * self + b * other`, elementwise.
    pub fn axpby(&self, a: f64, other: &Latent, b: f64) -> Result<Latent> {
        other.ensure_shape(self.shape(), "operand")?;
        Ok(self.zip_map(other, |x, y| a * x + b * y))
    }

    pub fn scale(&self, a: f64) -> Latent {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Caller guarantees equal shapes.
    pub(crate) fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Latent {
        debug_assert_eq!(self.shape(), other.shape());
        Latent {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Latent) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
