//! Small convolutional noise estimators with hand-written backprop.
//!
//! Input planes are `[a_t z_t (C), b_t z_cond (C), kind flag (1)]`. The first
//! layer gets an extra learned bias per timestep, which is how `t` reaches the
//! network. With noise-level input scaling, `a_t = 1 / sqrt(1 - abar_t)` and
//! `b_t = sqrt(abar_t / (1 - abar_t))`, so the exact noise
//! `(z_t - sqrt(abar_t) z_0) / sqrt(1 - abar_t)` is linear in the scaled inputs
//! with weights that do not depend on `t`. Without it both scales are 1.

use rand_distr::{Distribution, Normal};

use super::conv::{conv_backward, conv_forward};
use super::{Condition, NoiseEstimator};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::rng::rng_for;
use crate::scheduler::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out: usize,
    /// Odd kernel side.
    pub kernel: usize,
    pub activation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub latent_channels: usize,
    pub steps: usize,
    pub layers: Vec<LayerSpec>,
    /// Per-timestep `[a_t, b_t]` input scales; empty means unscaled.
    pub input_scales: Vec<[f64; 2]>,
    /// Adds a bias-free 1x1 map from the input planes straight to the output.
    pub skip: bool,
}

impl Architecture {
    /// One 1x1 layer: a per-pixel affine map of the input planes.
    pub fn linear(latent_channels: usize, steps: usize) -> Self {
        Self {
            latent_channels,
            steps,
            layers: vec![LayerSpec {
                out: latent_channels,
                kernel: 1,
                activation: false,
            }],
            input_scales: Vec::new(),
            skip: false,
        }
    }

    /// Three 3x3 layers, 8 -> 8 -> C, a smooth gate between them, plus a linear 1x1
    /// skip from the input planes to the output.
    pub fn conv(latent_channels: usize, steps: usize) -> Self {
        Self {
            skip: true,
            ..Self::conv_plain(latent_channels, steps)
        }
    }

    /// [`Architecture::conv`] without the skip.
    pub fn conv_plain(latent_channels: usize, steps: usize) -> Self {
        let hidden = LayerSpec {
            out: 8,
            kernel: 3,
            activation: true,
        };
        Self {
            latent_channels,
            steps,
            layers: vec![
                hidden,
                hidden,
                LayerSpec {
                    out: latent_channels,
                    kernel: 3,
                    activation: false,
                },
            ],
            input_scales: Vec::new(),
            skip: false,
        }
    }

    /// Registry name of the layer layout: `linear`, `conv`, `conv_plain`, or `custom`.
    pub fn name(&self) -> &'static str {
        let c = self.latent_channels;
        let bare = Self {
            input_scales: Vec::new(),
            ..self.clone()
        };
        if bare == Self::linear(c, self.steps) {
            "linear"
        } else if bare == Self::conv(c, self.steps) {
            "conv"
        } else if bare == Self::conv_plain(c, self.steps) {
            "conv_plain"
        } else {
            "custom"
        }
    }

    /// Enables noise-level input scaling from `schedule`, whose length must equal `steps`.
    pub fn scaled_by(mut self, schedule: &Schedule) -> Result<Self> {
        if schedule.steps() != self.steps {
            return Err(Error::InvalidArgument(format!(
                "architecture has {} steps, schedule {}",
                self.steps,
                schedule.steps()
            )));
        }
        self.input_scales = schedule
            .alpha_bars()
            .iter()
            .map(|&ab| [1.0 / (1.0 - ab).sqrt(), (ab / (1.0 - ab)).sqrt()])
            .collect();
        Ok(self)
    }

    fn input_scale(&self, t: usize) -> [f64; 2] {
        self.input_scales.get(t - 1).copied().unwrap_or([1.0, 1.0])
    }

    pub fn in_channels(&self) -> usize {
        2 * self.latent_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.steps == 0 || self.layers.is_empty() {
            return Err(Error::InvalidArgument("empty architecture".into()));
        }
        if self.layers.iter().any(|l| l.kernel % 2 == 0 || l.out == 0) {
            return Err(Error::InvalidArgument(
                "layers need odd kernels and at least one output channel".into(),
            ));
        }
        if !self.input_scales.is_empty() && self.input_scales.len() != self.steps {
            return Err(Error::InvalidArgument(format!(
                "{} input scales for {} steps",
                self.input_scales.len(),
                self.steps
            )));
        }
        if self.input_scales.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input scales".into()));
        }
        if self.layers.last().unwrap().out != self.latent_channels {
            return Err(Error::InvalidArgument(format!(
                "last layer must emit {} channels",
                self.latent_channels
            )));
        }
        Ok(())
    }

    fn layer_inputs(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.in_channels()).chain(self.layers.iter().map(|l| l.out))
    }

    /// `(weight offset, bias offset)` per layer, then the skip weights (when
    /// enabled) and the timestep table, whose offset is returned last.
    fn offsets(&self) -> (Vec<(usize, usize)>, usize) {
        let mut off = 0;
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, cin) in self.layers.iter().zip(self.layer_inputs()) {
            let w = off;
            off += l.out * cin * l.kernel * l.kernel;
            out.push((w, off));
            off += l.out;
        }
        if self.skip {
            off += self.skip_len();
        }
        (out, off)
    }

    fn skip_len(&self) -> usize {
        self.latent_channels * self.in_channels()
    }

    pub fn param_count(&self) -> usize {
        let (_, table) = self.offsets();
        table + self.steps * self.layers[0].out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    arch: Architecture,
    params: Vec<f64>,
    offsets: Vec<(usize, usize)>,
    table_offset: usize,
}

struct Trace {
    /// Input planes of every layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer.
    pre: Vec<Vec<f64>>,
}

impl ToyDenoiser {
    pub fn zeroed(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (offsets, table_offset) = arch.offsets();
        Ok(Self {
            params: vec![0.0; arch.param_count()],
            arch,
            offsets,
            table_offset,
        })
    }

    /// He-style normal weights, output layer scaled down by 10, zero biases.
    pub fn seeded(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        let mut rng = rng_for(seed, &[0x746f_7969_6e69]);
        let n_layers = model.arch.layers.len();
        let cins: Vec<usize> = model.arch.layer_inputs().collect();
        for (li, layer) in model.arch.layers.clone().iter().enumerate() {
            let fan_in = (cins[li] * layer.kernel * layer.kernel) as f64;
            let mut std = (2.0 / fan_in).sqrt();
            if li + 1 == n_layers {
                std *= 0.1;
            }
            let normal = Normal::new(0.0, std).unwrap();
            let (w, b) = model.offsets[li];
            for p in &mut model.params[w..b] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeroed(arch)?;
        if params.len() != model.params.len() {
            return Err(Error::shape(
                format!("{} parameters", model.params.len()),
                params.len(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, z_t: &Latent, t: usize, cond: &Condition) -> Result<()> {
        if t == 0 || t > self.arch.steps {
            return Err(Error::Timestep {
                t,
                max: self.arch.steps,
            });
        }
        if z_t.channels() != self.arch.latent_channels {
            return Err(Error::shape(
                format!("{} latent channels", self.arch.latent_channels),
                z_t.channels(),
            ));
        }
        cond.latent.ensure_shape(z_t.shape(), "condition")
    }

    fn run(&self, z_t: &Latent, t: usize, cond: &Condition, keep: bool) -> (Vec<f64>, Option<Trace>) {
        let (_, h, w) = z_t.shape();
        let n = h * w;
        let mut x = Vec::with_capacity(self.arch.in_channels() * n);
        let [a, b] = self.arch.input_scale(t);
        x.extend(z_t.values().iter().map(|v| a * v));
        x.extend(cond.latent.values().iter().map(|v| b * v));
        x.extend(std::iter::repeat_n(cond.kind.flag(), n));

        let skip_input = self.arch.skip.then(|| x.clone());
        let mut trace = keep.then(|| Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
        });
        let mut cin = self.arch.in_channels();
        for (li, layer) in self.arch.layers.iter().enumerate() {
            let (wo, bo) = self.offsets[li];
            let weight = &self.params[wo..bo];
            let bias = &self.params[bo..bo + layer.out];
            let mut y = vec![0.0; layer.out * n];
            for o in 0..layer.out {
                let mut b = bias[o];
                if li == 0 {
                    b += self.params[self.table_offset + (t - 1) * layer.out + o];
                }
                y[o * n..(o + 1) * n].fill(b);
            }
            conv_forward(&x, cin, h, w, weight, layer.out, layer.kernel, &mut y);
            let next = if layer.activation {
                y.iter().map(|&v| act(v)).collect()
            } else {
                y.clone()
            };
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(std::mem::take(&mut x));
                tr.pre.push(y);
            }
            x = next;
            cin = layer.out;
        }
        if let Some(input) = skip_input {
            let start = self.table_offset - self.arch.skip_len();
            let weight = &self.params[start..self.table_offset];
            conv_forward(&input, self.arch.in_channels(), h, w, weight, self.arch.latent_channels, 1, &mut x);
        }
        (x, trace)
    }

    /// Sum of squared errors against `eps` and its parameter gradient, scaled by `weight`.
    pub(crate) fn accumulate_grad(
        &self,
        z_t: &Latent,
        t: usize,
        cond: &Condition,
        eps: &Latent,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(z_t, t, cond)?;
        eps.ensure_shape(z_t.shape(), "noise target")?;
        let (out, trace) = self.run(z_t, t, cond, true);
        let trace = trace.unwrap();
        let (_, h, w) = z_t.shape();
        let n = h * w;

        let mut sse = 0.0;
        let mut g: Vec<f64> = out
            .iter()
            .zip(eps.values())
            .map(|(o, e)| {
                let d = o - e;
                sse += d * d;
                2.0 * d * weight
            })
            .collect();

        if self.arch.skip {
            let start = self.table_offset - self.arch.skip_len();
            let mut unused_bias = vec![0.0; self.arch.latent_channels];
            conv_backward(
                &trace.inputs[0],
                self.arch.in_channels(),
                h,
                w,
                &self.params[start..self.table_offset],
                self.arch.latent_channels,
                1,
                &g,
                &mut grad[start..self.table_offset],
                &mut unused_bias,
                None,
            );
        }
        let cins: Vec<usize> = self.arch.layer_inputs().collect();
        for li in (0..self.arch.layers.len()).rev() {
            let layer = self.arch.layers[li];
            if layer.activation {
                for (gv, &p) in g.iter_mut().zip(&trace.pre[li]) {
                    *gv *= act_grad(p);
                }
            }
            let (wo, bo) = self.offsets[li];
            let mut grad_in = (li > 0).then(|| vec![0.0; cins[li] * n]);
            let (gw, rest) = grad[wo..].split_at_mut(bo - wo);
            conv_backward(
                &trace.inputs[li],
                cins[li],
                h,
                w,
                &self.params[wo..bo],
                layer.out,
                layer.kernel,
                &g,
                gw,
                &mut rest[..layer.out],
                grad_in.as_deref_mut(),
            );
            if li == 0 {
                let row = self.table_offset + (t - 1) * layer.out;
                for o in 0..layer.out {
                    grad[row + o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                }
            }
            if let Some(gi) = grad_in {
                g = gi;
            }
        }
        Ok(sse)
    }
}

impl NoiseEstimator for ToyDenoiser {
    fn name(&self) -> String {
        self.arch.name().into()
    }

    fn predict_noise(&self, z_t: &Latent, t: usize, cond: &Condition) -> Result<Latent> {
        self.check(z_t, t, cond)?;
        let (out, _) = self.run(z_t, t, cond, false);
        let eps = Latent::from_shape_vec(z_t.shape(), out)?;
        if !eps.is_finite() {
            return Err(Error::NonFinite(format!("{} prediction at t={t}", self.name())));
        }
        Ok(eps)
    }
}

/// Predicts zero noise everywhere; has no parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl NoiseEstimator for ZeroDenoiser {
    fn name(&self) -> String {
        "zero".into()
    }

    fn predict_noise(&self, z_t: &Latent, _t: usize, cond: &Condition) -> Result<Latent> {
        cond.latent.ensure_shape(z_t.shape(), "condition")?;
        Ok(Latent::zeros(z_t.shape()))
    }
}

/// Smooth gate `x * (1 + x / sqrt(1 + x^2)) / 2`: SiLU-shaped, but built
/// from a square root and a division instead of an exponential.
#[inline]
fn act(x: f64) -> f64 {
    let r = 1.0 / (1.0 + x * x).sqrt();
    0.5 * x * (1.0 + x * r)
}

#[inline]
fn act_grad(x: f64) -> f64 {
    let r = 1.0 / (1.0 + x * x).sqrt();
    0.5 * (1.0 + x * r) + 0.5 * x * r * r * r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        // 1x1: 3 inputs -> 1 output, + bias, + 50 timestep biases
        assert_eq!(Architecture::linear(1, 50).param_count(), 3 + 1 + 50);
        let plain = (3 * 8 * 9 + 8) + (8 * 8 * 9 + 8) + (8 * 9 + 1) + 50 * 8;
        assert_eq!(Architecture::conv_plain(1, 50).param_count(), plain);
        assert_eq!(Architecture::conv(1, 50).param_count(), plain + 3);
    }

    #[test]
    fn zeroed_linear_predicts_zero() {
        let m = ToyDenoiser::zeroed(Architecture::linear(1, 10)).unwrap();
        let z = Latent::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let eps = m.predict_noise(&z, 3, &Condition::global(z.clone())).unwrap();
        assert!(eps.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let m = ToyDenoiser::seeded(Architecture::conv(1, 10), 1).unwrap();
        let z = Latent::zeros((1, 4, 4));
        assert!(m.predict_noise(&z, 0, &Condition::global(z.clone())).is_err());
        assert!(m.predict_noise(&z, 11, &Condition::global(z.clone())).is_err());
        assert!(m
            .predict_noise(&z, 1, &Condition::global(Latent::zeros((1, 4, 5))))
            .is_err());
        assert!(m
            .predict_noise(&Latent::zeros((2, 4, 4)), 1, &Condition::global(Latent::zeros((2, 4, 4))))
            .is_err());
    }

    #[test]
    fn invalid_architectures() {
        let mut a = Architecture::conv(2, 5);
        a.layers[2].out = 3;
        assert!(ToyDenoiser::zeroed(a).is_err());
        let mut b = Architecture::conv(1, 5);
        b.layers[0].kernel = 2;
        assert!(ToyDenoiser::zeroed(b).is_err());
        assert!(ToyDenoiser::from_params(Architecture::linear(1, 5), vec![0.0; 3]).is_err());
    }

    #[test]
    fn kind_flag_changes_prediction() {
        let m = ToyDenoiser::seeded(Architecture::conv(1, 10), 5).unwrap();
        let z = Latent::new(1, 3, 3, (0..9).map(|i| i as f64 * 0.1).collect()).unwrap();
        let g = m.predict_noise(&z, 4, &Condition::global(z.clone())).unwrap();
        let l = m.predict_noise(&z, 4, &Condition::local(z.clone())).unwrap();
        assert_ne!(g, l);
    }
}
