//! Forward noising, the multi-step reverse process, local-enhanced guidance
//! and dual-path orchestration.

use std::fmt;
use std::sync::Arc;

use crate::denoiser::{Condition, NoiseEstimator};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::rng::NoiseStream;
use crate::scheduler::Schedule;

pub const DEFAULT_ALPHA_L: f64 = 3.0;

/// `sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(z0: &Latent, t: usize, eps: &Latent, schedule: &Schedule) -> Result<Latent> {
    eps.ensure_shape(z0.shape(), "noise")?;
    let ab = schedule.alpha_bar(t)?;
    z0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// One reverse transition `z_t -> z_{t-1}`.
pub trait UpdateRule: Send + Sync {
    fn name(&self) -> &'static str;

    /// `fresh` is the step's N(0, I) draw; it is ignored at `t = 1`.
    fn step(
        &self,
        schedule: &Schedule,
        z_t: &Latent,
        t: usize,
        eps_hat: &Latent,
        fresh: &Latent,
    ) -> Result<Latent>;
}

/// The consistency-model reverse step in its posterior-mean form:
///
/// ```text
/// m       = (z_t - (1 - a_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(a_t)
/// z_{t-1} = sqrt(a_{t-1}) (c_out(t) m + c_skip(t) z_t)
///           + (1 - a_{t-1}) / sqrt(1 - abar_{t-1}) * eps        (t > 1)
/// z_0     = c_out(1) m + c_skip(1) z_1                          (t = 1)
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct PosteriorMeanUpdate;

impl UpdateRule for PosteriorMeanUpdate {
    fn name(&self) -> &'static str {
        "posterior"
    }

    fn step(
        &self,
        schedule: &Schedule,
        z_t: &Latent,
        t: usize,
        eps_hat: &Latent,
        fresh: &Latent,
    ) -> Result<Latent> {
        eps_hat.ensure_shape(z_t.shape(), "noise prediction")?;
        let a = schedule.alpha(t)?;
        let ab = schedule.alpha_bar(t)?;
        let (c_skip, c_out) = (schedule.c_skip(t)?, schedule.c_out(t)?);
        let k_eps = (1.0 - a) / (1.0 - ab).sqrt();
        let inv_sqrt_a = 1.0 / a.sqrt();
        let inner = z_t.zip_map(eps_hat, |z, e| {
            let m = (z - k_eps * e) * inv_sqrt_a;
            c_out * m + c_skip * z
        });
        if t == 1 {
            return Ok(inner);
        }
        fresh.ensure_shape(z_t.shape(), "fresh noise")?;
        let a_prev = schedule.alpha(t - 1)?;
        let ab_prev = schedule.alpha_bar(t - 1)?;
        let k_noise = (1.0 - a_prev) / (1.0 - ab_prev).sqrt();
        inner.axpby(a_prev.sqrt(), fresh, k_noise)
    }
}

/// Clean-sample prediction variant:
/// `x0_hat = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)`,
/// `f = c_out(t) x0_hat + c_skip(t) z_t`, re-noised to `t - 1` by the forward
/// process (returned directly at `t = 1`).
#[derive(Debug, Clone, Copy, Default)]
pub struct CleanPredictionUpdate;

impl UpdateRule for CleanPredictionUpdate {
    fn name(&self) -> &'static str {
        "x0"
    }

    fn step(
        &self,
        schedule: &Schedule,
        z_t: &Latent,
        t: usize,
        eps_hat: &Latent,
        fresh: &Latent,
    ) -> Result<Latent> {
        eps_hat.ensure_shape(z_t.shape(), "noise prediction")?;
        let ab = schedule.alpha_bar(t)?;
        let (c_skip, c_out) = (schedule.c_skip(t)?, schedule.c_out(t)?);
        let (sa, ss) = (ab.sqrt(), (1.0 - ab).sqrt());
        let f = z_t.zip_map(eps_hat, |z, e| c_out * (z - ss * e) / sa + c_skip * z);
        if t == 1 {
            return Ok(f);
        }
        forward_noise(&f, t - 1, fresh, schedule)
    }
}

/// [`PosteriorMeanUpdate`] as a free function.
pub fn reverse_step(
    z_t: &Latent,
    t: usize,
    eps_hat: &Latent,
    schedule: &Schedule,
    fresh: &Latent,
) -> Result<Latent> {
    PosteriorMeanUpdate.step(schedule, z_t, t, eps_hat, fresh)
}

/// `alpha_l * eps_local + (1 - alpha_l) * eps_global`.
///
/// The guidance rule is stated for scores; at fixed `t` the score is
/// `-eps / sqrt(1 - abar_t)`, so the same affine mix applies to noise
/// predictions. `alpha_l` of exactly 1 or 0 returns the corresponding input
/// unchanged.
pub fn leg_mix(eps_local: &Latent, eps_global: &Latent, alpha_l: f64) -> Result<Latent> {
    eps_global.ensure_shape(eps_local.shape(), "global noise prediction")?;
    if alpha_l == 1.0 {
        return Ok(eps_local.clone());
    }
    if alpha_l == 0.0 {
        return Ok(eps_global.clone());
    }
    eps_local.axpby(alpha_l, eps_global, 1.0 - alpha_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePath {
    Global,
    Local,
    Dual,
}

impl std::str::FromStr for SamplePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SamplePath::Global),
            "local" => Ok(SamplePath::Local),
            "dual" => Ok(SamplePath::Dual),
            other => Err(Error::Config(format!("unknown sampling path `{other}`"))),
        }
    }
}

#[derive(Clone)]
pub struct SamplerConfig {
    pub steps: usize,
    pub alpha_l: f64,
    pub seed: u64,
    pub path: SamplePath,
    /// Both paths draw from the same noise stream instead of `seed` and `seed ^ 1`.
    pub shared_noise: bool,
    /// Run the two paths of a dual sample on separate threads.
    pub parallel: bool,
    pub rule: Arc<dyn UpdateRule>,
}

impl fmt::Debug for SamplerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplerConfig")
            .field("steps", &self.steps)
            .field("alpha_l", &self.alpha_l)
            .field("seed", &self.seed)
            .field("path", &self.path)
            .field("shared_noise", &self.shared_noise)
            .field("parallel", &self.parallel)
            .field("rule", &self.rule.name())
            .finish()
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: crate::scheduler::DEFAULT_STEPS,
            alpha_l: DEFAULT_ALPHA_L,
            seed: 0,
            path: SamplePath::Dual,
            shared_noise: false,
            parallel: false,
            rule: Arc::new(PosteriorMeanUpdate),
        }
    }
}

impl SamplerConfig {
    fn validate(&self, schedule: &Schedule) -> Result<()> {
        if self.steps != schedule.steps() {
            return Err(Error::Config(format!(
                "sampler expects {} steps but the schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        if !self.alpha_l.is_finite() || self.alpha_l < 0.0 {
            return Err(Error::Config(format!(
                "alpha_l must be finite and non-negative, got {}",
                self.alpha_l
            )));
        }
        Ok(())
    }
}

/// Conditioning latents for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditions {
    pub global: Condition,
    pub local: Condition,
}

impl Conditions {
    pub fn new(global: Latent, local: Latent) -> Result<Self> {
        local.ensure_shape(global.shape(), "local condition")?;
        Ok(Self {
            global: Condition::global(global),
            local: Condition::local(local),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualResult {
    pub global_latent: Latent,
    pub local_latent: Latent,
}

/// Runs the reverse process from `z_T ~ N(0, I)` along one path.
///
/// The global path predicts with the global condition; the local path mixes
/// local and global predictions by [`leg_mix`].
pub fn sample(
    denoiser: &dyn NoiseEstimator,
    conds: &Conditions,
    schedule: &Schedule,
    config: &SamplerConfig,
) -> Result<Latent> {
    config.validate(schedule)?;
    let local = match config.path {
        SamplePath::Global => false,
        SamplePath::Local => true,
        SamplePath::Dual => {
            return Err(Error::InvalidArgument(
                "dual sampling goes through dual_path_sample".into(),
            ))
        }
    };
    let shape = conds.global.latent.shape();
    let stream = NoiseStream::new(config.seed);
    let mut z = Latent::from_shape_vec(shape, stream.gaussian(0, conds.global.latent.len()))?;
    let alpha_l = config.alpha_l;
    for t in (1..=schedule.steps()).rev() {
        let eps_hat = if !local || alpha_l == 0.0 {
            denoiser.predict_noise(&z, t, &conds.global)?
        } else if alpha_l == 1.0 {
            denoiser.predict_noise(&z, t, &conds.local)?
        } else {
            let el = denoiser.predict_noise(&z, t, &conds.local)?;
            let eg = denoiser.predict_noise(&z, t, &conds.global)?;
            leg_mix(&el, &eg, alpha_l)?
        };
        let fresh = if t > 1 {
            Latent::from_shape_vec(shape, stream.gaussian(t as u64, z.len()))?
        } else {
            Latent::zeros((1, 1, 1))
        };
        z = config.rule.step(schedule, &z, t, &eps_hat, &fresh)?;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite("sampled latent".into()));
    }
    Ok(z)
}

/// Global and local paths with independent noise streams (`seed`, `seed ^ 1`)
/// unless `shared_noise` is set.
pub fn dual_path_sample(
    denoiser: &dyn NoiseEstimator,
    conds: &Conditions,
    schedule: &Schedule,
    config: &SamplerConfig,
) -> Result<DualResult> {
    let global_cfg = SamplerConfig {
        path: SamplePath::Global,
        ..config.clone()
    };
    let local_cfg = SamplerConfig {
        path: SamplePath::Local,
        seed: if config.shared_noise {
            config.seed
        } else {
            config.seed ^ 1
        },
        ..config.clone()
    };
    let (global_latent, local_latent) = if config.parallel {
        std::thread::scope(|s| {
            let g = s.spawn(|| sample(denoiser, conds, schedule, &global_cfg));
            let l = sample(denoiser, conds, schedule, &local_cfg);
            (g.join().expect("global path panicked"), l)
        })
    } else {
        (
            sample(denoiser, conds, schedule, &global_cfg),
            sample(denoiser, conds, schedule, &local_cfg),
        )
    };
    Ok(DualResult {
        global_latent: global_latent?,
        local_latent: local_latent?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::make_schedule;

    fn scalar(v: f64) -> Latent {
        Latent::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn forward_noise_edge_cases() {
        let s = make_schedule(50, 0.00085, 0.012, 0.5).unwrap();
        let z0 = scalar(0.3);
        let ab = s.alpha_bar(20).unwrap();
        let no_noise = forward_noise(&z0, 20, &scalar(0.0), &s).unwrap();
        assert_eq!(no_noise.values()[0], ab.sqrt() * 0.3);
        let only_noise = forward_noise(&scalar(0.0), 20, &scalar(2.0), &s).unwrap();
        assert_eq!(only_noise.values()[0], (1.0 - ab).sqrt() * 2.0);
        assert!(forward_noise(&z0, 51, &scalar(0.0), &s).is_err());
        assert!(forward_noise(&z0, 1, &Latent::zeros((1, 1, 2)), &s).is_err());
    }

    #[test]
    fn leg_mix_cases() {
        let l = scalar(1.0);
        let g = scalar(0.0);
        assert_eq!(leg_mix(&l, &g, 1.0).unwrap(), l);
        assert_eq!(leg_mix(&l, &g, 0.0).unwrap(), g);
        assert_eq!(leg_mix(&l, &g, 3.0).unwrap().values()[0], 3.0);
        assert!(leg_mix(&l, &Latent::zeros((2, 1, 1)), 3.0).is_err());
    }

    #[test]
    fn final_step_has_no_noise() {
        let s = make_schedule(50, 0.00085, 0.012, 0.5).unwrap();
        let z1 = scalar(0.4);
        // eps_hat = 0 makes m = z_1 / sqrt(a_1)
        let out = reverse_step(&z1, 1, &scalar(0.0), &s, &scalar(123.0)).unwrap();
        let m = 0.4 / s.alpha(1).unwrap().sqrt();
        let expect = s.c_out(1).unwrap() * m + s.c_skip(1).unwrap() * 0.4;
        assert_eq!(out.values()[0], expect);
    }

    #[test]
    fn path_parsing() {
        assert_eq!("local".parse::<SamplePath>().unwrap(), SamplePath::Local);
        assert!("fused".parse::<SamplePath>().is_err());
    }
}
