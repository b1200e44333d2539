use super::{Condition, ConditionKind, NoiseEstimator};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::scheduler::Schedule;

/// Analytic noise estimator that knows the clean latent for each condition
/// kind and inverts the forward process exactly:
/// `eps = (z_t - sqrt(abar_t) z_0) / sqrt(1 - abar_t)`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    alpha_bar: Vec<f64>,
    global_target: Latent,
    local_target: Latent,
}

impl OracleDenoiser {
    pub fn new(schedule: &Schedule, target: Latent) -> Self {
        Self {
            alpha_bar: schedule.alpha_bars().to_vec(),
            local_target: target.clone(),
            global_target: target,
        }
    }

    pub fn with_local_target(mut self, target: Latent) -> Result<Self> {
        target.ensure_shape(self.global_target.shape(), "local oracle target")?;
        self.local_target = target;
        Ok(self)
    }

    pub fn target(&self, kind: ConditionKind) -> &Latent {
        match kind {
            ConditionKind::Global => &self.global_target,
            ConditionKind::Local => &self.local_target,
        }
    }
}

impl NoiseEstimator for OracleDenoiser {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_noise(&self, z_t: &Latent, t: usize, cond: &Condition) -> Result<Latent> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(Error::Timestep {
                t,
                max: self.alpha_bar.len(),
            });
        }
        let target = self.target(cond.kind);
        z_t.ensure_shape(target.shape(), "oracle input")?;
        cond.latent.ensure_shape(target.shape(), "condition")?;
        let ab = self.alpha_bar[t - 1];
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(z_t.zip_map(target, |z, x0| (z - a * x0) / s))
    }
}
