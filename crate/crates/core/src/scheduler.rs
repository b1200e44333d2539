//! Timestep-indexed noise quantities and the consistency boundary coefficients.
//!
//! Timesteps are 1-indexed (`t = 1..=T`); `t = 0` exists only as the boundary
//! of the consistency coefficients, where `c_skip(0) = 1` and `c_out(0) = 0`.
//!
//! Betas follow a "scaled linear" schedule: linear interpolation in
//! `sqrt(beta)` between the two endpoints, then squared.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;
pub const DEFAULT_SIGMA_DATA: f64 = 0.5;

/// Maps a timestep onto the argument `tau` of the boundary coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeScaling {
    /// `tau = t / T`.
    Normalized,
    /// `tau = k * t`, the timestep-scaling convention of latent consistency models.
    Absolute(f64),
}

impl Default for TimeScaling {
    fn default() -> Self {
        TimeScaling::Normalized
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_data: f64,
    time_scaling: TimeScaling,
}

pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    sigma_data: f64,
) -> Result<Schedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta range [{beta_start}, {beta_end}] must lie inside (0, 1)"
        )));
    }
    if beta_start > beta_end {
        return Err(Error::InvalidArgument(format!(
            "beta_start {beta_start} exceeds beta_end {beta_end}"
        )));
    }
    if !(sigma_data > 0.0) || !sigma_data.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_data must be positive, got {sigma_data}"
        )));
    }

    let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            // endpoints are taken verbatim so they survive the sqrt/square round trip
            if i == 0 {
                beta_start
            } else if i == steps - 1 {
                beta_end
            } else {
                let frac = i as f64 / (steps - 1) as f64;
                let r = lo + frac * (hi - lo);
                r * r
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }

    Ok(Schedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma_data,
        time_scaling: TimeScaling::Normalized,
    })
}

impl Schedule {
    pub fn with_time_scaling(mut self, scaling: TimeScaling) -> Self {
        self.time_scaling = scaling;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn time_scaling(&self) -> TimeScaling {
        self.time_scaling
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps {
            return Err(Error::Timestep {
                t,
                max: self.steps,
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn tau(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::Timestep {
                t,
                max: self.steps,
            });
        }
        Ok(match self.time_scaling {
            TimeScaling::Normalized => t as f64 / self.steps as f64,
            TimeScaling::Absolute(k) => k * t as f64,
        })
    }

    /// `sigma_data^2 / (tau^2 + sigma_data^2)`; exactly 1 at `t = 0`.
    pub fn c_skip(&self, t: usize) -> Result<f64> {
        let tau = self.tau(t)?;
        let s2 = self.sigma_data * self.sigma_data;
        Ok(s2 / (tau * tau + s2))
    }

    /// `tau / sqrt(tau^2 + sigma_data^2)`; exactly 0 at `t = 0`.
    pub fn c_out(&self, t: usize) -> Result<f64> {
        let tau = self.tau(t)?;
        let s2 = self.sigma_data * self.sigma_data;
        Ok(tau / (tau * tau + s2).sqrt())
    }

    /// Plain-text table with one row per timestep: `t beta alpha alpha_bar c_skip c_out`.
    pub fn dump_table(&self) -> String {
        let mut out = String::from("# t beta alpha alpha_bar c_skip c_out\n");
        for t in 1..=self.steps {
            let i = t - 1;
            writeln!(
                out,
                "{t} {:e} {:e} {:e} {:e} {:e}",
                self.beta[i],
                self.alpha[i],
                self.alpha_bar[i],
                self.c_skip(t).unwrap(),
                self.c_out(t).unwrap()
            )
            .unwrap();
        }
        out
    }
}
