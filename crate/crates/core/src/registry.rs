//! Name -> constructor tables for every swappable strategy.
//!
//! Configuration files and the CLI refer to strategies by the names listed
//! here; adding a variant means registering one more constructor.

use std::sync::Arc;

use crate::codec::{Codec, IdentityCodec, PatchCodec};
use crate::denoiser::Architecture;
use crate::error::{Error, Result};
use crate::fusion::{AlphaFusion, FusionStrategy, GlobalOnly, PoissonFusion};
use crate::scheduler::Schedule;
use crate::sampler::{CleanPredictionUpdate, PosteriorMeanUpdate, UpdateRule};
use crate::segmentation::{MaskProvider, OtsuThreshold, PhantomTruth};

type Ctor<T, A> = Box<dyn Fn(&A) -> Result<T> + Send + Sync>;

pub struct Registry<T, A = ()> {
    family: &'static str,
    entries: Vec<(&'static str, Ctor<T, A>)>,
}

impl<T, A> Registry<T, A> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: Vec::new(),
        }
    }

    /// Adds or replaces the constructor registered under `name`.
    pub fn register(
        &mut self,
        name: &'static str,
        ctor: impl Fn(&A) -> Result<T> + Send + Sync + 'static,
    ) -> &mut Self {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, Box::new(ctor)));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, name: &str, args: &A) -> Result<T> {
        match self.entries.iter().find(|(n, _)| *n == name) {
            Some((_, ctor)) => ctor(args),
            None => Err(Error::UnknownStrategy {
                family: self.family,
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }
}

pub fn codecs() -> Registry<Box<dyn Codec>> {
    let mut r = Registry::new("codec");
    r.register("identity", |_| Ok(Box::new(IdentityCodec) as Box<dyn Codec>));
    for (name, k) in [("patch2", 2), ("patch4", 4), ("patch8", 8)] {
        r.register(name, move |_| Ok(Box::new(PatchCodec::new(k)?) as Box<dyn Codec>));
    }
    r
}

pub fn update_rules() -> Registry<Arc<dyn UpdateRule>> {
    let mut r = Registry::new("update rule");
    r.register("posterior", |_| Ok(Arc::new(PosteriorMeanUpdate) as Arc<dyn UpdateRule>));
    r.register("x0", |_| Ok(Arc::new(CleanPredictionUpdate) as Arc<dyn UpdateRule>));
    r
}

pub fn mask_providers() -> Registry<Box<dyn MaskProvider>> {
    let mut r = Registry::new("mask provider");
    r.register("phantom_truth", |_| Ok(Box::new(PhantomTruth) as Box<dyn MaskProvider>));
    r.register("threshold", |_| Ok(Box::new(OtsuThreshold) as Box<dyn MaskProvider>));
    r
}

/// Fusion constructors take the CG tolerance.
pub fn fusions() -> Registry<Box<dyn FusionStrategy>, f64> {
    let mut r = Registry::new("fusion");
    r.register("poisson", |&tol| {
        if !(tol > 0.0) {
            return Err(Error::Config(format!("fusion tolerance {tol} must be positive")));
        }
        Ok(Box::new(PoissonFusion { tol }) as Box<dyn FusionStrategy>)
    });
    r.register("alpha", |_| Ok(Box::new(AlphaFusion) as Box<dyn FusionStrategy>));
    r.register("none", |_| Ok(Box::new(GlobalOnly) as Box<dyn FusionStrategy>));
    r
}

/// Toy architectures take the latent channel count and the schedule, which
/// sets the step count and the noise-level input scaling.
pub fn architectures() -> Registry<Architecture, (usize, Schedule)> {
    let mut r = Registry::new("architecture");
    r.register("linear", |(c, s): &(usize, Schedule)| Architecture::linear(*c, s.steps()).scaled_by(s));
    r.register("conv", |(c, s): &(usize, Schedule)| Architecture::conv(*c, s.steps()).scaled_by(s));
    r.register("conv_plain", |(c, s): &(usize, Schedule)| {
        Architecture::conv_plain(*c, s.steps()).scaled_by(s)
    });
    r
}
