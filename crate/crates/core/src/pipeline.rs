//! End-to-end orchestration: mask, encode, sample, decode, fuse, evaluate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::denoiser::{
    load_checkpoint, NoiseEstimator, OracleDenoiser, TrainPair, ZeroDenoiser,
};
use crate::error::{Error, Result, StageExt};
use crate::fusion::FusionStrategy;
use crate::image::{Image, Mask};
use crate::io;
use crate::latent::Latent;
use crate::metrics::{self, ImageMetrics, MeanStd, MetricsReport, BONE_THRESHOLD};
use crate::phantom::{PhantomParams, PhantomSample, StoredSample};
use crate::registry;
use crate::sampler::{self, Conditions, SamplePath, SamplerConfig};
use crate::scheduler::{self, make_schedule, Schedule, TimeScaling};
use crate::segmentation::{apply_mask, MaskProvider};

/// Which sampler outputs a run produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputPath {
    Global,
    Local,
    /// Both paths, no fusion.
    Dual,
    /// Both paths merged by the configured fusion strategy.
    Fused,
}

impl FromStr for OutputPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(OutputPath::Global),
            "local" => Ok(OutputPath::Local),
            "dual" => Ok(OutputPath::Dual),
            "fused" => Ok(OutputPath::Fused),
            other => Err(Error::Config(format!(
                "unknown path `{other}` (expected global, local, dual or fused)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_data: f64,
    /// `"absolute"` (`tau = time_scale * t`) or `"normalized"` (`tau = t / T`).
    pub time_scaling: String,
    pub time_scale: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            beta_start: scheduler::DEFAULT_BETA_START,
            beta_end: scheduler::DEFAULT_BETA_END,
            sigma_data: scheduler::DEFAULT_SIGMA_DATA,
            time_scaling: "absolute".into(),
            time_scale: DEFAULT_TIME_SCALE,
        }
    }
}

pub const DEFAULT_TIME_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: usize,
    pub alpha_l: f64,
    pub seed: u64,
    pub path: OutputPath,
    pub update_rule: String,
    pub shared_noise: bool,
    pub parallel: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: scheduler::DEFAULT_STEPS,
            alpha_l: sampler::DEFAULT_ALPHA_L,
            seed: 0,
            path: OutputPath::Fused,
            update_rule: "posterior".into(),
            shared_noise: false,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub codec: String,
    /// `oracle`, `zero`, or a toy architecture (`linear`, `conv`, `conv_plain`) loaded from `checkpoint`.
    pub denoiser: String,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            codec: "identity".into(),
            denoiser: "oracle".into(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub provider: String,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            provider: "phantom_truth".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub strategy: String,
    pub tol: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            strategy: "poisson".into(),
            tol: crate::fusion::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out_prefix: Option<PathBuf>,
}

/// Everything a run needs, loadable from a TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schedule: ScheduleSection,
    pub sampler: SamplerSection,
    pub model: ModelSection,
    pub mask: MaskSection,
    pub fusion: FusionSection,
    pub io: IoSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.steps == 0 {
            return Err(Error::Config("sampler.steps must be at least 1".into()));
        }
        if !(s.alpha_l.is_finite() && s.alpha_l >= 0.0) {
            return Err(Error::Config(format!("sampler.alpha_l must be >= 0, got {}", s.alpha_l)));
        }
        if !(self.fusion.tol > 0.0 && self.fusion.tol < 1.0) {
            return Err(Error::Config(format!("fusion.tol must be in (0, 1), got {}", self.fusion.tol)));
        }
        self.time_scaling()?;
        let files = [&self.model.checkpoint, &self.io.input, &self.io.mask, &self.io.gt];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn time_scaling(&self) -> Result<TimeScaling> {
        match self.schedule.time_scaling.as_str() {
            "normalized" => Ok(TimeScaling::Normalized),
            "absolute" if self.schedule.time_scale > 0.0 && self.schedule.time_scale.is_finite() => {
                Ok(TimeScaling::Absolute(self.schedule.time_scale))
            }
            "absolute" => Err(Error::Config(format!(
                "schedule.time_scale must be positive, got {}",
                self.schedule.time_scale
            ))),
            other => Err(Error::Config(format!(
                "schedule.time_scaling `{other}` is neither absolute nor normalized"
            ))),
        }
    }

    pub fn build_schedule(&self) -> Result<Schedule> {
        let s = &self.schedule;
        Ok(make_schedule(self.sampler.steps, s.beta_start, s.beta_end, s.sigma_data)
            .map_err(|e| Error::Config(e.to_string()))?
            .with_time_scaling(self.time_scaling()?))
    }
}

enum DenoiserChoice {
    /// Built per image from its ground truth.
    Oracle,
    Fixed(Arc<dyn NoiseEstimator>),
}

/// One image to process.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub id: String,
    pub cxr: Image,
    /// Precomputed lung mask; otherwise the configured provider runs.
    pub mask: Option<Mask>,
    pub meta: Option<PhantomParams>,
    pub gt_soft: Option<Image>,
}

impl PipelineInput {
    pub fn new(id: impl Into<String>, cxr: Image) -> Self {
        Self {
            id: id.into(),
            cxr,
            mask: None,
            meta: None,
            gt_soft: None,
        }
    }
}

impl From<&PhantomSample> for PipelineInput {
    fn from(s: &PhantomSample) -> Self {
        Self {
            id: s.id(),
            cxr: s.cxr.clone(),
            mask: None,
            meta: Some(s.params.clone()),
            gt_soft: Some(s.soft.clone()),
        }
    }
}

impl From<&StoredSample> for PipelineInput {
    fn from(s: &StoredSample) -> Self {
        Self {
            id: s.id.clone(),
            cxr: s.cxr.clone(),
            mask: Some(s.lung_mask.clone()),
            meta: Some(s.params.clone()),
            gt_soft: Some(s.soft.clone()),
        }
    }
}

/// Wall-clock seconds per stage of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub mask: f64,
    pub encode: f64,
    pub sampling: f64,
    pub decode: f64,
    pub fusion: f64,
    pub metrics: f64,
    pub io: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.mask + self.encode + self.sampling + self.decode + self.fusion + self.metrics + self.io
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub mask: Mask,
    pub global: Option<Image>,
    pub local: Option<Image>,
    pub fused: Option<Image>,
    pub metrics: Option<ImageMetrics>,
    pub timings: StageTimings,
}

impl PipelineOutput {
    /// Fused image when present, else whichever single path ran.
    pub fn primary(&self) -> &Image {
        self.fused
            .as_ref()
            .or(self.global.as_ref())
            .or(self.local.as_ref())
            .expect("a run produces at least one image")
    }
}

/// Global and local conditioning latents: the full image and the lung region
/// with everything outside the mask set to 0.
pub fn conditions(codec: &dyn Codec, cxr: &Image, mask: &Mask) -> Result<Conditions> {
    Conditions::new(codec.encode(cxr)?, codec.encode(&apply_mask(cxr, mask)?)?)
}

/// Clean latents for the two paths. Both are the full soft-tissue image:
/// Poisson fusion reads the local result one pixel beyond the mask, so the
/// local path has to be meaningful there too.
pub fn targets(codec: &dyn Codec, soft: &Image, mask: &Mask) -> Result<(Latent, Latent)> {
    soft.ensure_same_dims(mask.dims(), "soft-tissue image")?;
    let z = codec.encode(soft)?;
    Ok((z.clone(), z))
}

/// The global and local training pairs of one sample.
pub fn training_pairs(codec: &dyn Codec, cxr: &Image, soft: &Image, mask: &Mask) -> Result<[TrainPair; 2]> {
    let conds = conditions(codec, cxr, mask)?;
    let (global, local) = targets(codec, soft, mask)?;
    Ok([
        TrainPair {
            target: global,
            condition: conds.global,
        },
        TrainPair {
            target: local,
            condition: conds.local,
        },
    ])
}

/// Pixels where `cxr - soft` exceeds the bone threshold.
pub fn bone_mask_from_pair(cxr: &Image, soft: &Image) -> Result<Mask> {
    soft.ensure_same_dims(cxr.dims(), "soft-tissue image")?;
    let (h, w) = cxr.dims();
    Ok(Mask::from_fn(h, w, |y, x| cxr.get(y, x) - soft.get(y, x) > BONE_THRESHOLD))
}

/// A configured pipeline with every strategy resolved.
pub struct Pipeline {
    config: PipelineConfig,
    schedule: Schedule,
    sampler: SamplerConfig,
    codec: Box<dyn Codec>,
    denoiser: DenoiserChoice,
    mask_provider: Box<dyn MaskProvider>,
    fusion: Box<dyn FusionStrategy>,
}

impl Pipeline {
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.build_schedule()?;
        let codec = registry::codecs().build(&config.model.codec, &())?;
        let s = &config.sampler;
        let sampler = SamplerConfig {
            steps: s.steps,
            alpha_l: s.alpha_l,
            seed: s.seed,
            path: SamplePath::Dual,
            shared_noise: s.shared_noise,
            parallel: s.parallel,
            rule: registry::update_rules().build(&s.update_rule, &())?,
        };
        let denoiser = match config.model.denoiser.as_str() {
            "oracle" => DenoiserChoice::Oracle,
            "zero" => DenoiserChoice::Fixed(Arc::new(ZeroDenoiser)),
            name @ ("linear" | "conv" | "conv_plain") => {
                let path = config.model.checkpoint.as_ref().ok_or_else(|| {
                    Error::Config(format!("the {name} denoiser needs model.checkpoint"))
                })?;
                let model = load_checkpoint(path)?;
                if model.name() != name {
                    return Err(Error::Config(format!(
                        "{} holds a {} model, configured as {name}",
                        path.display(),
                        model.name()
                    )));
                }
                if model.architecture().steps != s.steps {
                    return Err(Error::Config(format!(
                        "checkpoint was trained for {} steps, sampler uses {}",
                        model.architecture().steps,
                        s.steps
                    )));
                }
                DenoiserChoice::Fixed(Arc::new(model))
            }
            other => {
                return Err(Error::UnknownStrategy {
                    family: "denoiser",
                    name: other.into(),
                    known: "oracle, zero, linear, conv, conv_plain".into(),
                })
            }
        };
        Ok(Self {
            config: config.clone(),
            schedule,
            sampler,
            codec,
            denoiser,
            mask_provider: registry::mask_providers().build(&config.mask.provider, &())?,
            fusion: registry::fusions().build(&config.fusion.strategy, &config.fusion.tol)?,
        })
    }

    /// Uses an in-memory noise estimator instead of the configured one.
    pub fn with_denoiser(mut self, denoiser: Arc<dyn NoiseEstimator>) -> Self {
        self.denoiser = DenoiserChoice::Fixed(denoiser);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn codec(&self) -> &dyn Codec {
        &*self.codec
    }

    fn estimator(&self, input: &PipelineInput, mask: &Mask) -> Result<Arc<dyn NoiseEstimator>> {
        match &self.denoiser {
            DenoiserChoice::Fixed(d) => Ok(d.clone()),
            DenoiserChoice::Oracle => {
                let gt = input.gt_soft.as_ref().ok_or_else(|| {
                    Error::Config("the oracle denoiser needs a ground-truth soft-tissue image".into())
                })?;
                let (global, local) = targets(&*self.codec, gt, mask)?;
                Ok(Arc::new(OracleDenoiser::new(&self.schedule, global).with_local_target(local)?))
            }
        }
    }

    pub fn lung_mask(&self, input: &PipelineInput) -> Result<Mask> {
        match &input.mask {
            Some(m) if m.dims() == input.cxr.dims() => Ok(m.clone()),
            Some(m) => Err(Error::shape(format!("mask {:?}", input.cxr.dims()), format!("{:?}", m.dims()))),
            None => self.mask_provider.lung_mask(&input.cxr, input.meta.as_ref()),
        }
    }

    /// Runs every stage, writing artifacts under `out_dir` as soon as each exists.
    pub fn run(&self, input: &PipelineInput, out_dir: Option<&Path>) -> Result<PipelineOutput> {
        self.run_with(input, out_dir, self.config.sampler.path, self.sampler.alpha_l, &*self.fusion)
    }

    fn run_with(
        &self,
        input: &PipelineInput,
        out_dir: Option<&Path>,
        path: OutputPath,
        alpha_l: f64,
        fusion: &dyn FusionStrategy,
    ) -> Result<PipelineOutput> {
        let mut tm = StageTimings::default();
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(Error::from).stage("io")?;
        }
        let write = |tm: &mut StageTimings, name: &str, img: &Image| -> Result<()> {
            if let Some(dir) = out_dir {
                let clock = Instant::now();
                io::write_image(dir.join(name), img).stage("io")?;
                tm.io += clock.elapsed().as_secs_f64();
            }
            Ok(())
        };

        let clock = Instant::now();
        let mask = self.lung_mask(input).stage("mask")?;
        tm.mask = clock.elapsed().as_secs_f64();
        write(&mut tm, "mask.pgm", &mask.to_image())?;

        let clock = Instant::now();
        let conds = conditions(&*self.codec, &input.cxr, &mask).stage("encode")?;
        let denoiser = self.estimator(input, &mask).stage("encode")?;
        tm.encode = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let cfg = SamplerConfig {
            alpha_l,
            ..self.sampler.clone()
        };
        let single = |p: SamplePath| {
            sampler::sample(&*denoiser, &conds, &self.schedule, &SamplerConfig { path: p, ..cfg.clone() })
        };
        let (global_latent, local_latent) = match path {
            OutputPath::Global => (Some(single(SamplePath::Global).stage("sampling")?), None),
            OutputPath::Local => (None, Some(single(SamplePath::Local).stage("sampling")?)),
            OutputPath::Dual | OutputPath::Fused => {
                let r = sampler::dual_path_sample(&*denoiser, &conds, &self.schedule, &cfg).stage("sampling")?;
                (Some(r.global_latent), Some(r.local_latent))
            }
        };
        tm.sampling = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let decode = |z: Option<_>| z.map(|z| self.codec.decode(&z)).transpose().stage("decode");
        let global = decode(global_latent)?;
        let local = decode(local_latent)?;
        tm.decode = clock.elapsed().as_secs_f64();
        if let Some(g) = &global {
            write(&mut tm, "global.pgm", g)?;
        }
        if let Some(l) = &local {
            write(&mut tm, "local.pgm", l)?;
        }

        let fused = match (path, &global, &local) {
            (OutputPath::Fused, Some(g), Some(l)) => {
                let clock = Instant::now();
                let f = fusion.fuse(g, l, &mask).stage("fusion")?;
                tm.fusion = clock.elapsed().as_secs_f64();
                write(&mut tm, "fused.pgm", &f)?;
                write(&mut tm, "fused.f32", &f)?;
                Some(f)
            }
            _ => None,
        };

        let mut out = PipelineOutput {
            mask,
            global,
            local,
            fused,
            metrics: None,
            timings: tm,
        };
        if let Some(gt) = &input.gt_soft {
            let clock = Instant::now();
            let m = (|| {
                let bones = bone_mask_from_pair(&input.cxr, gt)?;
                metrics::evaluate(input.id.clone(), out.primary(), &input.cxr, gt, &bones, &out.mask)
            })()
            .stage("metrics")?;
            out.metrics = Some(m);
            out.timings.metrics = clock.elapsed().as_secs_f64();
        }
        Ok(out)
    }

    /// Runs every input and collects per-image metrics (inputs without ground truth are skipped).
    pub fn evaluate(&self, inputs: &[PipelineInput]) -> Result<MetricsReport> {
        let mut rows = Vec::new();
        for input in inputs {
            if let Some(m) = self.run(input, None)?.metrics {
                rows.push(m);
            }
        }
        Ok(MetricsReport::new(rows))
    }
}

/// Per-stage timing statistics over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub steps: usize,
    pub repetitions: usize,
    pub sampling: MeanStd,
    pub fusion: MeanStd,
    pub io: MeanStd,
    pub total: MeanStd,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("steps {}\nrepetitions {}\n", self.steps, self.repetitions);
        for (name, s) in [
            ("sampling", self.sampling),
            ("fusion", self.fusion),
            ("io", self.io),
            ("total", self.total),
        ] {
            writeln!(out, "{name:<9} {:.4} s ± {:.4}", s.mean, s.std).unwrap();
        }
        out
    }
}

/// Times `repetitions` runs after one untimed warm-up run.
pub fn bench(
    pipeline: &Pipeline,
    input: &PipelineInput,
    repetitions: usize,
    out_dir: Option<&Path>,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("bench needs at least one repetition".into()));
    }
    pipeline.run(input, out_dir)?;
    let mut runs = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        runs.push(pipeline.run(input, out_dir)?.timings);
    }
    let stat = |f: fn(&StageTimings) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(BenchReport {
        steps: pipeline.schedule.steps(),
        repetitions,
        sampling: stat(|t| t.sampling),
        fusion: stat(|t| t.fusion),
        io: stat(|t| t.io),
        total: stat(StageTimings::total),
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub group: &'static str,
    pub variant: String,
    pub report: MetricsReport,
}

/// Guidance rows (vanilla `alpha_l = 1` against the configured weight, both
/// Poisson-fused) and fusion rows (none, alpha, poisson at the configured weight).
pub fn ablation(pipeline: &Pipeline, inputs: &[PipelineInput]) -> Result<Vec<AblationRow>> {
    if inputs.iter().any(|i| i.gt_soft.is_none()) {
        return Err(Error::InvalidArgument("ablation needs ground truth for every input".into()));
    }
    let alpha = pipeline.sampler.alpha_l;
    let fusions = registry::fusions();
    let tol = pipeline.config.fusion.tol;
    let variants: Vec<(&'static str, String, f64, Box<dyn FusionStrategy>)> = vec![
        ("guidance", "alpha_l=1 (vanilla)".into(), 1.0, fusions.build("poisson", &tol)?),
        ("guidance", format!("alpha_l={alpha} (LEG)"), alpha, fusions.build("poisson", &tol)?),
        ("fusion", "none (global path)".into(), alpha, fusions.build("none", &tol)?),
        ("fusion", "alpha composite".into(), alpha, fusions.build("alpha", &tol)?),
        ("fusion", "poisson".into(), alpha, fusions.build("poisson", &tol)?),
    ];
    variants
        .into_iter()
        .map(|(group, variant, a, fusion)| {
            let rows = inputs
                .iter()
                .map(|input| {
                    let out = pipeline.run_with(input, None, OutputPath::Fused, a, &*fusion)?;
                    Ok(out.metrics.expect("ground truth present"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow {
                group,
                variant,
                report: MetricsReport::new(rows),
            })
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<9} {:<22} {:>16} {:>16} {:>16} {:>16}\n",
        "group", "variant", "BSR(%)", "MSE(1e-3)", "PSNR(dB)", "grad_sim"
    );
    let cell = |s: MeanStd, k: f64| format!("{:.3}±{:.3}", k * s.mean, k * s.std);
    for r in rows {
        writeln!(
            out,
            "{:<9} {:<22} {:>16} {:>16} {:>16} {:>16}",
            r.group,
            r.variant,
            cell(r.report.bsr(), 100.0),
            cell(r.report.mse(), 1e3),
            cell(r.report.psnr(), 1.0),
            cell(r.report.grad_sim(), 1.0),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.sampler.steps, 50);
        assert_eq!(cfg.sampler.alpha_l, 3.0);
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("[sampler]\nseed = 9\npath = \"global\"\n").unwrap();
        assert_eq!(cfg.sampler.seed, 9);
        assert_eq!(cfg.sampler.path, OutputPath::Global);
        assert_eq!(cfg.fusion.strategy, "poisson");
    }

    #[test]
    fn config_errors_are_config_errors() {
        assert_eq!(PipelineConfig::from_toml("[sampler]\nbogus = 1\n").unwrap_err().exit_code(), 2);
        let mut cfg = PipelineConfig::default();
        cfg.sampler.alpha_l = -1.0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = PipelineConfig::default();
        cfg.model.codec = "jpeg".into();
        assert_eq!(Pipeline::from_config(&cfg).err().unwrap().exit_code(), 2);
        let mut cfg = PipelineConfig::default();
        cfg.io.input = Some("/nonexistent/x.pgm".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn oracle_without_ground_truth_is_rejected() {
        let p = Pipeline::from_config(&PipelineConfig::default()).unwrap();
        let mut input = PipelineInput::new("x", Image::filled(8, 8, 0.5));
        input.mask = Some(Mask::full(8, 8));
        let err = p.run(&input, None).unwrap_err();
        assert!(err.to_string().starts_with("encode:"), "{err}");
    }
}
