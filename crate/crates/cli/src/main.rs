//! Command-line front end for the bone-suppression pipeline.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bonesup_core::denoiser::{load_checkpoint, save_checkpoint, train, ToyDenoiser, TrainOptions, TrainPair};
use bonesup_core::error::{Error, Result};
use bonesup_core::fusion::poisson_fuse;
use bonesup_core::io::{read_image, read_mask, write_image};
use bonesup_core::phantom::{generate, generate_one, read_dataset, write_dataset, PhantomConfig};
use bonesup_core::pipeline::{
    ablation, ablation_table, bench, training_pairs, OutputPath, Pipeline, PipelineConfig, PipelineInput,
};
use bonesup_core::registry;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bonesup", version, about = "Bone suppression for chest radiographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom dataset (PGM planes plus manifest.csv).
    PhantomGen(PhantomGenArgs),
    /// Train a toy noise estimator on a phantom dataset.
    Train(TrainArgs),
    /// Run the pipeline on one image.
    Suppress(SuppressArgs),
    /// Poisson-fuse a global and a local image inside a mask.
    Fuse(FuseArgs),
    /// Evaluate the pipeline on a phantom dataset.
    Eval(EvalArgs),
    /// Time the pipeline stages on a phantom.
    Bench(BenchArgs),
    /// Print the noise schedule table.
    ScheduleDump(ScheduleDumpArgs),
}

/// Settings shared by every command that builds a pipeline.
#[derive(Args)]
struct PipelineArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Toy model checkpoint; without it the configured denoiser is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long = "alpha-l")]
    alpha_l: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long = "mask-provider")]
    mask_provider: Option<String>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.model {
            cfg.model.denoiser = load_checkpoint(p)?.architecture().name().to_string();
            cfg.model.checkpoint = Some(p.clone());
        }
        if let Some(v) = self.steps {
            cfg.sampler.steps = v;
        }
        if let Some(v) = self.alpha_l {
            cfg.sampler.alpha_l = v;
        }
        if let Some(v) = self.seed {
            cfg.sampler.seed = v;
        }
        if let Some(v) = &self.codec {
            cfg.model.codec = v.clone();
        }
        if let Some(v) = &self.mask_provider {
            cfg.mask.provider = v.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PhantomGenArgs {
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "data-dir")]
    data_dir: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Passes over the training pairs.
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long = "batch-size", default_value_t = 8)]
    batch_size: usize,
    /// linear, conv or conv_plain.
    #[arg(long, default_value = "conv")]
    arch: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct SuppressArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Lung mask; otherwise the configured mask provider runs.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Ground-truth soft-tissue image, for metrics and the oracle denoiser.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// global, local, dual or fused.
    #[arg(long)]
    path: Option<String>,
    /// Directory that receives mask.pgm, global.pgm, local.pgm and fused.pgm.
    #[arg(long = "out-prefix")]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    global: PathBuf,
    #[arg(long)]
    local: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = bonesup_core::fusion::DEFAULT_TOL)]
    tol: f64,
    /// `.f32` writes raw float32, anything else PGM.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "data-dir")]
    data_dir: PathBuf,
    /// Per-image CSV destination.
    #[arg(long, default_value = "metrics.csv")]
    csv: PathBuf,
    /// Evaluate only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Also print the guidance and fusion ablation table.
    #[arg(long)]
    ablation: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Phantom seed.
    #[arg(long = "phantom-seed", default_value_t = 1)]
    phantom_seed: u64,
    /// Where timed runs write their artifacts.
    #[arg(long = "out-prefix")]
    out_prefix: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleDumpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// absolute or normalized.
    #[arg(long = "time-scaling")]
    time_scaling: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PhantomGen(a) => phantom_gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Suppress(a) => suppress(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
        Command::ScheduleDump(a) => schedule_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn phantom_gen(a: PhantomGenArgs) -> Result<()> {
    let samples = generate(a.seed, a.count, a.size)?;
    write_dataset(&a.out, &samples)?;
    println!("wrote {} phantoms of {}x{} to {}", samples.len(), a.size, a.size, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.sampler.steps = v;
    }
    if let Some(v) = &a.codec {
        cfg.model.codec = v.clone();
    }
    if a.epochs == 0 {
        return Err(Error::InvalidArgument("--epochs must be at least 1".into()));
    }
    let schedule = cfg.build_schedule()?;
    let codec = registry::codecs().build(&cfg.model.codec, &())?;
    let samples = read_dataset(&a.data_dir)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("{} holds no samples", a.data_dir.display())))?;
    let (channels, _, _) = codec.latent_shape(first.cxr.height(), first.cxr.width())?;
    let mut pairs: Vec<TrainPair> = Vec::with_capacity(2 * samples.len());
    for s in &samples {
        pairs.extend(training_pairs(&*codec, &s.cxr, &s.soft, &s.lung_mask)?);
    }

    let arch = registry::architectures().build(&a.arch, &(channels, schedule.clone()))?;
    let mut model = ToyDenoiser::seeded(arch, a.seed)?;
    let opts = TrainOptions {
        steps: a.epochs * pairs.len().div_ceil(a.batch_size.max(1)),
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    };
    let report = train(&mut model, &pairs, &schedule, opts)?;
    save_checkpoint(&a.out, &model)?;
    println!(
        "{} model, {} parameters, {} steps on {} pairs: loss {:.5} -> {:.5}; saved {}",
        model.architecture().name(),
        model.params().len(),
        opts.steps,
        pairs.len(),
        report.initial_loss,
        report.final_loss,
        a.out.display()
    );
    Ok(())
}

fn suppress(a: SuppressArgs) -> Result<()> {
    let mut cfg = a.pipeline.config()?;
    if let Some(p) = &a.path {
        cfg.sampler.path = p.parse::<OutputPath>()?;
    }
    for (slot, flag) in [(&mut cfg.io.input, &a.input), (&mut cfg.io.mask, &a.mask), (&mut cfg.io.gt, &a.gt)] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if a.out_prefix.is_some() {
        cfg.io.out_prefix.clone_from(&a.out_prefix);
    }
    let input_path = cfg
        .io
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input image (--input or io.input)".into()))?;
    let pipeline = Pipeline::from_config(&cfg)?;

    let mut input = PipelineInput::new(id_of(&input_path), read_image(&input_path)?);
    input.mask = cfg.io.mask.as_ref().map(read_mask).transpose()?;
    input.gt_soft = cfg.io.gt.as_ref().map(read_image).transpose()?;
    let out_dir = cfg.io.out_prefix.clone().unwrap_or_else(|| PathBuf::from("out"));
    let out = pipeline.run(&input, Some(&out_dir))?;

    println!("wrote artifacts to {}", out_dir.display());
    let t = &out.timings;
    println!(
        "time: mask {:.3} s, encode {:.3} s, sampling {:.3} s, decode {:.3} s, fusion {:.3} s, io {:.3} s",
        t.mask, t.encode, t.sampling, t.decode, t.fusion, t.io
    );
    if let Some(m) = &out.metrics {
        println!(
            "bsr {:.4}  mse {:.6}  psnr {:.2} dB  grad_sim {:.4}",
            m.bsr, m.mse, m.psnr, m.grad_sim
        );
    }
    Ok(())
}

fn id_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let g = read_image(&a.global)?;
    let l = read_image(&a.local)?;
    let m = read_mask(&a.mask)?;
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(Error::Config(format!("--tol must be in (0, 1), got {}", a.tol)));
    }
    let fused = poisson_fuse(&g, &l, &m, a.tol)?;
    write_image(&a.out, &fused)?;
    println!("fused {} mask pixels into {}", m.count(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let mut samples = read_dataset(&a.data_dir)?;
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    let inputs: Vec<PipelineInput> = samples.iter().map(PipelineInput::from).collect();
    let report = pipeline.evaluate(&inputs)?;
    print!("{}", report.to_table());
    report.write_csv(File::create(&a.csv)?)?;
    println!("per-image metrics in {}", a.csv.display());
    if a.ablation {
        print!("\n{}", ablation_table(&ablation(&pipeline, &inputs)?));
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let sample = generate_one(&PhantomConfig::new(a.size), a.phantom_seed, 0)?;
    let input = PipelineInput::from(&sample);
    let out_dir = a.out_prefix.unwrap_or_else(|| std::env::temp_dir().join("bonesup-bench"));
    let report = bench(&pipeline, &input, a.repetitions, Some(&out_dir))?;
    print!("{}", report.to_text());
    Ok(())
}

fn schedule_dump(a: ScheduleDumpArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.steps {
        cfg.sampler.steps = v;
    }
    if let Some(v) = a.time_scaling {
        cfg.schedule.time_scaling = v;
    }
    let table = cfg.build_schedule()?.dump_table();
    match a.out {
        Some(p) => fs::write(p, table)?,
        None => print!("{table}"),
    }
    Ok(())
}
