//! One PASS/FAIL line per acceptance criterion. Runs sequentially on one thread.

use std::fs;
use std::sync::Arc;
use std::time::Instant;

use bonesup_core::codec::IdentityCodec;
use bonesup_core::denoiser::{
    evaluation_items, gradient_check, train, Architecture, OracleDenoiser, ToyDenoiser,
    TrainOptions, TrainPair,
};
use bonesup_core::fusion::{poisson_fuse, poisson_fuse_raw, DEFAULT_TOL};
use bonesup_core::phantom::{generate, PhantomSample};
use bonesup_core::pipeline::{
    ablation, ablation_table, conditions, targets, training_pairs, OutputPath, Pipeline,
    PipelineConfig, PipelineInput,
};
use bonesup_core::rng::rng_for;
use bonesup_core::sampler::{sample, Conditions, SamplePath, SamplerConfig};
use bonesup_core::scheduler::{make_schedule, Schedule};
use bonesup_core::{Image, Mask};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference_schedule() -> Schedule {
    make_schedule(50, 0.00085, 0.012, 0.5).unwrap()
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let s = reference_schedule();
    let elapsed = clock.elapsed().as_secs_f64();
    let endpoints = s.beta(1).unwrap() == 0.00085 && s.beta(50).unwrap() == 0.012;
    let monotone = s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
    let mut prod = 1.0;
    let mut worst: f64 = 0.0;
    for t in 1..=50 {
        let frac = (t - 1) as f64 / 49.0;
        let beta = (0.00085f64.sqrt() + frac * (0.012f64.sqrt() - 0.00085f64.sqrt())).powi(2);
        prod *= 1.0 - beta;
        worst = worst.max((s.alpha_bar(t).unwrap() - prod).abs());
    }
    outcome(
        endpoints && monotone && worst <= 1e-12 && elapsed < 1e-3,
        format!("endpoints exact {endpoints}, monotone {monotone}, max |abar - oracle| {worst:.1e}, {:.1} us", elapsed * 1e6),
    )
}

fn criterion_2() -> Outcome {
    let cfg = PipelineConfig::default();
    let mut ok = true;
    for s in [reference_schedule(), cfg.build_schedule().unwrap()] {
        ok &= s.c_skip(0).unwrap() == 1.0 && s.c_out(0).unwrap() == 0.0;
    }
    outcome(ok, "c_skip(0) = 1 and c_out(0) = 0 under both time scalings".into())
}

fn criterion_3() -> Outcome {
    let clock = Instant::now();
    let cfg = PipelineConfig::default();
    let schedule = cfg.build_schedule().unwrap();
    let pipeline = Pipeline::from_config(&cfg).unwrap();
    let mut latent_err: f64 = 0.0;
    let mut pixel_err: f64 = 0.0;
    for s in generate(3, 20, 64).unwrap() {
        let (target, _) = targets(&IdentityCodec, &s.soft, &s.lung_mask).unwrap();
        let oracle = OracleDenoiser::new(&schedule, target.clone());
        let conds = conditions(&IdentityCodec, &s.cxr, &s.lung_mask).unwrap();
        let sc = SamplerConfig {
            path: SamplePath::Global,
            seed: s.index as u64,
            ..SamplerConfig::default()
        };
        latent_err = latent_err.max(sample(&oracle, &conds, &schedule, &sc).unwrap().max_abs_diff(&target));
        let out = pipeline.run(&PipelineInput::from(&s), None).unwrap();
        pixel_err = pixel_err.max(out.fused.unwrap().max_abs_diff(&s.soft));
    }
    let elapsed = clock.elapsed().as_secs_f64();
    outcome(
        latent_err <= 1e-6 && pixel_err <= 1e-3 && elapsed < 10.0,
        format!("latent L-inf {latent_err:.1e}, pixel L-inf {pixel_err:.1e}, {elapsed:.2} s for 20 phantoms"),
    )
}

fn criterion_4() -> Outcome {
    let cfg = PipelineConfig::default();
    let schedule = cfg.build_schedule().unwrap();
    let model = ToyDenoiser::seeded(Architecture::conv(1, 50).scaled_by(&schedule).unwrap(), 4).unwrap();
    let s = &generate(4, 1, 64).unwrap()[0];
    let conds = conditions(&IdentityCodec, &s.cxr, &s.lung_mask).unwrap();
    let run = |conds: &Conditions, path, alpha_l| {
        let sc = SamplerConfig {
            path,
            alpha_l,
            seed: 21,
            ..SamplerConfig::default()
        };
        sample(&model, conds, &schedule, &sc).unwrap()
    };
    let local_only = Conditions {
        global: conds.local.clone(),
        local: conds.local.clone(),
    };
    let one = run(&conds, SamplePath::Local, 1.0) == run(&local_only, SamplePath::Global, 1.0);
    let zero = run(&conds, SamplePath::Local, 0.0) == run(&conds, SamplePath::Global, 0.0);
    let example = PipelineConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.toml")).unwrap();
    let default = cfg.sampler.alpha_l == 3.0 && example.sampler.alpha_l == 3.0 && SamplerConfig::default().alpha_l == 3.0;
    outcome(
        one && zero && default,
        format!("alpha_l=1 equals local-only {one}, alpha_l=0 equals global {zero}, default 3 from config {default}"),
    )
}

fn dense_oracle(g: &Image, l: &Image, m: &Mask) -> Image {
    let (h, w) = g.dims();
    let mut index = vec![usize::MAX; h * w];
    let mut cells = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if m.get(y, x) {
                index[y * w + x] = cells.len();
                cells.push((y, x));
            }
        }
    }
    let n = cells.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &(y, x)) in cells.iter().enumerate() {
        a[(i, i)] = 4.0;
        b[i] = 4.0 * l.get(y, x);
        for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
            b[i] -= l.get(ny, nx);
            match index[ny * w + nx] {
                usize::MAX => b[i] += g.get(ny, nx),
                j => a[(i, j)] -= 1.0,
            }
        }
    }
    let x = a.lu().solve(&b).unwrap();
    let mut out = g.clone();
    for (i, &(y, xx)) in cells.iter().enumerate() {
        out.set(y, xx, x[i]);
    }
    out
}

fn criterion_5() -> Outcome {
    let mut rng = rng_for(55, &[]);
    let img = |rng: &mut rand_chacha::ChaCha8Rng| Image::from_fn(16, 16, |_, _| rng.random::<f64>());
    let (mut same, mut empty, mut dense, mut frame) = (0.0f64, true, 0.0f64, true);
    for _ in 0..20 {
        let g = img(&mut rng);
        let l = img(&mut rng);
        let m = Mask::from_fn(16, 16, |_, _| rng.random_bool(0.7));
        same = same.max(poisson_fuse(&g, &g, &m, DEFAULT_TOL).unwrap().max_abs_diff(&g));
        empty &= poisson_fuse(&g, &l, &Mask::empty(16, 16), DEFAULT_TOL).unwrap() == g;
        // Solved past the default tolerance: a relative residual of tol only
        // bounds the error by about cond(A) * tol.
        let raw = poisson_fuse_raw(&g, &l, &m, 1e-11, None).unwrap().image;
        dense = dense.max(raw.max_abs_diff(&dense_oracle(&g, &l, &m)));
        let fused = poisson_fuse(&g, &l, &Mask::full(16, 16), DEFAULT_TOL).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let border = y == 0 || x == 0 || y == 15 || x == 15;
                if border || !m.get(y, x) {
                    let out = if border { &fused } else { &raw };
                    frame &= out.get(y, x).to_bits() == g.get(y, x).to_bits();
                }
            }
        }
    }
    outcome(
        same <= 1e-6 && empty && dense <= 1e-8 && frame,
        format!("(a) {same:.1e} (b) {empty} (c) {dense:.1e} vs dense solve (d) {frame}"),
    )
}

fn phantom_pairs(samples: &[PhantomSample]) -> Vec<TrainPair> {
    samples
        .iter()
        .flat_map(|s| training_pairs(&IdentityCodec, &s.cxr, &s.soft, &s.lung_mask).unwrap())
        .collect()
}

fn criterion_6() -> Outcome {
    let schedule = PipelineConfig::default().build_schedule().unwrap();
    let data = phantom_pairs(&generate(7, 64, 64).unwrap());
    let mut model = ToyDenoiser::seeded(Architecture::conv(1, 50).scaled_by(&schedule).unwrap(), 7).unwrap();
    let report = train(&mut model, &data, &schedule, TrainOptions::default()).unwrap();
    let ratio = report.final_loss / report.initial_loss;

    // Small probes keep finite differences over every parameter cheap.
    let probe_data = phantom_pairs(&generate(3, 1, 32).unwrap());
    let crop = |p: &TrainPair| {
        let cut = |l: &bonesup_core::Latent| {
            let v: Vec<f64> = (0..6).flat_map(|y| (0..6).map(move |x| (y, x))).map(|(y, x)| l.values()[(y + 10) * 32 + x + 10]).collect();
            bonesup_core::Latent::new(1, 6, 6, v).unwrap()
        };
        let mut q = p.clone();
        q.target = cut(&p.target);
        q.condition.latent = cut(&p.condition.latent);
        q
    };
    let probe_pairs: Vec<TrainPair> = probe_data.iter().map(crop).collect();
    let probe = evaluation_items(&probe_pairs, &schedule, 3).unwrap();
    let mut linear = ToyDenoiser::seeded(Architecture::linear(1, 50).scaled_by(&schedule).unwrap(), 3).unwrap();
    let linear_err = gradient_check(&mut linear, &probe).unwrap();
    let mut conv = ToyDenoiser::seeded(Architecture::conv(1, 50).scaled_by(&schedule).unwrap(), 3).unwrap();
    let conv_err = gradient_check(&mut conv, &probe).unwrap();
    outcome(
        ratio <= 0.5 && conv_err <= 1e-4 && linear_err <= 1e-5,
        format!(
            "loss {:.4} -> {:.4} (ratio {ratio:.3}) over 200 steps on 64 phantoms; gradient rel. error linear {linear_err:.1e}, conv {conv_err:.1e}",
            report.initial_loss, report.final_loss
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = PipelineConfig::default();
    let schedule = cfg.build_schedule().unwrap();
    let data = phantom_pairs(&generate(100, 64, 64).unwrap());
    let mut model = ToyDenoiser::seeded(Architecture::conv(1, 50).scaled_by(&schedule).unwrap(), 7).unwrap();
    train(&mut model, &data, &schedule, TrainOptions::default()).unwrap();
    let pipeline = Pipeline::from_config(&cfg).unwrap().with_denoiser(Arc::new(model));
    let inputs: Vec<PipelineInput> = (1..=5).map(|seed| PipelineInput::from(&generate(seed, 1, 64).unwrap()[0])).collect();
    let rows = ablation(&pipeline, &inputs).unwrap();
    println!("{}", ablation_table(&rows));
    let row = |v: &str| rows.iter().find(|r| r.group == "fusion" && r.variant.starts_with(v)).unwrap();
    let (global, fused) = (&row("none").report, &row("poisson").report);
    let (gs_g, gs_f) = (global.grad_sim().mean, fused.grad_sim().mean);
    let (bsr_g, bsr_f) = (global.bsr().mean, fused.bsr().mean);
    let gap = bsr_f - bsr_g;
    outcome(
        gs_f >= gs_g && gap >= -0.05,
        format!(
            "grad_sim fused {gs_f:.4} vs global {gs_g:.4}; BSR fused {bsr_f:.4} vs global {bsr_g:.4} \
             (fused - global {gap:+.4}; no loss beyond 0.05 {}, two-sided |gap| <= 0.05 {})",
            gap >= -0.05,
            gap.abs() <= 0.05
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = PipelineConfig::default();
    let schedule = cfg.build_schedule().unwrap();
    let s = &generate(8, 1, 64).unwrap()[0];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let model = ToyDenoiser::seeded(Architecture::conv(1, 50).scaled_by(&schedule).unwrap(), 8).unwrap();
        let p = Pipeline::from_config(&cfg).unwrap().with_denoiser(Arc::new(model));
        p.run(&PipelineInput::from(s), Some(dir.path())).unwrap();
    }
    let names = ["mask.pgm", "global.pgm", "local.pgm", "fused.pgm", "fused.f32"];
    let same = names
        .iter()
        .all(|n| fs::read(dirs[0].path().join(n)).unwrap() == fs::read(dirs[1].path().join(n)).unwrap());
    outcome(same, format!("{} artifacts compared byte for byte", names.len()))
}

fn criterion_9() -> Outcome {
    let s = &generate(9, 1, 256).unwrap()[0];
    let timed = |steps: usize| {
        let mut cfg = PipelineConfig::default();
        cfg.sampler.steps = steps;
        cfg.sampler.path = OutputPath::Fused;
        let schedule = cfg.build_schedule().unwrap();
        let model = ToyDenoiser::seeded(Architecture::conv(1, steps).scaled_by(&schedule).unwrap(), 9).unwrap();
        let p = Pipeline::from_config(&cfg).unwrap().with_denoiser(Arc::new(model));
        let clock = Instant::now();
        let out = p.run(&PipelineInput::from(s), None).unwrap();
        (clock.elapsed().as_secs_f64(), out.timings)
    };
    let (total, t50) = timed(50);
    let (_, t25) = timed(25);
    let ratio = t25.sampling / t50.sampling;
    outcome(
        total < 5.0 && (0.35..=0.65).contains(&ratio),
        format!(
            "256x256 dual 50 steps + fusion {total:.2} s (sampling {:.2} s, fusion {:.3} s); 25/50 sampling ratio {ratio:.3}",
            t50.sampling, t50.fusion
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("schedule correctness", criterion_1),
        ("boundary conditions", criterion_2),
        ("oracle round-trip", criterion_3),
        ("LEG reductions", criterion_4),
        ("Poisson fusion", criterion_5),
        ("training sanity", criterion_6),
        ("end-to-end ordering", criterion_7),
        ("determinism", criterion_8),
        ("throughput", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} criterion {} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
