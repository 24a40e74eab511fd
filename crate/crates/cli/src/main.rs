use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vqcnir::config::{load_pairs, DegradationSpec, RunConfig};
use vqcnir::data::{generate_clean, manifest, psnr, save_ppm, ssim, load_ppm, Pair};
use vqcnir::gradcheck::run_suite;
use vqcnir::model::checkpoint::{load_vqcnir, load_vqgan, save_vqcnir, save_vqgan};
use vqcnir::model::{infer, train_stage1, train_stage2, Component, Stage2Output, Vqgan};
use vqcnir::Error;

#[derive(Parser)]
#[command(name = "vqcnir", version, about = "Codebook-prior low-light deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Run only the named case.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the backward rule of the named case (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write synthetic clean/degraded PPM pairs and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage 1: learn the codebook prior on clean images.
    TrainVqgan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 2: train the restoration network on a stage-1 checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore one PPM image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean PSNR/SSIM over a manifest; without a checkpoint the degraded images are scored.
    Eval {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Stage 2 with one component replaced by identity pass-through.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        disable: Component,
        /// Stage-1 checkpoint; trained from the config when absent.
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure that maps to a process exit code.
enum Failure {
    Verification(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Divergence { .. } => 1,
        Error::Config(_) | Error::ConfigKey { .. } | Error::Contract(_) | Error::Dimension { .. } => 2,
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Gradcheck {
            filter,
            seed,
            inject_fault,
        } => gradcheck(filter.as_deref(), seed, inject_fault.as_deref()),
        Command::Synth { out, count, size, seed } => synth(&out, count, size, seed),
        Command::TrainVqgan { config, out } => {
            let cfg = load_config(&config)?;
            let (train, val) = cfg.pairs()?;
            let model = stage1(&cfg, &train, &val, &out)?;
            save_vqgan(&model, &out)?;
            Ok(())
        }
        Command::Train { config, stage1, out } => {
            let cfg = load_config(&config)?;
            let (train, val) = cfg.pairs()?;
            let prior = load_vqgan(&stage1)?;
            let trained = stage2(&cfg, &train, &val, prior, &out)?;
            report(&infer::evaluate(&trained.model, &val)?, val.len());
            Ok(())
        }
        Command::Infer { ckpt, input, out } => {
            let model = load_vqcnir(&ckpt)?;
            let img = load_ppm(&input)?;
            save_ppm(&infer::restore(&model, &img)?, &out)?;
            Ok(())
        }
        Command::Eval { ckpt, manifest } => {
            let pairs = load_pairs(&manifest)?;
            if pairs.is_empty() {
                return Err(Error::Config(format!("{} lists no pairs", manifest.display())).into());
            }
            let r = match ckpt {
                Some(c) => infer::evaluate(&load_vqcnir(&c)?, &pairs)?,
                None => input_metrics(&pairs)?,
            };
            report(&r, pairs.len());
            Ok(())
        }
        Command::Ablate {
            config,
            disable,
            stage1: stage1_ckpt,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            let (train, val) = cfg.pairs()?;
            let prior = match stage1_ckpt {
                Some(p) => load_vqgan(&p)?,
                None => stage1(&cfg, &train, &val, &sibling(out.as_deref(), "stage1"))?,
            };
            cfg.model.disable(disable);
            let out = out.unwrap_or_else(|| config.with_extension("ablate.ckpt"));
            let trained = stage2(&cfg, &train, &val, prior, &out)?;
            report(&infer::evaluate(&trained.model, &val)?, val.len());
            Ok(())
        }
    }
}

fn gradcheck(filter: Option<&str>, seed: u64, fault: Option<&str>) -> Outcome {
    let result = run_suite(filter, seed, fault)?;
    for c in &result.cases {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status} {} max_rel_err={:.3e} variants={}", c.name, c.max_error, c.variants);
    }
    let failed: Vec<&str> = result.failures().iter().map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Outcome {
    if count == 0 || size == 0 {
        return Err(Error::Config("count and size must be >= 1".into()).into());
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let spec = DegradationSpec {
        seed,
        ..Default::default()
    };
    let clean = generate_clean(count, size, seed);
    let mut records = Vec::with_capacity(count);
    for (i, img) in clean.iter().enumerate() {
        let image_seed = spec.image_seed(i);
        let degraded = vqcnir::data::degrade(img, &spec.params(image_seed)?);
        let (c, d) = (format!("clean_{i:04}.ppm"), format!("degraded_{i:04}.ppm"));
        save_ppm(img, out.join(&c))?;
        save_ppm(&degraded, out.join(&d))?;
        records.push(manifest::Record {
            clean: c.into(),
            degraded: d.into(),
            seed: image_seed,
        });
    }
    manifest::write(out.join("manifest.txt"), &records)?;
    println!("wrote {count} pairs to {}", out.join("manifest.txt").display());
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    for line in cfg.echo() {
        eprintln!("config {line}");
    }
    Ok(cfg)
}

/// `<ckpt>.log` next to a checkpoint.
fn log_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.as_os_str().to_owned();
    name.push(".log");
    PathBuf::from(name)
}

fn sibling(out: Option<&Path>, tag: &str) -> PathBuf {
    let base = out.unwrap_or(Path::new("ablate.ckpt"));
    base.with_extension(format!("{tag}.ckpt"))
}

/// Metrics lines go to stdout and to the log file beside the checkpoint.
fn with_log<T>(ckpt: &Path, f: impl FnOnce(&mut dyn FnMut(&str)) -> Result<T, Error>) -> Result<T, Error> {
    let path = log_path(ckpt);
    let mut file = File::create(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut io_err = None;
    let out = f(&mut |line| {
        println!("{line}");
        if let Err(e) = writeln!(file, "{line}") {
            io_err.get_or_insert(e);
        }
    })?;
    match io_err {
        Some(e) => Err(Error::Io { path, source: e }),
        None => Ok(out),
    }
}

fn stage1(cfg: &RunConfig, train: &[Pair], val: &[Pair], ckpt: &Path) -> Result<Vqgan, Error> {
    let clean: Vec<_> = train.iter().map(|p| p.clean.clone()).collect();
    let val: Vec<_> = val.iter().map(|p| p.clean.clone()).collect();
    with_log(ckpt, |log| train_stage1(&clean, &val, &cfg.model, &cfg.train, log))
}

fn stage2(cfg: &RunConfig, train: &[Pair], val: &[Pair], prior: Vqgan, ckpt: &Path) -> Result<Stage2Output, Error> {
    let out = with_log(ckpt, |log| train_stage2(train, val, prior, &cfg.model, &cfg.train, log))?;
    save_vqcnir(&out.model, &[("discriminator", &out.discriminator)], ckpt)?;
    Ok(out)
}

fn input_metrics(pairs: &[Pair]) -> Result<infer::EvalReport, Error> {
    let mut acc = (0.0, 0.0);
    for p in pairs {
        acc.0 += psnr(&p.degraded, &p.clean)?;
        acc.1 += ssim(&p.degraded, &p.clean)?;
    }
    let n = pairs.len() as f64;
    Ok(infer::EvalReport {
        psnr: acc.0 / n,
        ssim: acc.1 / n,
        input_psnr: acc.0 / n,
    })
}

fn report(r: &infer::EvalReport, n: usize) {
    println!("eval n={n} psnr={:.4} ssim={:.6} input_psnr={:.4}", r.psnr, r.ssim, r.input_psnr);
}
