//! `clade` — cost analysis, ICPE maps, gradient checks, benchmarks, toy
//! training and concentration histograms.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad invocation or input.
//! Errors are a single `error: ...` line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use clade_core::arch::{ArchSpec, NormKind};
use clade_core::bench::{bench_forward, WARMUP};
use clade_core::cltn::CltnArray;
use clade_core::complexity::{analyze_arch, CostModel};
use clade_core::generator::{synth_task, train_toy, Conditioning, Generator, ToyTask};
use clade_core::gradcheck;
use clade_core::io::write_atomic_str;
use clade_core::mask::{icpe_map_with, Connectivity, IcpeMode, SemanticMask};
use clade_core::netpbm::{GrayImage, RgbImage};
use clade_core::norm::{concentration_stats, ConcentrationOptions};
use clade_core::tensor::Tensor;
use clade_core::Error;

#[derive(Parser)]
#[command(name = "clade", version, about = "Class-adaptive normalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter / FLOP ratios of the norms of an architecture.
    Analyze {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also count biases and bias adds.
        #[arg(long)]
        strict_flops: bool,
        /// FLOPs per convolution multiply-accumulate.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=2))]
        mac_flops: u64,
    },
    /// Intra-class positional encoding of a label PGM.
    Icpe {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Largest)]
        mode: ModeArg,
        #[arg(long, default_value_t = 8, value_parser = parse_connectivity)]
        connectivity: u8,
        /// Writes `<prefix>.cltn`, `<prefix>_x.pgm` and `<prefix>_y.pgm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compares backward against central differences on a toy generator.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Forward-pass timing and measured FLOPs.
    Bench {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long, value_enum)]
        norm: NormArg,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Rescale the arch to this square output size first.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Trains a toy generator on a synthetic mask-to-image task.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
    },
    /// Within-class concentration of a modulation map.
    Hist {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Ignore pixels closer than this to the border.
        #[arg(long, default_value_t = 0)]
        margin: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Largest,
    Percomp,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Spade,
    Clade,
    #[value(name = "clade_icpe")]
    CladeIcpe,
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err("expected 4 or 8".into()),
    }
}

enum Failure {
    /// Bad invocation or unusable input.
    Input(String),
    /// Ran fine, but a check did not pass.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(one_line(&e.to_string()))
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn input(path: &Path, e: Error) -> Failure {
    if matches!(e, Error::Io { .. }) {
        return e.into();
    }
    Failure::Input(one_line(&format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: input: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: check: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Analyze {
            arch,
            out,
            strict_flops,
            mac_flops,
        } => analyze(&arch, &out, strict_flops, mac_flops),
        Command::Icpe {
            mask,
            mode,
            connectivity,
            out,
        } => icpe(&mask, mode, connectivity, &out),
        Command::Gradcheck { seed } => grad(seed),
        Command::Bench {
            arch,
            norm,
            iters,
            size,
            seed,
        } => bench(&arch, norm, iters, size, seed),
        Command::TrainToy { config } => train(&config),
        Command::Hist {
            map,
            mask,
            out,
            bins,
            margin,
        } => hist(&map, &mask, &out, bins, margin),
    }
}

fn load_arch(path: &Path) -> Result<ArchSpec, Failure> {
    ArchSpec::load(path).map_err(|e| input(path, e))
}

fn analyze(arch: &Path, out: &Path, strict: bool, mac_flops: u64) -> Result<(), Failure> {
    let spec = load_arch(arch)?;
    let model = if strict { CostModel::strict() } else { CostModel::PAPER }.with_mac_flops(mac_flops);
    let report = analyze_arch(&spec, &model).map_err(|e| input(arch, e))?;
    write_atomic_str(out, &report.to_csv())?;
    print!("{}", report.to_table());
    Ok(())
}

fn load_mask(path: &Path, classes: Option<usize>) -> Result<SemanticMask, Failure> {
    let img = GrayImage::load(path).map_err(|e| input(path, e))?;
    SemanticMask::from_pgm(&img, classes).map_err(|e| input(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn icpe(mask: &Path, mode: ModeArg, connectivity: u8, out: &Path) -> Result<(), Failure> {
    let m = load_mask(mask, None)?;
    let mode = match mode {
        ModeArg::Largest => IcpeMode::LargestComponentPerClass,
        ModeArg::Percomp => IcpeMode::PerComponent,
    };
    let conn = if connectivity == 4 {
        Connectivity::Four
    } else {
        Connectivity::Eight
    };
    let d = icpe_map_with(&m, mode, conn);
    CltnArray::new(vec![2, d.height(), d.width()], d.data().to_vec())?.save(with_suffix(out, ".cltn"))?;
    d.to_pgm(0).save(with_suffix(out, "_x.pgm"))?;
    d.to_pgm(1).save(with_suffix(out, "_y.pgm"))?;
    let max = d.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    println!("icpe {}x{} max_abs {max}", d.height(), d.width());
    Ok(())
}

fn grad(seed: u64) -> Result<(), Failure> {
    let report = gradcheck::check(&gradcheck::toy_arch(), seed)?;
    let worst = report.worst().expect("toy generator has parameters");
    let err = report.max_rel_err();
    if report.passed() {
        println!(
            "PASS max_rel_err < 1e-4 (max_rel_err={err:.3e}, worst={}, params={})",
            worst.name,
            report.params.iter().map(|p| p.numel).sum::<usize>()
        );
        Ok(())
    } else {
        println!("FAIL max_rel_err={err:.3e} worst={}", worst.name);
        Err(Failure::Check(format!(
            "gradient check failed: max_rel_err={err:.3e} >= 1e-4 at {}",
            worst.name
        )))
    }
}

fn bench(arch: &Path, norm: NormArg, iters: usize, size: Option<usize>, seed: u64) -> Result<(), Failure> {
    if iters == 0 {
        return Err(Failure::Input("--iters must be at least 1".into()));
    }
    let norm = match norm {
        NormArg::Spade => NormKind::Spade,
        NormArg::Clade => NormKind::Clade,
        NormArg::CladeIcpe => NormKind::CladeIcpe,
    };
    let mut spec = load_arch(arch)?.with_norm(norm);
    if let Some(s) = size {
        spec = spec.rescaled(s, s).map_err(|e| input(arch, e))?;
    }
    let model = CostModel::PAPER;
    let analytic = analyze_arch(&spec, &model).map_err(|e| input(arch, e))?;
    let report = bench_forward(&spec, iters, seed, model)?;
    let (h, w) = spec.output_size().unwrap_or_default();
    println!("arch {} norm {norm:?} size {h}x{w} iters {iters} warmup {WARMUP}", spec.name);
    println!("mean_s {:.6}", report.mean());
    println!("median_s {:.6}", report.median());
    println!("measured_conv_flops {}", report.conv_flops());
    println!("measured_norm_flops {}", report.norm_flops());
    println!("analytic_conv_flops {}", analytic.total_conv().flops);
    println!("analytic_norm_flops {}", analytic.total_norm().flops);
    Ok(())
}

fn default_lr() -> f64 {
    0.1
}

fn default_samples() -> usize {
    4
}

/// `train-toy` configuration; relative paths resolve against the config file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    arch: PathBuf,
    out: PathBuf,
    #[serde(default)]
    amplitude: f64,
    /// Defaults to an evenly spread palette.
    #[serde(default)]
    palette: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    shapes: Option<usize>,
    #[serde(default = "default_samples")]
    samples: usize,
    steps: usize,
    #[serde(default = "default_lr")]
    lr: f64,
    #[serde(default)]
    seed: u64,
}

fn train(config: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::from(Error::io(config, e)))?;
    let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| input(config, e.into()))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let arch_path = base.join(&cfg.arch);
    let out = base.join(&cfg.out);
    let spec = load_arch(&arch_path)?;
    let mut task = ToyTask::new(spec.nc, cfg.amplitude);
    if let Some(p) = cfg.palette {
        task.palette = p;
    }
    if let Some(s) = cfg.shapes {
        task.shapes = s;
    }
    let mut gen = Generator::<f64>::build(&spec, cfg.seed).map_err(|e| input(&arch_path, e))?;
    let (h, w) = gen.output_size();
    let samples = synth_task::<f64>(&task, cfg.samples, h, w, cfg.seed)?;
    let losses = match train_toy(&mut gen, &samples, cfg.steps, cfg.lr) {
        Ok(l) => l,
        Err(e @ Error::NonFiniteLoss { .. }) => return Err(Failure::Check(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    gen.save(out.join("checkpoint"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_atomic_str(out.join("loss.csv"), &csv)?;
    for (i, s) in samples.iter().enumerate() {
        let img: Tensor<f64> = gen.forward_batch(&[Conditioning::derived(s.mask.clone(), &spec)])?;
        RgbImage::from_tensor(&img)?.save(out.join(format!("sample_{i}.ppm")))?;
        RgbImage::from_tensor(&s.target)?.save(out.join(format!("target_{i}.ppm")))?;
    }
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    println!("steps {} initial_loss {first:.6} final_loss {last:.6} ratio {:.6}", cfg.steps, last / first);
    Ok(())
}

fn hist(map: &Path, mask: &Path, out: &Path, bins: usize, margin: usize) -> Result<(), Failure> {
    let arr = CltnArray::load(map).map_err(|e| input(map, e))?;
    let t: Tensor<f64> = arr.to_tensor().map_err(|e| input(map, e))?;
    let m = load_mask(mask, None)?;
    let report = concentration_stats(&t, &m, ConcentrationOptions { bins, margin }).map_err(|e| input(map, e))?;
    write_atomic_str(out, &report.to_csv())?;
    println!("R {:.6}", report.ratio());
    Ok(())
}
