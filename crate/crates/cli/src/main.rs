use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcwnet::diagnostics::{check_block, Block};
use mcwnet::imageio::{crop_to, pad_reflect, read_image, write_image};
use mcwnet::metrics::{distribution_report, psnr_rgb, se_importance, ssim, write_importance_csv, DEFAULT_TAU};
use mcwnet::network::{build, load_weights, param_breakdown, save_weights, NetworkConfig, Preset, SIZE_MULTIPLE};
use mcwnet::training::{load_dataset, synth_dataset, write_loss_csv, RainPair, SynthParams, TrainConfig, Trainer};
use mcwnet::Error;

/// Single-image deraining with wavelet sampling, wide regional non-local
/// attention and multi-level connections.
#[derive(Parser)]
#[command(name = "mcwnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Remove rain from one image.
    Derain {
        #[arg(long)]
        weights: PathBuf,
        /// Network configuration; defaults to the sidecar next to the weights.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model on a dataset directory or on synthetic pairs.
    Train {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Size::Toy)]
        size: Size,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the preset's learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Crop edge; defaults to 32 for toy and 64 otherwise.
        #[arg(long)]
        crop: Option<usize>,
        /// Edge of generated images with --synth.
        #[arg(long, default_value_t = 64)]
        synth_size: usize,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of one block.
    GradCheck {
        #[arg(long, value_enum)]
        block: BlockArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to 1e-6, or 1e-5 for the full network.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Rain-pixel distribution over wide, square and tall grids.
    AnalyzeRain {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        synth_size: usize,
        /// Streaks rotated to horizontal with --synth.
        #[arg(long)]
        horizontal: bool,
        /// Also write histogram rows with this many bins next to the CSV.
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SE feature importance at every decoder level.
    Importance {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter count of a preset.
    Params {
        #[arg(long, value_enum, default_value_t = Size::Small)]
        size: Size,
    },
    /// PSNR and SSIM between two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Write synthetic rainy / clean pairs as a dataset directory.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        horizontal: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Directory with rainy/ and clean/ subdirectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many synthetic pairs instead.
    #[arg(long)]
    synth: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Toy,
    Small,
    Large,
}

impl From<Size> for Preset {
    fn from(s: Size) -> Self {
        match s {
            Size::Toy => Preset::Toy,
            Size::Small => Preset::Small,
            Size::Large => Preset::Large,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BlockArg {
    Tensor,
    Conv,
    Prelu,
    Se,
    Dcr,
    Wrnl,
    Mlc,
    Network,
}

impl From<BlockArg> for Block {
    fn from(b: BlockArg) -> Self {
        match b {
            BlockArg::Tensor => Block::Tensor,
            BlockArg::Conv => Block::Conv,
            BlockArg::Prelu => Block::Prelu,
            BlockArg::Se => Block::Se,
            BlockArg::Dcr => Block::Dcr,
            BlockArg::Wrnl => Block::Wrnl,
            BlockArg::Mlc => Block::Mlc,
            BlockArg::Network => Block::Network,
        }
    }
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => 1,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn pairs(source: &Source, seed: u64, size: usize, horizontal: bool) -> Result<Vec<RainPair>, Failure> {
    match (&source.data, source.synth) {
        (Some(dir), _) => Ok(load_dataset(dir)?),
        (None, Some(n)) => {
            let params = SynthParams {
                horizontal,
                ..SynthParams::default()
            };
            Ok(synth_dataset(n, size, seed, &params)?)
        }
        (None, None) => unreachable!("clap requires a source"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Derain {
            weights,
            config,
            input,
            output,
        } => {
            let config = config.map(|p| NetworkConfig::load(&p)).transpose()?;
            let model = load_weights(&weights, config.as_ref())?;
            let image = read_image(&input)?;
            let (h, w) = (image.shape()[2], image.shape()[3]);
            let padded = pad_reflect(&image, SIZE_MULTIPLE)?;
            if padded.shape() != image.shape() {
                eprintln!(
                    "padding {h}x{w} to {}x{} by reflection",
                    padded.shape()[2],
                    padded.shape()[3]
                );
            }
            let out = crop_to(&model.forward(&padded)?, h, w)?;
            write_image(&output, &out)?;
        }
        Command::Train {
            source,
            size,
            epochs,
            seed,
            lr,
            batch,
            crop,
            synth_size,
            checkpoint_every,
            out,
        } => {
            let data = pairs(&source, seed, synth_size, false)?;
            let preset = Preset::from(size);
            let defaults = TrainConfig::for_preset(preset);
            let cfg = TrainConfig {
                crop: crop.unwrap_or(defaults.crop),
                batch,
                lr: lr.unwrap_or(defaults.lr),
                epochs,
                seed,
                checkpoint_every,
                out_dir: Some(out.clone()),
            };
            fs::create_dir_all(&out)?;
            let model = build(&NetworkConfig::preset(preset), seed)?;
            let mut trainer = Trainer::new(model, &data, cfg)?;
            let result = trainer.run();
            // The log is written even when training aborts.
            write_loss_csv(&trainer.log, create(&out.join("loss.csv"))?)?;
            result?;
            save_weights(&trainer.model, &out.join("final.mcw"))?;
            if let Some(last) = trainer.log.last() {
                println!("iterations {} final loss {:.6}", trainer.iteration(), last.total);
            }
        }
        Command::GradCheck { block, seed, tol } => {
            let block = Block::from(block);
            let tol = tol.unwrap_or(block.default_tolerance());
            let r = check_block(block, seed, tol)?;
            println!(
                "{} max relative error {:.3e} over {} entries ({} skipped at kinks), tolerance {tol:e}",
                block.name(),
                r.max_rel_error,
                r.checked,
                r.skipped_kinks
            );
            if !r.passed {
                return Err(Failure {
                    code: 1,
                    msg: format!("{} gradients exceed the tolerance", block.name()),
                });
            }
        }
        Command::AnalyzeRain {
            source,
            tau,
            seed,
            synth_size,
            horizontal,
            bins,
            out,
        } => {
            let data = pairs(&source, seed, synth_size, horizontal)?;
            let report = distribution_report(&data, tau)?;
            report.write_csv(create(&out)?)?;
            if let Some(bins) = bins {
                report.write_histogram_csv(bins, create(&out.with_extension("histogram.csv"))?)?;
            }
            for (class, mean) in &report.means {
                println!("{} mean std {mean:.4}", class.name());
            }
        }
        Command::Importance { weights, input, out } => {
            let model = load_weights(&weights, None)?;
            let profiles = se_importance(&model, &read_image(&input)?)?;
            write_importance_csv(&profiles, create(&out)?)?;
            for p in &profiles {
                println!("level {} before {:.4?} after {:.4?}", p.level, p.lambdas_before, p.lambdas_after);
            }
        }
        Command::Params { size } => {
            let cfg = NetworkConfig::preset(size.into());
            let parts = param_breakdown(&cfg)?;
            println!("{}", parts.iter().map(|(_, n)| n).sum::<usize>());
            for (name, n) in parts {
                println!("  {name} {n}");
            }
        }
        Command::Metrics { a, b } => {
            let (a, b) = (read_image(&a)?, read_image(&b)?);
            println!("psnr {}", psnr_rgb(&a, &b)?);
            println!("ssim {}", ssim(&a, &b)?);
        }
        Command::Synth {
            count,
            size,
            seed,
            horizontal,
            out,
        } => {
            let params = SynthParams {
                horizontal,
                ..SynthParams::default()
            };
            let data = synth_dataset(count, size, seed, &params)?;
            for sub in ["rainy", "clean"] {
                fs::create_dir_all(out.join(sub))?;
            }
            for p in &data {
                write_image(&out.join("rainy").join(format!("{}.png", p.id)), &p.rainy)?;
                write_image(&out.join("clean").join(format!("{}.png", p.id)), &p.clean)?;
            }
            println!("wrote {} pairs to {}", data.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MCWNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: MCWNET_THREADS ignored: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
