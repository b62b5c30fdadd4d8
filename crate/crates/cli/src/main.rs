//! `derain`: dataset generation, training, inference, evaluation, and the
//! ablation harness.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure (non-finite loss or gradient). Log verbosity comes from the
//! `DERAIN_LOG` environment variable (error|warn|info|debug|trace).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use derain_core::checkpoint;
use derain_core::config::TrainConfig;
use derain_core::data::{Dataset, RainPreset};
use derain_core::error::{Error, Result};
use derain_core::imageio;
use derain_core::model::derain_padded;
use derain_core::pipeline;
use derain_core::scalar::{Precision, Scalar};
use derain_core::tensor::Tensor;
use derain_core::wavelet;

#[derive(Parser)]
#[command(name = "derain", version, about = "Wavelet-attention single-image deraining toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired clean/rain dataset from procedural textures.
    GenData(GenDataArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Derain images with a trained checkpoint.
    Infer(InferArgs),
    /// Report PSNR/SSIM of a checkpoint against a paired dataset.
    Eval(EvalArgs),
    /// Train and evaluate the four ablation variants.
    Ablate(TrainArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory (clean/, rain/, manifest.tsv).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Rain preset: default | identity | light | heavy.
    #[arg(long, default_value = "default")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file in `key = value` form; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    c0: Option<usize>,
    #[arg(long)]
    n_res: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lambda_l1: Option<f64>,
    #[arg(long)]
    lambda_wssim: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 | f64
    #[arg(long)]
    precision: Option<String>,
    /// sigmoid | literal
    #[arg(long)]
    attention_variant: Option<String>,
    #[arg(long)]
    attention_enabled: Option<bool>,
    #[arg(long)]
    fusion_enabled: Option<bool>,
    #[arg(long)]
    bypass_io_convs: Option<bool>,
    /// step100 | single-drop
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    log_interval: Option<usize>,
    #[arg(long)]
    holdout: Option<usize>,
    /// none | w/o-attention | w/o-fusion | w/o-attention-fusion
    #[arg(long)]
    ablation: Option<String>,
    /// Continue from the checkpoint if it exists.
    #[arg(long)]
    resume: bool,
    /// For `ablate`: where to write the results table.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for derained PNGs.
    #[arg(long)]
    out: PathBuf,
    /// Input images (8-bit RGB PNG).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Also write the twelve confidence maps as grayscale PNGs.
    #[arg(long)]
    confidence_maps: bool,
    /// Bypass the network and fuse with all-ones confidence maps (debug:
    /// output equals input up to 8-bit quantization). No checkpoint needed.
    #[arg(long)]
    identity_confidence: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Record file path (default: alongside the checkpoint).
    #[arg(long)]
    records: Option<PathBuf>,
}

fn merge_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load_file(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                cfg.apply(stringify!($field), &v.to_string())?;
            }
        };
    }
    set!(c0);
    set!(n_res);
    set!(epochs);
    set!(batch_size);
    set!(crop_size);
    set!(base_lr);
    set!(lambda_l1);
    set!(lambda_wssim);
    set!(seed);
    set!(precision);
    set!(attention_variant);
    set!(attention_enabled);
    set!(fusion_enabled);
    set!(bypass_io_convs);
    set!(schedule);
    set!(log_interval);
    set!(holdout);
    if let Some(v) = &args.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &args.checkpoint {
        cfg.checkpoint = v.clone();
    }
    if let Some(ablation) = &args.ablation {
        match ablation.as_str() {
            "none" => {}
            "w/o-attention" => cfg.attention_enabled = false,
            "w/o-fusion" => cfg.fusion_enabled = false,
            "w/o-attention-fusion" | "w/o-attention,w/o-fusion" => {
                cfg.attention_enabled = false;
                cfg.fusion_enabled = false;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation `{other}` (none | w/o-attention | w/o-fusion | \
                     w/o-attention-fusion)"
                )))
            }
        }
    }
    Ok(cfg)
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let preset = RainPreset::by_name(&args.preset).ok_or_else(|| {
        Error::Config(format!(
            "unknown preset `{}` (default | identity | light | heavy)",
            args.preset
        ))
    })?;
    let ds = Dataset::generate::<f32>(
        &args.out,
        args.count,
        args.size,
        args.size,
        &preset,
        args.seed,
    )?;
    println!(
        "wrote {} pairs ({}x{}, preset {}) to {}",
        ds.len(),
        args.size,
        args.size,
        preset.name,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = merge_config(args)?;
    match cfg.precision {
        Precision::F32 => run_train::<f32>(&cfg, args.resume),
        Precision::F64 => run_train::<f64>(&cfg, args.resume),
    }
}

fn run_train<S: Scalar>(cfg: &TrainConfig, resume: bool) -> Result<()> {
    let outcome = pipeline::train::<S>(cfg, resume)?;
    println!(
        "trained {} epochs: loss {:.6} -> {:.6}, checkpoint {}",
        outcome.epochs.len(),
        outcome.initial_loss(),
        outcome.final_loss(),
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn cmd_ablate(args: &TrainArgs) -> Result<()> {
    let cfg = merge_config(args)?;
    let rows = match cfg.precision {
        Precision::F32 => pipeline::ablate::<f32>(&cfg)?,
        Precision::F64 => pipeline::ablate::<f64>(&cfg)?,
    };
    let table = pipeline::format_ablation_table(&rows, &cfg.to_kv_string());
    print!("{table}");
    let out = args
        .table
        .clone()
        .unwrap_or_else(|| cfg.checkpoint.with_extension("ablation.txt"));
    std::fs::write(&out, &table).map_err(|e| Error::io(&out, e))?;
    println!("table written to {}", out.display());
    Ok(())
}

const SUBBAND_NAMES: [&str; 4] = ["ll", "hl", "lh", "hh"];
const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

fn cmd_infer(args: &InferArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    if args.identity_confidence {
        for input in &args.inputs {
            let image = imageio::read_image::<f32>(input)?;
            let padded = derain_core::tensor::reflect_pad_to_multiple(&image, 2)?;
            let restored = wavelet::idwt2d(&wavelet::dwt2d(&Tensor::stack(&[padded])?)?)?;
            let (h, w) = (image.shape()[1], image.shape()[2]);
            let out = derain_core::tensor::crop_top_left(&restored.unstack(0)?, h, w)?;
            write_output(&args.out, input, &out.clamp01())?;
        }
        return Ok(());
    }
    let ckpt_path = args.checkpoint.as_ref().ok_or_else(|| {
        Error::Config("--checkpoint is required unless --identity-confidence is set".to_string())
    })?;
    match checkpoint::peek_precision(ckpt_path)? {
        Precision::F32 => infer_with::<f32>(ckpt_path, args),
        Precision::F64 => infer_with::<f64>(ckpt_path, args),
    }
}

fn infer_with<S: Scalar>(ckpt_path: &Path, args: &InferArgs) -> Result<()> {
    let ckpt = checkpoint::load::<S>(ckpt_path)?;
    for input in &args.inputs {
        let image = imageio::read_image::<S>(input)?;
        let (out, maps) = derain_padded(&ckpt.params, &image)?;
        let written = write_output(&args.out, input, &out.clamp01())?;
        log::info!("{} -> {}", input.display(), written.display());
        if args.confidence_maps {
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "image".to_string());
            let [_, _, mh, mw] = maps.dims4("confidence maps")?;
            for c in 0..3 {
                for s in 0..4 {
                    let idx = 4 * c + s;
                    let plane = mh * mw;
                    let map = Tensor::<S>::new(
                        vec![mh, mw],
                        maps.data()[idx * plane..(idx + 1) * plane].to_vec(),
                    )?;
                    let name = format!(
                        "{stem}_cmap_{}_{}.png",
                        CHANNEL_NAMES[c], SUBBAND_NAMES[s]
                    );
                    imageio::write_gray(&args.out.join(name), &map, true)?;
                }
            }
        }
    }
    Ok(())
}

fn write_output<S: Scalar>(out_dir: &Path, input: &Path, image: &Tensor<S>) -> Result<PathBuf> {
    let name = input
        .file_name()
        .ok_or_else(|| Error::Data(format!("no file name in {}", input.display())))?;
    let path = out_dir.join(name);
    imageio::write_image(&path, image)?;
    Ok(path)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    match checkpoint::peek_precision(&args.checkpoint)? {
        Precision::F32 => eval_with::<f32>(args),
        Precision::F64 => eval_with::<f64>(args),
    }
}

fn eval_with<S: Scalar>(args: &EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load::<S>(&args.checkpoint)?;
    let dataset = Dataset::load(&args.dataset)?;
    let report = pipeline::evaluate(&ckpt.params, &dataset)?;
    print!("{}", pipeline::format_eval_table(&report, &ckpt.config.to_kv_string()));
    let records_path = args
        .records
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_extension("eval.tsv"));
    std::fs::write(&records_path, pipeline::eval_records(&report))
        .map_err(|e| Error::io(&records_path, e))?;
    println!("records written to {}", records_path.display());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("DERAIN_LOG", "info"),
    )
    .format_timestamp(None)
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match &cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
