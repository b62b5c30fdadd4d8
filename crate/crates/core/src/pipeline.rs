//! End-to-end training, evaluation, and the ablation harness. The CLI is a
//! thin wrapper over these entry points so tests can drive them directly.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::checkpoint::{self, Checkpoint, OptimizerSnapshot};
use crate::config::TrainConfig;
use crate::data::{crop_window, sample_crop_origin, Dataset};
use crate::error::{Error, Result};
use crate::loss::{psnr, ssim_metric, total_loss};
use crate::model::{derain_padded, derain_on_tape, init_params, ModelParams};
use crate::optim::{lr_schedule, Radam, RadamHyper};
use crate::rng::{derive_seed, rng_for, STREAM_SHUFFLE};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_total: f64,
    pub mean_l1: f64,
    pub mean_wssim: f64,
    /// Mean derained PSNR on the probe split (held-out pairs, or the
    /// training pairs when no holdout is configured).
    pub probe_psnr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<S: Scalar> {
    pub params: ModelParams<S>,
    pub epochs: Vec<EpochLog>,
    pub checkpoint_path: PathBuf,
}

impl<S: Scalar> TrainOutcome<S> {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.mean_total)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.mean_total)
    }
}

struct LoadedPair<S: Scalar> {
    clean: Tensor<S>,
    rainy: Tensor<S>,
}

fn load_pairs<S: Scalar>(dataset: &Dataset) -> Result<Vec<LoadedPair<S>>> {
    (0..dataset.len())
        .map(|i| {
            let (clean, rainy) = dataset.read_pair::<S>(i)?;
            clean.same_shape(&rainy, "dataset pair")?;
            Ok(LoadedPair { clean, rainy })
        })
        .collect()
}

/// Fields that must agree between a checkpoint and the requested config for
/// a resumed run to reproduce the uninterrupted trajectory.
fn resume_compatible(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.model_config() == b.model_config()
        && a.precision == b.precision
        && a.seed == b.seed
        && a.batch_size == b.batch_size
        && a.crop_size == b.crop_size
        && a.base_lr == b.base_lr
        && a.schedule == b.schedule
        && a.lambda_l1 == b.lambda_l1
        && a.lambda_wssim == b.lambda_wssim
        && a.dataset == b.dataset
        && a.holdout == b.holdout
}

fn log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log")
}

fn append_log(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Train per the config; when `resume` is set and the checkpoint exists,
/// continue from it (the loss trajectory matches an uninterrupted run).
pub fn train<S: Scalar>(cfg: &TrainConfig, resume: bool) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if cfg.lambda_wssim > 0.0 && cfg.crop_size < 32 {
        return Err(Error::Config(
            "crop_size must be at least 32 for the wavelet SSIM loss (the SSIM \
             window must fit the subbands)"
                .to_string(),
        ));
    }

    let dataset = Dataset::load(&cfg.dataset)?;
    let pairs = load_pairs::<S>(&dataset)?;
    let holdout = cfg.holdout.min(pairs.len().saturating_sub(1));
    let n_train = pairs.len() - holdout;
    let (train_pairs, probe_pairs) = pairs.split_at(n_train);
    let probe_pairs: &[LoadedPair<S>] =
        if probe_pairs.is_empty() { train_pairs } else { probe_pairs };

    let mut params: ModelParams<S>;
    let mut start_epoch: usize;
    let shapes = |p: &ModelParams<S>| -> Vec<Vec<usize>> {
        p.named_tensors().iter().map(|(_, t)| t.shape().to_vec()).collect()
    };
    let mut optimizer: Radam<S>;

    if resume && cfg.checkpoint.exists() {
        let ckpt = checkpoint::load::<S>(&cfg.checkpoint)?;
        if !resume_compatible(&ckpt.config, cfg) {
            return Err(Error::Checkpoint(format!(
                "checkpoint {} was trained with an incompatible config",
                cfg.checkpoint.display()
            )));
        }
        params = ckpt.params;
        start_epoch = ckpt.epoch as usize;
        optimizer = match ckpt.optimizer {
            Some(snap) => snap.into_optimizer(&shapes(&params), RadamHyper::default())?,
            None => Radam::new(&shapes(&params), RadamHyper::default()),
        };
        log::info!(
            "resuming from {} at epoch {start_epoch}",
            cfg.checkpoint.display()
        );
    } else {
        params = init_params::<S>(&cfg.model_config(), cfg.seed)?;
        start_epoch = 0;
        optimizer = Radam::new(&shapes(&params), RadamHyper::default());
        let header: String = cfg
            .to_kv_string()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect();
        let columns = "# epoch\tlr\tloss\tl1\twssim\tprobe_psnr\n";
        std::fs::write(log_path(&cfg.checkpoint), header + columns)
            .map_err(|e| Error::io(log_path(&cfg.checkpoint), e))?;
    }
    if start_epoch >= cfg.epochs {
        log::info!("checkpoint already at epoch {start_epoch}; nothing to do");
    }

    let weights = cfg.loss_weights();
    let mut epoch_logs = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = lr_schedule(cfg.schedule, epoch, cfg.base_lr);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[STREAM_SHUFFLE, epoch as u64]));

        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut clean_crops = Vec::with_capacity(chunk.len());
            let mut rainy_crops = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let pair = &train_pairs[idx];
                let (h, w) = (pair.clean.shape()[1], pair.clean.shape()[2]);
                let (y0, x0) = if h == cfg.crop_size && w == cfg.crop_size {
                    (0, 0)
                } else {
                    let crop_seed =
                        derive_seed(cfg.seed, &[epoch as u64, idx as u64]);
                    sample_crop_origin(h, w, cfg.crop_size, crop_seed)?
                };
                clean_crops.push(crop_window(&pair.clean, y0, x0, cfg.crop_size)?);
                rainy_crops.push(crop_window(&pair.rainy, y0, x0, cfg.crop_size)?);
            }
            let clean_batch = Tensor::stack(&clean_crops)?;
            let rainy_batch = Tensor::stack(&rainy_crops)?;

            let mut tape = Tape::new();
            let binding = params.bind(&mut tape);
            let ids = binding.ordered_ids();
            let input = tape.constant(rainy_batch);
            let target = tape.constant(clean_batch);
            let nodes = derain_on_tape(&mut tape, &binding, input)?;
            let terms = total_loss(&mut tape, nodes.output, target, &weights)?;
            let loss_value = tape.value(terms.total).item()?.as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            tape.backward(terms.total)?;

            let grads: Vec<Tensor<S>> = {
                let named = params.named_tensors();
                ids.iter()
                    .zip(&named)
                    .map(|(&id, (name, _))| {
                        tape.grad(id).cloned().ok_or_else(|| Error::NonFiniteGradient {
                            param: format!("{name} (no gradient reached it)"),
                        })
                    })
                    .collect::<Result<_>>()?
            };
            let mut slots = params.tensors_mut();
            optimizer.step(&mut slots, &grads, lr)?;

            sums.0 += loss_value;
            sums.1 += terms.l1;
            sums.2 += terms.wssim;
            batches += 1;
            if cfg.log_interval > 0 && step % cfg.log_interval == 0 {
                log::info!(
                    "epoch {epoch} step {step} loss {loss_value:.6} l1 {:.6} wssim {:.6} lr {lr:e}",
                    terms.l1,
                    terms.wssim
                );
            }
        }

        let denom = batches.max(1) as f64;
        let mut probe_psnr = 0.0;
        for pair in probe_pairs {
            let (out, _) = derain_padded(&params, &pair.rainy)?;
            probe_psnr += psnr(&out.clamp01(), &pair.clean, 1.0)?;
        }
        probe_psnr /= probe_pairs.len() as f64;

        let entry = EpochLog {
            epoch,
            lr,
            mean_total: sums.0 / denom,
            mean_l1: sums.1 / denom,
            mean_wssim: sums.2 / denom,
            probe_psnr,
        };
        append_log(
            &log_path(&cfg.checkpoint),
            &format!(
                "{}\t{:e}\t{:.8}\t{:.8}\t{:.8}\t{:.4}\n",
                entry.epoch,
                entry.lr,
                entry.mean_total,
                entry.mean_l1,
                entry.mean_wssim,
                entry.probe_psnr
            ),
        )?;
        log::info!(
            "epoch {epoch} mean loss {:.6} probe psnr {:.2} dB",
            entry.mean_total,
            entry.probe_psnr
        );
        epoch_logs.push(entry);

        checkpoint::save(
            &cfg.checkpoint,
            &Checkpoint {
                config: cfg.clone(),
                epoch: (epoch + 1) as u64,
                params: params.clone(),
                optimizer: Some(OptimizerSnapshot::of(&optimizer)),
            },
        )?;
        start_epoch = epoch + 1;
    }
    let _ = start_epoch;

    Ok(TrainOutcome { params, epochs: epoch_logs, checkpoint_path: cfg.checkpoint.clone() })
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub rainy_psnr: f64,
    pub rainy_ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_rainy_psnr: f64,
    pub mean_rainy_ssim: f64,
}

/// Per-image and mean PSNR/SSIM of derained output vs clean, plus the rainy
/// baseline.
pub fn evaluate<S: Scalar>(params: &ModelParams<S>, dataset: &Dataset) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let (clean, rainy) = dataset.read_pair::<S>(i)?;
        let (out, _) = derain_padded(params, &rainy)?;
        let out = out.clamp01();
        rows.push(EvalRow {
            name: dataset.entries[i].stem.clone(),
            psnr: psnr(&out, &clean, 1.0)?,
            ssim: image_ssim(&out, &clean)?,
            rainy_psnr: psnr(&rainy, &clean, 1.0)?,
            rainy_ssim: image_ssim(&rainy, &clean)?,
        });
    }
    let n = rows.len() as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mean_rainy_psnr: rows.iter().map(|r| r.rainy_psnr).sum::<f64>() / n,
        mean_rainy_ssim: rows.iter().map(|r| r.rainy_ssim).sum::<f64>() / n,
        rows,
    })
}

fn image_ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    let batch_a = Tensor::stack(&[a.clone()])?;
    let batch_b = Tensor::stack(&[b.clone()])?;
    ssim_metric(&batch_a, &batch_b, 1.0)
}

/// Aligned text table with the config echoed in the header.
pub fn format_eval_table(report: &EvalReport, config_echo: &str) -> String {
    let mut s = String::new();
    for line in config_echo.lines() {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&format!(
        "{:<12} {:>9} {:>8} {:>11} {:>11}\n",
        "name", "psnr", "ssim", "rainy_psnr", "rainy_ssim"
    ));
    for r in &report.rows {
        s.push_str(&format!(
            "{:<12} {:>9.4} {:>8.4} {:>11.4} {:>11.4}\n",
            r.name, r.psnr, r.ssim, r.rainy_psnr, r.rainy_ssim
        ));
    }
    s.push_str(&format!(
        "{:<12} {:>9.4} {:>8.4} {:>11.4} {:>11.4}\n",
        "mean", report.mean_psnr, report.mean_ssim, report.mean_rainy_psnr,
        report.mean_rainy_ssim
    ));
    s
}

/// One record per image: `name psnr ssim rainy_psnr rainy_ssim`, tab-separated.
pub fn eval_records(report: &EvalReport) -> String {
    let mut s = String::new();
    for r in &report.rows {
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.name, r.psnr, r.ssim, r.rainy_psnr, r.rainy_ssim
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub attention: bool,
    pub fusion: bool,
    pub psnr: f64,
    pub ssim: f64,
    pub param_count: usize,
}

/// The four ablation configurations, trained and evaluated on the same seed
/// and dataset.
pub fn ablate<S: Scalar>(base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let variants: [(&str, &str, bool, bool); 4] = [
        ("Ours, w/o attention, w/o fusion", "wo-attention-wo-fusion", false, false),
        ("Ours, w/o fusion", "wo-fusion", true, false),
        ("Ours, w/o attention", "wo-attention", false, true),
        ("Ours", "full", true, true),
    ];
    let dataset = Dataset::load(&base.dataset)?;
    let mut rows = Vec::with_capacity(4);
    for (label, tag, attention, fusion) in variants {
        let mut cfg = base.clone();
        cfg.attention_enabled = attention;
        cfg.fusion_enabled = fusion;
        let stem = base
            .checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "checkpoint".to_string());
        cfg.checkpoint = base.checkpoint.with_file_name(format!("{stem}-{tag}.bin"));
        log::info!("ablation variant `{label}` -> {}", cfg.checkpoint.display());
        let outcome = train::<S>(&cfg, false)?;
        let report = evaluate(&outcome.params, &dataset)?;
        rows.push(AblationRow {
            label: label.to_string(),
            attention,
            fusion,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
            param_count: outcome.params.param_count(),
        });
    }
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow], config_echo: &str) -> String {
    let mut s = String::new();
    for line in config_echo.lines() {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&format!(
        "{:<36} {:>9} {:>8} {:>10}\n",
        "variant", "psnr", "ssim", "params"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<36} {:>9.4} {:>8.4} {:>10}\n",
            r.label, r.psnr, r.ssim, r.param_count
        ));
    }
    s
}
