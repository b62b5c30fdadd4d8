//! Training configuration: defaults, the line-oriented `key = value` file
//! format, and the canonical text form echoed into logs, checkpoints, and
//! result tables.

use std::path::{Path, PathBuf};

use crate::blocks::GateKind;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::model::ModelConfig;
use crate::optim::Schedule;
use crate::scalar::Precision;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub c0: usize,
    pub n_res: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub base_lr: f64,
    pub lambda_l1: f64,
    pub lambda_wssim: f64,
    pub seed: u64,
    pub precision: Precision,
    pub attention_variant: GateKind,
    pub attention_enabled: bool,
    pub fusion_enabled: bool,
    pub bypass_io_convs: bool,
    pub schedule: Schedule,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub log_interval: usize,
    /// Trailing pairs held out for the per-epoch PSNR probe; 0 evaluates on
    /// the training pairs instead.
    pub holdout: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c0: 16,
            n_res: 2,
            epochs: 300,
            batch_size: 16,
            crop_size: 256,
            base_lr: 1e-4,
            lambda_l1: 1.0,
            lambda_wssim: 1.0,
            seed: 0,
            precision: Precision::F32,
            attention_variant: GateKind::Sigmoid,
            attention_enabled: true,
            fusion_enabled: true,
            bypass_io_convs: false,
            schedule: Schedule::StepEvery100,
            dataset: PathBuf::from("data"),
            checkpoint: PathBuf::from("checkpoint.bin"),
            log_interval: 10,
            holdout: 1,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size % 16 != 0 || self.crop_size == 0 {
            return Err(Error::Config(format!(
                "crop_size must be a positive multiple of 16, got {}",
                self.crop_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".to_string()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        self.loss_weights().validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            c0: self.c0,
            n_res: self.n_res,
            gate: self.attention_variant,
            attention: self.attention_enabled,
            fusion: self.fusion_enabled,
            bypass_io: self.bypass_io_convs,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_l1: self.lambda_l1, lambda_wssim: self.lambda_wssim }
    }

    /// Canonical `key = value` text, one key per line, stable order.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("c0", self.c0.to_string());
        kv("n_res", self.n_res.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("crop_size", self.crop_size.to_string());
        kv("base_lr", format!("{:e}", self.base_lr));
        kv("lambda_l1", self.lambda_l1.to_string());
        kv("lambda_wssim", self.lambda_wssim.to_string());
        kv("seed", self.seed.to_string());
        kv("precision", self.precision.name().to_string());
        kv("attention_variant", self.attention_variant.name().to_string());
        kv("attention_enabled", self.attention_enabled.to_string());
        kv("fusion_enabled", self.fusion_enabled.to_string());
        kv("bypass_io_convs", self.bypass_io_convs.to_string());
        kv("schedule", self.schedule.name().to_string());
        kv("dataset", self.dataset.display().to_string());
        kv("checkpoint", self.checkpoint.display().to_string());
        kv("log_interval", self.log_interval.to_string());
        kv("holdout", self.holdout.to_string());
        s
    }

    /// Apply one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::Config(format!("invalid value `{value}` for {what}")))
        };
        match key {
            "c0" => match value.parse() {
                Ok(v) => self.c0 = v,
                Err(_) => return bad("c0"),
            },
            "n_res" => match value.parse() {
                Ok(v) => self.n_res = v,
                Err(_) => return bad("n_res"),
            },
            "epochs" => match value.parse() {
                Ok(v) => self.epochs = v,
                Err(_) => return bad("epochs"),
            },
            "batch_size" => match value.parse() {
                Ok(v) => self.batch_size = v,
                Err(_) => return bad("batch_size"),
            },
            "crop_size" => match value.parse() {
                Ok(v) => self.crop_size = v,
                Err(_) => return bad("crop_size"),
            },
            "base_lr" => match value.parse() {
                Ok(v) => self.base_lr = v,
                Err(_) => return bad("base_lr"),
            },
            "lambda_l1" => match value.parse() {
                Ok(v) => self.lambda_l1 = v,
                Err(_) => return bad("lambda_l1"),
            },
            "lambda_wssim" => match value.parse() {
                Ok(v) => self.lambda_wssim = v,
                Err(_) => return bad("lambda_wssim"),
            },
            "seed" => match value.parse() {
                Ok(v) => self.seed = v,
                Err(_) => return bad("seed"),
            },
            "precision" => match Precision::parse(value) {
                Some(p) => self.precision = p,
                None => return bad("precision (f32|f64)"),
            },
            "attention_variant" => match GateKind::parse(value) {
                Some(g) => self.attention_variant = g,
                None => return bad("attention_variant (sigmoid|literal)"),
            },
            "attention_enabled" => match parse_bool(value) {
                Some(b) => self.attention_enabled = b,
                None => return bad("attention_enabled"),
            },
            "fusion_enabled" => match parse_bool(value) {
                Some(b) => self.fusion_enabled = b,
                None => return bad("fusion_enabled"),
            },
            "bypass_io_convs" => match parse_bool(value) {
                Some(b) => self.bypass_io_convs = b,
                None => return bad("bypass_io_convs"),
            },
            "schedule" => match Schedule::parse(value) {
                Some(s) => self.schedule = s,
                None => return bad("schedule (step100|single-drop)"),
            },
            "dataset" => self.dataset = PathBuf::from(value),
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "log_interval" => match value.parse() {
                Ok(v) => self.log_interval = v,
                Err(_) => return bad("log_interval"),
            },
            "holdout" => match value.parse() {
                Ok(v) => self.holdout = v,
                Err(_) => return bad("holdout"),
            },
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse the line-oriented `key = value` form ('#' starts a comment).
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {} is not `key = value`: {raw}",
                    lineno + 1
                )));
            };
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text)
    }
}
