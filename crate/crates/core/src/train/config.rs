//! Training configuration and its flat `key = value` text form.

use crate::error::{Error, Result};
use crate::latent::NormMode;
use crate::objectives::{ExtractorConfig, ExtractorKind};
use crate::tensor::NormOrder;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_pixels: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Weight of the interpolation loss; zero disables it entirely.
    pub alpha_inter: f64,
    pub inter_every: u64,
    pub norm_mode: NormMode,
    pub code_len: usize,
    pub hidden_dim: usize,
    /// Number of sine layers.
    pub depth: usize,
    pub w0: f64,
    pub code_init_std: f64,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub extractor: ExtractorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3_000,
            batch_pixels: 1024,
            lr_start: 1e-5,
            lr_end: 1e-6,
            alpha_inter: 0.0,
            inter_every: 2,
            norm_mode: NormMode::PNorm(NormOrder::P(1.0)),
            code_len: 128,
            hidden_dim: 128,
            depth: 3,
            w0: 30.0,
            code_init_std: 1.0,
            seed: 0,
            checkpoint_every: 0,
            extractor: ExtractorConfig::default(),
        }
    }
}

/// Keys accepted in config files and on the command line, in canonical order.
pub const KEYS: &[&str] = &[
    "iterations",
    "batch_pixels",
    "lr_start",
    "lr_end",
    "alpha_inter",
    "inter_every",
    "norm_mode",
    "code_len",
    "hidden_dim",
    "depth",
    "w0",
    "code_init_std",
    "seed",
    "checkpoint_every",
    "extractor_kind",
    "extractor_patch",
    "extractor_seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "batch_pixels" => self.batch_pixels = parse(key, value)?,
            "lr_start" => self.lr_start = parse(key, value)?,
            "lr_end" => self.lr_end = parse(key, value)?,
            "alpha_inter" => self.alpha_inter = parse(key, value)?,
            "inter_every" => self.inter_every = parse(key, value)?,
            "norm_mode" => self.norm_mode = value.parse()?,
            "code_len" => self.code_len = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "w0" => self.w0 = parse(key, value)?,
            "code_init_std" => self.code_init_std = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "extractor_kind" => self.extractor.kind = value.parse::<ExtractorKind>()?,
            "extractor_patch" => self.extractor.patch = parse(key, value)?,
            "extractor_seed" => self.extractor.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "iterations" => self.iterations.to_string(),
            "batch_pixels" => self.batch_pixels.to_string(),
            "lr_start" => self.lr_start.to_string(),
            "lr_end" => self.lr_end.to_string(),
            "alpha_inter" => self.alpha_inter.to_string(),
            "inter_every" => self.inter_every.to_string(),
            "norm_mode" => self.norm_mode.to_string(),
            "code_len" => self.code_len.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "depth" => self.depth.to_string(),
            "w0" => self.w0.to_string(),
            "code_init_std" => self.code_init_std.to_string(),
            "seed" => self.seed.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "extractor_kind" => self.extractor.kind.to_string(),
            "extractor_patch" => self.extractor.patch.to_string(),
            "extractor_seed" => self.extractor.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form: every key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key).unwrap()).unwrap();
        }
        out
    }

    /// SHA-256 over every setting that influences the numbers a run produces.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for key in KEYS.iter().filter(|&&k| k != "checkpoint_every") {
            h.update(format!("{key}={}\n", self.get(key).unwrap()).as_bytes());
        }
        h.finalize().into()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            return fail("learning rates must satisfy 0 < lr_end <= lr_start");
        }
        if !(self.alpha_inter >= 0.0 && self.alpha_inter.is_finite()) {
            return fail("alpha_inter must be a finite value >= 0");
        }
        if self.inter_every == 0 {
            return fail("inter_every must be at least 1");
        }
        if self.batch_pixels == 0 || self.code_len == 0 || self.hidden_dim == 0 || self.depth == 0 {
            return fail("batch_pixels, code_len, hidden_dim and depth must be positive");
        }
        if !(self.w0 > 0.0) || !(self.code_init_std > 0.0) {
            return fail("w0 and code_init_std must be positive");
        }
        Ok(())
    }

    /// Whether iteration `iter` (zero-based) evaluates the interpolation loss.
    pub fn is_inter_step(&self, iter: u64) -> bool {
        self.alpha_inter > 0.0 && iter.is_multiple_of(self.inter_every)
    }
}
