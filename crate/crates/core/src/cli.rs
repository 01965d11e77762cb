//! The `codeinr` command line.

use crate::error::{Error, Result};
use crate::eval::{finetune_code, render_blend, EvalRecord, EvalReport};
use crate::image::Image;
use crate::io::{
    export_scene, load_checkpoint, load_dataset, load_entries, read_image, save_checkpoint, write_image, InterpTag,
};
use crate::latent::NormMode;
use crate::scenes::{generate, SceneSpec};
use crate::tensor::NormOrder;
use crate::train::{Checkpoint, TrainConfig, Trainer, METRICS_HEADER};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "codeinr", version, about = "Fit one coordinate network to a set of views and interpolate between them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene as a dataset directory.
    Gen {
        /// translate_sprite, two_layer_parallax or large_disparity.
        #[arg(long, default_value = "translate_sprite")]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset manifest.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the checkpoint and metrics.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render the blend of codes `i` and `j`.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        /// Write K frames at evenly spaced t from 0 to 1 instead.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value_t = 48)]
        height: usize,
        #[arg(long, default_value_t = 48)]
        width: usize,
        /// Output image; with --sweep, frames are numbered after its stem.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a held-out manifest of in-between frames.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        heldout: PathBuf,
        /// Report CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize one code against a ground-truth image with the network frozen.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit under every code normalization and compare known and novel views.
    AblateNorm {
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Fit under several code lengths and compare known and novel views.
    AblateCodelen {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
        lengths: Vec<usize>,
    },
}

/// Training settings: built-in defaults, then `--config`, then flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub norm_mode: Option<String>,
    #[arg(long)]
    pub code_len: Option<usize>,
    #[arg(long)]
    pub alpha_inter: Option<f64>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        let flags = [
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("norm_mode", self.norm_mode.clone()),
            ("code_len", self.code_len.map(|v| v.to_string())),
            ("alpha_inter", self.alpha_inter.map(|v| v.to_string())),
            ("lr_start", self.lr_start.map(|v| v.to_string())),
            ("lr_end", self.lr_end.map(|v| v.to_string())),
            ("checkpoint_every", self.checkpoint_every.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        for pair in &self.overrides {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub heldout: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Result CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Config(_) | Error::Scene(_) | Error::WeightRange(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn scene_preset(name: &str) -> Result<SceneSpec> {
    match name {
        "translate_sprite" => Ok(SceneSpec::translate_sprite()),
        "two_layer_parallax" => Ok(SceneSpec::two_layer_parallax()),
        "large_disparity" => Ok(SceneSpec::large_disparity()),
        other => Err(Error::Scene(format!("unknown scene preset {other:?}"))),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen { scene, seed, out } => {
            let scene = generate(&scene_preset(&scene)?.with_seed(seed))?;
            let (train, heldout) = export_scene(&scene, &out)?;
            println!("{}\n{}", train.display(), heldout.display());
            Ok(())
        }
        Command::Fit {
            data,
            out,
            config,
            resume,
        } => {
            let cfg = config.resolve()?;
            fit_to_dir(&data, &out, &cfg, resume.as_deref())
        }
        Command::Render {
            ckpt,
            i,
            j,
            t,
            sweep,
            height,
            width,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            match sweep {
                None => write_image(&out, &render_blend(&ckpt, i, j, t, height, width)?),
                Some(k) => {
                    for (n, path) in sweep_paths(&out, k).iter().enumerate() {
                        let t = if k > 1 { n as f64 / (k - 1) as f64 } else { 0.0 };
                        write_image(path, &render_blend(&ckpt, i, j, t, height, width)?)?;
                    }
                    Ok(())
                }
            }
        }
        Command::Eval { ckpt, heldout, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let report = heldout_report(&ckpt, &heldout)?;
            eprint!("{}", report.summary());
            emit(out.as_deref(), &report.to_csv())
        }
        Command::Finetune {
            ckpt,
            gt,
            i,
            j,
            steps,
            lr,
            out,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let gt = read_image(&gt)?;
            let before = crate::eval::midpoint_eval(&ckpt, i, j, &gt)?;
            let (_, after) = finetune_code(&ckpt, i, j, &gt, steps, lr)?;
            let report = EvalReport {
                records: vec![before, after],
            };
            eprint!("{}", report.summary());
            emit(out.as_deref(), &report.to_csv())
        }
        Command::AblateNorm { study } => {
            let modes = [
                NormMode::None,
                NormMode::PNorm(NormOrder::Infinity),
                NormMode::PNorm(NormOrder::P(2.0)),
                NormMode::PNorm(NormOrder::P(1.5)),
                NormMode::PNorm(NormOrder::P(1.0)),
            ];
            let base = study.config.resolve()?;
            let runs = modes.iter().map(|&m| (m.to_string(), TrainConfig { norm_mode: m, ..base.clone() }));
            ablation(&study, "norm_mode", runs)
        }
        Command::AblateCodelen { study, lengths } => {
            let base = study.config.resolve()?;
            let runs = lengths.iter().map(|&m| (m.to_string(), TrainConfig { code_len: m, ..base.clone() }));
            ablation(&study, "code_len", runs)
        }
    }
}

/// Numbered frame paths `<stem>_000.<ext>` next to `out`.
pub fn sweep_paths(out: &Path, frames: usize) -> Vec<PathBuf> {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("png");
    (0..frames).map(|n| out.with_file_name(format!("{stem}_{n:03}.{ext}"))).collect()
}

/// Trains, writing `metrics.csv`, periodic `checkpoint_<iter>.bin` files
/// and the final `checkpoint.bin` into `out`.
pub fn fit_to_dir(data: &Path, out: &Path, cfg: &TrainConfig, resume: Option<&Path>) -> Result<()> {
    let images = load_dataset(data)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(images, load_checkpoint(path)?, cfg)?,
        None => Trainer::new(images, cfg)?,
    };
    let metrics_path = out.join("metrics.csv");
    let mut metrics = format!("{METRICS_HEADER}\n");
    if resume.is_some() {
        // Keep rows the checkpoint already accounts for; later ones will be redone.
        let done = trainer.state().iteration;
        let previous = std::fs::read_to_string(&metrics_path).unwrap_or_default();
        for line in previous.lines().skip(1) {
            let iter = line.split(',').next().and_then(|f| f.parse::<u64>().ok());
            if iter.is_some_and(|it| it < done) {
                writeln!(metrics, "{line}").unwrap();
            }
        }
    }
    let every = cfg.checkpoint_every;
    let result = trainer.run(|m, state| {
        writeln!(metrics, "{}", m.csv_row()).unwrap();
        if every > 0 && state.iteration % every == 0 {
            save_checkpoint(state, out.join(format!("checkpoint_{:06}.bin", state.iteration)))?;
            write_text(&metrics_path, &metrics)?;
        }
        Ok(())
    });
    write_text(&metrics_path, &metrics)?;
    result?;
    save_checkpoint(trainer.state(), out.join("checkpoint.bin"))
}

/// Scores every `interp:i:j:t` entry of a held-out manifest.
pub fn heldout_report(ckpt: &Checkpoint, heldout: &Path) -> Result<EvalReport> {
    let (manifest, images) = load_entries(heldout)?;
    let mut report = EvalReport::default();
    for (entry, gt) in manifest.images.iter().zip(&images) {
        let tag = InterpTag::parse(&entry.view_tag).ok_or_else(|| {
            Error::Data(crate::error::DataError::Manifest {
                path: heldout.display().to_string(),
                reason: format!("{}: view tag {:?} is not interp:i:j:t", entry.path, entry.view_tag),
            })
        })?;
        let rendered = render_blend(ckpt, tag.i, tag.j, tag.t, gt.height(), gt.width())?;
        report.push(EvalRecord::compare(entry.view_tag.clone(), tag.t, &rendered, gt)?);
    }
    Ok(report)
}

/// Mean PSNR and SSIM of each trained code against its own image.
pub fn known_view_scores(ckpt: &Checkpoint, images: &[Image]) -> Result<(f64, f64)> {
    let mut report = EvalReport::default();
    for (n, img) in images.iter().enumerate() {
        let rendered = crate::eval::render_code(ckpt, ckpt.codes.code(n), img.height(), img.width())?;
        report.push(EvalRecord::compare(format!("view:{n}"), 0.0, &rendered, img)?);
    }
    Ok((report.mean_psnr(), report.mean_ssim()))
}

fn ablation(study: &StudyArgs, column: &str, runs: impl Iterator<Item = (String, TrainConfig)>) -> Result<()> {
    let images = load_dataset(&study.data)?;
    let mut csv = format!("{column},known_psnr_db,known_ssim,novel_psnr_db,novel_ssim\n");
    for (label, cfg) in runs {
        let ckpt = crate::train::fit(&images, &cfg)?;
        let (kp, ks) = known_view_scores(&ckpt, images.images())?;
        let novel = heldout_report(&ckpt, &study.heldout)?;
        eprintln!("{column}={label}: known {kp:.2} dB, novel {:.2} dB", novel.mean_psnr());
        writeln!(csv, "{label},{kp},{ks},{},{}", novel.mean_psnr(), novel.mean_ssim()).unwrap();
    }
    emit(study.out.as_deref(), &csv)
}
