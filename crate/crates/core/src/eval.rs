//! Image metrics and the interpolation evaluation protocol.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::latent::interpolate_codes;
use crate::model::{make_coord_grid, render_full};
use crate::objectives::image_tensor;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::train::{AdamState, Checkpoint};
use std::fmt::Write as _;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Pixels rendered per forward pass during evaluation.
pub const RENDER_CHUNK: usize = 4096;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(total / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit-range images, capped at
/// [`PSNR_CAP_DB`] when the MSE falls below 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let err = mse(a, b)?;
    Ok(if err < 1e-10 {
        PSNR_CAP_DB
    } else {
        10.0 * (1.0 / err).log10()
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (k, t) in taps.iter_mut().enumerate() {
        let x = k as f64 - half;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Valid-mode separable Gaussian filter of one plane.
fn filter_valid(plane: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (height - n + 1, width - n + 1);
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|k| taps[k] * plane[r * width + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| taps[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Structural similarity with an 11 × 11 Gaussian window (σ = 1.5),
/// averaged over valid windows and then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let xx = filter_valid(&prod(&x, &x), h, w, &taps);
        let yy = filter_valid(&prod(&y, &y), h, w, &taps);
        let xy = filter_valid(&prod(&x, &y), h, w, &taps);
        let map_sum: f64 = (0..mu_x.len())
            .map(|k| ssim_from_moments(mu_x[k], mu_y[k], xx[k] - mu_x[k] * mu_x[k], yy[k] - mu_y[k] * mu_y[k], xy[k] - mu_x[k] * mu_y[k]))
            .sum();
        total += map_sum / mu_x.len() as f64;
    }
    Ok(total / 3.0)
}

/// SSIM of one window given its local moments.
pub fn ssim_from_moments(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64) -> f64 {
    ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2))
}

/// Pixel-space blend `(1 - t) · a + t · b`.
pub fn crossfade_baseline(a: &Image, b: &Image, t: f64) -> Result<Image> {
    a.check_same_dims(b)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::WeightRange(t));
    }
    let (wa, wb) = ((1.0 - t) as f32, t as f32);
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| wa * x + wb * y).collect();
    Image::new(a.height(), a.width(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub view_id: String,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalRecord {
    pub fn compare(view_id: impl Into<String>, t: f64, rendered: &Image, gt: &Image) -> Result<Self> {
        Ok(Self {
            view_id: view_id.into(),
            t,
            psnr: psnr(rendered, gt)?,
            ssim: ssim(rendered, gt)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

pub const REPORT_HEADER: &str = "view_id,t,psnr_db,ssim";

impl EvalReport {
    pub fn push(&mut self, record: EvalRecord) {
        self.records.push(record);
    }

    pub fn mean_psnr(&self) -> f64 {
        self.records.iter().map(|r| r.psnr).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.records.iter().map(|r| r.ssim).sum::<f64>() / self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.view_id, r.t, r.psnr, r.ssim).unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            writeln!(out, "{:<16} t={:<6} PSNR {:>7.3} dB  SSIM {:.4}", r.view_id, r.t, r.psnr, r.ssim).unwrap();
        }
        if !self.records.is_empty() {
            writeln!(
                out,
                "{:<16} {:<8} PSNR {:>7.3} dB  SSIM {:.4}",
                "mean",
                "",
                self.mean_psnr(),
                self.mean_ssim()
            )
            .unwrap();
        }
        out
    }
}

/// Renders the checkpoint at `code` into a `height × width` frame.
pub fn render_code(ckpt: &Checkpoint, code: &[f32], height: usize, width: usize) -> Result<Image> {
    render_full(&ckpt.net, code, height, width, RENDER_CHUNK)
}

/// Renders the blend of codes `i` and `j` at weight `t`.
pub fn render_blend(ckpt: &Checkpoint, i: usize, j: usize, t: f64, height: usize, width: usize) -> Result<Image> {
    check_code_index(ckpt, i)?;
    check_code_index(ckpt, j)?;
    let code = ckpt.codes.interpolate(i, j, t)?;
    render_code(ckpt, &code, height, width)
}

fn check_code_index(ckpt: &Checkpoint, n: usize) -> Result<()> {
    if n >= ckpt.codes.len() {
        return Err(Error::Config(format!(
            "code index {n} out of range: the checkpoint holds {} codes",
            ckpt.codes.len()
        )));
    }
    Ok(())
}

/// Scores the rendering at the midpoint of codes `i` and `j` against `gt_mid`.
pub fn midpoint_eval(ckpt: &Checkpoint, i: usize, j: usize, gt_mid: &Image) -> Result<EvalRecord> {
    let rendered = render_blend(ckpt, i, j, 0.5, gt_mid.height(), gt_mid.width())?;
    EvalRecord::compare(format!("mid:{i}:{j}"), 0.5, &rendered, gt_mid)
}

/// Optimizes a code against `gt` with the network frozen, starting from the
/// midpoint of codes `i` and `j`. Returns the final code and its score.
pub fn finetune_code(ckpt: &Checkpoint, i: usize, j: usize, gt: &Image, steps: usize, lr: f64) -> Result<(Vec<f32>, EvalRecord)> {
    check_code_index(ckpt, i)?;
    check_code_index(ckpt, j)?;
    let mut code = interpolate_codes(ckpt.codes.code(i), ckpt.codes.code(j), 0.5)?;
    let (h, w) = gt.dims();
    let grid = make_coord_grid(h, w);
    let coords: Tensor<f32> = grid.gather(0..grid.len());
    let target = image_tensor::<f32>(gt);
    let mut adam = AdamState::<f32>::new(&[code.len()]);
    for step in 0..steps {
        let diverged = |reason: String| Error::Divergence {
            iteration: step as u64,
            reason,
        };
        let mut g = Graph::<f32>::new();
        let net = ckpt.net.bind(&mut g, false);
        let z = g.param(Tensor::new([1, code.len()], code.clone())?);
        let c = g.constant(coords.clone());
        let t = g.constant(target.clone());
        let loss = net
            .forward_coded(&mut g, c, z)
            .and_then(|pred| Ok(g.mse(pred, t)?))
            .map_err(|e| match e {
                Error::Tensor(TensorError::NonFinite(op)) => diverged(format!("{op} produced a non-finite value")),
                other => other,
            })?;
        let grads = g.backward(loss)?;
        let gz = grads.tensor(z);
        if !gz.is_finite() {
            return Err(diverged("non-finite code gradient".into()));
        }
        adam.begin_step();
        adam.update(0, 0, &mut code, gz.data(), lr);
    }
    let rendered = render_code(ckpt, &code, h, w)?;
    let record = EvalRecord::compare(format!("finetune:{i}:{j}"), 0.5, &rendered, gt)?;
    Ok((code, record))
}
