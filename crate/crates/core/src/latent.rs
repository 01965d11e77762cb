//! Per-image codes, the unit p-norm constraint and linear code blending.

use crate::error::{Error, Result};
use crate::tensor::{NormOrder, Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

/// Codes with a smaller norm than this are treated as collapsed.
pub const MIN_CODE_NORM: f64 = 1e-12;

/// How codes are kept in check during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    /// Codes are free parameters.
    None,
    /// Codes are rescaled onto the unit p-norm sphere.
    PNorm(NormOrder),
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormMode::None => f.write_str("none"),
            NormMode::PNorm(p) => write!(f, "{p}"),
        }
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(NormMode::None),
            "inf" | "infinity" => Ok(NormMode::PNorm(NormOrder::Infinity)),
            other => match other.parse::<f64>() {
                Ok(p) if p >= 1.0 && p.is_finite() => Ok(NormMode::PNorm(NormOrder::P(p))),
                _ => Err(Error::Config(format!("norm mode must be none, inf or a real p >= 1, got {s:?}"))),
            },
        }
    }
}

/// Rescales `z` to unit p-norm.
pub fn project_unit_pnorm<T: Real>(z: &[T], p: NormOrder) -> Result<Vec<T>> {
    let norm = p.norm(z);
    if !(norm >= MIN_CODE_NORM) {
        return Err(Error::DegenerateCode { norm });
    }
    Ok(z.iter().map(|&v| T::lit(v.to_f64().unwrap() / norm)).collect())
}

/// `(1 - t) · z_i + t · z_j` for `t` in `[0, 1]`.
pub fn interpolate_codes<T: Real>(z_i: &[T], z_j: &[T], t: f64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::WeightRange(t));
    }
    if z_i.len() != z_j.len() {
        return Err(Error::CodeLength {
            expected: z_i.len(),
            got: z_j.len(),
        });
    }
    let (a, b) = (T::lit(1.0 - t), T::lit(t));
    Ok(z_i.iter().zip(z_j).map(|(&x, &y)| a * x + b * y).collect())
}

/// The learnable codes, one row per training image.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeTable {
    codes: Tensor<f32>,
    norm_mode: NormMode,
    seed: u64,
}

impl CodeTable {
    /// Draws `n_images` codes of length `code_len` from `N(0, init_std²)` and
    /// projects them when `norm_mode` asks for it.
    pub fn init(n_images: usize, code_len: usize, seed: u64, norm_mode: NormMode, init_std: f64) -> Result<Self> {
        if n_images == 0 || code_len == 0 {
            return Err(Error::Config("code table needs at least one code of positive length".into()));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Config(format!("code init std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_images * code_len)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        let mut table = Self {
            codes: Tensor::new([n_images, code_len], data)?,
            norm_mode,
            seed,
        };
        table.project_all()?;
        Ok(table)
    }

    /// Reassembles a table from stored rows without reprojecting.
    pub fn from_tensor(codes: Tensor<f32>, norm_mode: NormMode, seed: u64) -> Result<Self> {
        if codes.shape().len() != 2 {
            return Err(Error::Config(format!("code table must be a matrix, got {:?}", codes.shape())));
        }
        Ok(Self { codes, norm_mode, seed })
    }

    pub fn len(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code_len(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_tensor(&self) -> &Tensor<f32> {
        &self.codes
    }

    pub fn code(&self, n: usize) -> &[f32] {
        let m = self.code_len();
        &self.codes.data()[n * m..(n + 1) * m]
    }

    pub fn code_mut(&mut self, n: usize) -> &mut [f32] {
        let m = self.code_len();
        &mut self.codes.data_mut()[n * m..(n + 1) * m]
    }

    /// Projects code `n` in place; a no-op without a norm constraint.
    pub fn project(&mut self, n: usize) -> Result<()> {
        if let NormMode::PNorm(p) = self.norm_mode {
            let projected = project_unit_pnorm(self.code(n), p)?;
            self.code_mut(n).copy_from_slice(&projected);
        }
        Ok(())
    }

    pub fn project_all(&mut self) -> Result<()> {
        for n in 0..self.len() {
            self.project(n)?;
        }
        Ok(())
    }

    /// Blend of codes `i` and `j` at weight `t`.
    pub fn interpolate(&self, i: usize, j: usize, t: f64) -> Result<Vec<f32>> {
        interpolate_codes(self.code(i), self.code(j), t)
    }
}
