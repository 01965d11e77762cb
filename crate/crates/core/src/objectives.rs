//! Training objectives: pixel reconstruction, and the feature-space
//! interpolation penalty computed through a frozen extractor.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Channel widths of the random convolutional stages.
pub const STAGE_CHANNELS: [usize; 4] = [3, 16, 16, 16];
pub const KERNEL_SIZE: usize = 3;

/// Mean squared error between predicted and ground-truth colors.
pub fn recon_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    Ok(g.mse(pred, gt)?)
}

/// Top-left corners of the non-overlapping `patch × patch` tiles, row-major.
/// Trailing partial tiles are dropped.
pub fn tile_origins(height: usize, width: usize, patch: usize) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || patch > height.min(width) {
        return Err(Error::EmptyTiling { patch, height, width });
    }
    let mut out = Vec::new();
    for r in 0..height / patch {
        for c in 0..width / patch {
            out.push((r * patch, c * patch));
        }
    }
    Ok(out)
}

/// Splits an image into non-overlapping square tiles.
pub fn tile_image(img: &Image, patch: usize) -> Result<Vec<Image>> {
    Ok(tile_origins(img.height(), img.width(), patch)?
        .into_iter()
        .map(|(r, c)| img.crop(r, c, patch))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Fixed, randomly initialized convolution stages.
    RandomConv,
    /// A pretrained encoder supplied from outside this crate.
    External,
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::RandomConv => "random_conv",
            ExtractorKind::External => "external",
        })
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random_conv" => Ok(ExtractorKind::RandomConv),
            "external" => Ok(ExtractorKind::External),
            other => Err(Error::Config(format!("unknown extractor kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    pub patch: usize,
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::RandomConv,
            patch: 32,
            seed: 0,
        }
    }
}

/// Frozen image encoder used by the interpolation loss.
///
/// Each tile goes through three stages of valid 3 × 3 cross-correlation
/// (3 → 16 → 16 → 16 channels) with a sine between stages and 2 × 2 average
/// pooling after each, then a per-channel spatial mean. Tile vectors are
/// concatenated in row-major tile order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    kernels: Vec<Tensor<f32>>,
}

impl FeatureExtractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        if config.kind == ExtractorKind::External {
            return Err(Error::Config(
                "no external feature extractor is linked into this build; use random_conv".into(),
            ));
        }
        if config.patch < min_patch() {
            return Err(Error::Config(format!(
                "extractor patch {} is below the minimum {}",
                config.patch,
                min_patch()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let kernels = STAGE_CHANNELS
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let fan_in = cin * KERNEL_SIZE * KERNEL_SIZE;
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..cout * fan_in)
                    .map(|_| rng.random_range(-bound..=bound) as f32)
                    .collect();
                Tensor::new([cout, cin, KERNEL_SIZE, KERNEL_SIZE], data).expect("kernel shape")
            })
            .collect();
        Ok(Self { config, kernels })
    }

    pub fn config(&self) -> ExtractorConfig {
        self.config
    }

    pub fn kernels(&self) -> &[Tensor<f32>] {
        &self.kernels
    }

    pub fn channels(&self) -> usize {
        *STAGE_CHANNELS.last().unwrap()
    }

    /// Feature length for an image of the given size.
    pub fn feature_len(&self, height: usize, width: usize) -> Result<usize> {
        Ok(tile_origins(height, width, self.config.patch)?.len() * self.channels())
    }

    /// Records the extractor on `g` for an image laid out pixel-major
    /// (`(height·width) × 3`). Gradients flow to the image only.
    pub fn extract<T: Real>(&self, g: &mut Graph<T>, img: Var, height: usize, width: usize) -> Result<Var> {
        let patch = self.config.patch;
        let origins = tile_origins(height, width, patch)?;
        let kernels: Vec<Var> = self.kernels.iter().map(|k| g.constant(k.cast())).collect();
        let last = kernels.len() - 1;
        let mut tiles = Vec::with_capacity(origins.len());
        for (r, c) in origins {
            let mut h = g.tile_chw(img, height, width, r, c, patch)?;
            for (stage, &kernel) in kernels.iter().enumerate() {
                h = g.conv2d(h, kernel)?;
                if stage != last {
                    h = g.sine(h, T::one())?;
                }
                h = g.avg_pool2(h)?;
            }
            tiles.push(g.channel_mean(h)?);
        }
        Ok(g.concat_flat(&tiles)?)
    }

    /// Features of a fixed image.
    pub fn features(&self, img: &Image) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let pixels = g.constant(image_tensor(img));
        let f = self.extract(&mut g, pixels, img.height(), img.width())?;
        Ok(g.value(f).data().to_vec())
    }
}

/// Smallest patch that survives three conv/pool stages.
fn min_patch() -> usize {
    let mut size = 1;
    for _ in 0..STAGE_CHANNELS.len() - 1 {
        size = 2 * size + KERNEL_SIZE - 1;
    }
    size
}

/// An image as a `(height·width) × 3` tensor.
pub fn image_tensor<T: Real>(img: &Image) -> Tensor<T> {
    Tensor::new(
        [img.pixel_count(), Image::CHANNELS],
        img.data().iter().map(|&v| T::lit(v as f64)).collect(),
    )
    .expect("image shape")
}

/// `(1 - t) · f_i + t · f_j`.
pub fn blend_features(f_i: &[f32], f_j: &[f32], t: f64) -> Result<Vec<f32>> {
    if f_i.len() != f_j.len() {
        return Err(Error::CodeLength {
            expected: f_i.len(),
            got: f_j.len(),
        });
    }
    let (a, b) = ((1.0 - t) as f32, t as f32);
    Ok(f_i.iter().zip(f_j).map(|(&x, &y)| a * x + b * y).collect())
}

/// Mean squared deviation between the features of the rendered blend and
/// the blend of the endpoint features. Endpoint features are constants.
pub fn inter_loss<T: Real>(
    extractor: &FeatureExtractor,
    g: &mut Graph<T>,
    inter: Var,
    height: usize,
    width: usize,
    f_i: &[f32],
    f_j: &[f32],
    t: f64,
) -> Result<Var> {
    let expected = extractor.feature_len(height, width)?;
    if f_i.len() != expected || f_j.len() != expected {
        return Err(Error::CodeLength {
            expected,
            got: if f_i.len() != expected { f_i.len() } else { f_j.len() },
        });
    }
    let features = extractor.extract(g, inter, height, width)?;
    feature_penalty(g, features, f_i, f_j, t)
}

/// `mean((features - ((1 - t) · f_i + t · f_j))²)` with constant endpoints.
pub fn feature_penalty<T: Real>(g: &mut Graph<T>, features: Var, f_i: &[f32], f_j: &[f32], t: f64) -> Result<Var> {
    let target = blend_features(f_i, f_j, t)?;
    let target = g.constant(Tensor::new(
        g.value(features).shape(),
        target.iter().map(|&v| T::lit(v as f64)).collect(),
    )?);
    Ok(g.mse(features, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn recon_loss_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::new([1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let z = g.constant(Tensor::zeros([1, 3]));
        let l = recon_loss(&mut g, p, z).unwrap();
        assert_eq!(g.value(l).item(), Some(1.0));
        let same = g.constant(Tensor::new([1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        let l = recon_loss(&mut g, p, same).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
    }

    #[test]
    fn recon_loss_matches_hand_mean() {
        let pred = [0.1, 0.9, 0.3, 0.5, 0.5, 0.5, 0.0, 1.0, 0.25, 0.75, 0.2, 0.6];
        let gt = [0.0, 1.0, 0.3, 0.4, 0.7, 0.1, 0.0, 0.0, 0.5, 0.75, 0.9, 0.6];
        let oracle = pred.iter().zip(&gt).map(|(p, t): (&f64, &f64)| (p - t).powi(2)).sum::<f64>() / 12.0;
        let mut g = Graph::<f64>::new();
        let p = g.param(Tensor::new([4, 3], pred.to_vec()).unwrap());
        let t = g.constant(Tensor::new([4, 3], gt.to_vec()).unwrap());
        let l = recon_loss(&mut g, p, t).unwrap();
        assert!((g.value(l).item().unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn tiling_counts_and_identity() {
        let img = noise_image(32, 32, 1);
        let tiles = tile_image(&img, 32).unwrap();
        assert_eq!(tiles, vec![img]);
        assert_eq!(tile_image(&noise_image(64, 64, 2), 32).unwrap().len(), 4);
        let tall = noise_image(70, 64, 3);
        let tiles = tile_image(&tall, 32).unwrap();
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[3], tall.crop(32, 32, 32));
        assert!(matches!(tile_image(&tall, 65), Err(Error::EmptyTiling { .. })));
        assert!(matches!(tile_image(&tall, 0), Err(Error::EmptyTiling { .. })));
    }

    #[test]
    fn features_are_deterministic_with_expected_length() {
        let e = FeatureExtractor::new(ExtractorConfig::default()).unwrap();
        let img = noise_image(64, 70, 4);
        let a = e.features(&img).unwrap();
        assert_eq!(a, e.features(&img).unwrap());
        assert_eq!(a.len(), 4 * 16);
        assert_eq!(e.feature_len(64, 70).unwrap(), 64);
        assert!(e.features(&noise_image(20, 20, 0)).is_err());
    }

    #[test]
    fn external_kind_is_rejected() {
        let cfg = ExtractorConfig {
            kind: ExtractorKind::External,
            ..Default::default()
        };
        assert!(FeatureExtractor::new(cfg).is_err());
    }

    #[test]
    fn inter_loss_vanishes_at_the_endpoints() {
        let e = FeatureExtractor::new(ExtractorConfig { patch: 24, ..Default::default() }).unwrap();
        let (ii, ij) = (noise_image(24, 24, 5), noise_image(24, 24, 6));
        let (fi, fj) = (e.features(&ii).unwrap(), e.features(&ij).unwrap());
        for (img, t) in [(&ii, 0.0), (&ij, 1.0)] {
            let mut g = Graph::<f32>::new();
            let v = g.param(image_tensor(img));
            let l = inter_loss(&e, &mut g, v, 24, 24, &fi, &fj, t).unwrap();
            assert_eq!(g.value(l).item(), Some(0.0));
        }
    }

    #[test]
    fn inter_loss_rejects_wrong_feature_length() {
        let e = FeatureExtractor::new(ExtractorConfig { patch: 24, ..Default::default() }).unwrap();
        let mut g = Graph::<f32>::new();
        let v = g.param(image_tensor(&noise_image(24, 24, 0)));
        assert!(inter_loss(&e, &mut g, v, 24, 24, &[0.0; 3], &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn feature_penalty_on_a_triple() {
        let (fi, fj) = ([1.0f32, -2.0, 0.5], [3.0f32, 0.0, 0.5]);
        let t = 0.25;
        let feats = [2.0f64, -1.0, 1.0];
        // Blend: (1.5, -1.5, 0.5); deviations (0.5, 0.5, 0.5).
        let oracle = (0.25 + 0.25 + 0.25) / 3.0;
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::new([3], feats.to_vec()).unwrap());
        let l = feature_penalty(&mut g, v, &fi, &fj, t).unwrap();
        assert!((g.value(l).item().unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn minimum_patch_is_22() {
        assert_eq!(min_patch(), 22);
    }
}
