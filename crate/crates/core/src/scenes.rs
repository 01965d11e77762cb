//! Synthetic multi-view scenes with analytically known intermediate views.
//!
//! Cameras sit on a line; the camera parameter `pos` is measured in view
//! units, so view `k` is `pos = k` and the exact in-between frame of views
//! `i` and `j` is `pos = (i + j) / 2`. Layers are bilinearly splatted at
//! subpixel offsets proportional to `pos`.

use crate::error::{Error, Result};
use crate::image::{Image, ImageSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// One textured sprite sliding over a static smooth background.
    TranslateSprite,
    /// A near sprite over a striped far layer that moves more slowly.
    TwoLayerParallax,
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::TranslateSprite => "translate_sprite",
            SceneKind::TwoLayerParallax => "two_layer_parallax",
        })
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate_sprite" => Ok(SceneKind::TranslateSprite),
            "two_layer_parallax" => Ok(SceneKind::TwoLayerParallax),
            other => Err(Error::Scene(format!("unknown scene kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub n_views: usize,
    /// Sprite extent in pixels, `(rows, cols)`.
    pub sprite_size: (usize, usize),
    /// Top-left corner of the sprite in view 0, `(row, col)`.
    pub sprite_origin: (f64, f64),
    /// Horizontal sprite shift between adjacent views, in pixels.
    pub displacement: f64,
    /// Horizontal far-layer shift between adjacent views (parallax only).
    pub far_displacement: f64,
    pub seed: u64,
}

impl SceneSpec {
    fn centered(kind: SceneKind, displacement: f64, far_displacement: f64) -> Self {
        let (height, width, n_views) = (48, 48, 5);
        let sprite_size = (12, 8);
        let travel = displacement * (n_views - 1) as f64;
        Self {
            kind,
            height,
            width,
            n_views,
            sprite_size,
            sprite_origin: (
                (height - sprite_size.0) as f64 / 2.0,
                ((width - sprite_size.1) as f64 - travel) / 2.0,
            ),
            displacement,
            far_displacement,
            seed: 0,
        }
    }

    /// 48 × 48, five views, 3 px per view.
    pub fn translate_sprite() -> Self {
        Self::centered(SceneKind::TranslateSprite, 3.0, 0.0)
    }

    /// 48 × 48, five views, near layer 3 px and far layer 1 px per view.
    pub fn two_layer_parallax() -> Self {
        Self::centered(SceneKind::TwoLayerParallax, 3.0, 1.0)
    }

    /// The sliding-sprite scene with 10 px between adjacent views.
    pub fn large_disparity() -> Self {
        Self::centered(SceneKind::TranslateSprite, 10.0, 0.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Scene(msg));
        if self.height == 0 || self.width == 0 || self.n_views == 0 {
            return fail("canvas and view count must be positive".into());
        }
        let (sh, sw) = self.sprite_size;
        if sh == 0 || sw == 0 {
            return fail("sprite must have positive size".into());
        }
        let (row, col) = self.sprite_origin;
        let travel = self.displacement * (self.n_views - 1) as f64;
        let (left, right) = (col.min(col + travel), col.max(col + travel) + sw as f64);
        if row < 0.0 || row + sh as f64 > self.height as f64 || left < 0.0 || right > self.width as f64 {
            return fail(format!(
                "sprite leaves the {}×{} canvas: rows {row}..{}, cols {left}..{right}",
                self.height,
                self.width,
                row + sh as f64
            ));
        }
        Ok(())
    }
}

/// A generated scene: its training views plus the continuous ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    sprite: Vec<[f32; 3]>,
    background: [[f32; 3]; 2],
    views: ImageSet,
}

/// Generates every view of `spec`.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut color = |lo: f32, hi: f32| -> [f32; 3] { [0; 3].map(|_| rng.random_range(lo..hi)) };
    let (c1, c2) = (color(0.6, 0.85), color(0.15, 0.4));
    let background = [color(0.2, 0.45), color(0.45, 0.7)];
    let (sh, sw) = spec.sprite_size;
    let mut sprite = Vec::with_capacity(sh * sw);
    for u in 0..sh {
        for v in 0..sw {
            let s = (u + v) as f32 / (sh + sw - 2).max(1) as f32;
            sprite.push([0, 1, 2].map(|ch| c1[ch] + (c2[ch] - c1[ch]) * s));
        }
    }
    let mut scene = Scene {
        spec: spec.clone(),
        sprite,
        background,
        views: ImageSet::new(vec![Image::filled(1, 1, [0.0; 3])])?,
    };
    let views = (0..spec.n_views).map(|k| scene.render_at(k as f64)).collect();
    scene.views = ImageSet::new(views)?;
    Ok(scene)
}

impl Scene {
    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn views(&self) -> &ImageSet {
        &self.views
    }

    pub fn view(&self, k: usize) -> &Image {
        self.views.get(k)
    }

    /// Exact in-between frame of views `i` and `j`.
    pub fn midpoint(&self, i: usize, j: usize) -> Image {
        self.render_at((i + j) as f64 / 2.0)
    }

    /// Ground truth at camera position `pos` (view units).
    pub fn render_at(&self, pos: f64) -> Image {
        let spec = &self.spec;
        let sprite_col = spec.sprite_origin.1 + spec.displacement * pos;
        let sprite_row = spec.sprite_origin.0;
        let far_shift = spec.far_displacement * pos;
        Image::from_fn(spec.height, spec.width, |r, c| {
            let bg = self.background_at(r as f64, c as f64 - far_shift);
            let (premul, alpha) = self.splat(r as f64 - sprite_row, c as f64 - sprite_col);
            [0, 1, 2].map(|ch| premul[ch] + (1.0 - alpha) * bg[ch])
        })
    }

    fn background_at(&self, row: f64, col: f64) -> [f32; 3] {
        let [lo, hi] = self.background;
        let (h, w) = (self.spec.height as f64, self.spec.width as f64);
        let s = match self.spec.kind {
            SceneKind::TranslateSprite => 0.5 * (row / h + col / w),
            SceneKind::TwoLayerParallax => {
                let stripes = (2.0 * std::f64::consts::PI * col / 12.0).sin();
                0.5 + 0.35 * stripes + 0.15 * (row / h - 0.5)
            }
        } as f32;
        [0, 1, 2].map(|ch| lo[ch] + (hi[ch] - lo[ch]) * s)
    }

    /// Bilinear sample of the sprite at texture position `(u, v)`:
    /// premultiplied color and coverage.
    fn splat(&self, u: f64, v: f64) -> ([f32; 3], f32) {
        let (sh, sw) = self.spec.sprite_size;
        let (u0, v0) = (u.floor(), v.floor());
        let (fu, fv) = (u - u0, v - v0);
        let mut color = [0.0f64; 3];
        let mut alpha = 0.0f64;
        for (du, wu) in [(0.0, 1.0 - fu), (1.0, fu)] {
            for (dv, wv) in [(0.0, 1.0 - fv), (1.0, fv)] {
                let (tu, tv) = (u0 + du, v0 + dv);
                let weight = wu * wv;
                if weight == 0.0 || tu < 0.0 || tv < 0.0 || tu >= sh as f64 || tv >= sw as f64 {
                    continue;
                }
                let texel = self.sprite[tu as usize * sw + tv as usize];
                for ch in 0..3 {
                    color[ch] += weight * texel[ch] as f64;
                }
                alpha += weight;
            }
        }
        (color.map(|c| c as f32), alpha as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_match_continuous_ground_truth() {
        for spec in [SceneSpec::translate_sprite(), SceneSpec::two_layer_parallax(), SceneSpec::large_disparity()] {
            let scene = generate(&spec).unwrap();
            for k in 0..spec.n_views {
                assert_eq!(scene.view(k), &scene.render_at(k as f64));
            }
            assert_eq!(scene.midpoint(0, 2), *scene.view(1));
        }
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let scene = generate(&SceneSpec::two_layer_parallax().with_seed(3)).unwrap();
        for pos in [0.0, 0.3, 1.5, 4.0] {
            assert!(scene.render_at(pos).data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn zero_displacement_freezes_the_scene() {
        let spec = SceneSpec {
            displacement: 0.0,
            far_displacement: 0.0,
            ..SceneSpec::two_layer_parallax()
        };
        let scene = generate(&spec).unwrap();
        for k in 1..spec.n_views {
            assert_eq!(scene.view(k), scene.view(0));
        }
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let scene = generate(&SceneSpec::translate_sprite()).unwrap();
        let (u, v) = (scene.splat(2.0, 3.0), scene.splat(2.0, 3.5));
        let next = scene.splat(2.0, 4.0);
        for ch in 0..3 {
            assert!((v.0[ch] - 0.5 * (u.0[ch] + next.0[ch])).abs() < 1e-6);
        }
        assert_eq!(v.1, 1.0);
    }

    #[test]
    fn sprite_must_stay_inside() {
        let spec = SceneSpec {
            displacement: 12.0,
            ..SceneSpec::translate_sprite()
        };
        assert!(matches!(generate(&spec), Err(Error::Scene(_))));
    }

    #[test]
    fn large_disparity_preset_moves_ten_pixels() {
        let spec = SceneSpec::large_disparity();
        assert!(spec.displacement >= 10.0);
        spec.validate().unwrap();
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SceneSpec::translate_sprite().with_seed(4)).unwrap();
        let b = generate(&SceneSpec::translate_sprite().with_seed(4)).unwrap();
        let c = generate(&SceneSpec::translate_sprite().with_seed(5)).unwrap();
        assert_eq!(a.views(), b.views());
        assert_ne!(a.views(), c.views());
    }
}
