//! wasm-bindgen bindings for the static demo page in `www/`.

use codeinr::eval::{crossfade_baseline, render_blend};
use codeinr::scenes::{generate, Scene, SceneKind, SceneSpec};
use codeinr::train::{TrainConfig, Trainer};
use codeinr::Image;
use wasm_bindgen::prelude::*;

fn js_err(e: codeinr::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// What `Demo::frame` draws.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Network = 0,
    Crossfade = 1,
    Truth = 2,
}

/// A synthetic scene and the network being fitted to it.
#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
    trainer: Trainer,
    last_loss: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Generates `kind` ("translate_sprite", "two_layer_parallax" or "large_disparity")
    /// and prepares a trainer with the desk settings.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u32) -> Result<Demo, JsError> {
        let spec = match kind {
            "large_disparity" => SceneSpec::large_disparity(),
            other => match other.parse().map_err(js_err)? {
                SceneKind::TranslateSprite => SceneSpec::translate_sprite(),
                SceneKind::TwoLayerParallax => SceneSpec::two_layer_parallax(),
            },
        }
        .with_seed(seed as u64);
        let scene = generate(&spec).map_err(js_err)?;
        let mut config = TrainConfig::from_text(include_str!("../../../configs/desk.conf")).map_err(js_err)?;
        config.seed = seed as u64;
        let trainer = Trainer::new(scene.views().clone(), &config).map_err(js_err)?;
        Ok(Demo { scene, trainer, last_loss: f64::NAN })
    }

    pub fn width(&self) -> usize {
        self.scene.spec().width
    }

    pub fn height(&self) -> usize {
        self.scene.spec().height
    }

    pub fn views(&self) -> usize {
        self.scene.spec().n_views
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.state().iteration
    }

    pub fn done(&self) -> bool {
        self.trainer.is_done()
    }

    /// Runs up to `steps` iterations and returns the last reconstruction loss.
    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        for _ in 0..steps {
            if self.trainer.is_done() {
                break;
            }
            self.last_loss = self.trainer.step().map_err(js_err)?.l_recon;
        }
        Ok(self.last_loss)
    }

    /// RGBA bytes of the frame at camera position `pos`, in view units.
    pub fn frame(&self, pos: f64, kind: FrameKind) -> Result<Vec<u8>, JsError> {
        let last = self.views() - 1;
        let pos = pos.clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last.saturating_sub(1));
        let j = (i + 1).min(last);
        let t = pos - i as f64;
        let img = match kind {
            FrameKind::Network => {
                render_blend(self.trainer.state(), i, j, t, self.height(), self.width()).map_err(js_err)?
            }
            FrameKind::Crossfade => crossfade_baseline(self.scene.view(i), self.scene.view(j), t).map_err(js_err)?,
            FrameKind::Truth => self.scene.render_at(pos),
        };
        Ok(rgba(&img))
    }
}

fn rgba(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixel_count() * 4);
    for px in img.data().chunks_exact(3) {
        out.extend(px.iter().map(|&v| codeinr::io::unit_to_byte(v)));
        out.push(255);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_have_rgba_size() {
        let mut demo = Demo::new("translate_sprite", 1).unwrap();
        demo.train(3).unwrap();
        assert_eq!(demo.iteration(), 3);
        for kind in [FrameKind::Network, FrameKind::Crossfade, FrameKind::Truth] {
            let bytes = demo.frame(1.5, kind).unwrap();
            assert_eq!(bytes.len(), demo.width() * demo.height() * 4);
        }
    }

    #[test]
    fn crossfade_at_a_view_is_that_view() {
        let demo = Demo::new("two_layer_parallax", 0).unwrap();
        let a = demo.frame(2.0, FrameKind::Crossfade).unwrap();
        let b = demo.frame(2.0, FrameKind::Truth).unwrap();
        assert_eq!(a, b);
    }
}
