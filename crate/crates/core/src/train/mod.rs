//! The training loop.
//!
//! Each iteration picks an endpoint pair `(i, j)`, rescales both codes onto
//! the unit sphere, fits a random pixel batch of image `i`, and on every
//! `inter_every`-th iteration also renders the full frame at a random blend
//! of the two codes and penalizes its features against the blend of the
//! endpoint features. Network weights and the codes that took part in the
//! step are updated with Adam under a cosine-annealed learning rate, and
//! the updated codes are rescaled once more before they are stored.

mod adam;
mod config;

pub use adam::{lr_schedule, AdamState, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, KEYS as CONFIG_KEYS};

use crate::error::{Error, Result};
use crate::image::ImageSet;
use crate::latent::CodeTable;
use crate::model::{make_coord_grid, CoordGrid, InrNetwork, COORD_DIMS};
use crate::objectives::{inter_loss, recon_loss, FeatureExtractor};
use crate::tensor::{Graph, Tensor, TensorError};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Seed tags keeping the independent random streams apart.
pub(crate) mod stream {
    pub const NETWORK: u64 = 1;
    pub const CODES: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const BLEND: u64 = 4;
}

/// A deterministic generator for `(seed, tag, index)`.
pub(crate) fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&tag.to_le_bytes());
    bytes[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

pub(crate) fn derived_seed(seed: u64, tag: u64) -> u64 {
    rng_for(seed, tag, 0).random()
}

/// Everything needed to continue or reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub net: InrNetwork<f32>,
    pub codes: CodeTable,
    pub adam: AdamState<f32>,
    /// Completed iterations.
    pub iteration: u64,
}

impl Checkpoint {
    /// Fresh state for `n_images` images under `config`.
    pub fn init(config: &TrainConfig, n_images: usize) -> Result<Self> {
        config.validate()?;
        let net = InrNetwork::init_siren(
            config.depth,
            config.hidden_dim,
            COORD_DIMS + config.code_len,
            3,
            config.w0,
            derived_seed(config.seed, stream::NETWORK),
        );
        let codes = CodeTable::init(
            n_images,
            config.code_len,
            derived_seed(config.seed, stream::CODES),
            config.norm_mode,
            config.code_init_std,
        )?;
        let mut groups: Vec<usize> = net
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        groups.push(codes.as_tensor().len());
        Ok(Self {
            config: config.clone(),
            net,
            codes,
            adam: AdamState::new(&groups),
            iteration: 0,
        })
    }
}

/// Per-iteration record; one CSV row of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub iter: u64,
    pub lr: f64,
    pub l_recon: f64,
    pub l_inter: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,lr,l_recon,l_inter";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},", self.iter, self.lr, self.l_recon);
        if let Some(v) = self.l_inter {
            write!(row, "{v}").unwrap();
        }
        row
    }
}

/// Draws `i` uniformly and `j` uniformly among the other images.
///
/// With a single image `j` equals `i`; that is only allowed when no pair is
/// needed.
pub fn sample_endpoints(n_images: usize, rng: &mut impl Rng, need_pair: bool) -> Result<(usize, usize)> {
    match n_images {
        0 => Err(Error::Config("no images to sample from".into())),
        1 if need_pair => Err(Error::Config(
            "the interpolation loss needs at least two images".into(),
        )),
        1 => Ok((0, 0)),
        n => {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            Ok((i, j))
        }
    }
}

/// Drives [`Checkpoint`] state through the training iterations.
pub struct Trainer {
    data: ImageSet,
    grid: CoordGrid,
    full_coords: Tensor<f32>,
    extractor: Option<FeatureExtractor>,
    features: Vec<Vec<f32>>,
    state: Checkpoint,
}

impl Trainer {
    pub fn new(data: ImageSet, config: &TrainConfig) -> Result<Self> {
        let state = Checkpoint::init(config, data.len())?;
        Self::with_state(data, state)
    }

    /// Continues from `ckpt`, which must have been written under `config`.
    pub fn resume(data: ImageSet, ckpt: Checkpoint, config: &TrainConfig) -> Result<Self> {
        if ckpt.config.hash() != config.hash() {
            return Err(crate::error::CheckpointError::ConfigHash.into());
        }
        Self::with_state(data, ckpt)
    }

    fn with_state(data: ImageSet, state: Checkpoint) -> Result<Self> {
        let config = &state.config;
        config.validate()?;
        if state.codes.len() != data.len() {
            return Err(Error::Config(format!(
                "{} codes for {} images",
                state.codes.len(),
                data.len()
            )));
        }
        let (h, w) = data.dims();
        let grid = make_coord_grid(h, w);
        let full_coords = grid.gather(0..grid.len());
        let (extractor, features) = if config.alpha_inter > 0.0 {
            if data.len() < 2 {
                return Err(Error::Config("the interpolation loss needs at least two images".into()));
            }
            let e = FeatureExtractor::new(config.extractor)?;
            let features = data
                .images()
                .iter()
                .map(|img| e.features(img))
                .collect::<Result<_>>()?;
            (Some(e), features)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            data,
            grid,
            full_coords,
            extractor,
            features,
            state,
        })
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.state.config.iterations
    }

    pub fn extractor(&self) -> Option<&FeatureExtractor> {
        self.extractor.as_ref()
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let iteration = self.state.iteration;
        self.step_inner().map_err(|e| match e {
            Error::Tensor(TensorError::NonFinite(op)) => Error::Divergence {
                iteration,
                reason: format!("{op} produced a non-finite value"),
            },
            other => other,
        })
    }

    fn step_inner(&mut self) -> Result<StepMetrics> {
        let cfg = self.state.config.clone();
        let iter = self.state.iteration;
        let lr = lr_schedule(iter, cfg.iterations, cfg.lr_start, cfg.lr_end);
        let inter_step = cfg.is_inter_step(iter);

        let mut rng = rng_for(cfg.seed, stream::SAMPLING, iter);
        let (i, j) = sample_endpoints(self.data.len(), &mut rng, cfg.alpha_inter > 0.0)?;
        self.state.codes.project(i)?;
        if j != i {
            self.state.codes.project(j)?;
        }

        let (h, w) = self.data.dims();
        let batch = cfg.batch_pixels.min(self.grid.len());
        let pixels = index::sample(&mut rng, self.grid.len(), batch).into_vec();

        let mut g = Graph::<f32>::new();
        let net = self.state.net.bind(&mut g, true);
        let m = cfg.code_len;
        let z_i = g.param(Tensor::new([1, m], self.state.codes.code(i).to_vec())?);
        let coords = g.constant(self.grid.gather(pixels.iter().copied()));
        let image = self.data.get(i).data();
        let gt: Vec<f32> = pixels.iter().flat_map(|&p| &image[3 * p..3 * p + 3]).copied().collect();
        let gt = g.constant(Tensor::new([batch, 3], gt)?);
        let pred = net.forward_coded(&mut g, coords, z_i)?;
        let l_recon = recon_loss(&mut g, pred, gt)?;

        let mut total = l_recon;
        let mut inter = None;
        let mut z_j = None;
        if inter_step {
            let extractor = self.extractor.as_ref().expect("extractor exists when alpha > 0");
            let t: f64 = rng_for(cfg.seed, stream::BLEND, iter).random();
            let zj = g.param(Tensor::new([1, m], self.state.codes.code(j).to_vec())?);
            let a = g.scale(z_i, (1.0 - t) as f32)?;
            let b = g.scale(zj, t as f32)?;
            let z_inter = g.add(a, b)?;
            let full = g.constant(self.full_coords.clone());
            let frame = net.forward_coded(&mut g, full, z_inter)?;
            let l_inter = inter_loss(extractor, &mut g, frame, h, w, &self.features[i], &self.features[j], t)?;
            let weighted = g.scale(l_inter, cfg.alpha_inter as f32)?;
            total = g.add(total, weighted)?;
            inter = Some(l_inter);
            z_j = Some(zj);
        }

        let grads = g.backward(total)?;
        let bad = |name: &str| Error::Divergence {
            iteration: iter,
            reason: format!("non-finite gradient for {name}"),
        };
        let adam = &mut self.state.adam;
        adam.begin_step();
        for (k, (layer, &(wv, bv))) in self
            .state
            .net
            .layers_mut()
            .iter_mut()
            .zip(net.layer_vars())
            .enumerate()
        {
            let gw = grads.tensor(wv);
            let gb = grads.tensor(bv);
            if !gw.is_finite() || !gb.is_finite() {
                return Err(bad("network weights"));
            }
            adam.update(2 * k, 0, layer.weight.data_mut(), gw.data(), lr);
            adam.update(2 * k + 1, 0, layer.bias.data_mut(), gb.data(), lr);
        }
        let code_group = adam.m.len() - 1;
        let mut updated = vec![(i, z_i)];
        if let Some(zj) = z_j {
            updated.push((j, zj));
        }
        for (n, var) in updated {
            let gz = grads.tensor(var);
            if !gz.is_finite() {
                return Err(bad("codes"));
            }
            adam.update(code_group, n * m, self.state.codes.code_mut(n), gz.data(), lr);
        }
        // Keep the stored table on the sphere so checkpoints and renders see
        // the constrained codes.
        self.state.codes.project(i)?;
        if j != i {
            self.state.codes.project(j)?;
        }

        self.state.iteration += 1;
        Ok(StepMetrics {
            iter,
            lr,
            l_recon: g.value(l_recon).item().unwrap() as f64,
            l_inter: inter.map(|v| g.value(v).item().unwrap() as f64),
        })
    }

    /// Steps until the configured iteration count, calling `observe` after
    /// each step.
    pub fn run(&mut self, mut observe: impl FnMut(&StepMetrics, &Checkpoint) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let metrics = self.step()?;
            observe(&metrics, &self.state)?;
        }
        Ok(())
    }
}

/// Trains from scratch and returns the final state.
pub fn fit(data: &ImageSet, config: &TrainConfig) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(data.clone(), config)?;
    trainer.run(|_, _| Ok(()))?;
    Ok(trainer.into_checkpoint())
}
