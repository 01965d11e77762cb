//! The code-conditioned coordinate network `(x, y, z) -> rgb`.
//!
//! A stack of sine-activated affine layers followed by an affine output head
//! squashed through a logistic function, so every rendered channel lies in
//! `(0, 1)`. The input row for a pixel is its two normalized coordinates
//! followed by the conditioning code.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of coordinate inputs ahead of the code.
pub const COORD_DIMS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Real = f32> {
    /// `in × out`.
    pub weight: Tensor<T>,
    /// `out`.
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InrNetwork<T: Real = f32> {
    layers: Vec<DenseLayer<T>>,
    w0_first: T,
    w0_hidden: T,
}

impl<T: Real> InrNetwork<T> {
    /// SIREN-style initialization.
    ///
    /// `depth` sine layers of width `hidden_dim`, then an affine output head.
    /// The first layer draws from `U(-1/in_dim, 1/in_dim)`; later layers from
    /// `U(-sqrt(6/fan_in)/w0, sqrt(6/fan_in)/w0)`. Biases start at zero.
    pub fn init_siren(depth: usize, hidden_dim: usize, in_dim: usize, out_dim: usize, w0: f64, seed: u64) -> Self {
        assert!(depth >= 1 && hidden_dim >= 1 && in_dim >= 1 && out_dim >= 1, "network dims must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = in_dim;
        for l in 0..=depth {
            let fan_out = if l == depth { out_dim } else { hidden_dim };
            let bound = if l == 0 {
                1.0 / in_dim as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / w0
            };
            let weight = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-bound..=bound)))
                .collect();
            layers.push(DenseLayer {
                weight: Tensor::new([fan_in, fan_out], weight).expect("layer shape"),
                bias: Tensor::zeros([fan_out]),
            });
            fan_in = fan_out;
        }
        Self {
            layers,
            w0_first: T::lit(w0),
            w0_hidden: T::lit(w0),
        }
    }

    /// Rebuilds a network from stored layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<DenseLayer<T>>, w0_first: f64, w0_hidden: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config("a network needs at least one hidden layer and an output head".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            let [fan_in, fan_out] = *layer.weight.shape() else {
                return Err(Error::Config(format!("layer {k}: weight is not a matrix")));
            };
            if layer.bias.shape() != [fan_out] {
                return Err(Error::Config(format!("layer {k}: bias does not match weight")));
            }
            if k > 0 && layers[k - 1].weight.shape()[1] != fan_in {
                return Err(Error::Config(format!("layer {k}: input width does not chain")));
            }
        }
        Ok(Self {
            layers,
            w0_first: T::lit(w0_first),
            w0_hidden: T::lit(w0_hidden),
        })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].weight.shape()[1]
    }

    /// Number of sine layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn code_len(&self) -> usize {
        self.in_dim() - COORD_DIMS
    }

    pub fn w0(&self) -> (T, T) {
        (self.w0_first, self.w0_hidden)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> InrNetwork<U> {
        InrNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            w0_first: U::lit(self.w0_first.to_f64().unwrap()),
            w0_hidden: U::lit(self.w0_hidden.to_f64().unwrap()),
        }
    }

    /// Records the weights on `g`, as trainable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundNetwork<T> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let leaf = |g: &mut Graph<T>, t: &Tensor<T>| {
                    if trainable {
                        g.param(t.clone())
                    } else {
                        g.constant(t.clone())
                    }
                };
                (leaf(g, &l.weight), leaf(g, &l.bias))
            })
            .collect();
        BoundNetwork {
            layers,
            w0_first: self.w0_first,
            w0_hidden: self.w0_hidden,
        }
    }
}

/// A network whose weights live on a particular graph.
#[derive(Debug, Clone)]
pub struct BoundNetwork<T> {
    layers: Vec<(Var, Var)>,
    w0_first: T,
    w0_hidden: T,
}

impl<T: Real> BoundNetwork<T> {
    /// `(weight, bias)` handles, first layer first.
    pub fn layer_vars(&self) -> &[(Var, Var)] {
        &self.layers
    }

    /// Maps `input: batch × in_dim` to `batch × out_dim` colors.
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let (head, hidden) = self.layers.split_last().expect("network has layers");
        let mut h = input;
        for (k, &(w, b)) in hidden.iter().enumerate() {
            let pre = g.linear(h, w, b)?;
            let w0 = if k == 0 { self.w0_first } else { self.w0_hidden };
            h = g.sine(pre, w0)?;
        }
        let out = g.linear(h, head.0, head.1)?;
        Ok(g.sigmoid(out)?)
    }

    /// Forward pass for coordinates `coords: batch × 2` under one code.
    pub fn forward_coded(&self, g: &mut Graph<T>, coords: Var, code: Var) -> Result<Var> {
        let batch = g.value(coords).shape()[0];
        let codes = g.repeat_rows(code, batch)?;
        let input = g.concat_rows(coords, codes)?;
        self.forward(g, input)
    }
}

/// Normalized pixel coordinates of an image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    coords: Tensor<f64>,
}

fn axis_coord(k: usize, n: usize) -> f64 {
    if n == 1 {
        0.5
    } else {
        k as f64 / (n - 1) as f64
    }
}

/// Coordinates `(col/(W-1), row/(H-1))`, or 0.5 along a unit dimension.
pub fn make_coord_grid(height: usize, width: usize) -> CoordGrid {
    assert!(height >= 1 && width >= 1, "grid dims must be positive");
    let mut data = Vec::with_capacity(height * width * 2);
    for r in 0..height {
        for c in 0..width {
            data.push(axis_coord(c, width));
            data.push(axis_coord(r, height));
        }
    }
    CoordGrid {
        height,
        width,
        coords: Tensor::new([height * width, 2], data).expect("grid shape"),
    }
}

impl CoordGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self) -> &Tensor<f64> {
        &self.coords
    }

    /// The coordinate pair of pixel `k`.
    pub fn at(&self, k: usize) -> [f64; 2] {
        let d = self.coords.data();
        [d[2 * k], d[2 * k + 1]]
    }

    /// Coordinates of the listed pixels as a `len × 2` tensor.
    pub fn gather<T: Real>(&self, pixels: impl IntoIterator<Item = usize>) -> Tensor<T> {
        let data: Vec<T> = pixels
            .into_iter()
            .flat_map(|k| self.at(k).map(T::lit))
            .collect();
        let rows = data.len() / 2;
        Tensor::new([rows, 2], data).expect("coordinate rows")
    }
}

/// Colors predicted for `coords: batch × 2` under code `z`.
pub fn eval_pixels<T: Real>(net: &InrNetwork<T>, coords: &Tensor<T>, z: &[T]) -> Result<Tensor<T>> {
    if z.len() != net.code_len() {
        return Err(Error::CodeLength {
            expected: net.code_len(),
            got: z.len(),
        });
    }
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let coords = g.constant(coords.clone());
    let code = g.constant(Tensor::new([1, z.len()], z.to_vec())?);
    let out = bound.forward_coded(&mut g, coords, code)?;
    Ok(g.value(out).clone())
}

/// Renders a full `height × width` frame, `chunk` pixels at a time.
///
/// Rows of the output never interact, so the image does not depend on
/// `chunk`.
pub fn render_full<T: Real>(net: &InrNetwork<T>, z: &[T], height: usize, width: usize, chunk: usize) -> Result<Image> {
    if chunk == 0 {
        return Err(Error::Config("render chunk must be at least 1".into()));
    }
    let grid = make_coord_grid(height, width);
    let mut data = Vec::with_capacity(grid.len() * 3);
    let mut start = 0;
    while start < grid.len() {
        let end = (start + chunk).min(grid.len());
        let coords = grid.gather::<T>(start..end);
        let rgb = eval_pixels(net, &coords, z)?;
        data.extend(rgb.data().iter().map(|v| v.to_f32().unwrap()));
        start = end;
    }
    Image::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_bounds_follow_siren_formulas() {
        let net = InrNetwork::<f64>::init_siren(3, 512, 130, 3, 30.0, 7);
        let first = 1.0f64 / 130.0;
        assert!((first - 0.007692).abs() < 1e-6);
        assert!(net.layers()[0].weight.data().iter().all(|w| w.abs() <= first));
        let hidden = (6.0f64 / 512.0).sqrt() / 30.0;
        assert!((hidden - 0.003608).abs() < 1e-6);
        for layer in &net.layers()[1..] {
            assert!(layer.weight.data().iter().all(|w| w.abs() <= hidden));
            assert!(layer.bias.data().iter().all(|&b| b == 0.0));
        }
        // The draws actually fill the range rather than collapsing.
        let max = net.layers()[1].weight.data().iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(max > 0.9 * hidden);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = InrNetwork::<f32>::init_siren(2, 16, 6, 3, 30.0, 11);
        let b = InrNetwork::<f32>::init_siren(2, 16, 6, 3, 30.0, 11);
        let c = InrNetwork::<f32>::init_siren(2, 16, 6, 3, 30.0, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn layer_shapes_chain() {
        let net = InrNetwork::<f32>::init_siren(4, 32, 34, 3, 30.0, 0);
        assert_eq!(net.depth(), 4);
        assert_eq!(net.code_len(), 32);
        let shapes: Vec<_> = net.layers().iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![34, 32], vec![32, 32], vec![32, 32], vec![32, 32], vec![32, 3]]);
    }

    #[test]
    fn coord_grid_conventions() {
        let g = make_coord_grid(2, 2);
        assert_eq!(g.coords().data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = make_coord_grid(1, 3);
        assert_eq!(g.coords().data(), &[0.0, 0.5, 0.5, 0.5, 1.0, 0.5]);
        let g = make_coord_grid(1, 1);
        assert_eq!(g.coords().data(), &[0.5, 0.5]);
    }

    #[test]
    fn empty_batch_gives_empty_output() {
        let net = InrNetwork::<f32>::init_siren(2, 8, 5, 3, 30.0, 0);
        let out = eval_pixels(&net, &Tensor::zeros([0, 2]), &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(out.shape(), &[0, 3]);
    }

    #[test]
    fn code_length_mismatch_is_reported() {
        let net = InrNetwork::<f32>::init_siren(2, 8, 5, 3, 30.0, 0);
        let err = eval_pixels(&net, &Tensor::zeros([1, 2]), &[0.1]).unwrap_err();
        assert!(matches!(err, Error::CodeLength { expected: 3, got: 1 }));
    }

    #[test]
    fn golden_center_pixel() {
        // Locked from the first build; guards the init stream and the forward path.
        let net = InrNetwork::<f64>::init_siren(3, 64, 34, 3, 30.0, 2024);
        let coords = Tensor::new([1, 2], vec![0.5, 0.5]).unwrap();
        let out = eval_pixels(&net, &coords, &[0.0; 32]).unwrap();
        let expected = [GOLDEN_R, GOLDEN_G, GOLDEN_B];
        for (got, want) in out.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    const GOLDEN_R: f64 = 0.4923164880645979;
    const GOLDEN_G: f64 = 0.49050796223957527;
    const GOLDEN_B: f64 = 0.5090370437130983;

    #[test]
    fn single_pixel_render_matches_center_eval() {
        let net = InrNetwork::<f32>::init_siren(2, 16, 6, 3, 30.0, 3);
        let z = [0.25f32, -0.25, 0.1, 0.4];
        let img = render_full(&net, &z, 1, 1, 4).unwrap();
        let out = eval_pixels(&net, &Tensor::new([1, 2], vec![0.5, 0.5]).unwrap(), &z).unwrap();
        assert_eq!(img.data(), out.data());
    }

    #[test]
    fn chunking_does_not_change_pixels() {
        let net = InrNetwork::<f32>::init_siren(3, 32, 10, 3, 30.0, 5);
        let z: Vec<f32> = (0..8).map(|k| (k as f32 - 4.0) / 16.0).collect();
        let whole = render_full(&net, &z, 9, 13, 9 * 13).unwrap();
        for chunk in [1, 7, 64] {
            assert_eq!(render_full(&net, &z, 9, 13, chunk).unwrap(), whole, "chunk {chunk}");
        }
    }
}
