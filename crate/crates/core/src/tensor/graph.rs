use super::{NormOrder, Real, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Sine { x: Var, w0: T },
    Sigmoid { x: Var },
    ConcatRows { a: Var, b: Var },
    RepeatRows { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    Square { x: Var },
    Abs { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Mse { pred: Var, target: Var },
    PNorm { x: Var, p: NormOrder },
    Conv2d { x: Var, kernel: Var },
    AvgPool2 { x: Var },
    ChannelMean { x: Var },
    TileChw { x: Var, width: usize, row0: usize, col0: usize },
    ConcatFlat { parts: Vec<Var> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// An append-only tape of tensor ops.
///
/// Nodes are stored in creation order, so inputs always precede the nodes
/// that consume them and the tape is acyclic by construction.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if it was reached.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0)?.as_deref()
    }

    /// Like [`get`](Self::get), but a zero tensor for unreached nodes.
    pub fn tensor(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match *t {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Contract(format!(
            "{op}: expected a matrix, got shape {t:?}"
        ))),
    }
}

fn chw_dims(op: &'static str, t: &[usize]) -> Result<(usize, usize, usize)> {
    match *t {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::Contract(format!(
            "{op}: expected a channels × height × width tensor, got shape {t:?}"
        ))),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn signum<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].value.data()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// `x · w + b` for `x: batch × in`, `w: in × out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, in_dim) = matrix_dims("linear", self.shape(x))?;
        let (w_in, out_dim) = matrix_dims("linear", self.shape(w))?;
        if w_in != in_dim {
            return Err(shape_err("linear", self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [out_dim] {
            return Err(shape_err("linear", self.shape(w), self.shape(b)));
        }
        let mut out = Vec::with_capacity(batch * out_dim);
        for _ in 0..batch {
            out.extend_from_slice(self.data(b));
        }
        T::gemm(
            batch,
            in_dim,
            out_dim,
            self.data(x),
            (in_dim, 1),
            self.data(w),
            (out_dim, 1),
            &mut out,
            true,
        );
        let value = Tensor::new([batch, out_dim], out)?;
        self.push("linear", value, Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Elementwise `sin(w0 · x)`.
    pub fn sine(&mut self, x: Var, w0: T) -> Result<Var> {
        if w0 <= T::zero() {
            return Err(TensorError::Contract(format!("sine: w0 must be positive, got {w0}")));
        }
        let data = self.data(x).iter().map(|&v| (w0 * v).sin()).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push("sine", value, Op::Sine { x, w0 }, &[x])
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    /// Row-wise concatenation: each output row is `a`'s row followed by `b`'s.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (rows, ca) = matrix_dims("concat_rows", self.shape(a))?;
        let (rows_b, cb) = matrix_dims("concat_rows", self.shape(b))?;
        if rows != rows_b {
            return Err(shape_err("concat_rows", self.shape(a), self.shape(b)));
        }
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let value = Tensor::new([rows, ca + cb], out)?;
        self.push("concat_rows", value, Op::ConcatRows { a, b }, &[a, b])
    }

    /// Stacks `rows` copies of a `1 × m` (or length-`m`) tensor.
    pub fn repeat_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let cols = match *self.shape(x) {
            [m] | [1, m] => m,
            _ => {
                return Err(TensorError::Contract(format!(
                    "repeat_rows: expected a single row, got shape {:?}",
                    self.shape(x)
                )))
            }
        };
        let row = self.data(x);
        let mut out = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        let value = Tensor::new([rows, cols], out)?;
        self.push("repeat_rows", value, Op::RepeatRows { x }, &[x])
    }

    fn zip_op(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a), data)?;
        self.push(name, value, op, &[a, b])
    }

    fn map_op(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x), data)?;
        self.push(name, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.map_op("scale", x, |v| v * c, Op::Scale { x, c })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map_op("square", x, |v| v * v, Op::Square { x })
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map_op("abs", x, |v| v.abs(), Op::Abs { x })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().copied().fold(T::zero(), |acc, v| acc + v);
        self.push("sum", Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TensorError::Contract("mean: empty tensor".into()));
        }
        let total = self.data(x).iter().copied().fold(T::zero(), |acc, v| acc + v);
        self.push("mean", Tensor::scalar(total / T::lit(n as f64)), Op::Mean { x }, &[x])
    }

    /// Mean squared difference. The target must not require a gradient.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        if self.requires_grad(target) {
            return Err(TensorError::Contract("mse: target must not require a gradient".into()));
        }
        let n = self.value(pred).len();
        if n == 0 {
            return Err(TensorError::Contract("mse: empty tensor".into()));
        }
        let total = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
        let value = Tensor::scalar(total / T::lit(n as f64));
        self.push("mse", value, Op::Mse { pred, target }, &[pred, target])
    }

    /// `‖x‖_p` over all elements, as a scalar.
    pub fn pnorm(&mut self, x: Var, p: NormOrder) -> Result<Var> {
        if let NormOrder::P(p) = p {
            if !(p >= 1.0) {
                return Err(TensorError::Contract(format!("pnorm: p must be >= 1, got {p}")));
            }
        }
        let norm = T::lit(p.norm(self.data(x)));
        self.push("pnorm", Tensor::scalar(norm), Op::PNorm { x, p }, &[x])
    }

    /// Valid 2-D cross-correlation of `x: cin × h × w` with
    /// `kernel: cout × cin × kh × kw`.
    pub fn conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (cin, h, w) = chw_dims("conv2d", self.shape(x))?;
        let (cout, kc, kh, kw) = match *self.shape(kernel) {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(shape_err("conv2d", self.shape(x), self.shape(kernel))),
        };
        if kc != cin || kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(shape_err("conv2d", self.shape(x), self.shape(kernel)));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let (xd, kd) = (self.data(x), self.data(kernel));
        let mut out = vec![T::zero(); cout * oh * ow];
        for o in 0..cout {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for i in 0..cin {
                for u in 0..kh {
                    for v in 0..kw {
                        let kval = kd[((o * cin + i) * kh + u) * kw + v];
                        for r in 0..oh {
                            let src = &xd[(i * h + r + u) * w + v..][..ow];
                            let dst = &mut plane[r * ow..(r + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + kval * s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new([cout, oh, ow], out)?;
        self.push("conv2d", value, Op::Conv2d { x, kernel }, &[x, kernel])
    }

    /// 2 × 2 average pooling with stride 2; a trailing odd row or column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw_dims("avg_pool2", self.shape(x))?;
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.data(x);
        let quarter = T::lit(0.25);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let at = |dr: usize, dc: usize| xd[(ch * h + 2 * r + dr) * w + 2 * col + dc];
                    out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) * quarter);
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out)?;
        self.push("avg_pool2", value, Op::AvgPool2 { x }, &[x])
    }

    /// Spatial mean of each channel of a `c × h × w` tensor.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw_dims("channel_mean", self.shape(x))?;
        if h * w == 0 {
            return Err(TensorError::Contract("channel_mean: empty spatial extent".into()));
        }
        let inv = T::lit(1.0 / (h * w) as f64);
        let out = self
            .data(x)
            .chunks(h * w)
            .map(|plane| plane.iter().copied().fold(T::zero(), |a, v| a + v) * inv)
            .collect();
        let value = Tensor::new([c], out)?;
        self.push("channel_mean", value, Op::ChannelMean { x }, &[x])
    }

    /// Cuts a `size × size` window out of a pixel-major image
    /// (`(height·width) × channels`) and lays it out channel-first.
    pub fn tile_chw(&mut self, x: Var, height: usize, width: usize, row0: usize, col0: usize, size: usize) -> Result<Var> {
        let (pixels, channels) = matrix_dims("tile_chw", self.shape(x))?;
        if pixels != height * width || row0 + size > height || col0 + size > width {
            return Err(TensorError::Contract(format!(
                "tile_chw: window {size}×{size} at ({row0}, {col0}) does not fit a {height}×{width} image of {pixels} pixels"
            )));
        }
        let xd = self.data(x);
        let mut out = Vec::with_capacity(channels * size * size);
        for ch in 0..channels {
            for r in 0..size {
                for c in 0..size {
                    out.push(xd[((row0 + r) * width + col0 + c) * channels + ch]);
                }
            }
        }
        let value = Tensor::new([channels, size, size], out)?;
        self.push("tile_chw", value, Op::TileChw { x, width, row0, col0 }, &[x])
    }

    /// Flattens and concatenates any number of tensors.
    pub fn concat_flat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let len = out.len();
        let value = Tensor::new([len], out)?;
        self.push("concat_flat", value, Op::ConcatFlat { parts: parts.to_vec() }, parts)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Visits every node at or before `loss` exactly once, newest first, and
    /// accumulates into nodes that require a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        // Runs `f` on the gradient buffer of `var` if it requires one.
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[var.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[var.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(buf);
        };
        match node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (batch, in_dim) = (self.shape(x)[0], self.shape(x)[1]);
                let out_dim = self.shape(w)[1];
                acc(x, &mut |gx| {
                    T::gemm(batch, out_dim, in_dim, g, (out_dim, 1), self.data(w), (1, out_dim), gx, true)
                });
                acc(w, &mut |gw| {
                    T::gemm(in_dim, batch, out_dim, self.data(x), (1, in_dim), g, (out_dim, 1), gw, true)
                });
                acc(b, &mut |gb| {
                    for row in g.chunks(out_dim) {
                        for (d, &v) in gb.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                });
            }
            Op::Sine { x, w0 } => {
                let xd = self.data(x);
                acc(x, &mut |gx| {
                    for ((d, &xv), &gv) in gx.iter_mut().zip(xd).zip(g) {
                        *d = *d + w0 * (w0 * xv).cos() * gv;
                    }
                });
            }
            Op::Sigmoid { x } => acc(x, &mut |gx| {
                for ((d, &y), &gv) in gx.iter_mut().zip(out).zip(g) {
                    *d = *d + y * (T::one() - y) * gv;
                }
            }),
            Op::ConcatRows { a, b } => {
                let ca = self.shape(a)[1];
                let cb = self.shape(b)[1];
                let (rows, width) = (self.shape(a)[0], ca + cb);
                acc(a, &mut |ga| {
                    for r in 0..rows {
                        add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * width..r * width + ca]);
                    }
                });
                acc(b, &mut |gb| {
                    for r in 0..rows {
                        add_into(&mut gb[r * cb..(r + 1) * cb], &g[r * width + ca..(r + 1) * width]);
                    }
                });
            }
            Op::RepeatRows { x } => {
                let cols = self.value(x).len();
                acc(x, &mut |gx| {
                    if cols == 0 {
                        return;
                    }
                    for row in g.chunks(cols) {
                        for (d, &v) in gx.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| add_into(gb, g));
            }
            Op::Sub { a, b } => {
                acc(a, &mut |ga| add_into(ga, g));
                acc(b, &mut |gb| {
                    for (d, &v) in gb.iter_mut().zip(g) {
                        *d = *d - v;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.data(a), self.data(b));
                acc(a, &mut |ga| {
                    for ((d, &o), &gv) in ga.iter_mut().zip(bd).zip(g) {
                        *d = *d + o * gv;
                    }
                });
                acc(b, &mut |gb| {
                    for ((d, &o), &gv) in gb.iter_mut().zip(ad).zip(g) {
                        *d = *d + o * gv;
                    }
                });
            }
            Op::Scale { x, c } => acc(x, &mut |gx| {
                for (d, &gv) in gx.iter_mut().zip(g) {
                    *d = *d + c * gv;
                }
            }),
            Op::Square { x } => {
                let xd = self.data(x);
                acc(x, &mut |gx| {
                    for ((d, &xv), &gv) in gx.iter_mut().zip(xd).zip(g) {
                        *d = *d + T::lit(2.0) * xv * gv;
                    }
                });
            }
            Op::Abs { x } => {
                let xd = self.data(x);
                acc(x, &mut |gx| {
                    for ((d, &xv), &gv) in gx.iter_mut().zip(xd).zip(g) {
                        *d = *d + signum(xv) * gv;
                    }
                });
            }
            Op::Sum { x } => acc(x, &mut |gx| {
                for d in gx.iter_mut() {
                    *d = *d + g[0];
                }
            }),
            Op::Mean { x } => {
                let scale = g[0] / T::lit(self.value(x).len() as f64);
                acc(x, &mut |gx| {
                    for d in gx.iter_mut() {
                        *d = *d + scale;
                    }
                });
            }
            Op::Mse { pred, target } => {
                let (pd, td) = (self.data(pred), self.data(target));
                let scale = T::lit(2.0) * g[0] / T::lit(pd.len() as f64);
                acc(pred, &mut |gp| {
                    for ((d, &p), &t) in gp.iter_mut().zip(pd).zip(td) {
                        *d = *d + scale * (p - t);
                    }
                });
            }
            Op::PNorm { x, p } => {
                let xd = self.data(x);
                let norm = out[0];
                acc(x, &mut |gx| {
                    if norm == T::zero() {
                        return;
                    }
                    match p {
                        NormOrder::Infinity => {
                            // Subgradient: all weight on the first extremal entry.
                            let (arg, _) = xd.iter().enumerate().fold((0, T::neg_infinity()), |best, (k, &v)| {
                                if v.abs() > best.1 {
                                    (k, v.abs())
                                } else {
                                    best
                                }
                            });
                            gx[arg] = gx[arg] + signum(xd[arg]) * g[0];
                        }
                        NormOrder::P(p) => {
                            let pm1 = T::lit(p - 1.0);
                            let denom = norm.powf(pm1);
                            for (d, &xv) in gx.iter_mut().zip(xd) {
                                let mag = if p == 1.0 { T::one() } else { xv.abs().powf(pm1) };
                                *d = *d + signum(xv) * mag / denom * g[0];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, kernel } => {
                let (cin, h, w) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
                let ks = self.shape(kernel);
                let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let (xd, kd) = (self.data(x), self.data(kernel));
                acc(x, &mut |gx| {
                    for o in 0..cout {
                        let plane = &g[o * oh * ow..(o + 1) * oh * ow];
                        for i in 0..cin {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let kval = kd[((o * cin + i) * kh + u) * kw + v];
                                    for r in 0..oh {
                                        let dst = &mut gx[(i * h + r + u) * w + v..][..ow];
                                        for (d, &gv) in dst.iter_mut().zip(&plane[r * ow..(r + 1) * ow]) {
                                            *d = *d + kval * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(kernel, &mut |gk| {
                    for o in 0..cout {
                        let plane = &g[o * oh * ow..(o + 1) * oh * ow];
                        for i in 0..cin {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let mut total = T::zero();
                                    for r in 0..oh {
                                        let src = &xd[(i * h + r + u) * w + v..][..ow];
                                        for (&s, &gv) in src.iter().zip(&plane[r * ow..(r + 1) * ow]) {
                                            total = total + s * gv;
                                        }
                                    }
                                    let k = ((o * cin + i) * kh + u) * kw + v;
                                    gk[k] = gk[k] + total;
                                }
                            }
                        }
                    }
                });
            }
            Op::AvgPool2 { x } => {
                let (c, h, w) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::lit(0.25);
                acc(x, &mut |gx| {
                    for ch in 0..c {
                        for r in 0..oh {
                            for col in 0..ow {
                                let gv = g[(ch * oh + r) * ow + col] * quarter;
                                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let k = (ch * h + 2 * r + dr) * w + 2 * col + dc;
                                    gx[k] = gx[k] + gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::ChannelMean { x } => {
                let plane = self.shape(x)[1] * self.shape(x)[2];
                let inv = T::lit(1.0 / plane as f64);
                acc(x, &mut |gx| {
                    for (chunk, &gv) in gx.chunks_mut(plane).zip(g) {
                        for d in chunk.iter_mut() {
                            *d = *d + gv * inv;
                        }
                    }
                });
            }
            Op::TileChw { x, width, row0, col0 } => {
                let (channels, size) = (node.value.shape()[0], node.value.shape()[1]);
                acc(x, &mut |gx| {
                    for ch in 0..channels {
                        for r in 0..size {
                            for c in 0..size {
                                let k = ((row0 + r) * width + col0 + c) * channels + ch;
                                gx[k] = gx[k] + g[(ch * size + r) * size + c];
                            }
                        }
                    }
                });
            }
            Op::ConcatFlat { ref parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
