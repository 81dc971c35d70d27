//! Dense feed-forward networks trained with SGD.
//!
//! A model is a [`LayeredParams`]: an ordered list of named fully-connected
//! layers. Hidden layers apply the model's [`Activation`]; the last layer is
//! linear and its logits go through a softmax. Layers are the unit that the
//! federated protocol measures, selects and aggregates, so every parameter
//! container in the crate (gradients, momentum buffers, global models) shares
//! this shape.
//!
//! All kernels are pure functions of their arguments.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms in the KL loss.
pub const KL_EPSILON: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{} values cannot fill {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "matrix",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matrix",
                format!("cannot stack {} and {} columns", self.cols, other.cols),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Splits rows `[0, at)` and `[at, rows)`.
    pub fn split_rows(&self, at: usize) -> (Matrix, Matrix) {
        (self.row_range(0, at), self.row_range(at, self.rows))
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One fully-connected layer. Weights are row-major `(fan_out, fan_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(name: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        Self {
            name: name.into(),
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights followed by bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.fan_in == other.fan_in && self.fan_out == other.fan_out
    }
}

/// Ordered named layers of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Gradients share the parameter container's shape.
pub type Gradients = LayeredParams;

impl LayeredParams {
    /// Builds a zero network for `input_dim -> hidden... -> classes`.
    pub fn zeros(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(classes);
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!(
                "layer widths must be positive, got {dims:?}"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::zeros(format!("fc{i}"), w[0], w[1]))
            .collect();
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(input_dim, hidden, classes, activation)?;
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut layer.weights {
                *w = dist.sample(rng);
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.name.clone(), l.fan_in, l.fan_out))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(Layer::num_scalars).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn check_congruent(&self, other: &LayeredParams) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                "model",
                format!(
                    "{} layers vs {} layers",
                    self.layers.len(),
                    other.layers.len()
                ),
            ));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if !a.same_shape(b) {
                return Err(Error::shape(
                    a.name.clone(),
                    format!(
                        "({}, {}) vs ({}, {})",
                        a.fan_in, a.fan_out, b.fan_in, b.fan_out
                    ),
                ));
            }
        }
        Ok(())
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &LayeredParams, scale: f64) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.values_mut().zip(b.values()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for v in layer.values_mut() {
                *v *= factor;
            }
        }
    }

    /// All scalars in layer order, weights before bias within each layer.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.values().copied())
            .collect()
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each layer; the last entry holds the logits.
    pre: Vec<Matrix>,
    pub probs: Matrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        &self.pre[self.pre.len() - 1]
    }
}

fn affine(layer: &Layer, x: &Matrix) -> Result<Matrix> {
    if x.cols() != layer.fan_in {
        return Err(Error::shape(
            layer.name.clone(),
            format!("expected {} inputs, got {}", layer.fan_in, x.cols()),
        ));
    }
    let mut out = Matrix::zeros(x.rows(), layer.fan_out);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for (o, (wrow, b)) in or
            .iter_mut()
            .zip(layer.weights.chunks_exact(layer.fan_in).zip(&layer.bias))
        {
            *o = b + wrow.iter().zip(xr).map(|(w, v)| w * v).sum::<f64>();
        }
    }
    Ok(out)
}

/// Row-wise softmax with max-logit subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn forward_cached(model: &LayeredParams, inputs: &Matrix) -> Result<ForwardCache> {
    let n = model.layers.len();
    let mut layer_inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut x = inputs.clone();
    for (i, layer) in model.layers.iter().enumerate() {
        let z = affine(layer, &x)?;
        layer_inputs.push(x);
        x = if i + 1 < n {
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = model.activation.apply(*v);
            }
            a
        } else {
            Matrix::zeros(0, 0)
        };
        pre.push(z);
    }
    let probs = softmax(&pre[n - 1]);
    Ok(ForwardCache {
        inputs: layer_inputs,
        pre,
        probs,
    })
}

/// Class probabilities, one row per input row.
pub fn forward(model: &LayeredParams, inputs: &Matrix) -> Result<Matrix> {
    Ok(forward_cached(model, inputs)?.probs)
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn cross_entropy_loss(probs: &Matrix, labels: Option<&[usize]>) -> Result<(f64, Matrix)> {
    let labels =
        labels.ok_or_else(|| Error::Contract("cross-entropy needs labels".to_string()))?;
    if labels.len() != probs.rows() {
        return Err(Error::shape(
            "labels",
            format!("{} labels for {} rows", labels.len(), probs.rows()),
        ));
    }
    let n = probs.rows() as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::Contract(format!(
                "label {y} out of range for {} classes",
                probs.cols()
            )));
        }
        loss -= probs.get(r, y).max(f64::MIN_POSITIVE).ln();
        grad.row_mut(r)[y] -= 1.0;
    }
    for g in grad.as_mut_slice() {
        *g /= n;
    }
    Ok((loss / n, grad))
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::shape(
            "probabilities",
            format!(
                "{}x{} vs {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            ),
        ));
    }
    Ok(())
}

/// Mean squared distance between probability rows. The gradient is taken
/// with respect to the online logits only; the target side is constant.
pub fn mse_consistency(p_online: &Matrix, p_target: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(p_online, p_target)?;
    let n = p_online.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(p_online.rows(), p_online.cols());
    for r in 0..p_online.rows() {
        let ps = p_online.row(r);
        let pt = p_target.row(r);
        // dL/dp, then pulled back through the softmax Jacobian.
        let dp: Vec<f64> = ps.iter().zip(pt).map(|(s, t)| 2.0 * (s - t) / n).collect();
        loss += ps.iter().zip(pt).map(|(s, t)| (s - t) * (s - t)).sum::<f64>();
        let dot: f64 = dp.iter().zip(ps).map(|(d, s)| d * s).sum();
        for ((g, d), s) in grad.row_mut(r).iter_mut().zip(&dp).zip(ps) {
            *g = s * (d - dot);
        }
    }
    Ok((loss / n, grad))
}

/// Mean `KL(p_target || p_online)`, gradient with respect to the online logits.
pub fn kl_consistency(p_online: &Matrix, p_target: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(p_online, p_target)?;
    let n = p_online.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(p_online.rows(), p_online.cols());
    for r in 0..p_online.rows() {
        let ps = p_online.row(r);
        let pt = p_target.row(r);
        let mass: f64 = pt.iter().sum();
        for ((g, &s), &t) in grad.row_mut(r).iter_mut().zip(ps).zip(pt) {
            if t > 0.0 {
                loss += t * (t.max(KL_EPSILON).ln() - s.max(KL_EPSILON).ln());
            }
            *g = (mass * s - t) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Backpropagates a logit gradient through a cached forward pass.
pub fn backward_cached(
    model: &LayeredParams,
    cache: &ForwardCache,
    grad_logits: &Matrix,
) -> Result<Gradients> {
    let logits = cache.logits();
    if grad_logits.rows() != logits.rows() || grad_logits.cols() != logits.cols() {
        return Err(Error::shape(
            model.layers[model.layers.len() - 1].name.clone(),
            format!(
                "upstream gradient is {}x{}, logits are {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                logits.rows(),
                logits.cols()
            ),
        ));
    }
    let mut grads = model.zeros_like();
    let mut delta = grad_logits.clone();
    for i in (0..model.layers.len()).rev() {
        let layer = &model.layers[i];
        let x = &cache.inputs[i];
        let g = &mut grads.layers[i];
        for r in 0..delta.rows() {
            let dr = delta.row(r);
            let xr = x.row(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let wrow = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (w, v) in wrow.iter_mut().zip(xr) {
                    *w += d * v;
                }
            }
        }
        if i == 0 {
            break;
        }
        let pre = &cache.pre[i - 1];
        let mut next = Matrix::zeros(delta.rows(), layer.fan_in);
        for r in 0..delta.rows() {
            let dr = delta.row(r);
            let nr = next.row_mut(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let wrow = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (acc, w) in nr.iter_mut().zip(wrow) {
                    *acc += d * w;
                }
            }
            for (acc, &z) in nr.iter_mut().zip(pre.row(r)) {
                *acc *= model.activation.derivative(z);
            }
        }
        delta = next;
    }
    Ok(grads)
}

/// Gradient of a loss with respect to every parameter, given the loss's
/// gradient with respect to the logits of `inputs`.
pub fn backward(model: &LayeredParams, inputs: &Matrix, grad_logits: &Matrix) -> Result<Gradients> {
    let cache = forward_cached(model, inputs)?;
    backward_cached(model, &cache, grad_logits)
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffers: LayeredParams,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(params: &LayeredParams, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum_buffers: params.zeros_like(),
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn reset(&mut self) {
        self.momentum_buffers = self.momentum_buffers.zeros_like();
    }
}

/// `buf = M*buf + (g + wd*p); p -= lr*buf`
pub fn sgd_step(
    params: &mut LayeredParams,
    grads: &Gradients,
    opt: &mut OptimizerState,
) -> Result<()> {
    params.check_congruent(grads)?;
    params.check_congruent(&opt.momentum_buffers)?;
    let (lr, m, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for ((p, g), b) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(opt.momentum_buffers.layers.iter_mut())
    {
        for ((pv, gv), bv) in p.values_mut().zip(g.values()).zip(b.values_mut()) {
            *bv = m * *bv + (gv + wd * *pv);
            *pv -= lr * *bv;
        }
    }
    Ok(())
}
