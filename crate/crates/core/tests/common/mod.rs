//! Brute-force oracles shared by the property and acceptance tests. They
//! deliberately avoid the library's own helpers beyond plain data access.
#![allow(dead_code)]

use fedsiam_core::fedcore::UploadPacket;
use fedsiam_core::fedselect::TauSchedule;
use fedsiam_core::nn::{
    backward, cross_entropy_loss, forward, kl_consistency, mse_consistency, Activation,
    LayeredParams, Matrix,
};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
    Kl,
}

pub const ALL_LOSSES: [LossKind; 3] = [LossKind::CrossEntropy, LossKind::Mse, LossKind::Kl];

/// A random dense net with at most 3 layers and at most 32 units counting
/// inputs and outputs.
pub fn random_model<R: Rng>(rng: &mut R, activation: Activation) -> LayeredParams {
    loop {
        let input = rng.gen_range(2..=8);
        let classes = rng.gen_range(2..=5);
        let hidden: Vec<usize> = (0..rng.gen_range(0..=2))
            .map(|_| rng.gen_range(2..=8))
            .collect();
        if input + classes + hidden.iter().sum::<usize>() > 32 {
            continue;
        }
        let mut m = LayeredParams::glorot(input, &hidden, classes, activation, rng).unwrap();
        for layer in &mut m.layers {
            for b in &mut layer.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        return m;
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_probs<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let row = m.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.gen_range(0.05..1.0);
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    m
}

/// A loss problem: the model's inputs plus whatever the loss compares against.
pub struct Problem {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub target_probs: Matrix,
}

impl Problem {
    pub fn random<R: Rng>(rng: &mut R, model: &LayeredParams) -> Self {
        let n = rng.gen_range(1..=6);
        let c = model.num_classes();
        Self {
            inputs: random_matrix(rng, n, model.input_dim()),
            labels: (0..n).map(|_| rng.gen_range(0..c)).collect(),
            target_probs: random_probs(rng, n, c),
        }
    }

    fn loss_and_logit_grad(&self, kind: LossKind, probs: &Matrix) -> (f64, Matrix) {
        match kind {
            LossKind::CrossEntropy => cross_entropy_loss(probs, Some(&self.labels)).unwrap(),
            LossKind::Mse => mse_consistency(probs, &self.target_probs).unwrap(),
            LossKind::Kl => kl_consistency(probs, &self.target_probs).unwrap(),
        }
    }

    pub fn loss(&self, kind: LossKind, model: &LayeredParams) -> f64 {
        let probs = forward(model, &self.inputs).unwrap();
        self.loss_and_logit_grad(kind, &probs).0
    }

    pub fn analytic(&self, kind: LossKind, model: &LayeredParams) -> Vec<f64> {
        let probs = forward(model, &self.inputs).unwrap();
        let (_, g) = self.loss_and_logit_grad(kind, &probs);
        backward(model, &self.inputs, &g).unwrap().flatten()
    }
}

/// Central differences for every parameter, in `flatten` order.
pub fn finite_differences(
    problem: &Problem,
    kind: LossKind,
    model: &LayeredParams,
    h: f64,
) -> Vec<f64> {
    fn param(m: &mut LayeredParams, l: usize, i: usize) -> &mut f64 {
        let nw = m.layers[l].weights.len();
        if i < nw {
            &mut m.layers[l].weights[i]
        } else {
            &mut m.layers[l].bias[i - nw]
        }
    }
    let mut out = Vec::new();
    let mut m = model.clone();
    for l in 0..m.layers.len() {
        for i in 0..m.layers[l].num_scalars() {
            let orig = *param(&mut m, l, i);
            *param(&mut m, l, i) = orig + h;
            let up = problem.loss(kind, &m);
            *param(&mut m, l, i) = orig - h;
            let down = problem.loss(kind, &m);
            *param(&mut m, l, i) = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between analytic and numeric gradients.
pub fn gradient_check(problem: &Problem, kind: LossKind, model: &LayeredParams) -> f64 {
    let a = problem.analytic(kind, model);
    let n = finite_differences(problem, kind, model, 1e-5);
    assert_eq!(a.len(), n.len());
    a.iter()
        .zip(&n)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

/// Per-packet online nets rebuilt by hand, then averaged with `n_b / sum n`.
/// Returns (online, target) flattened.
pub fn brute_aggregate(packets: &[UploadPacket]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = packets.iter().map(|p| p.n_samples as f64).sum();
    let len = packets[0].target.flatten().len();
    let mut online = vec![0.0; len];
    let mut target = vec![0.0; len];
    for p in packets {
        let w = p.n_samples as f64 / total;
        let mut full: Vec<f64> = Vec::with_capacity(len);
        for (j, layer) in p.target.layers.iter().enumerate() {
            let src = p
                .online_layers
                .iter()
                .find(|(k, _)| *k == j)
                .map_or(layer, |(_, l)| l);
            full.extend(src.weights.iter().chain(&src.bias));
        }
        for (o, v) in online.iter_mut().zip(&full) {
            *o += w * v;
        }
        for (t, v) in target.iter_mut().zip(p.target.flatten()) {
            *t += w * v;
        }
    }
    (online, target)
}

/// Sort, then interpolate linearly between ranks at `(n - 1) * tau`.
pub fn quantile_oracle(values: &[f64], tau: f64) -> f64 {
    if tau == 0.0 || values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (v.len() - 1) as f64 * tau;
    let lo = pos.floor() as usize;
    if lo + 1 >= v.len() {
        return v[lo];
    }
    v[lo] + (pos - lo as f64) * (v[lo + 1] - v[lo])
}

/// `alpha^T * t0 + (1 - alpha) * sum_i alpha^(T - i) * s_i`.
pub fn ema_unrolled(t0: f64, online: &[f64], alpha: f64) -> f64 {
    let t = online.len() as i32;
    let mut acc = alpha.powi(t) * t0;
    for (i, s) in online.iter().enumerate() {
        acc += (1.0 - alpha) * alpha.powi(t - (i as i32 + 1)) * s;
    }
    acc
}

/// Midpoint rule over unit sub-intervals split `n` ways; exact for the
/// piecewise-linear curves with integer breakpoints.
pub fn tau_integral(s: &TauSchedule, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    (0..s.total_rounds * n)
        .map(|i| s.unclamped((i as f64 + 0.5) * h) * h)
        .sum()
}
