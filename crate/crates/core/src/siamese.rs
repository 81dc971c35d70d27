//! Siamese local models: an online net trained by SGD and a target net that
//! tracks it by exponential moving average.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{perturb, ClientShard, LabeledSet};
use crate::error::{Error, Result};
use crate::nn::{
    backward_cached, cross_entropy_loss, forward, forward_cached, kl_consistency, mse_consistency,
    sgd_step, LayeredParams, Matrix, OptimizerState,
};

/// Ramp parameters for the EMA decay and the consistency weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub alpha_max: f64,
    /// Number of global rounds over which the consistency weight ramps up.
    pub phi_l: usize,
    pub beta_max: f64,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            alpha_max: 0.999,
            phi_l: 10,
            beta_max: 1.0,
        }
    }
}

/// EMA decay at local step `q`: `min(1 - 1/(q+1), alpha_max)`.
pub fn alpha_schedule(q: u64, alpha_max: f64) -> f64 {
    (1.0 - 1.0 / (q as f64 + 1.0)).min(alpha_max)
}

/// Consistency weight at global round `round`:
/// `beta_max * exp(-5 (1 - min(round/phi_l, 1))^2)`.
pub fn beta_schedule(round: usize, phi_l: usize, beta_max: f64) -> f64 {
    let t = if phi_l == 0 {
        1.0
    } else {
        (round as f64 / phi_l as f64).min(1.0)
    };
    beta_max * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsistencyLoss {
    #[default]
    Mse,
    Kl,
}

impl ConsistencyLoss {
    pub fn name(self) -> &'static str {
        match self {
            ConsistencyLoss::Mse => "mse",
            ConsistencyLoss::Kl => "kl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(ConsistencyLoss::Mse),
            "kl" => Some(ConsistencyLoss::Kl),
            _ => None,
        }
    }

    pub fn evaluate(self, p_online: &Matrix, p_target: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            ConsistencyLoss::Mse => mse_consistency(p_online, p_target),
            ConsistencyLoss::Kl => kl_consistency(p_online, p_target),
        }
    }
}

/// How the EMA decay is chosen for each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// `alpha_schedule(q, alpha_max)`.
    Ramp { alpha_max: f64 },
    /// Constant decay; `Fixed(0.0)` keeps the target equal to the online net.
    Fixed(f64),
}

impl AlphaMode {
    pub fn alpha(self, q: u64) -> f64 {
        match self {
            AlphaMode::Ramp { alpha_max } => alpha_schedule(q, alpha_max),
            AlphaMode::Fixed(a) => a,
        }
    }
}

/// Online/target pair with its step counter and the online optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseState {
    pub online: LayeredParams,
    pub target: LayeredParams,
    pub step: u64,
    pub opt: OptimizerState,
}

impl SiameseState {
    /// Both nets start from `params`.
    pub fn new(params: LayeredParams, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let opt = OptimizerState::new(&params, lr, momentum, weight_decay);
        Self {
            target: params.clone(),
            online: params,
            step: 0,
            opt,
        }
    }

    /// `target = alpha * target + (1 - alpha) * online`.
    pub fn ema_update(&mut self, alpha: f64) {
        for (t, s) in self.target.layers.iter_mut().zip(&self.online.layers) {
            for (tv, sv) in t.values_mut().zip(s.values()) {
                *tv = alpha * *tv + (1.0 - alpha) * sv;
            }
        }
    }

    /// Overwrites both nets, resetting the step counter and momentum.
    pub fn load(&mut self, online: &LayeredParams, target: &LayeredParams) {
        self.online.clone_from(online);
        self.target.clone_from(target);
        self.step = 0;
        self.opt.reset();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub schedules: Schedules,
    /// Current global round, 1-based; drives the consistency ramp.
    pub round: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: ConsistencyLoss,
    pub perturb_strength: f64,
    pub alpha: AlphaMode,
}

impl LocalTrainConfig {
    pub fn beta(&self) -> f64 {
        beta_schedule(self.round, self.schedules.phi_l, self.schedules.beta_max)
    }
}

/// Per-call training summary.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub steps: usize,
    pub mean_cls_loss: f64,
    pub mean_cons_loss: f64,
    pub mean_alpha: f64,
    /// Labeled samples present but ignored by an unlabeled-only objective.
    pub ignored_labeled: usize,
}

#[derive(Default)]
struct StatsAcc {
    steps: usize,
    cls: f64,
    cons: f64,
    alpha: f64,
}

impl StatsAcc {
    fn push(&mut self, cls: f64, cons: f64, alpha: f64) {
        self.steps += 1;
        self.cls += cls;
        self.cons += cons;
        self.alpha += alpha;
    }

    fn finish(self) -> TrainStats {
        let n = self.steps.max(1) as f64;
        TrainStats {
            steps: self.steps,
            mean_cls_loss: self.cls / n,
            mean_cons_loss: self.cons / n,
            mean_alpha: self.alpha / n,
            ignored_labeled: 0,
        }
    }
}

/// Shuffled mini-batches over `0..n`, one pass per epoch.
fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Endless stream of labeled batches of `min(batch_size, n)` indices,
/// reshuffling whenever fewer than a full batch remain.
struct CyclingBatches {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl CyclingBatches {
    fn new(n: usize, batch_size: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch: batch_size.clamp(1, n.max(1)),
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let out = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        out
    }
}

/// One optimizer step on the online net followed by the EMA update.
///
/// `inputs` holds the step's labeled rows first (`labels.len()` of them),
/// then any unlabeled rows. The classification loss covers the labeled rows;
/// the consistency loss, weighted by `beta`, covers all rows.
fn siamese_step<R: Rng + ?Sized>(
    state: &mut SiameseState,
    inputs: &Matrix,
    labels: &[usize],
    cfg: &LocalTrainConfig,
    beta: f64,
    rng: &mut R,
) -> Result<(f64, f64, f64)> {
    let online_in = perturb(inputs, rng, cfg.perturb_strength);
    let target_in = perturb(inputs, rng, cfg.perturb_strength);
    let cache = forward_cached(&state.online, &online_in)?;
    let p_target = forward(&state.target, &target_in)?;
    let (cons, cons_grad) = cfg.loss.evaluate(&cache.probs, &p_target)?;

    let mut grad = cons_grad;
    for g in grad.as_mut_slice() {
        *g *= beta;
    }
    let mut cls = 0.0;
    if !labels.is_empty() {
        let (p_lab, _) = cache.probs.split_rows(labels.len());
        let (loss, cls_grad) = cross_entropy_loss(&p_lab, Some(labels))?;
        cls = loss;
        for (g, c) in grad.as_mut_slice().iter_mut().zip(cls_grad.as_slice()) {
            *g += c;
        }
    }
    let grads = backward_cached(&state.online, &cache, &grad)?;
    sgd_step(&mut state.online, &grads, &mut state.opt)?;
    // The target only moves here.
    let alpha = cfg.alpha.alpha(state.step);
    state.ema_update(alpha);
    state.step += 1;
    Ok((cls, cons, alpha))
}

/// Local training with labeled and unlabeled data on the client, minimizing
/// `L + beta * J`.
///
/// An epoch is one pass over the unlabeled set; every step pairs one
/// unlabeled batch with a labeled batch drawn from a reshuffling cycle.
pub fn local_train_labels_at_client<R: Rng + ?Sized>(
    state: &mut SiameseState,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    rng: &mut R,
) -> Result<TrainStats> {
    if shard.n_labeled() == 0 || shard.n_unlabeled() == 0 {
        return Err(Error::Scenario(format!(
            "client {} needs labeled and unlabeled data for labels-at-client training ({} labeled, {} unlabeled)",
            shard.client_id,
            shard.n_labeled(),
            shard.n_unlabeled()
        )));
    }
    let labeled = shard.labeled();
    let unlabeled = shard.unlabeled_inputs();
    let beta = cfg.beta();
    let mut labeled_batches = CyclingBatches::new(labeled.len(), cfg.batch_size);
    let mut acc = StatsAcc::default();
    for _ in 0..cfg.epochs {
        for u_idx in epoch_batches(unlabeled.rows(), cfg.batch_size, rng) {
            let l_idx = labeled_batches.next(rng).to_vec();
            let xl = labeled.inputs.select_rows(&l_idx);
            let yl: Vec<usize> = l_idx.iter().map(|&i| labeled.labels[i]).collect();
            let inputs = xl.vstack(&unlabeled.select_rows(&u_idx))?;
            let (cls, cons, alpha) = siamese_step(state, &inputs, &yl, cfg, beta, rng)?;
            acc.push(cls, cons, alpha);
        }
    }
    Ok(acc.finish())
}

/// Local training on unlabeled data only, minimizing `beta * J`. Labels on
/// the shard are never read.
pub fn local_train_labels_at_server<R: Rng + ?Sized>(
    state: &mut SiameseState,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    rng: &mut R,
) -> Result<TrainStats> {
    if shard.n_unlabeled() == 0 {
        return Err(Error::Scenario(format!(
            "client {} has no unlabeled data",
            shard.client_id
        )));
    }
    let unlabeled = shard.unlabeled_inputs();
    let beta = cfg.beta();
    let mut acc = StatsAcc::default();
    for _ in 0..cfg.epochs {
        for u_idx in epoch_batches(unlabeled.rows(), cfg.batch_size, rng) {
            let inputs = unlabeled.select_rows(&u_idx);
            let (cls, cons, alpha) = siamese_step(state, &inputs, &[], cfg, beta, rng)?;
            acc.push(cls, cons, alpha);
        }
    }
    let mut stats = acc.finish();
    stats.ignored_labeled = shard.n_labeled();
    Ok(stats)
}

/// Plain supervised epochs on the online net (cross-entropy only), with an
/// EMA update of the target after every step.
pub fn supervised_train<R: Rng + ?Sized>(
    state: &mut SiameseState,
    labeled: &LabeledSet,
    epochs: usize,
    batch_size: usize,
    perturb_strength: f64,
    alpha: AlphaMode,
    rng: &mut R,
) -> Result<TrainStats> {
    if labeled.is_empty() {
        return Err(Error::Scenario("supervised training needs labeled data".into()));
    }
    let mut acc = StatsAcc::default();
    for _ in 0..epochs {
        for idx in epoch_batches(labeled.len(), batch_size, rng) {
            let x = perturb(&labeled.inputs.select_rows(&idx), rng, perturb_strength);
            let y: Vec<usize> = idx.iter().map(|&i| labeled.labels[i]).collect();
            let cache = forward_cached(&state.online, &x)?;
            let (loss, grad) = cross_entropy_loss(&cache.probs, Some(&y))?;
            let grads = backward_cached(&state.online, &cache, &grad)?;
            sgd_step(&mut state.online, &grads, &mut state.opt)?;
            let a = alpha.alpha(state.step);
            state.ema_update(a);
            state.step += 1;
            acc.push(loss, 0.0, a);
        }
    }
    Ok(acc.finish())
}

/// Labels-at-server update of the global model after aggregation: supervised
/// epochs on the server's labeled data, with the target tracking the online
/// net under the global step counter.
pub fn server_update<R: Rng + ?Sized>(
    global: &mut SiameseState,
    server_labeled: &LabeledSet,
    epochs: usize,
    batch_size: usize,
    alpha: AlphaMode,
    rng: &mut R,
) -> Result<TrainStats> {
    if epochs == 0 {
        return Ok(TrainStats::default());
    }
    global.opt.reset();
    supervised_train(global, server_labeled, epochs, batch_size, 0.0, alpha, rng)
}
