//! The federated round loop.
//!
//! Per round the server samples `B` clients and broadcasts the global pair of
//! nets to them. Clients train in parallel and measure layer divergences.
//! Each client then uploads its target net plus the online layers that pass
//! the current boundary. The server splices skipped online layers from the
//! same client's target net and takes the sample-weighted average. In the
//! labels-at-server scenario it then trains on its own labeled data. Last,
//! it logs the divergences and computes the next boundary.

use std::fmt;

use rand::seq::index;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::{ClientShard, Dataset, LabeledSet, Partition, Scenario};
use crate::error::{Error, Result};
use crate::fedselect::{boundary, fsm, select_layers, DivergenceLog, FsmVector, TauSchedule};
use crate::nn::{forward, Layer, LayeredParams};
use crate::rng::{stream, Purpose};
use crate::siamese::{
    beta_schedule, local_train_labels_at_client, local_train_labels_at_server, server_update,
    supervised_train, AlphaMode, ConsistencyLoss, LocalTrainConfig, Schedules, SiameseState,
    TrainStats,
};

/// Which protocol a run follows.
///
/// `Pi` keeps the target equal to the online net and uploads a single net;
/// `MT` ramps the EMA decay and uploads both nets in full; `D` ramps the
/// decay after the first tipping point and uploads online layers selectively
/// under the `tau` curve. `FedAvg` is the supervised single-net baseline
/// trained on labeled client data only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Pi,
    MT,
    D,
    FedAvg,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pi => "Pi",
            Variant::MT => "MT",
            Variant::D => "D",
            Variant::FedAvg => "FedAvg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Pi" | "pi" => Some(Variant::Pi),
            "MT" | "mt" => Some(Variant::MT),
            "D" | "d" => Some(Variant::D),
            "FedAvg" | "fedavg" => Some(Variant::FedAvg),
            _ => None,
        }
    }

    /// Variants that exchange only one net per client.
    pub fn single_net(self) -> bool {
        matches!(self, Variant::Pi | Variant::FedAvg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalars uploaded and downloaded, cumulative and per round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommMeter {
    pub uploaded_scalars: u64,
    pub downloaded_scalars: u64,
    /// `(round, uploaded, downloaded)` for every round with traffic.
    pub per_round: Vec<(usize, u64, u64)>,
}

impl CommMeter {
    fn entry(&mut self, round: usize) -> &mut (usize, u64, u64) {
        if self.per_round.last().map(|e| e.0) != Some(round) {
            self.per_round.push((round, 0, 0));
        }
        self.per_round.last_mut().expect("pushed above")
    }

    pub fn credit_upload(&mut self, round: usize, scalars: u64) {
        self.uploaded_scalars += scalars;
        self.entry(round).1 += scalars;
    }

    pub fn credit_download(&mut self, round: usize, scalars: u64) {
        self.downloaded_scalars += scalars;
        self.entry(round).2 += scalars;
    }

    pub fn uploaded_in_round(&self, round: usize) -> u64 {
        self.per_round
            .iter()
            .filter(|e| e.0 == round)
            .map(|e| e.1)
            .sum()
    }
}

/// One client's message to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadPacket {
    pub client_id: usize,
    /// The full target net (the only net for single-net variants).
    pub target: LayeredParams,
    /// Online layers whose mask entry is `true`, by layer index.
    pub online_layers: Vec<(usize, Layer)>,
    pub mask: Vec<bool>,
    pub fsm: Option<FsmVector>,
    pub n_samples: usize,
}

impl UploadPacket {
    pub fn num_scalars(&self) -> usize {
        self.target.num_scalars()
            + self
                .online_layers
                .iter()
                .map(|(_, l)| l.num_scalars())
                .sum::<usize>()
            + self.fsm.as_ref().map_or(0, |f| f.values.len())
    }

    /// Scalars carried by the online side only.
    pub fn online_scalars(&self) -> usize {
        self.online_layers.iter().map(|(_, l)| l.num_scalars()).sum()
    }
}

/// Packs a client's state for upload and credits the meter. `mask == None`
/// sends the target net alone, as single-net variants do.
pub fn build_upload(
    client_id: usize,
    state: &SiameseState,
    mask: Option<&[bool]>,
    fsm: Option<FsmVector>,
    n_samples: usize,
    round: usize,
    meter: &mut CommMeter,
) -> Result<UploadPacket> {
    let layers = state.online.num_layers();
    let mask = match mask {
        Some(m) if m.len() != layers => {
            return Err(Error::Protocol(format!(
                "mask has {} entries for {layers} layers",
                m.len()
            )));
        }
        Some(m) => m.to_vec(),
        None => vec![false; layers],
    };
    let online_layers = mask
        .iter()
        .enumerate()
        .filter(|(_, &up)| up)
        .map(|(j, _)| (j, state.online.layers[j].clone()))
        .collect();
    let packet = UploadPacket {
        client_id,
        target: state.target.clone(),
        online_layers,
        mask,
        fsm,
        n_samples,
    };
    meter.credit_upload(round, packet.num_scalars() as u64);
    Ok(packet)
}

/// Rebuilds the client's full online net: uploaded layers as sent, skipped
/// layers borrowed from the same packet's target net.
pub fn splice(packet: &UploadPacket) -> Result<LayeredParams> {
    let mut online = packet.target.clone();
    let layers = online.num_layers();
    if packet.mask.len() != layers {
        return Err(Error::Protocol(format!(
            "client {}: mask has {} entries for {layers} layers",
            packet.client_id,
            packet.mask.len()
        )));
    }
    let expected: Vec<usize> = (0..layers).filter(|&j| packet.mask[j]).collect();
    let got: Vec<usize> = packet.online_layers.iter().map(|(j, _)| *j).collect();
    if expected != got {
        return Err(Error::Protocol(format!(
            "client {}: online layers {got:?} do not match mask positions {expected:?}",
            packet.client_id
        )));
    }
    for (j, layer) in &packet.online_layers {
        let slot = online.layers.get_mut(*j).ok_or_else(|| {
            Error::Protocol(format!("layer index {j} out of range for {layers} layers"))
        })?;
        if !slot.same_shape(layer) {
            return Err(Error::shape(
                layer.name.clone(),
                "uploaded online layer does not match the target layer",
            ));
        }
        slot.clone_from(layer);
    }
    Ok(online)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub online: LayeredParams,
    pub target: LayeredParams,
    pub round: usize,
}

/// Aggregation weights `n_b / sum_j n_j`.
pub fn aggregation_weights(packets: &[UploadPacket]) -> Result<Vec<f64>> {
    let total: usize = packets.iter().map(|p| p.n_samples).sum();
    if total == 0 {
        return Err(Error::Aggregation(
            "selected clients hold no samples".to_string(),
        ));
    }
    Ok(packets
        .iter()
        .map(|p| p.n_samples as f64 / total as f64)
        .collect())
}

/// `mean += w * (x - mean)` for every scalar.
fn running_mean_step(mean: &mut LayeredParams, x: &LayeredParams, w: f64) -> Result<()> {
    mean.check_congruent(x)?;
    for (ml, xl) in mean.layers.iter_mut().zip(&x.layers) {
        for (m, v) in ml.values_mut().zip(xl.values()) {
            *m += w * (v - *m);
        }
    }
    Ok(())
}

/// Sample-weighted average of the spliced online nets and of the target nets.
///
/// Computed as a running mean so that identical packets average to
/// themselves exactly; the result equals `sum_b w_b * x_b` with the weights
/// of [`aggregation_weights`].
pub fn aggregate(packets: &[UploadPacket], round: usize) -> Result<GlobalModel> {
    let first = packets
        .first()
        .ok_or_else(|| Error::Aggregation("no packets to aggregate".to_string()))?;
    aggregation_weights(packets)?;
    let mut online = first.target.zeros_like();
    let mut target = first.target.zeros_like();
    let mut seen = 0usize;
    for p in packets {
        seen += p.n_samples;
        if p.n_samples == 0 {
            continue;
        }
        let w = p.n_samples as f64 / seen as f64;
        running_mean_step(&mut online, &splice(p)?, w)?;
        running_mean_step(&mut target, &p.target, w)?;
    }
    Ok(GlobalModel {
        online,
        target,
        round,
    })
}

/// Copies the global nets into the selected clients and credits downloads.
pub fn broadcast(
    global: &GlobalModel,
    clients: &mut [SiameseState],
    selected: &[usize],
    variant: Variant,
    round: usize,
    meter: &mut CommMeter,
) -> Result<()> {
    let nets = if variant.single_net() { 1 } else { 2 };
    for &id in selected {
        let client = clients
            .get_mut(id)
            .ok_or_else(|| Error::Protocol(format!("unknown client {id}")))?;
        client.online.check_congruent(&global.online)?;
        client.load(&global.online, &global.target);
        meter.credit_download(round, (nets * global.online.num_scalars()) as u64);
    }
    Ok(())
}

/// `b` distinct client ids in `0..k`, uniform without replacement, sorted.
pub fn sample_clients(k: usize, b: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if b == 0 || b > k {
        return Err(Error::config(
            "active_clients",
            format!("need 1 <= B <= K, got B={b}, K={k}"),
        ));
    }
    let mut rng = stream(seed, Purpose::Sampling, round as u64, 0);
    let mut ids = index::sample(&mut rng, k, b).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Fraction of rows whose argmax matches the label.
pub fn evaluate(model: &LayeredParams, test: &Dataset, batch_size: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Contract("empty test set".to_string()));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let probs = forward(model, &test.features.select_rows(chunk))?;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(probs.row(r)) == test.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalNet {
    #[default]
    Target,
    Online,
}

impl EvalNet {
    pub fn name(self) -> &'static str {
        match self {
            EvalNet::Target => "target",
            EvalNet::Online => "online",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "target" => Some(EvalNet::Target),
            "online" => Some(EvalNet::Online),
            _ => None,
        }
    }
}

/// Everything the round loop needs besides data.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub variant: Variant,
    pub scenario: Scenario,
    pub active_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub schedules: Schedules,
    pub tau: TauSchedule,
    pub loss: ConsistencyLoss,
    pub perturb_strength: f64,
    pub server_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eval_net: EvalNet,
    /// Perturb labeled inputs in the FedAvg baseline (FedAvg+).
    pub augment_labeled: bool,
    pub seed: u64,
}

/// One row of the per-round metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_acc: f64,
    pub train_loss_cls: f64,
    pub train_loss_cons: f64,
    pub tau: f64,
    pub boundary: f64,
    pub layers_skipped_frac: f64,
    pub upload_scalars_cum: u64,
    pub download_scalars_cum: u64,
    /// Online-side upload scalars of this round.
    pub online_upload_scalars: u64,
    pub alpha_mean: f64,
    pub beta: f64,
}

/// One row of the per-layer selection log.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmRecord {
    pub round: usize,
    pub client_id: usize,
    pub layer: usize,
    pub fsm: f64,
    pub boundary: f64,
    pub skipped: bool,
}

/// Server, clients and their data for one run.
pub struct World {
    cfg: FederationConfig,
    shards: Vec<ClientShard>,
    server_labeled: Option<LabeledSet>,
    test: Dataset,
    global: SiameseState,
    round: usize,
    clients: Vec<SiameseState>,
    log: DivergenceLog,
    boundary: f64,
    meter: CommMeter,
    pool: ThreadPool,
}

impl World {
    /// All clients and the global model start from `init`.
    pub fn new(
        cfg: FederationConfig,
        partition: Partition,
        test: Dataset,
        init: LayeredParams,
        threads: usize,
    ) -> Result<Self> {
        if cfg.active_clients == 0 || cfg.active_clients > partition.shards.len() {
            return Err(Error::config(
                "active_clients",
                format!(
                    "need 1 <= B <= K, got B={}, K={}",
                    cfg.active_clients,
                    partition.shards.len()
                ),
            ));
        }
        if cfg.variant == Variant::FedAvg && cfg.scenario == Scenario::LabelsAtServer {
            return Err(Error::Scenario(
                "the FedAvg baseline needs labeled client data".to_string(),
            ));
        }
        if cfg.scenario == Scenario::LabelsAtServer && partition.server_labeled.is_none() {
            return Err(Error::Scenario(
                "labels-at-server run without server labeled data".to_string(),
            ));
        }
        cfg.tau.validate()?;
        let global = SiameseState::new(init, cfg.lr, cfg.momentum, cfg.weight_decay);
        let clients = vec![global.clone(); partition.shards.len()];
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Contract(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            log: DivergenceLog::new(cfg.tau.phi_g),
            cfg,
            shards: partition.shards,
            server_labeled: partition.server_labeled,
            test,
            global,
            round: 0,
            clients,
            boundary: f64::NEG_INFINITY,
            meter: CommMeter::default(),
            pool,
        })
    }

    pub fn meter(&self) -> &CommMeter {
        &self.meter
    }

    pub fn global(&self) -> GlobalModel {
        GlobalModel {
            online: self.global.online.clone(),
            target: self.global.target.clone(),
            round: self.round,
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    /// EMA policy of the variant in a given round.
    pub fn alpha_mode(&self, round: usize) -> AlphaMode {
        let ramp = AlphaMode::Ramp {
            alpha_max: self.cfg.schedules.alpha_max,
        };
        match self.cfg.variant {
            Variant::Pi | Variant::FedAvg => AlphaMode::Fixed(0.0),
            Variant::MT => ramp,
            Variant::D if round <= self.cfg.tau.phi_g => AlphaMode::Fixed(0.0),
            Variant::D => ramp,
        }
    }

    fn tau_for(&self, round: usize) -> f64 {
        match self.cfg.variant {
            Variant::D => self.cfg.tau.tau(round),
            Variant::MT => 1.0,
            Variant::Pi | Variant::FedAvg => 0.0,
        }
    }

    fn train_client(
        &self,
        id: usize,
        mut state: SiameseState,
        local: &LocalTrainConfig,
    ) -> Result<(SiameseState, TrainStats)> {
        let shard = &self.shards[id];
        let mut rng = stream(self.cfg.seed, Purpose::LocalTrain, local.round as u64, id as u64);
        let stats = match (self.cfg.variant, self.cfg.scenario) {
            (Variant::FedAvg, _) => {
                let strength = if self.cfg.augment_labeled {
                    self.cfg.perturb_strength
                } else {
                    0.0
                };
                supervised_train(
                    &mut state,
                    shard.labeled(),
                    local.epochs,
                    local.batch_size,
                    strength,
                    AlphaMode::Fixed(0.0),
                    &mut rng,
                )?
            }
            (_, Scenario::LabelsAtClient) => {
                local_train_labels_at_client(&mut state, shard, local, &mut rng)?
            }
            (_, Scenario::LabelsAtServer) => {
                local_train_labels_at_server(&mut state, shard, local, &mut rng)?
            }
        };
        Ok((state, stats))
    }

    /// Runs the next round and returns its metrics and selection log rows.
    pub fn run_round(&mut self) -> Result<(RoundMetrics, Vec<FsmRecord>)> {
        let round = self.round + 1;
        let variant = self.cfg.variant;
        let selected = sample_clients(
            self.shards.len(),
            self.cfg.active_clients,
            round,
            self.cfg.seed,
        )?;

        let current = self.global();
        broadcast(
            &current,
            &mut self.clients,
            &selected,
            variant,
            round,
            &mut self.meter,
        )?;

        let local = LocalTrainConfig {
            schedules: self.cfg.schedules,
            round,
            epochs: self.cfg.local_epochs,
            batch_size: self.cfg.batch_size,
            loss: self.cfg.loss,
            perturb_strength: self.cfg.perturb_strength,
            alpha: self.alpha_mode(round),
        };
        let jobs: Vec<(usize, SiameseState)> = selected
            .iter()
            .map(|&id| (id, self.clients[id].clone()))
            .collect();
        let this = &*self;
        let trained: Vec<(usize, SiameseState, TrainStats)> = self.pool.install(|| {
            jobs.into_par_iter()
                .map(|(id, state)| {
                    this.train_client(id, state, &local)
                        .map(|(s, stats)| (id, s, stats))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let boundary_now = self.boundary;
        let mut packets = Vec::with_capacity(trained.len());
        let mut records = Vec::new();
        let mut fsm_vectors = Vec::new();
        let layers = self.global.online.num_layers();
        let (mut cls, mut cons, mut alpha) = (0.0, 0.0, 0.0);
        let mut skipped = 0usize;
        let mut online_scalars = 0u64;
        for (id, state, stats) in &trained {
            cls += stats.mean_cls_loss;
            cons += stats.mean_cons_loss;
            alpha += stats.mean_alpha;
            let n_samples = self.shards[*id].n_samples();
            let packet = if variant.single_net() {
                skipped += layers;
                build_upload(*id, state, None, None, n_samples, round, &mut self.meter)?
            } else {
                let f = fsm(&state.online, &state.target, *id, round)?;
                let mask = match variant {
                    Variant::D => select_layers(&f, boundary_now),
                    _ => vec![true; layers],
                };
                for (j, (&v, &up)) in f.values.iter().zip(&mask).enumerate() {
                    records.push(FsmRecord {
                        round,
                        client_id: *id,
                        layer: j,
                        fsm: v,
                        boundary: boundary_now,
                        skipped: !up,
                    });
                }
                skipped += mask.iter().filter(|&&up| !up).count();
                fsm_vectors.push(f.clone());
                build_upload(*id, state, Some(&mask), Some(f), n_samples, round, &mut self.meter)?
            };
            online_scalars += packet.online_scalars() as u64;
            packets.push(packet);
        }
        for (id, state, _) in trained {
            self.clients[id] = state;
        }

        let aggregated = aggregate(&packets, round)?;
        self.global.online = aggregated.online;
        self.global.target = aggregated.target;
        if self.cfg.scenario == Scenario::LabelsAtServer {
            let labeled = self
                .server_labeled
                .as_ref()
                .expect("checked at construction");
            let mut rng = stream(self.cfg.seed, Purpose::ServerTrain, round as u64, 0);
            let alpha_mode = self.alpha_mode(round);
            server_update(
                &mut self.global,
                labeled,
                self.cfg.server_epochs,
                self.cfg.batch_size,
                alpha_mode,
                &mut rng,
            )?;
        }

        if !fsm_vectors.is_empty() {
            self.log.update(fsm_vectors);
        }
        self.boundary = if variant == Variant::D && round < self.cfg.rounds {
            boundary(&self.log, self.cfg.tau.tau(round + 1))
        } else {
            f64::NEG_INFINITY
        };
        self.round = round;

        let eval_model = match self.cfg.eval_net {
            EvalNet::Target => &self.global.target,
            EvalNet::Online => &self.global.online,
        };
        let test_acc = evaluate(eval_model, &self.test, self.cfg.eval_batch_size)?;
        let b = packets.len().max(1) as f64;
        Ok((
            RoundMetrics {
                round,
                test_acc,
                train_loss_cls: cls / b,
                train_loss_cons: cons / b,
                tau: self.tau_for(round),
                boundary: boundary_now,
                layers_skipped_frac: if variant == Variant::FedAvg {
                    0.0
                } else {
                    skipped as f64 / (b * layers as f64)
                },
                upload_scalars_cum: self.meter.uploaded_scalars,
                download_scalars_cum: self.meter.downloaded_scalars,
                online_upload_scalars: online_scalars,
                alpha_mean: alpha / b,
                beta: if variant == Variant::FedAvg {
                    0.0
                } else {
                    beta_schedule(round, self.cfg.schedules.phi_l, self.cfg.schedules.beta_max)
                },
            },
            records,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Matrix};

    /// Net with one scalar weight per layer, each set to `vals[j]`.
    fn const_net(vals: &[f64]) -> LayeredParams {
        LayeredParams {
            layers: vals
                .iter()
                .enumerate()
                .map(|(j, &v)| {
                    let mut l = Layer::zeros(format!("l{j}"), 1, 1);
                    l.weights[0] = v;
                    l.bias[0] = v;
                    l
                })
                .collect(),
            activation: Activation::Identity,
        }
    }

    fn state(online: &[f64], target: &[f64]) -> SiameseState {
        let mut s = SiameseState::new(const_net(online), 0.1, 0.0, 0.0);
        s.target = const_net(target);
        s
    }

    #[test]
    fn sampling() {
        assert_eq!(sample_clients(5, 5, 3, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        let a = sample_clients(100, 10, 7, 1234).unwrap();
        assert_eq!(a, sample_clients(100, 10, 7, 1234).unwrap());
        assert_eq!(a.len(), 10);
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert!(sample_clients(100, 200, 1, 1).is_err());
    }

    #[test]
    fn packet_sizes() {
        let s = state(&[1.0; 4], &[2.0; 4]);
        let mut meter = CommMeter::default();
        let full = build_upload(0, &s, Some(&[true; 4]), None, 10, 1, &mut meter).unwrap();
        assert_eq!(full.num_scalars(), 16);
        let half = build_upload(0, &s, Some(&[true, false, true, false]), None, 10, 1, &mut meter)
            .unwrap();
        assert_eq!(half.online_scalars() * 2, full.online_scalars());
        let none = build_upload(0, &s, Some(&[false; 4]), None, 10, 1, &mut meter).unwrap();
        assert_eq!(none.num_scalars(), 8);
        assert_eq!(meter.uploaded_in_round(1), 16 + 12 + 8);
    }

    #[test]
    fn splice_cases() {
        let s = state(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]);
        let mut meter = CommMeter::default();
        let all = build_upload(0, &s, Some(&[true; 3]), None, 1, 1, &mut meter).unwrap();
        assert_eq!(splice(&all).unwrap(), s.online);
        let none = build_upload(0, &s, Some(&[false; 3]), None, 1, 1, &mut meter).unwrap();
        assert_eq!(splice(&none).unwrap(), s.target);
        let mixed = build_upload(0, &s, Some(&[true, false, true]), None, 1, 1, &mut meter).unwrap();
        let w: Vec<f64> = splice(&mixed)
            .unwrap()
            .layers
            .iter()
            .map(|l| l.weights[0])
            .collect();
        assert_eq!(w, vec![1.0, 20.0, 3.0]);

        let mut broken = mixed.clone();
        broken.online_layers[0].0 = 1;
        assert!(matches!(splice(&broken), Err(Error::Protocol(_))));
    }

    #[test]
    fn weighted_average() {
        let mut meter = CommMeter::default();
        let a = build_upload(0, &state(&[0.0], &[0.0]), Some(&[true]), None, 1, 1, &mut meter).unwrap();
        let b = build_upload(1, &state(&[4.0], &[4.0]), Some(&[true]), None, 3, 1, &mut meter).unwrap();
        let g = aggregate(&[a.clone(), b], 1).unwrap();
        assert_eq!(g.online.layers[0].weights[0], 3.0);
        assert_eq!(g.target.layers[0].weights[0], 3.0);

        let single = aggregate(std::slice::from_ref(&a), 1).unwrap();
        assert_eq!(single.online, splice(&a).unwrap());

        let mut empty = a.clone();
        empty.n_samples = 0;
        assert!(matches!(aggregate(&[empty], 1), Err(Error::Aggregation(_))));
        assert!(aggregate(&[], 1).is_err());
    }

    #[test]
    fn broadcast_refreshes_only_selected() {
        let g = GlobalModel {
            online: const_net(&[1.0, 1.0]),
            target: const_net(&[2.0, 2.0]),
            round: 0,
        };
        let stale = state(&[5.0, 5.0], &[5.0, 5.0]);
        let mut clients = vec![stale.clone(); 3];
        let mut meter = CommMeter::default();
        broadcast(&g, &mut clients, &[0, 2], Variant::D, 1, &mut meter).unwrap();
        assert_eq!(clients[0].online, g.online);
        assert_eq!(clients[2].target, g.target);
        assert_eq!(clients[1], stale);
        assert_eq!(meter.downloaded_scalars, 2 * 2 * 4);
        // FSM of a freshly broadcast client reflects the global nets' divergence.
        let f = fsm(&clients[0].online, &clients[0].target, 0, 1).unwrap();
        assert_eq!(f.values, vec![1.0, 1.0]);
    }

    #[test]
    fn evaluation_counts() {
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]])
                .unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let mut perfect = LayeredParams::zeros(2, &[], 2, Activation::Identity).unwrap();
        perfect.layers[0].weights = vec![5.0, 0.0, 0.0, 5.0];
        assert_eq!(evaluate(&perfect, &ds, 3).unwrap(), 1.0);
        let constant = LayeredParams::zeros(2, &[], 2, Activation::Identity).unwrap();
        assert_eq!(evaluate(&constant, &ds, 3).unwrap(), 0.5);
    }
}
