//! Experiment configuration.
//!
//! Files are flat `key = value` lines grouped under `[section]` headers; `#`
//! starts a comment. Every key belongs to exactly one section, unknown keys
//! are rejected, and anything not given takes its default. Command-line
//! overrides use the same `key=value` form without sections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{PartitionSpec, Scenario, Setting};
use crate::error::{Error, Result};
use crate::fedcore::{EvalNet, FederationConfig, Variant};
use crate::fedselect::{CurveKind, TauSchedule};
use crate::nn::Activation;
use crate::siamese::{ConsistencyLoss, Schedules};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Csv,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Csv => "csv",
        }
    }
}

const DEFAULT_SIGMA_BLOBS: f64 = 0.1;
const DEFAULT_SIGMA_CSV: f64 = 0.05;
const DEFAULT_PHI_G_LINEAR: usize = 3;
const DEFAULT_PHI_G_RECTANGLE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [experiment]
    pub variant: Variant,
    pub scenario: Scenario,
    pub setting: Setting,
    pub seed: u64,
    /// Replicate seeds; empty means just `seed`.
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub eval_net: EvalNet,
    pub output_dir: PathBuf,

    // [data]
    pub dataset: DatasetKind,
    pub blob_classes: usize,
    pub blob_dim: usize,
    pub blob_train_per_class: usize,
    pub blob_test_per_class: usize,
    pub blob_spread: f64,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub csv_header: bool,
    pub normalize: bool,
    pub gamma: f64,
    pub classes_per_client: usize,
    pub perturb_sigma: f64,
    pub augment_labeled: bool,

    // [federation]
    pub clients: usize,
    pub active_clients: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub server_epochs: usize,

    // [model]
    pub hidden: Vec<usize>,
    pub activation: Activation,

    // [optim]
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,

    // [fedsiam]
    pub alpha_max: f64,
    pub phi_l: usize,
    pub beta_max: f64,
    pub curve: CurveKind,
    pub phi_g: usize,
    pub varphi_g: usize,
    pub mu: f64,
    pub consistency_loss: ConsistencyLoss,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::D,
            scenario: Scenario::LabelsAtClient,
            setting: Setting::Iid,
            seed: 1234,
            seeds: Vec::new(),
            rounds: 50,
            eval_net: EvalNet::Target,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetKind::Blobs,
            blob_classes: 4,
            blob_dim: 16,
            blob_train_per_class: 250,
            blob_test_per_class: 100,
            blob_spread: 0.5,
            train_csv: None,
            test_csv: None,
            csv_header: false,
            normalize: true,
            gamma: 0.1,
            classes_per_client: 2,
            perturb_sigma: DEFAULT_SIGMA_BLOBS,
            augment_labeled: false,
            clients: 100,
            active_clients: 10,
            local_epochs: 5,
            batch_size: 10,
            eval_batch_size: 128,
            server_epochs: 1,
            hidden: vec![32],
            activation: Activation::Relu,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            alpha_max: 0.999,
            phi_l: 10,
            beta_max: 1.0,
            curve: CurveKind::Linear,
            phi_g: DEFAULT_PHI_G_LINEAR,
            varphi_g: 40,
            mu: 0.5,
            consistency_loss: ConsistencyLoss::Mse,
        }
    }
}

/// `(section, key)` for every accepted key, in serialization order.
const KEYS: &[(&str, &str)] = &[
    ("experiment", "variant"),
    ("experiment", "scenario"),
    ("experiment", "setting"),
    ("experiment", "seed"),
    ("experiment", "seeds"),
    ("experiment", "rounds"),
    ("experiment", "eval_net"),
    ("experiment", "output_dir"),
    ("data", "dataset"),
    ("data", "blob_classes"),
    ("data", "blob_dim"),
    ("data", "blob_train_per_class"),
    ("data", "blob_test_per_class"),
    ("data", "blob_spread"),
    ("data", "train_csv"),
    ("data", "test_csv"),
    ("data", "csv_header"),
    ("data", "normalize"),
    ("data", "gamma"),
    ("data", "classes_per_client"),
    ("data", "perturb_sigma"),
    ("data", "augment_labeled"),
    ("federation", "clients"),
    ("federation", "active_clients"),
    ("federation", "local_epochs"),
    ("federation", "batch_size"),
    ("federation", "eval_batch_size"),
    ("federation", "server_epochs"),
    ("model", "hidden"),
    ("model", "activation"),
    ("optim", "lr"),
    ("optim", "momentum"),
    ("optim", "weight_decay"),
    ("fedsiam", "alpha_max"),
    ("fedsiam", "phi_l"),
    ("fedsiam", "beta_max"),
    ("fedsiam", "curve"),
    ("fedsiam", "phi_g"),
    ("fedsiam", "varphi_g"),
    ("fedsiam", "mu"),
    ("fedsiam", "consistency_loss"),
];

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(_, k)| *k == key).map(|(s, _)| *s)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("`{v}` is not a valid number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("`{v}` is not true/false"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn choice<T>(key: &str, v: &str, parsed: Option<T>, allowed: &str) -> Result<T> {
    parsed.ok_or_else(|| Error::config(key, format!("`{v}` is not one of {allowed}")))
}

impl ExperimentConfig {
    /// Parses a config file's text, then applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(Error::config(
                        format!("[{name}]"),
                        format!("unknown section on line {}", i + 1),
                    ));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {} is not `key = value`", i + 1))
            })?;
            let key = key.trim();
            let expected = section_of(key)
                .ok_or_else(|| Error::config(key, "unknown key".to_string()))?;
            if let Some(s) = &section {
                if s != expected {
                    return Err(Error::config(
                        key,
                        format!("belongs to [{expected}], found under [{s}]"),
                    ));
                }
            }
            if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override is not `key=value`"))?;
            let key = key.trim();
            if section_of(key).is_none() {
                return Err(Error::config(key, "unknown key"));
            }
            pairs.insert(key.to_string(), value.trim().to_string());
        }
        Self::from_pairs(&pairs)
    }

    fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (key, v) in pairs {
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "variant" => c.variant = choice(k, v, Variant::parse(v), "Pi|MT|D|FedAvg")?,
                "scenario" => {
                    c.scenario =
                        choice(k, v, Scenario::parse(v), "labels-at-client|labels-at-server")?
                }
                "setting" => {
                    c.setting = choice(
                        k,
                        v,
                        Setting::parse(v),
                        "iid|noniid-1|noniid-2|noniid-3|ls-iid|ls-noniid",
                    )?
                }
                "seed" => c.seed = parse_num(k, v)?,
                "seeds" => c.seeds = parse_list(k, v)?,
                "rounds" => c.rounds = parse_num(k, v)?,
                "eval_net" => c.eval_net = choice(k, v, EvalNet::parse(v), "target|online")?,
                "output_dir" => c.output_dir = PathBuf::from(v),
                "dataset" => {
                    c.dataset = match v {
                        "blobs" => DatasetKind::Blobs,
                        "csv" => DatasetKind::Csv,
                        _ => return Err(Error::config(k, format!("`{v}` is not one of blobs|csv"))),
                    }
                }
                "blob_classes" => c.blob_classes = parse_num(k, v)?,
                "blob_dim" => c.blob_dim = parse_num(k, v)?,
                "blob_train_per_class" => c.blob_train_per_class = parse_num(k, v)?,
                "blob_test_per_class" => c.blob_test_per_class = parse_num(k, v)?,
                "blob_spread" => c.blob_spread = parse_num(k, v)?,
                "train_csv" => c.train_csv = (!v.is_empty()).then(|| PathBuf::from(v)),
                "test_csv" => c.test_csv = (!v.is_empty()).then(|| PathBuf::from(v)),
                "csv_header" => c.csv_header = parse_bool(k, v)?,
                "normalize" => c.normalize = parse_bool(k, v)?,
                "gamma" => c.gamma = parse_num(k, v)?,
                "classes_per_client" => c.classes_per_client = parse_num(k, v)?,
                "perturb_sigma" => c.perturb_sigma = parse_num(k, v)?,
                "augment_labeled" => c.augment_labeled = parse_bool(k, v)?,
                "clients" => c.clients = parse_num(k, v)?,
                "active_clients" => c.active_clients = parse_num(k, v)?,
                "local_epochs" => c.local_epochs = parse_num(k, v)?,
                "batch_size" => c.batch_size = parse_num(k, v)?,
                "eval_batch_size" => c.eval_batch_size = parse_num(k, v)?,
                "server_epochs" => c.server_epochs = parse_num(k, v)?,
                "hidden" => c.hidden = parse_list(k, v)?,
                "activation" => {
                    c.activation = choice(k, v, Activation::parse(v), "relu|tanh|identity")?
                }
                "lr" => c.lr = parse_num(k, v)?,
                "momentum" => c.momentum = parse_num(k, v)?,
                "weight_decay" => c.weight_decay = parse_num(k, v)?,
                "alpha_max" => c.alpha_max = parse_num(k, v)?,
                "phi_l" => c.phi_l = parse_num(k, v)?,
                "beta_max" => c.beta_max = parse_num(k, v)?,
                "curve" => c.curve = choice(k, v, CurveKind::parse(v), "linear|rectangle")?,
                "phi_g" => c.phi_g = parse_num(k, v)?,
                "varphi_g" => c.varphi_g = parse_num(k, v)?,
                "mu" => c.mu = parse_num(k, v)?,
                "consistency_loss" => {
                    c.consistency_loss = choice(k, v, ConsistencyLoss::parse(v), "mse|kl")?
                }
                _ => return Err(Error::config(k, "unknown key")),
            }
        }
        if !pairs.contains_key("phi_g") && c.curve == CurveKind::Rectangle {
            c.phi_g = DEFAULT_PHI_G_RECTANGLE;
        }
        if !pairs.contains_key("perturb_sigma") && c.dataset == DatasetKind::Csv {
            c.perturb_sigma = DEFAULT_SIGMA_CSV;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, detail: &str| Err(Error::config(key, detail));
        if self.rounds == 0 {
            return fail("rounds", "must be at least 1");
        }
        if self.clients == 0 {
            return fail("clients", "must be at least 1");
        }
        if self.active_clients == 0 || self.active_clients > self.clients {
            return Err(Error::config(
                "active_clients",
                format!(
                    "must satisfy 1 <= active_clients <= clients ({})",
                    self.clients
                ),
            ));
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if self.eval_batch_size == 0 {
            return fail("eval_batch_size", "must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.alpha_max) {
            return fail("alpha_max", "must lie in [0, 1)");
        }
        if self.phi_l == 0 {
            return fail("phi_l", "must be at least 1");
        }
        if !(self.beta_max > 0.0 && self.beta_max.is_finite()) {
            return fail("beta_max", "must be positive");
        }
        if !(self.perturb_sigma >= 0.0 && self.perturb_sigma.is_finite()) {
            return fail("perturb_sigma", "must be non-negative");
        }
        if self.setting.scenario() != self.scenario {
            return Err(Error::config(
                "setting",
                format!(
                    "`{}` is not defined for the {} scenario",
                    self.setting, self.scenario
                ),
            ));
        }
        if self.variant == Variant::FedAvg && self.scenario == Scenario::LabelsAtServer {
            return fail(
                "variant",
                "FedAvg trains on labeled client data and needs labels-at-client",
            );
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden", "layer widths must be positive");
        }
        match self.dataset {
            DatasetKind::Blobs => {
                if self.blob_classes < 2 {
                    return fail("blob_classes", "must be at least 2");
                }
                if self.blob_dim < 2 {
                    return fail("blob_dim", "must be at least 2");
                }
                if self.blob_train_per_class == 0 || self.blob_test_per_class == 0 {
                    return fail("blob_train_per_class", "per-class counts must be positive");
                }
                if !(self.blob_spread >= 0.0 && self.blob_spread.is_finite()) {
                    return fail("blob_spread", "must be non-negative");
                }
            }
            DatasetKind::Csv => {
                if self.train_csv.is_none() {
                    return fail("train_csv", "required when dataset = csv");
                }
                if self.test_csv.is_none() {
                    return fail("test_csv", "required when dataset = csv");
                }
            }
        }
        self.partition_spec(self.seed).validate()?;
        self.tau_schedule().validate()
    }

    /// Seeds to run, in order.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// This config pinned to a single seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            seeds: Vec::new(),
            ..self.clone()
        }
    }

    pub fn partition_spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scenario: self.scenario,
            setting: self.setting,
            label_fraction: self.gamma,
            clients: self.clients,
            classes_per_client: self.classes_per_client,
            seed,
        }
    }

    pub fn tau_schedule(&self) -> TauSchedule {
        TauSchedule {
            kind: self.curve,
            mu: self.mu,
            phi_g: self.phi_g,
            varphi_g: self.varphi_g,
            total_rounds: self.rounds,
        }
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            variant: self.variant,
            scenario: self.scenario,
            active_clients: self.active_clients,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            eval_batch_size: self.eval_batch_size,
            schedules: Schedules {
                alpha_max: self.alpha_max,
                phi_l: self.phi_l,
                beta_max: self.beta_max,
            },
            tau: self.tau_schedule(),
            loss: self.consistency_loss,
            perturb_strength: self.perturb_sigma,
            server_epochs: self.server_epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            eval_net: self.eval_net,
            augment_labeled: self.augment_labeled,
            seed: self.seed,
        }
    }

    /// A short description of the data source, equal for runs on the same data.
    pub fn dataset_descriptor(&self) -> String {
        match self.dataset {
            DatasetKind::Blobs => format!(
                "blobs(classes={},dim={},train={},test={},spread={})",
                self.blob_classes,
                self.blob_dim,
                self.blob_train_per_class,
                self.blob_test_per_class,
                self.blob_spread
            ),
            DatasetKind::Csv => format!(
                "csv(train={},test={},normalize={})",
                self.train_csv.as_deref().unwrap_or_else(|| "".as_ref()).display(),
                self.test_csv.as_deref().unwrap_or_else(|| "".as_ref()).display(),
                self.normalize
            ),
        }
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "variant" => self.variant.name().to_string(),
            "scenario" => self.scenario.name().to_string(),
            "setting" => self.setting.name().to_string(),
            "seed" => self.seed.to_string(),
            "seeds" => join(&self.seeds),
            "rounds" => self.rounds.to_string(),
            "eval_net" => self.eval_net.name().to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "dataset" => self.dataset.name().to_string(),
            "blob_classes" => self.blob_classes.to_string(),
            "blob_dim" => self.blob_dim.to_string(),
            "blob_train_per_class" => self.blob_train_per_class.to_string(),
            "blob_test_per_class" => self.blob_test_per_class.to_string(),
            "blob_spread" => self.blob_spread.to_string(),
            "train_csv" => path(&self.train_csv),
            "test_csv" => path(&self.test_csv),
            "csv_header" => self.csv_header.to_string(),
            "normalize" => self.normalize.to_string(),
            "gamma" => self.gamma.to_string(),
            "classes_per_client" => self.classes_per_client.to_string(),
            "perturb_sigma" => self.perturb_sigma.to_string(),
            "augment_labeled" => self.augment_labeled.to_string(),
            "clients" => self.clients.to_string(),
            "active_clients" => self.active_clients.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "eval_batch_size" => self.eval_batch_size.to_string(),
            "server_epochs" => self.server_epochs.to_string(),
            "hidden" => join(&self.hidden),
            "activation" => self.activation.name().to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "alpha_max" => self.alpha_max.to_string(),
            "phi_l" => self.phi_l.to_string(),
            "beta_max" => self.beta_max.to_string(),
            "curve" => self.curve.name().to_string(),
            "phi_g" => self.phi_g.to_string(),
            "varphi_g" => self.varphi_g.to_string(),
            "mu" => self.mu.to_string(),
            "consistency_loss" => self.consistency_loss.name().to_string(),
            _ => unreachable!("key table and serializer out of sync: {key}"),
        }
    }

    /// Full config text with every key spelled out.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key) in KEYS {
            if *section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = ExperimentConfig::parse("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.clients, c.active_clients), (100, 10));
        assert_eq!((c.lr, c.momentum, c.weight_decay), (0.01, 0.9, 1e-4));
        assert_eq!(c.seed, 1234);
        assert_eq!(c.alpha_max, 0.999);
        assert_eq!(c.mu, 0.5);
        assert_eq!((c.phi_l, c.phi_g, c.varphi_g), (10, 3, 40));
        assert_eq!((c.rounds, c.local_epochs, c.batch_size, c.eval_batch_size), (50, 5, 10, 128));
    }

    #[test]
    fn curve_dependent_default() {
        let c = ExperimentConfig::parse("[fedsiam]\ncurve = rectangle\n", &[]).unwrap();
        assert_eq!(c.phi_g, 10);
        let c = ExperimentConfig::parse("[fedsiam]\ncurve = rectangle\nphi_g = 5\n", &[]).unwrap();
        assert_eq!(c.phi_g, 5);
    }

    #[test]
    fn rejects_bad_input() {
        let err = ExperimentConfig::parse("", &["active_clients=200".into()]).unwrap_err();
        assert!(err.to_string().contains("active_clients"), "{err}");

        let err = ExperimentConfig::parse(
            "[experiment]\nscenario = labels-at-server\nsetting = noniid-3\n",
            &[],
        )
        .unwrap_err();
        assert!(err.to_string().contains("setting"), "{err}");

        let err = ExperimentConfig::parse("[data]\nbogus = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        let err = ExperimentConfig::parse("[optim]\ngamma = 0.2\n", &[]).unwrap_err();
        assert!(err.to_string().contains("[data]"), "{err}");

        let err = ExperimentConfig::parse("[optim]\nlr = fast\n", &[]).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");

        assert!(ExperimentConfig::parse("[nope]\n", &[]).is_err());
        assert!(ExperimentConfig::parse("[optim]\nlr = 0.1\nlr = 0.2\n", &[]).is_err());
        assert!(ExperimentConfig::parse("", &["variant=FedAvg".into(), "scenario=labels-at-server".into(), "setting=ls-iid".into()]).is_err());
    }

    #[test]
    fn overrides_win() {
        let c = ExperimentConfig::parse("[optim]\nlr = 0.1\n", &["lr=0.5".into()]).unwrap();
        assert_eq!(c.lr, 0.5);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            prop_oneof![Just(Variant::Pi), Just(Variant::MT), Just(Variant::D), Just(Variant::FedAvg)],
            1usize..5,
            0u64..100_000,
            prop::collection::vec(1usize..64, 0..3),
            1e-4f64..1.0,
            0.0f64..0.99,
            0.0f64..=1.0,
            (2usize..10, 1usize..4),
            prop::collection::vec(0u64..10_000, 0..4),
        )
            .prop_map(|(variant, b, seed, hidden, lr, momentum, mu, (clients, cpc), seeds)| {
                ExperimentConfig {
                    variant,
                    active_clients: b.min(clients),
                    clients,
                    seed,
                    seeds,
                    hidden,
                    lr,
                    momentum,
                    mu,
                    classes_per_client: cpc,
                    ..ExperimentConfig::default()
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_round_trips(c in arb_config()) {
            let text = c.serialize();
            let back = ExperimentConfig::parse(&text, &[]).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
