//! Running configured experiments and comparing their outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{self, CsvOptions, Dataset, Scenario};
use crate::error::{Error, Result};
use crate::fedcore::{FsmRecord, RoundMetrics, Variant, World};
use crate::nn::LayeredParams;
use crate::rng::{self, Purpose};

pub const METRICS_HEADER: &str = "round,variant,scenario,setting,test_acc,train_loss_cls,\
train_loss_cons,tau,boundary,layers_skipped_frac,upload_scalars_cum,download_scalars_cum,\
alpha_mean,beta";

pub const FSM_HEADER: &str = "round,client_id,layer,fsm,boundary,skipped";

/// Worker threads from `FEDSIAM_THREADS`, else the machine's parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("FEDSIAM_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// One finished run at a single seed.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundMetrics>,
    /// Empty for records loaded from disk.
    pub fsm: Vec<FsmRecord>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn best_acc(&self) -> f64 {
        self.rounds
            .iter()
            .map(|m| m.test_acc)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_acc(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |m| m.test_acc)
    }

    pub fn upload_total(&self) -> u64 {
        self.rounds.last().map_or(0, |m| m.upload_scalars_cum)
    }

    pub fn download_total(&self) -> u64 {
        self.rounds.last().map_or(0, |m| m.download_scalars_cum)
    }

    /// Online-net scalars uploaded over the run. Not persisted in metrics.csv.
    pub fn online_upload_total(&self) -> u64 {
        self.rounds.iter().map(|m| m.online_upload_scalars).sum()
    }

    /// First round whose accuracy reaches `target`.
    pub fn rounds_to_target(&self, target: f64) -> Option<usize> {
        self.rounds
            .iter()
            .find(|m| m.test_acc >= target)
            .map(|m| m.round)
    }

    pub fn metrics_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for m in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{:.6}",
                m.round,
                c.variant,
                c.scenario,
                c.setting,
                m.test_acc,
                m.train_loss_cls,
                m.train_loss_cons,
                m.tau,
                m.boundary,
                m.layers_skipped_frac,
                m.upload_scalars_cum,
                m.download_scalars_cum,
                m.alpha_mean,
                m.beta
            );
        }
        let _ = writeln!(
            out,
            "# summary best_acc={:.6} final_acc={:.6} upload_total={} download_total={}",
            self.best_acc(),
            self.final_acc(),
            self.upload_total(),
            self.download_total()
        );
        out
    }

    pub fn fsm_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(FSM_HEADER);
        out.push('\n');
        for r in &self.fsm {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{}",
                r.round, r.client_id, r.layer, r.fsm, r.boundary, r.skipped as u8
            );
        }
        out
    }

    fn summary_text(&self) -> String {
        format!(
            "variant: {}\nscenario: {}\nsetting: {}\nseed: {}\nbest_acc: {:.6}\nfinal_acc: {:.6}\n\
             upload_total: {}\ndownload_total: {}\nwall_clock_secs: {:.3}\n",
            self.config.variant,
            self.config.scenario,
            self.config.setting,
            self.config.seed,
            self.best_acc(),
            self.final_acc(),
            self.upload_total(),
            self.download_total(),
            self.wall_clock_secs
        )
    }

    /// Writes metrics.csv, fsm.csv, config.snapshot and summary.txt.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("metrics.csv", self.metrics_csv())?;
        put("fsm.csv", self.fsm_csv())?;
        put("config.snapshot", self.config.serialize())?;
        put("summary.txt", self.summary_text())
    }
}

/// Train and test sets for `cfg` at its seed.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Blobs => {
            let train = data::gen_synthetic_blobs(
                cfg.blob_classes,
                cfg.blob_dim,
                cfg.blob_train_per_class,
                cfg.blob_spread,
                cfg.seed,
            )?;
            let test_seed = rng::stream_seed(cfg.seed, Purpose::TestData, 0, 0);
            let test = data::gen_synthetic_blobs(
                cfg.blob_classes,
                cfg.blob_dim,
                cfg.blob_test_per_class,
                cfg.blob_spread,
                test_seed,
            )?;
            Ok((train, test))
        }
        DatasetKind::Csv => {
            let opts = CsvOptions {
                has_header: cfg.csv_header,
                normalize: cfg.normalize,
            };
            let missing = |k: &str| Error::config(k, "required when dataset = csv");
            let train = data::load_csv_dataset(
                cfg.train_csv.as_deref().ok_or_else(|| missing("train_csv"))?,
                opts,
            )?;
            let test = data::load_csv_dataset(
                cfg.test_csv.as_deref().ok_or_else(|| missing("test_csv"))?,
                opts,
            )?;
            if train.dim() != test.dim() {
                return Err(Error::Schema {
                    path: cfg.test_csv.clone().unwrap_or_default(),
                    detail: format!(
                        "test features have dim {}, training features dim {}",
                        test.dim(),
                        train.dim()
                    ),
                });
            }
            Ok((train, test))
        }
    }
}

/// Data, partition and initial model for `cfg` at its seed, ready to run.
pub fn build_world(cfg: &ExperimentConfig, threads: usize) -> Result<World> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let classes = train.num_classes.max(test.num_classes);
    let part = data::partition(&train, &cfg.partition_spec(cfg.seed))?;
    let mut init_rng = rng::stream(cfg.seed, Purpose::Init, 0, 0);
    let init = LayeredParams::glorot(
        train.dim(),
        &cfg.hidden,
        classes,
        cfg.activation,
        &mut init_rng,
    )?;
    World::new(cfg.federation(), part, test, init, threads)
}

/// Runs `cfg` at `cfg.seed` only, without touching the filesystem.
pub fn run_single(cfg: &ExperimentConfig, threads: usize) -> Result<RunRecord> {
    let start = Instant::now();
    let mut world = build_world(cfg, threads)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut fsm = Vec::new();
    for _ in 0..cfg.rounds {
        let (m, records) = world.run_round()?;
        rounds.push(m);
        fsm.extend(records);
    }
    Ok(RunRecord {
        config: cfg.clone(),
        rounds,
        fsm,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every replicate seed of `cfg` in order.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    cfg.replicate_seeds()
        .into_iter()
        .map(|s| run_single(&cfg.for_seed(s), threads))
        .collect()
}

/// The labeled-only baseline on the same data and partition as `cfg`.
pub fn run_fedavg_baseline(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>> {
    if cfg.scenario == Scenario::LabelsAtServer {
        return Err(Error::Scenario(
            "the FedAvg baseline needs labeled client data".to_string(),
        ));
    }
    let base = ExperimentConfig {
        variant: Variant::FedAvg,
        ..cfg.clone()
    };
    run_experiment(&base, threads)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Writes each record and, for several seeds, a mean±std summary.txt in `dir`.
pub fn write_experiment(records: &[RunRecord], dir: &Path) -> Result<()> {
    match records {
        [] => Err(Error::Contract("no runs to write".to_string())),
        [one] => one.write(dir),
        many => {
            for r in many {
                r.write(&dir.join(format!("seed-{}", r.config.seed)))?;
            }
            let best: Vec<f64> = many.iter().map(RunRecord::best_acc).collect();
            let fin: Vec<f64> = many.iter().map(RunRecord::final_acc).collect();
            let (bm, bs) = mean_std(&best);
            let (fm, fs_) = mean_std(&fin);
            let up = many.iter().map(|r| r.upload_total() as f64).sum::<f64>() / many.len() as f64;
            let seeds: Vec<String> = many.iter().map(|r| r.config.seed.to_string()).collect();
            let text = format!(
                "variant: {}\nseeds: {}\nbest_acc: {:.6} +- {:.6}\nfinal_acc: {:.6} +- {:.6}\n\
                 upload_mean: {:.1}\n",
                many[0].config.variant,
                seeds.join(","),
                bm,
                bs,
                fm,
                fs_,
                up
            );
            let p = dir.join("summary.txt");
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        }
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: format!("bad {name} value `{v}`"),
    })
}

/// Loads a run written by [`RunRecord::write`].
pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let snap = dir.join("config.snapshot");
    let text = fs::read_to_string(&snap).map_err(|e| Error::io(&snap, e))?;
    let config = ExperimentConfig::parse(&text, &[])?;
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rounds = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(Error::Schema {
                    path,
                    detail: "unexpected metrics header".to_string(),
                });
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse {
                path,
                line: lineno,
                detail: format!("expected 14 fields, found {}", f.len()),
            });
        }
        let num = |idx: usize, name: &str| parse_field::<f64>(&path, lineno, name, f[idx]);
        rounds.push(RoundMetrics {
            round: parse_field(&path, lineno, "round", f[0])?,
            test_acc: num(4, "test_acc")?,
            train_loss_cls: num(5, "train_loss_cls")?,
            train_loss_cons: num(6, "train_loss_cons")?,
            tau: num(7, "tau")?,
            boundary: num(8, "boundary")?,
            layers_skipped_frac: num(9, "layers_skipped_frac")?,
            upload_scalars_cum: parse_field(&path, lineno, "upload_scalars_cum", f[10])?,
            download_scalars_cum: parse_field(&path, lineno, "download_scalars_cum", f[11])?,
            online_upload_scalars: 0,
            alpha_mean: num(12, "alpha_mean")?,
            beta: num(13, "beta")?,
        });
    }
    Ok(RunRecord {
        config,
        rounds,
        fsm: Vec::new(),
        wall_clock_secs: f64::NAN,
    })
}

/// Loads a single-run directory, or every `seed-*` subdirectory of a replicate run.
pub fn load_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    if dir.join("metrics.csv").is_file() {
        return Ok(vec![load_run(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed-"))
        })
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Comparison(format!(
            "{} holds no metrics.csv or seed-* runs",
            dir.display()
        )));
    }
    subdirs.iter().map(|d| load_run(d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub seeds: Vec<u64>,
    pub best_acc_mean: f64,
    pub final_acc_mean: f64,
    pub final_acc_std: f64,
    /// Mean over seeds; `None` if some seed never reached the target.
    pub rounds_to_target: Option<f64>,
    pub upload_mean: f64,
    pub download_mean: f64,
    /// Final accuracy minus the reference row's.
    pub delta_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub target_acc: f64,
    /// Label of the row deltas are taken against: FedAvg if present, else the first.
    pub reference: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "run,seeds,best_acc,final_acc,final_acc_std,delta_final,rounds_to_target,\
             upload_scalars,download_scalars\n",
        );
        for r in &self.rows {
            let rounds = r.rounds_to_target.map_or_else(String::new, |x| format!("{x:.1}"));
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.0},{:.0}",
                r.label,
                r.seeds.len(),
                r.best_acc_mean,
                r.final_acc_mean,
                r.final_acc_std,
                r.delta_final,
                rounds,
                r.upload_mean,
                r.download_mean
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "target accuracy: {:.4}, deltas against {}\n",
            self.target_acc, self.reference
        );
        let _ = writeln!(
            out,
            "{:<44} {:>6} {:>9} {:>17} {:>9} {:>9} {:>14} {:>14}",
            "run", "seeds", "best", "final", "delta", "rounds", "upload", "download"
        );
        for r in &self.rows {
            let rounds = r
                .rounds_to_target
                .map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
            let _ = writeln!(
                out,
                "{:<44} {:>6} {:>9.4} {:>8.4} +- {:.4} {:>+9.4} {:>9} {:>14.0} {:>14.0}",
                r.label,
                r.seeds.len(),
                r.best_acc_mean,
                r.final_acc_mean,
                r.final_acc_std,
                r.delta_final,
                rounds,
                r.upload_mean,
                r.download_mean
            );
        }
        out
    }
}

fn run_label(c: &ExperimentConfig) -> String {
    let mut label = format!("{}/{}/{}", c.variant, c.scenario, c.setting);
    if c.variant == Variant::D {
        let _ = write!(label, "/{}-mu{}", c.curve, c.mu);
    }
    if c.variant != Variant::FedAvg {
        let _ = write!(label, "/{}", c.consistency_loss.name());
    }
    label
}

/// Tabulates runs grouped by configuration. Replicates of one group are
/// averaged. The default target is the lowest group-mean best accuracy, so
/// every group has a rounds-to-target entry.
pub fn compare_runs(records: &[RunRecord], target_acc: Option<f64>) -> Result<Comparison> {
    let first = records
        .first()
        .ok_or_else(|| Error::Comparison("nothing to compare".to_string()))?;
    let dataset = first.config.dataset_descriptor();
    let mut groups: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let d = r.config.dataset_descriptor();
        if d != dataset {
            return Err(Error::Comparison(format!(
                "runs use different datasets: {dataset} vs {d}"
            )));
        }
        let label = run_label(&r.config);
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, g)) => g.push(r),
            None => groups.push((label, vec![r])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let seed_set = |g: &[&RunRecord]| {
        let mut s: Vec<u64> = g.iter().map(|r| r.config.seed).collect();
        s.sort_unstable();
        s
    };
    let seeds0 = seed_set(&groups[0].1);
    for (label, g) in &groups {
        let s = seed_set(g);
        if s != seeds0 {
            return Err(Error::Comparison(format!(
                "{label} ran seeds {s:?} but {} ran {seeds0:?}",
                groups[0].0
            )));
        }
    }
    let mean = |g: &[&RunRecord], f: &dyn Fn(&RunRecord) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
    let target = target_acc.unwrap_or_else(|| {
        groups
            .iter()
            .map(|(_, g)| mean(g, &|r| r.best_acc()).0)
            .fold(f64::INFINITY, f64::min)
    });
    let reference = groups
        .iter()
        .find(|(_, g)| g[0].config.variant == Variant::FedAvg)
        .unwrap_or(&groups[0]);
    let reference_final = mean(&reference.1, &|r| r.final_acc()).0;
    let reference = reference.0.clone();
    let rows = groups
        .iter()
        .map(|(label, g)| {
            let (final_acc_mean, final_acc_std) = mean(g, &|r| r.final_acc());
            let hits: Option<Vec<f64>> = g
                .iter()
                .map(|r| r.rounds_to_target(target).map(|x| x as f64))
                .collect();
            ComparisonRow {
                label: label.clone(),
                seeds: seed_set(g),
                best_acc_mean: mean(g, &|r| r.best_acc()).0,
                final_acc_mean,
                final_acc_std,
                rounds_to_target: hits.map(|h| mean_std(&h).0),
                upload_mean: mean(g, &|r| r.upload_total() as f64).0,
                download_mean: mean(g, &|r| r.download_total() as f64).0,
                delta_final: final_acc_mean - reference_final,
            }
        })
        .collect();
    Ok(Comparison {
        target_acc: target,
        reference,
        rows,
    })
}
