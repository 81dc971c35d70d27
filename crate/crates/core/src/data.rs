//! Datasets, client partitioning and input perturbation.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{stream, Purpose};

/// Share of clients holding the high labeled ratio in Non-IID-III.
pub const NONIID3_HIGH_CLIENT_FRACTION: f64 = 0.1;
pub const NONIID3_RATIO_HIGH: f64 = 0.55;
pub const NONIID3_RATIO_LOW: f64 = 0.05;

/// Labeled examples over `num_classes` categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.len() < num_classes {
            return Err(Error::Contract(format!(
                "{} samples cannot cover {num_classes} classes",
                labels.len()
            )));
        }
        let mut seen = vec![false; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Contract(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            seen[y] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Contract(format!("class {missing} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian clusters centred on the vertices of a scaled simplex.
///
/// With `dim >= classes` the centre of class `c` is the basis vector `e_c`;
/// otherwise centres are seeded random unit vectors. Samples are grouped by
/// class in the returned dataset.
pub fn gen_synthetic_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if dim < 2 {
        return Err(Error::config("dim", "need at least 2 feature dimensions"));
    }
    if n_per_class == 0 {
        return Err(Error::config("n_per_class", "must be positive"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config("spread", "must be finite and non-negative"));
    }
    let mut centres = vec![vec![0.0; dim]; classes];
    if dim >= classes {
        for (c, centre) in centres.iter_mut().enumerate() {
            centre[c] = 1.0;
        }
    } else {
        // Centres must not depend on the sample seed, so train and test
        // splits drawn with different seeds share them.
        let mut rng = stream(0, Purpose::Data, classes as u64, dim as u64);
        for centre in &mut centres {
            for v in centre.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = centre.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in centre.iter_mut() {
                *v /= norm;
            }
        }
    }
    let mut rng = stream(seed, Purpose::Data, 0, 0);
    let mut data = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in centre {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    Dataset::new(features, labels, classes)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Rescale all features jointly to `[0, 1]` using the file's min and max.
    pub normalize: bool,
}

/// Reads `label,f1,...,fdim` rows. The class count is `max label + 1`.
pub fn load_csv_dataset(path: &Path, opts: CsvOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if (i == 0 && opts.has_header) || line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            detail,
        };
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or("");
        let label: usize = label_field
            .parse()
            .map_err(|_| parse_err(format!("label `{label_field}` is not a class index")))?;
        let before = data.len();
        for (j, f) in fields.enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(format!("feature {} `{f}` is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("feature {} is not finite", j + 1)));
            }
            data.push(v);
        }
        let row_dim = data.len() - before;
        match dim {
            None if row_dim == 0 => {
                return Err(parse_err("row has no features".to_string()));
            }
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    detail: format!("line {lineno} has {row_dim} features, expected {d}"),
                });
            }
            Some(_) => {}
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        detail: "no data rows".to_string(),
    })?;
    if opts.normalize {
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        for v in &mut data {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::from_vec(labels.len(), dim, data)?;
    Dataset::new(features, labels, num_classes).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    LabelsAtClient,
    LabelsAtServer,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::LabelsAtClient => "labels-at-client",
            Scenario::LabelsAtServer => "labels-at-server",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "labels-at-client" => Some(Scenario::LabelsAtClient),
            "labels-at-server" => Some(Scenario::LabelsAtServer),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Iid,
    NonIid1,
    NonIid2,
    NonIid3,
    LsIid,
    LsNonIid,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Iid => "iid",
            Setting::NonIid1 => "noniid-1",
            Setting::NonIid2 => "noniid-2",
            Setting::NonIid3 => "noniid-3",
            Setting::LsIid => "ls-iid",
            Setting::LsNonIid => "ls-noniid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iid" => Some(Setting::Iid),
            "noniid-1" => Some(Setting::NonIid1),
            "noniid-2" => Some(Setting::NonIid2),
            "noniid-3" => Some(Setting::NonIid3),
            "ls-iid" => Some(Setting::LsIid),
            "ls-noniid" => Some(Setting::LsNonIid),
            _ => None,
        }
    }

    pub fn scenario(self) -> Scenario {
        match self {
            Setting::LsIid | Setting::LsNonIid => Scenario::LabelsAtServer,
            _ => Scenario::LabelsAtClient,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub scenario: Scenario,
    pub setting: Setting,
    /// Fraction of labeled data: per client (labels-at-client) or of the
    /// whole training set (labels-at-server). Ignored by Non-IID-III.
    pub label_fraction: f64,
    pub clients: usize,
    pub classes_per_client: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.setting.scenario() != self.scenario {
            return Err(Error::config(
                "setting",
                format!(
                    "`{}` is not defined for the {} scenario",
                    self.setting, self.scenario
                ),
            ));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if self.clients == 0 {
            return Err(Error::config("clients", "must be positive"));
        }
        if self.classes_per_client == 0 {
            return Err(Error::config("classes_per_client", "must be positive"));
        }
        Ok(())
    }
}

/// Labeled samples with their dataset indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl LabeledSet {
    fn gather(ds: &Dataset, indices: Vec<usize>) -> Self {
        Self {
            inputs: ds.features.select_rows(&indices),
            labels: indices.iter().map(|&i| ds.labels[i]).collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One client's local data.
///
/// Labels of the unlabeled part are kept only for partition audits; training
/// code reads unlabeled samples through [`ClientShard::unlabeled_inputs`],
/// which never exposes them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    labeled: LabeledSet,
    unlabeled_inputs: Matrix,
    unlabeled_indices: Vec<usize>,
    unlabeled_audit: Vec<usize>,
}

impl ClientShard {
    fn gather(ds: &Dataset, client_id: usize, labeled: Vec<usize>, unlabeled: Vec<usize>) -> Self {
        Self {
            client_id,
            labeled: LabeledSet::gather(ds, labeled),
            unlabeled_inputs: ds.features.select_rows(&unlabeled),
            unlabeled_audit: unlabeled.iter().map(|&i| ds.labels[i]).collect(),
            unlabeled_indices: unlabeled,
        }
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn unlabeled_inputs(&self) -> &Matrix {
        &self.unlabeled_inputs
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_indices.len()
    }

    /// Total local samples, the aggregation weight numerator.
    pub fn n_samples(&self) -> usize {
        self.n_labeled() + self.n_unlabeled()
    }

    pub fn labeled_indices(&self) -> &[usize] {
        &self.labeled.indices
    }

    pub fn unlabeled_indices(&self) -> &[usize] {
        &self.unlabeled_indices
    }

    /// Ground-truth labels of the unlabeled part, for audits only.
    pub fn audit_unlabeled_labels(&self) -> &[usize] {
        &self.unlabeled_audit
    }

    pub fn labeled_classes(&self) -> BTreeSet<usize> {
        self.labeled.labels.iter().copied().collect()
    }

    pub fn unlabeled_classes(&self) -> BTreeSet<usize> {
        self.unlabeled_audit.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub server_labeled: Option<LabeledSet>,
    pub shards: Vec<ClientShard>,
}

/// Splits `total` into `parts` floor shares, giving the remainder to the
/// earliest parts.
pub fn split_counts(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn floor_frac(fraction: f64, n: usize) -> usize {
    // The epsilon absorbs representation error such as 0.1 * 600 = 59.999...
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Per-class shuffled index pools.
fn class_pools<R: Rng>(ds: &Dataset, rng: &mut R) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); ds.num_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        pools[y].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    pools
}

/// Interleaves the pools one class at a time, so every prefix of the result
/// is as class-balanced as the pools allow.
fn interleave(pools: Vec<Vec<usize>>) -> Vec<usize> {
    let total = pools.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = pools.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        for it in &mut iters {
            if let Some(i) = it.next() {
                out.push(i);
            }
        }
    }
    out
}

fn stratified_order<R: Rng>(ds: &Dataset, indices: &[usize], rng: &mut R) -> Vec<usize> {
    let mut pools = vec![Vec::new(); ds.num_classes];
    for &i in indices {
        pools[ds.labels[i]].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    pools.shuffle(rng);
    interleave(pools)
}

/// Draws `per_client` distinct classes for each client by walking a stream
/// of random class permutations, so class usage stays balanced.
fn assign_classes<R: Rng>(
    clients: usize,
    classes: usize,
    per_client: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if per_client > classes {
        return Err(Error::config(
            "classes_per_client",
            format!("{per_client} exceeds the {classes} available classes"),
        ));
    }
    let mut queue: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut out = Vec::with_capacity(clients);
    for _ in 0..clients {
        let mut chosen: Vec<usize> = Vec::with_capacity(per_client);
        let mut deferred = Vec::new();
        while chosen.len() < per_client {
            if queue.is_empty() {
                let mut perm: Vec<usize> = (0..classes).collect();
                perm.shuffle(rng);
                queue.extend(perm);
            }
            let c = queue.pop_front().expect("queue refilled above");
            if chosen.contains(&c) {
                deferred.push(c);
            } else {
                chosen.push(c);
            }
        }
        for c in deferred.into_iter().rev() {
            queue.push_front(c);
        }
        out.push(chosen);
    }
    Ok(out)
}

/// Takes `total` samples spread over `classes`, interleaved. Each class gets
/// an equal floor share; the remainder goes to the classes with the most
/// samples left, which keeps pools shared between clients balanced.
fn take_from_classes(pools: &mut [Vec<usize>], classes: &[usize], total: usize) -> Result<Vec<usize>> {
    let mut quota = vec![total / classes.len(); classes.len()];
    let mut by_remaining: Vec<usize> = (0..classes.len()).collect();
    by_remaining.sort_by_key(|&j| std::cmp::Reverse(pools[classes[j]].len()));
    for &j in by_remaining.iter().take(total % classes.len()) {
        quota[j] += 1;
    }
    let mut parts = Vec::with_capacity(classes.len());
    for (&c, &q) in classes.iter().zip(&quota) {
        let pool = &mut pools[c];
        if pool.len() < q {
            return Err(Error::Partition {
                class: c,
                detail: format!("needs {q} more samples but only {} remain", pool.len()),
            });
        }
        parts.push(pool.split_off(pool.len() - q));
    }
    Ok(interleave(parts))
}

fn noniid3_high_count(clients: usize) -> usize {
    ((clients as f64 * NONIID3_HIGH_CLIENT_FRACTION).round() as usize).clamp(1, clients)
}

/// Splits a dataset into client shards (and, for labels-at-server, a server
/// labeled set) according to `spec`. Deterministic in `(dataset, spec)`.
pub fn partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Partition> {
    spec.validate()?;
    let k = spec.clients;
    let mut rng = stream(spec.seed, Purpose::Partition, 0, 0);
    let shard_size = ds.len() / k;
    if shard_size == 0 {
        return Err(Error::config(
            "clients",
            format!("{k} clients exceed the {} available samples", ds.len()),
        ));
    }

    match spec.setting {
        Setting::Iid | Setting::NonIid3 => {
            let all: Vec<usize> = (0..ds.len()).collect();
            let order = stratified_order(ds, &all, &mut rng);
            let labeled_counts = if spec.setting == Setting::Iid {
                split_counts(floor_frac(spec.label_fraction, shard_size * k), k)
            } else {
                let n_hi = noniid3_high_count(k);
                let mut ids: Vec<usize> = (0..k).collect();
                ids.shuffle(&mut rng);
                let mut counts = vec![floor_frac(NONIID3_RATIO_LOW, shard_size); k];
                for &id in &ids[..n_hi] {
                    counts[id] = floor_frac(NONIID3_RATIO_HIGH, shard_size);
                }
                counts
            };
            check_labeled_counts(&labeled_counts)?;
            let shards = order
                .chunks_exact(shard_size)
                .take(k)
                .enumerate()
                .map(|(id, chunk)| {
                    let (l, u) = chunk.split_at(labeled_counts[id]);
                    ClientShard::gather(ds, id, l.to_vec(), u.to_vec())
                })
                .collect();
            Ok(Partition {
                server_labeled: None,
                shards,
            })
        }
        Setting::NonIid1 => {
            let assigned = assign_classes(k, ds.num_classes, spec.classes_per_client, &mut rng)?;
            let mut pools = class_pools(ds, &mut rng);
            let labeled_counts = split_counts(floor_frac(spec.label_fraction, shard_size * k), k);
            check_labeled_counts(&labeled_counts)?;
            let mut shards = Vec::with_capacity(k);
            for (id, classes) in assigned.iter().enumerate() {
                let taken = take_from_classes(&mut pools, classes, shard_size)?;
                let (l, u) = taken.split_at(labeled_counts[id]);
                shards.push(ClientShard::gather(ds, id, l.to_vec(), u.to_vec()));
            }
            Ok(Partition {
                server_labeled: None,
                shards,
            })
        }
        Setting::NonIid2 => {
            let assigned = assign_classes(k, ds.num_classes, spec.classes_per_client, &mut rng)?;
            let mut pools = class_pools(ds, &mut rng);
            let labeled_counts = split_counts(floor_frac(spec.label_fraction, shard_size * k), k);
            check_labeled_counts(&labeled_counts)?;
            let mut labeled = Vec::with_capacity(k);
            for (id, classes) in assigned.iter().enumerate() {
                labeled.push(take_from_classes(&mut pools, classes, labeled_counts[id])?);
            }
            let rest: Vec<usize> = pools.into_iter().flatten().collect();
            let order = stratified_order(ds, &rest, &mut rng);
            let mut cursor = 0;
            let mut shards = Vec::with_capacity(k);
            for (id, l) in labeled.into_iter().enumerate() {
                let m = shard_size - labeled_counts[id];
                if cursor + m > order.len() {
                    return Err(Error::Contract(format!(
                        "not enough samples left for client {id}'s unlabeled set"
                    )));
                }
                let u = order[cursor..cursor + m].to_vec();
                cursor += m;
                shards.push(ClientShard::gather(ds, id, l, u));
            }
            Ok(Partition {
                server_labeled: None,
                shards,
            })
        }
        Setting::LsIid | Setting::LsNonIid => {
            let all: Vec<usize> = (0..ds.len()).collect();
            let order = stratified_order(ds, &all, &mut rng);
            let n_server = floor_frac(spec.label_fraction, ds.len());
            if n_server == 0 {
                return Err(Error::config("gamma", "leaves the server without labeled data"));
            }
            let (server, rest) = order.split_at(n_server);
            let per_client = rest.len() / k;
            if per_client == 0 {
                return Err(Error::config(
                    "clients",
                    "too many clients for the unlabeled pool",
                ));
            }
            let mut shards = Vec::with_capacity(k);
            if spec.setting == Setting::LsIid {
                for (id, chunk) in rest.chunks_exact(per_client).take(k).enumerate() {
                    shards.push(ClientShard::gather(ds, id, Vec::new(), chunk.to_vec()));
                }
            } else {
                let assigned =
                    assign_classes(k, ds.num_classes, spec.classes_per_client, &mut rng)?;
                let mut pools = vec![Vec::new(); ds.num_classes];
                for &i in rest {
                    pools[ds.labels[i]].push(i);
                }
                for (id, classes) in assigned.iter().enumerate() {
                    let u = take_from_classes(&mut pools, classes, per_client)?;
                    shards.push(ClientShard::gather(ds, id, Vec::new(), u));
                }
            }
            Ok(Partition {
                server_labeled: Some(LabeledSet::gather(ds, server.to_vec())),
                shards,
            })
        }
    }
}

fn check_labeled_counts(counts: &[usize]) -> Result<()> {
    if let Some(id) = counts.iter().position(|&c| c == 0) {
        return Err(Error::config(
            "gamma",
            format!("client {id} would receive no labeled samples"),
        ));
    }
    Ok(())
}

/// `client_id,n_labeled,n_unlabeled,classes_labeled,classes_unlabeled`, with
/// class lists separated by `;`.
pub fn partition_audit_csv(shards: &[ClientShard]) -> String {
    let join = |s: BTreeSet<usize>| {
        s.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut out = String::from("client_id,n_labeled,n_unlabeled,classes_labeled,classes_unlabeled\n");
    for s in shards {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.client_id,
            s.n_labeled(),
            s.n_unlabeled(),
            join(s.labeled_classes()),
            join(s.unlabeled_classes())
        ));
    }
    out
}

/// Adds independent `N(0, strength^2)` noise to every feature.
pub fn perturb<R: Rng + ?Sized>(features: &Matrix, rng: &mut R, strength: f64) -> Matrix {
    let mut out = features.clone();
    if strength > 0.0 {
        for v in out.as_mut_slice() {
            let z: f64 = rng.sample(StandardNormal);
            *v += strength * z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec(setting: Setting, gamma: f64, clients: usize) -> PartitionSpec {
        PartitionSpec {
            scenario: setting.scenario(),
            setting,
            label_fraction: gamma,
            clients,
            classes_per_client: 2,
            seed: 1234,
        }
    }

    /// Labels only, features are irrelevant for partition bookkeeping.
    fn label_only(classes: usize, per_class: usize) -> Dataset {
        let labels: Vec<usize> = (0..classes).flat_map(|c| vec![c; per_class]).collect();
        Dataset::new(Matrix::zeros(labels.len(), 1), labels, classes).unwrap()
    }

    #[test]
    fn blobs_counts_and_determinism() {
        let a = gen_synthetic_blobs(4, 16, 250, 0.5, 9).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.class_counts(), vec![250; 4]);
        assert_eq!(a, gen_synthetic_blobs(4, 16, 250, 0.5, 9).unwrap());
        assert_ne!(a, gen_synthetic_blobs(4, 16, 250, 0.5, 10).unwrap());
        assert!(gen_synthetic_blobs(1, 16, 5, 0.5, 9).is_err());
        assert!(gen_synthetic_blobs(3, 1, 5, 0.5, 9).is_err());
    }

    #[test]
    fn zero_spread_blobs_are_separable() {
        let d = gen_synthetic_blobs(2, 3, 20, 0.0, 1).unwrap();
        for (i, &y) in d.labels.iter().enumerate() {
            let row = d.features.row(i);
            assert_eq!(row[y], 1.0);
            assert_eq!(row[1 - y], 0.0);
        }
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.csv");
        fs::write(&p, "0,1,2\n1,3,4\n2,5,6\n").unwrap();
        let d = load_csv_dataset(&p, CsvOptions::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_classes, 3);

        let d = load_csv_dataset(
            &p,
            CsvOptions {
                has_header: false,
                normalize: true,
            },
        )
        .unwrap();
        assert_eq!(d.features.row(0), &[0.0, 0.2]);
        assert_eq!(d.features.row(2), &[0.8, 1.0]);

        let bad = dir.path().join("bad.csv");
        let mut f = fs::File::create(&bad).unwrap();
        writeln!(f, "label,a,b\n0,1,2\n1,x,4").unwrap();
        let err = load_csv_dataset(
            &bad,
            CsvOptions {
                has_header: true,
                normalize: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "0,1,2\n1,3\n").unwrap();
        assert!(matches!(
            load_csv_dataset(&ragged, CsvOptions::default()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn iid_paper_counts() {
        let ds = label_only(10, 6000);
        let p = partition(&ds, &spec(Setting::Iid, 0.1, 100)).unwrap();
        assert!(p.server_labeled.is_none());
        assert_eq!(p.shards.len(), 100);
        for s in &p.shards {
            assert_eq!((s.n_labeled(), s.n_unlabeled()), (60, 540));
            assert_eq!(s.labeled_classes().len(), 10);
            assert_eq!(s.unlabeled_classes().len(), 10);
        }
    }

    #[test]
    fn noniid3_ratio_split() {
        let ds = label_only(10, 6000);
        let p = partition(&ds, &spec(Setting::NonIid3, 0.1, 100)).unwrap();
        let hi = p.shards.iter().filter(|s| s.n_labeled() == 330).count();
        let lo = p.shards.iter().filter(|s| s.n_labeled() == 30).count();
        assert_eq!((hi, lo), (10, 90));
        assert!(p.shards.iter().all(|s| s.unlabeled_classes().len() == 10));
    }

    #[test]
    fn labels_at_server_counts() {
        let ds = label_only(10, 6000);
        let p = partition(&ds, &spec(Setting::LsIid, 0.01, 100)).unwrap();
        let server = p.server_labeled.unwrap();
        assert_eq!(server.len(), 600);
        assert_eq!(server.labels.iter().collect::<BTreeSet<_>>().len(), 10);
        for s in &p.shards {
            assert_eq!((s.n_labeled(), s.n_unlabeled()), (0, 594));
        }
    }

    #[test]
    fn category_contracts() {
        let ds = label_only(4, 250);
        let p = partition(&ds, &spec(Setting::NonIid1, 0.1, 20)).unwrap();
        for s in &p.shards {
            assert_eq!(s.labeled_classes().len(), 2);
            assert_eq!(s.labeled_classes(), s.unlabeled_classes());
        }
        let p = partition(&ds, &spec(Setting::NonIid2, 0.1, 20)).unwrap();
        for s in &p.shards {
            assert_eq!(s.labeled_classes().len(), 2);
            assert_eq!(s.unlabeled_classes().len(), 4);
        }
        let p = partition(&ds, &spec(Setting::LsNonIid, 0.1, 20)).unwrap();
        for s in &p.shards {
            assert_eq!(s.unlabeled_classes().len(), 2);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let ds = label_only(4, 250);
        let mut s = spec(Setting::NonIid3, 0.1, 20);
        s.scenario = Scenario::LabelsAtServer;
        assert!(matches!(partition(&ds, &s), Err(Error::Config { .. })));
        // Classes 1 and 2 hold 5 samples each, far below the 5-per-client quota
        // times the number of clients sharing them.
        let skewed = Dataset::new(
            Matrix::zeros(110, 1),
            (0..110).map(|i| usize::from(i >= 100) + usize::from(i >= 105)).collect(),
            3,
        )
        .unwrap();
        assert!(matches!(
            partition(&skewed, &spec(Setting::NonIid1, 0.2, 10)),
            Err(Error::Partition { .. })
        ));
    }

    #[test]
    fn perturb_identity_and_noise() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut rng = stream(1, Purpose::LocalTrain, 0, 0);
        assert_eq!(perturb(&x, &mut rng, 0.0), x);
        let a = perturb(&x, &mut rng, 0.1);
        let b = perturb(&x, &mut rng, 0.1);
        assert_ne!(a, b);
    }

    #[test]
    fn gaussian_perturbation_moments() {
        let n = 100_000;
        let x = Matrix::zeros(n, 1);
        let mut rng = stream(3, Purpose::LocalTrain, 0, 0);
        let sigma = 0.3;
        let y = perturb(&x, &mut rng, sigma);
        let mean = y.as_slice().iter().sum::<f64>() / n as f64;
        let var = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Standard error of the mean is sigma/sqrt(n) ~ 1e-3.
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((var - sigma * sigma).abs() < 0.02 * sigma * sigma, "var {var}");
    }
}
