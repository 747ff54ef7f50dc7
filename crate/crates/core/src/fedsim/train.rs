//! Federated training rounds over a partitioned dataset.

use std::io::Write;

use log::warn;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{BigramLm, Model, SequenceBatch};
use super::optim::{
    aggregate, client_update, lr_schedule, Algorithm, ClientUpdate, ScheduleKind, ScheduleSpec, ServerKind,
    ServerOptimizer, DEFAULT_WARMUP_FRACTION,
};
use super::text::{cycle_take, pack_sequences, tokenize_hashed};
use crate::error::{display_key, Error, Result};
use crate::group_stream::{build_group_stream_with, GroupDataset, GroupStream, StreamOptions};
use crate::hashing::{stream_rng, sub_seed};
use crate::partition::PartitionedDataset;
use crate::stats::payload_text;

fn default_cohort() -> usize {
    16
}
fn default_tau() -> usize {
    64
}
fn default_batch() -> usize {
    4
}
fn default_client_lr() -> f64 {
    0.1
}
fn default_server_lr() -> f64 {
    1e-3
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::WarmupCosine
}
fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}
fn default_server() -> ServerKind {
    ServerKind::Adam
}
fn default_rounds() -> usize {
    100
}
fn default_vocab() -> usize {
    64
}
fn default_seq_len() -> usize {
    129
}
fn default_init_std() -> f64 {
    0.01
}
fn default_cycle() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_cohort")]
    pub cohort_size: usize,
    /// Batches each client yields per round (τ).
    #[serde(default = "default_tau")]
    pub tau: usize,
    /// Sequences per batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Client SGD learning rate (eta_c).
    #[serde(default = "default_client_lr")]
    pub client_lr: f64,
    /// Peak server learning rate (eta_max of the schedule).
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_server")]
    pub server_optimizer: ServerKind,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    /// JSON field holding the text; defaults to the dataset's own layout.
    #[serde(default)]
    pub text_field: Option<String>,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_cycle")]
    pub interleave_cycle: usize,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        TrainConfig {
            algorithm,
            cohort_size: default_cohort(),
            tau: default_tau(),
            batch_size: default_batch(),
            client_lr: default_client_lr(),
            server_lr: default_server_lr(),
            schedule: default_schedule(),
            warmup_fraction: default_warmup(),
            server_optimizer: default_server(),
            rounds: default_rounds(),
            seed: 0,
            vocab_size: default_vocab(),
            seq_len: default_seq_len(),
            text_field: None,
            init_std: default_init_std(),
            interleave_cycle: default_cycle(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cohort_size", self.cohort_size),
            ("tau", self.tau),
            ("batch_size", self.batch_size),
            ("interleave_cycle", self.interleave_cycle),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab_size must be >= 2".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig("seq_len must be >= 2".into()));
        }
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("client_lr must be >= 0, got {}", self.client_lr)));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::InvalidConfig("init_std must be >= 0".into()));
        }
        self.schedule_spec().validate()
    }

    /// Sequences each client contributes per round (τ · batch size).
    pub fn examples_per_client(&self) -> usize {
        self.tau * self.batch_size
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            eta_max: self.server_lr,
            total_rounds: self.rounds,
            warmup_fraction: self.warmup_fraction,
        }
    }

    pub fn model(&self) -> BigramLm {
        BigramLm::new(self.vocab_size)
    }

    fn resolved_text_field<'a>(&'a self, dataset: &'a PartitionedDataset) -> Option<&'a str> {
        self.text_field.as_deref().or(dataset.default_text_field())
    }
}

/// A client's batches for one round: all its text tokenized and packed,
/// cycled to exactly τ · B sequences, then cut into τ batches of B.
///
/// `None` when the group has no tokens at all.
pub fn client_batches(
    group: &GroupDataset,
    text_field: Option<&str>,
    vocab_size: usize,
    seq_len: usize,
    tau: usize,
    batch_size: usize,
) -> Result<Option<Vec<SequenceBatch>>> {
    let mut tokens = Vec::new();
    for (i, payload) in group.examples().enumerate() {
        let payload = payload?;
        let text = payload_text(&payload, text_field).map_err(|message| Error::Decode {
            group: display_key(group.key()),
            index: i as u64,
            message,
        })?;
        tokens.extend(tokenize_hashed(&text, vocab_size));
    }
    let seqs = pack_sequences(&tokens, seq_len);
    if seqs.is_empty() {
        return Ok(None);
    }
    let seqs = cycle_take(&seqs, tau * batch_size);
    Ok(Some(seqs.chunks(batch_size).map(|c| c.to_vec()).collect()))
}

/// A client ready to train: its key and its round batches.
#[derive(Debug, Clone)]
pub struct PreparedClient<B> {
    pub key: Vec<u8>,
    pub batches: Vec<B>,
}

/// Endless client order: pass `e` is the dataset's group stream fully
/// shuffled with seed `sub_seed(seed, "client-shuffle", e)`.
pub fn client_schedule(dataset: &PartitionedDataset, config: &TrainConfig) -> Result<GroupStream> {
    let groups = dataset.manifest().num_groups;
    if groups == 0 {
        return Err(Error::EmptyInput);
    }
    let dataset = dataset.clone();
    let cycle = config.interleave_cycle;
    let seed = config.seed;
    let passes = (0u64..).flat_map(move |pass| {
        let options = StreamOptions::new(
            cycle,
            groups as usize,
            sub_seed(seed, "client-shuffle", &pass.to_le_bytes()),
        );
        match build_group_stream_with(&dataset, &options) {
            Ok(stream) => Box::new(stream) as Box<dyn Iterator<Item = Result<GroupDataset>> + Send>,
            Err(e) => Box::new(std::iter::once(Err(e))),
        }
    });
    Ok(GroupStream::from_results(passes))
}

/// Cohorts of non-empty clients taken as consecutive windows of `clients`.
///
/// Clients without any tokens are skipped with a warning; a stream that
/// yields a whole pass of them is an error rather than an endless loop.
pub struct CohortSource<'a> {
    clients: GroupStream,
    config: &'a TrainConfig,
    text_field: Option<String>,
    consecutive_empty: u64,
    empty_limit: u64,
}

impl<'a> CohortSource<'a> {
    pub fn new(dataset: &PartitionedDataset, config: &'a TrainConfig) -> Result<Self> {
        Ok(CohortSource {
            clients: client_schedule(dataset, config)?,
            config,
            text_field: config.resolved_text_field(dataset).map(str::to_owned),
            consecutive_empty: 0,
            empty_limit: dataset.manifest().num_groups,
        })
    }

    pub fn next_cohort(&mut self) -> Result<Vec<PreparedClient<SequenceBatch>>> {
        let c = self.config;
        let mut cohort = Vec::with_capacity(c.cohort_size);
        while cohort.len() < c.cohort_size {
            let group = self.clients.next().ok_or(Error::EmptyInput)??;
            match client_batches(&group, self.text_field.as_deref(), c.vocab_size, c.seq_len, c.tau, c.batch_size)? {
                Some(batches) => {
                    self.consecutive_empty = 0;
                    cohort.push(PreparedClient {
                        key: group.key().to_vec(),
                        batches,
                    });
                }
                None => {
                    warn!("skipping client {:?}: no tokens", display_key(group.key()));
                    self.consecutive_empty += 1;
                    if self.consecutive_empty >= self.empty_limit {
                        return Err(Error::InvalidConfig("every client in the dataset is empty".into()));
                    }
                }
            }
        }
        Ok(cohort)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub algorithm: Algorithm,
    pub lr: f64,
    /// Mean over the cohort of each client's mean batch loss.
    pub mean_loss: f64,
}

pub const METRICS_HEADER: &str = "round,algorithm,lr,mean_loss";

/// Writes metrics as CSV with shortest round-trip float formatting.
pub fn write_metrics_csv(metrics: &[RoundMetrics], out: &mut impl Write) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(out, "{},{},{},{}", m.round, m.algorithm.as_str(), m.lr, m.mean_loss)?;
    }
    Ok(())
}

/// Outcome of a training run. A divergence stops training early; the
/// parameters and metrics up to the failing round are kept.
#[derive(Debug)]
pub struct TrainRun {
    pub params: Vec<f64>,
    pub server: ServerOptimizer,
    pub metrics: Vec<RoundMetrics>,
    pub rounds_completed: usize,
    pub error: Option<Error>,
}

impl TrainRun {
    pub fn into_result(self) -> Result<(Vec<f64>, Vec<RoundMetrics>)> {
        match self.error {
            Some(e) => Err(e),
            None => Ok((self.params, self.metrics)),
        }
    }
}

/// Parameters drawn from N(0, init_std²) on the seed's "init" stream.
pub fn init_params(dim: usize, init_std: f64, seed: u64) -> Vec<f64> {
    if init_std == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, init_std).expect("init_std validated");
    let mut rng = stream_rng(seed, "init", b"");
    (0..dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Settings of the round loop that do not depend on where clients come from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLoop {
    pub algorithm: Algorithm,
    pub client_lr: f64,
    pub server: ServerKind,
    pub schedule: ScheduleSpec,
}

/// Runs `schedule.total_rounds` rounds starting from `params`, pulling one
/// cohort per round from `next_cohort`.
///
/// Clients of a cohort are updated in parallel; results are reduced in
/// client-key order, so the outcome does not depend on thread scheduling.
pub fn run_rounds<M, F>(model: &M, params: Vec<f64>, settings: &RoundLoop, mut next_cohort: F) -> TrainRun
where
    M: Model,
    F: FnMut(usize) -> Result<Vec<PreparedClient<M::Batch>>>,
{
    let mut run = TrainRun {
        server: ServerOptimizer::new(settings.server, params.len()),
        params,
        metrics: Vec::new(),
        rounds_completed: 0,
        error: None,
    };
    for round in 0..settings.schedule.total_rounds {
        if let Err(e) = one_round(model, &mut run, settings, round, &mut next_cohort) {
            run.error = Some(e);
            break;
        }
        run.rounds_completed = round + 1;
    }
    run
}

fn one_round<M, F>(model: &M, run: &mut TrainRun, settings: &RoundLoop, round: usize, next_cohort: &mut F) -> Result<()>
where
    M: Model,
    F: FnMut(usize) -> Result<Vec<PreparedClient<M::Batch>>>,
{
    let lr = lr_schedule(&settings.schedule, round)?;
    let cohort = next_cohort(round)?;
    if cohort.is_empty() {
        return Err(Error::EmptyInput);
    }
    let params = &run.params;
    let results: Vec<Result<ClientUpdate>> = cohort
        .par_iter()
        .map(|c| client_update(model, params, &c.batches, settings.client_lr, settings.algorithm, round, &c.key))
        .collect();
    let updates = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64;
    let delta = aggregate(&updates)?;
    run.server.step(&mut run.params, &delta, lr)?;
    run.metrics.push(RoundMetrics {
        round,
        algorithm: settings.algorithm,
        lr,
        mean_loss,
    });
    Ok(())
}

/// Trains the bigram model on `dataset` for `config.rounds` rounds.
pub fn run_training(dataset: &PartitionedDataset, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let model = config.model();
    let params = init_params(model.dim(), config.init_std, config.seed);
    let settings = RoundLoop {
        algorithm: config.algorithm,
        client_lr: config.client_lr,
        server: config.server_optimizer,
        schedule: config.schedule_spec(),
    };
    if config.rounds == 0 {
        return Ok(run_rounds(&model, params, &settings, |_| Ok(Vec::new())));
    }
    let mut source = CohortSource::new(dataset, config)?;
    Ok(run_rounds(&model, params, &settings, |_| source.next_cohort()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::model::LinearRegression;
    use crate::group_stream::test_support::write_dataset;
    use crate::hashing::stream_rng;
    use rand::Rng;

    fn words(n: usize, salt: usize) -> String {
        (0..n).map(|i| format!("t{}", (i * 7 + salt) % 13)).collect::<Vec<_>>().join(" ")
    }

    fn small_dataset(dir: &std::path::Path) -> PartitionedDataset {
        let shards: Vec<Vec<(&str, Vec<String>)>> = vec![
            vec![("a", vec![words(20, 1), words(5, 2)]), ("c", vec![words(30, 3)])],
            vec![("b", vec![words(12, 4)]), ("d", vec![words(40, 5), words(3, 6)]), ("e", vec!["".into()])],
        ];
        write_dataset(dir, &shards)
    }

    fn config() -> TrainConfig {
        TrainConfig {
            cohort_size: 2,
            tau: 3,
            batch_size: 2,
            rounds: 6,
            vocab_size: 16,
            seq_len: 9,
            client_lr: 0.5,
            server_lr: 0.05,
            seed: 3,
            ..TrainConfig::new(Algorithm::Fedavg)
        }
    }

    #[test]
    fn batches_have_exact_shape() {
        let g = GroupDataset::from_payloads("k", vec![words(10, 0).into_bytes(), words(3, 1).into_bytes()]);
        let b = client_batches(&g, None, 16, 5, 4, 3).unwrap().unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|batch| batch.len() == 3 && batch.iter().all(|s| s.len() == 5)));
        // 13 tokens pack into 3 sequences; the 12 slots cycle through them.
        assert_eq!(b[1][0], b[0][0]);
        let empty = GroupDataset::from_payloads("e", vec![b"   ".to_vec()]);
        assert!(client_batches(&empty, None, 16, 5, 4, 3).unwrap().is_none());
    }

    #[test]
    fn training_is_deterministic_and_skips_empty_clients() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let a = run_training(&ds, &config()).unwrap();
        let b = run_training(&ds, &config()).unwrap();
        assert!(a.error.is_none());
        assert_eq!(a.metrics.len(), 6);
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics[0].lr, 0.0);
        assert!(a.metrics.iter().all(|m| m.mean_loss.is_finite()));
    }

    #[test]
    fn zero_rounds_return_initial_params() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let c = TrainConfig { rounds: 0, ..config() };
        let run = run_training(&ds, &c).unwrap();
        assert!(run.metrics.is_empty());
        assert_eq!(run.params, init_params(16 * 16, c.init_std, c.seed));
    }

    #[test]
    fn client_schedule_covers_each_pass() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let keys: Vec<Vec<u8>> = client_schedule(&ds, &config())
            .unwrap()
            .take(15)
            .map(|g| g.unwrap().key().to_vec())
            .collect();
        for pass in keys.chunks(5) {
            let mut p = pass.to_vec();
            p.sort();
            assert_eq!(p, [b"a", b"b", b"c", b"d", b"e"].map(|k| k.to_vec()));
        }
        assert_ne!(keys[..5], keys[5..10]);
    }

    /// Cohort 1, τ = 1, SGD server with lr 1 is plain SGD on the client sequence.
    #[test]
    fn single_client_rounds_are_centralized_sgd() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset(dir.path());
        let c = TrainConfig {
            cohort_size: 1,
            tau: 1,
            server_optimizer: ServerKind::Sgd,
            schedule: ScheduleKind::Constant,
            server_lr: 1.0,
            rounds: 20,
            ..config()
        };
        let run = run_training(&ds, &c).unwrap();
        let model = c.model();
        let mut x = init_params(model.dim(), c.init_std, c.seed);
        let mut source = CohortSource::new(&ds, &c).unwrap();
        let mut g = vec![0.0; model.dim()];
        for _ in 0..20 {
            let client = source.next_cohort().unwrap().pop().unwrap();
            model.loss_grad(&x, &client.batches[0], &mut g).unwrap();
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= c.client_lr * gi;
            }
        }
        let max = run.params.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max <= 1e-12, "{max}");
    }

    /// With τ = 1 and a plain SGD server, FedSGD at server lr `eta_c · s`
    /// follows FedAvg at server lr `s`.
    #[test]
    fn fedavg_and_fedsgd_agree_at_tau_one() {
        let mut rng = stream_rng(8, "tau-one", b"");
        let model = LinearRegression { features: 3 };
        let clients: Vec<Vec<PreparedClient<_>>> = (0..10)
            .map(|_| {
                (0..3)
                    .map(|k| PreparedClient {
                        key: vec![b'a' + k],
                        batches: vec![(0..4)
                            .map(|_| ((0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(-1.0..1.0)))
                            .collect::<Vec<(Vec<f64>, f64)>>()],
                    })
                    .collect()
            })
            .collect();
        let eta_c = 0.3;
        let run = |algorithm, server_lr| {
            let settings = RoundLoop {
                algorithm,
                client_lr: eta_c,
                server: ServerKind::Sgd,
                schedule: ScheduleSpec::new(ScheduleKind::Constant, server_lr, 10),
            };
            run_rounds(&model, vec![0.1, -0.2, 0.3], &settings, |r| Ok(clients[r].clone()))
        };
        let avg = run(Algorithm::Fedavg, 1.0);
        let sgd = run(Algorithm::Fedsgd, eta_c);
        for (a, b) in avg.params.iter().zip(&sgd.params) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn divergence_keeps_partial_metrics() {
        let model = LinearRegression { features: 1 };
        let settings = RoundLoop {
            algorithm: Algorithm::Fedavg,
            client_lr: 1e150,
            server: ServerKind::Sgd,
            schedule: ScheduleSpec::new(ScheduleKind::Constant, 1.0, 10),
        };
        let run = run_rounds(&model, vec![1.0], &settings, |_| {
            Ok(vec![PreparedClient {
                key: b"z".to_vec(),
                batches: vec![vec![(vec![1e100], 0.0)]],
            }])
        });
        assert!(matches!(run.error, Some(Error::Divergence { .. })));
        assert!(run.metrics.len() < 10);
        assert_eq!(run.metrics.len(), run.rounds_completed);
    }

    #[test]
    fn metrics_csv() {
        let m = vec![RoundMetrics {
            round: 0,
            algorithm: Algorithm::Fedsgd,
            lr: 0.1,
            mean_loss: 2.5,
        }];
        let mut out = Vec::new();
        write_metrics_csv(&m, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "round,algorithm,lr,mean_loss\n0,fedsgd,0.1,2.5\n");
    }
}
