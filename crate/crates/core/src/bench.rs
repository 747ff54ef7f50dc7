//! Full-pass iteration benchmark over the three group-access backends.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_stream::{
    build_group_stream_with, build_hierarchical_index, index_path, load_in_memory, lookup_group, GroupDataset,
    HierarchicalIndex, StreamOptions,
};
use crate::hashing::stream_rng;
use crate::memtrack::PeakMeter;
use crate::partition::{PartitionedDataset, DEFAULT_MEMORY_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    InMemory,
    Hierarchical,
    Streaming,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::InMemory, Backend::Hierarchical, Backend::Streaming];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::InMemory => "in_memory",
            Backend::Hierarchical => "hierarchical",
            Backend::Streaming => "streaming",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown backend {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchOptions {
    pub trials: usize,
    /// Per-trial limit in seconds; slower trials are recorded as timed out.
    #[serde(default)]
    pub timeout_seconds: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub memory_budget_bytes: u64,
    #[serde(default = "default_cycle")]
    pub interleave_cycle: usize,
    #[serde(default = "default_shuffle")]
    pub shuffle_buffer: usize,
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

fn default_cycle() -> usize {
    4
}

fn default_shuffle() -> usize {
    1000
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            trials: 1,
            timeout_seconds: None,
            seed: 0,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
            interleave_cycle: default_cycle(),
            shuffle_buffer: default_shuffle(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub status: TrialStatus,
    pub examples_seen: u64,
    pub elapsed_seconds: f64,
    pub peak_memory_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub backend: Backend,
    /// Examples visited per completed trial.
    pub examples_seen: u64,
    /// Mean and sample standard deviation over completed trials.
    pub elapsed_seconds: f64,
    pub elapsed_std_seconds: f64,
    /// Largest peak over all trials.
    pub peak_memory_bytes: u64,
    pub trials: Vec<TrialResult>,
}

impl BenchReport {
    pub const CSV_HEADER: [&'static str; 6] = [
        "backend",
        "trial",
        "status",
        "examples_seen",
        "elapsed_seconds",
        "peak_memory_bytes",
    ];

    pub fn timed_out(&self) -> bool {
        self.trials.iter().any(|t| t.status == TrialStatus::TimedOut)
    }

    /// One row per trial, without a header.
    pub fn write_csv_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for t in &self.trials {
            out.write_record([
                self.backend.as_str().to_owned(),
                t.trial.to_string(),
                match t.status {
                    TrialStatus::Ok => "ok".to_owned(),
                    TrialStatus::TimedOut => "timed_out".to_owned(),
                },
                t.examples_seen.to_string(),
                format!("{:.6}", t.elapsed_seconds),
                t.peak_memory_bytes.to_string(),
            ])?;
        }
        Ok(())
    }
}

struct Deadline(Option<(Instant, Duration)>);

impl Deadline {
    fn passed(&self) -> bool {
        self.0.map(|(start, limit)| start.elapsed() > limit).unwrap_or(false)
    }
}

fn drain(group: &GroupDataset) -> Result<u64> {
    let mut n = 0;
    for payload in group.examples() {
        black_box(payload?.len());
        n += 1;
    }
    Ok(n)
}

fn trial_seed(options: &BenchOptions, trial: usize) -> u64 {
    crate::hashing::sub_seed(options.seed, "bench-trial", &(trial as u64).to_le_bytes())
}

fn shuffled<T>(mut items: Vec<T>, seed: u64) -> Vec<T> {
    items.shuffle(&mut stream_rng(seed, "bench-order", b""));
    items
}

/// Returns (status, examples seen, iteration seconds).
fn run_trial(
    dataset: &PartitionedDataset,
    backend: Backend,
    options: &BenchOptions,
    trial: usize,
) -> Result<(TrialStatus, u64, f64)> {
    let seed = trial_seed(options, trial);
    let limit = options.timeout_seconds.map(Duration::from_secs_f64);
    let mut seen = 0u64;
    let timed = |start: Instant| -> Deadline { Deadline(limit.map(|l| (start, l))) };
    let start;
    match backend {
        Backend::InMemory => {
            // Loading is part of the memory footprint but not of the timing.
            let data = load_in_memory(dataset, options.memory_budget_bytes)?;
            let keys = shuffled(data.groups.keys().cloned().collect(), seed);
            start = Instant::now();
            let deadline = timed(start);
            for key in &keys {
                if deadline.passed() {
                    return Ok((TrialStatus::TimedOut, seen, start.elapsed().as_secs_f64()));
                }
                for payload in &data.groups[key] {
                    black_box(payload.len());
                    seen += 1;
                }
            }
        }
        Backend::Hierarchical => {
            let keys = shuffled(HierarchicalIndex::open(dataset)?.keys()?, seed);
            start = Instant::now();
            let deadline = timed(start);
            for key in &keys {
                if deadline.passed() {
                    return Ok((TrialStatus::TimedOut, seen, start.elapsed().as_secs_f64()));
                }
                seen += drain(&lookup_group(dataset, key)?)?;
            }
        }
        Backend::Streaming => {
            start = Instant::now();
            let deadline = timed(start);
            let stream = build_group_stream_with(
                dataset,
                &StreamOptions::new(options.interleave_cycle, options.shuffle_buffer, seed),
            )?;
            for group in stream {
                if deadline.passed() {
                    return Ok((TrialStatus::TimedOut, seen, start.elapsed().as_secs_f64()));
                }
                seen += drain(&group?)?;
            }
        }
    }
    Ok((TrialStatus::Ok, seen, start.elapsed().as_secs_f64()))
}

/// Visits every example of `dataset` through `backend`, `options.trials`
/// times in a row, each time in a fresh random group order.
///
/// The hierarchical index is built first if it does not exist yet.
pub fn iterate_bench(dataset: &PartitionedDataset, backend: Backend, options: &BenchOptions) -> Result<BenchReport> {
    if options.trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    if let Some(t) = options.timeout_seconds {
        if !(t > 0.0) {
            return Err(Error::InvalidConfig("timeout_seconds must be positive".into()));
        }
    }
    if backend == Backend::Hierarchical && !index_path(dataset).exists() {
        build_hierarchical_index(dataset)?;
    }
    let expected = dataset.manifest().num_examples;
    let mut trials = Vec::with_capacity(options.trials);
    for trial in 0..options.trials {
        let meter = PeakMeter::start();
        let (status, examples_seen, elapsed_seconds) = run_trial(dataset, backend, options, trial)?;
        let peak_memory_bytes = meter.finish();
        if status == TrialStatus::Ok && examples_seen != expected {
            return Err(Error::Corrupt(format!(
                "{backend} pass saw {examples_seen} examples, manifest lists {expected}"
            )));
        }
        log::info!("{backend} trial {trial}: {status:?} {examples_seen} examples in {elapsed_seconds:.3}s");
        trials.push(TrialResult {
            trial,
            status,
            examples_seen,
            elapsed_seconds,
            peak_memory_bytes,
        });
    }
    let done: Vec<f64> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .map(|t| t.elapsed_seconds)
        .collect();
    let (mean, std) = mean_std(&done);
    Ok(BenchReport {
        backend,
        examples_seen: if done.is_empty() { 0 } else { expected },
        elapsed_seconds: mean,
        elapsed_std_seconds: std,
        peak_memory_bytes: trials.iter().map(|t| t.peak_memory_bytes).max().unwrap_or(0),
        trials,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
