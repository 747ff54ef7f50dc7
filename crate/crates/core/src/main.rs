use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use grouper::bench::{iterate_bench, Backend, BenchOptions, BenchReport};
use grouper::fedsim::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
use grouper::fedsim::sweep::{best_point, default_lr_grid, run_sweep, write_sweep_csv};
use grouper::fedsim::{make_synthetic_task, personalize_dataset, run_training, write_metrics_csv, SynthConfig, TrainConfig};
use grouper::memtrack::TrackingAllocator;
use grouper::partition::{partition_corpus, InputFormat, PartitionConfig, PartitionedDataset, Strategy};
use grouper::stats::{compute_group_stats, write_stats_outputs, StatsOutputOptions};
use grouper::{Error, Result};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

const CONFIG_ECHO: &str = "config.json";

#[derive(Parser)]
#[command(name = "grouper", version, about = "Group-structured datasets and federated simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a flat corpus into a sharded group-structured dataset.
    Partition(PartitionArgs),
    /// Per-group and per-example word statistics.
    Stats(StatsArgs),
    /// Time and memory of a full pass with each access backend.
    Bench(BenchArgs),
    /// Federated training of the bigram model.
    Train(TrainArgs),
    /// Pre/post fine-tuning losses of every client under a checkpoint.
    Personalize(PersonalizeArgs),
    /// Learning-rate grid search selected by mean training loss.
    Sweep(SweepArgs),
    /// Generate the synthetic heterogeneous next-token task.
    Synth(SynthArgs),
}

#[derive(Args)]
struct OutArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    common: OutArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    /// jsonl, text or csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// by_feature, random or dirichlet.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    num_groups: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    label_feature: Option<String>,
    #[arg(long)]
    shards: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    memory_budget: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: OutArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    text_field: Option<String>,
    #[arg(long)]
    depth: Option<u32>,
    /// Single-threaded pass instead of per-shard map-reduce.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: OutArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// in_memory, hierarchical, streaming or all; repeatable.
    #[arg(long)]
    backend: Vec<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    timeout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    memory_budget: Option<u64>,
    #[arg(long)]
    interleave_cycle: Option<usize>,
    #[arg(long)]
    shuffle_buffer: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    data: Option<PathBuf>,
    /// fedavg or fedsgd.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    cohort: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    client_lr: Option<f64>,
    #[arg(long)]
    server_lr: Option<f64>,
    /// constant, warmup_exponential or warmup_cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    /// adam or sgd.
    #[arg(long)]
    server_opt: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    text_field: Option<String>,
    #[arg(long)]
    init_std: Option<f64>,
    #[arg(long)]
    interleave_cycle: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: OutArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct PersonalizeArgs {
    #[command(flatten)]
    common: OutArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Fine-tuning learning rate.
    #[arg(long)]
    client_lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    text_field: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: OutArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Comma-separated client rates; default 1e-4,1e-3,1e-2,1e-1,1.
    #[arg(long, value_delimiter = ',')]
    client_lrs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    server_lrs: Option<Vec<f64>>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: OutArgs,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    examples_per_client: Option<usize>,
    #[arg(long)]
    words_per_example: Option<usize>,
    #[arg(long)]
    first_client: Option<usize>,
    #[arg(long)]
    shards: Option<usize>,
}

/// Config file contents with flag values laid over them.
struct Layered(Map<String, Value>);

impl Layered {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Layered(Map::new()));
        };
        let bytes = fs::read(path).map_err(|e| Error::IoAt {
            context: format!("reading {}", path.display()),
            source: e,
        })?;
        match serde_json::from_slice(&bytes)? {
            Value::Object(map) => Ok(Layered(map)),
            _ => Err(Error::InvalidConfig(format!("{} must hold a JSON object", path.display()))),
        }
    }

    fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.insert(key.to_owned(), serde_json::to_value(v).expect("flag values serialize"));
        }
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn resolve<T: DeserializeOwned>(self) -> Result<T> {
        serde_json::from_value(Value::Object(self.0)).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("missing required setting `{name}`")))
}

/// Creates `out`, refusing a non-empty directory unless `force`.
fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .map_err(|e| Error::IoAt {
                context: format!("listing {}", out.display()),
                source: e,
            })?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(Error::InvalidConfig(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    out.display()
                )));
            }
            fs::remove_dir_all(out).map_err(|e| Error::IoAt {
                context: format!("removing {}", out.display()),
                source: e,
            })?;
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::IoAt {
        context: format!("creating {}", out.display()),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::IoAt {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::IoAt {
        context: format!("creating {}", path.display()),
        source: e,
    })?;
    Ok(BufWriter::new(file))
}

fn parse_enum<T: DeserializeOwned>(flag: &str, value: Option<&String>) -> Result<Option<T>> {
    value
        .map(|v| {
            serde_json::from_value(Value::String(v.clone()))
                .map_err(|_| Error::InvalidConfig(format!("invalid value `{v}` for --{flag}")))
        })
        .transpose()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionRun {
    input: PathBuf,
    #[serde(default)]
    format: Option<InputFormat>,
    strategy: Strategy,
    #[serde(default)]
    seed: u64,
    num_shards: usize,
    #[serde(default = "one")]
    workers: usize,
    #[serde(default)]
    memory_budget_bytes: Option<u64>,
}

fn one() -> usize {
    1
}

fn cmd_partition(a: PartitionArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    if let Some(kind) = &a.strategy {
        layered.0.insert("strategy".into(), json!({ "kind": kind }));
    }
    {
        let strategy = layered.0.entry("strategy").or_insert_with(|| json!({}));
        let Value::Object(s) = strategy else {
            return Err(Error::InvalidConfig("`strategy` must be an object".into()));
        };
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                s.insert(k.into(), v);
            }
        };
        put("feature", a.feature.clone().map(Value::from));
        put("num_groups", a.num_groups.map(Value::from));
        put("alpha", a.alpha.map(Value::from));
        put("label_feature", a.label_feature.clone().map(Value::from));
    }
    layered.set("input", a.input.clone());
    layered.set("format", a.format.clone());
    layered.set("seed", a.seed);
    layered.set("num_shards", a.shards);
    layered.set("workers", a.workers);
    layered.set("memory_budget_bytes", a.memory_budget);
    let run: PartitionRun = layered.resolve()?;
    let format = match run.format {
        Some(f) => f,
        None => InputFormat::from_extension(&run.input).ok_or_else(|| {
            Error::InvalidConfig(format!("cannot infer the format of {}; pass --format", run.input.display()))
        })?,
    };
    let mut config = PartitionConfig::new(run.strategy.clone(), run.num_shards);
    config.seed = run.seed;
    config.workers = run.workers;
    if let Some(b) = run.memory_budget_bytes {
        config.memory_budget_bytes = b;
    }
    prepare_out(&a.common.out, a.common.force)?;
    let ds = partition_corpus(&run.input, format, &config, &a.common.out)?;
    write_json(
        &a.common.out.join(CONFIG_ECHO),
        &json!({ "input": run.input, "format": format, "partition": config }),
    )?;
    eprintln!(
        "partitioned {} examples into {} groups across {} shards",
        ds.manifest().num_examples,
        ds.manifest().num_groups,
        ds.num_shards()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsRun {
    data: PathBuf,
    #[serde(default)]
    text_field: Option<String>,
    #[serde(default = "default_depth")]
    letter_value_depth: u32,
    #[serde(default = "yes")]
    parallel: bool,
}

fn default_depth() -> u32 {
    StatsOutputOptions::default().letter_value_depth
}

fn yes() -> bool {
    true
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layered.set("data", a.data);
    layered.set("text_field", a.text_field);
    layered.set("letter_value_depth", a.depth);
    if a.serial {
        layered.set("parallel", Some(false));
    }
    let run: StatsRun = layered.resolve()?;
    let ds = PartitionedDataset::open(&run.data)?;
    let field = run.text_field.as_deref().or(ds.default_text_field());
    let stats = compute_group_stats(&ds, field, run.parallel)?;
    prepare_out(&a.common.out, a.common.force)?;
    write_json(&a.common.out.join(CONFIG_ECHO), &run)?;
    write_stats_outputs(
        &stats,
        &a.common.out,
        StatsOutputOptions {
            letter_value_depth: run.letter_value_depth,
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchRun {
    data: PathBuf,
    backends: Vec<Backend>,
    #[serde(default = "one")]
    trials: usize,
    #[serde(default)]
    timeout_seconds: Option<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    memory_budget_bytes: Option<u64>,
    #[serde(default)]
    interleave_cycle: Option<usize>,
    #[serde(default)]
    shuffle_buffer: Option<usize>,
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layered.set("data", a.data);
    if !a.backend.is_empty() {
        let mut backends = Vec::new();
        for b in &a.backend {
            if b == "all" {
                backends.extend(Backend::ALL);
            } else {
                backends.push(b.parse::<Backend>()?);
            }
        }
        layered.set("backends", Some(backends));
    }
    layered.set("trials", a.trials);
    layered.set("timeout_seconds", a.timeout);
    layered.set("seed", a.seed);
    layered.set("memory_budget_bytes", a.memory_budget);
    layered.set("interleave_cycle", a.interleave_cycle);
    layered.set("shuffle_buffer", a.shuffle_buffer);
    if !layered.0.contains_key("backends") {
        layered.set("backends", Some(Backend::ALL.to_vec()));
    }
    let run: BenchRun = layered.resolve()?;
    let defaults = BenchOptions::default();
    let options = BenchOptions {
        trials: run.trials,
        timeout_seconds: run.timeout_seconds,
        seed: run.seed,
        memory_budget_bytes: run.memory_budget_bytes.unwrap_or(defaults.memory_budget_bytes),
        interleave_cycle: run.interleave_cycle.unwrap_or(defaults.interleave_cycle),
        shuffle_buffer: run.shuffle_buffer.unwrap_or(defaults.shuffle_buffer),
    };
    let ds = PartitionedDataset::open(&run.data)?;
    prepare_out(&a.common.out, a.common.force)?;
    write_json(&a.common.out.join(CONFIG_ECHO), &json!({ "data": run.data, "backends": run.backends, "options": options }))?;
    let mut reports: Vec<BenchReport> = Vec::new();
    for &backend in &run.backends {
        reports.push(iterate_bench(&ds, backend, &options)?);
    }
    write_json(&a.common.out.join("bench_report.json"), &reports)?;
    let mut w = csv::Writer::from_writer(create(&a.common.out.join("bench_trials.csv"))?);
    w.write_record(BenchReport::CSV_HEADER)?;
    for r in &reports {
        r.write_csv_rows(&mut w)?;
    }
    w.flush()?;
    for r in &reports {
        eprintln!(
            "{}: {:.6} s (sd {:.6}), peak {} bytes{}",
            r.backend,
            r.elapsed_seconds,
            r.elapsed_std_seconds,
            r.peak_memory_bytes,
            if r.timed_out() { ", timed out" } else { "" }
        );
    }
    Ok(())
}

fn layer_train(layered: &mut Layered, f: &TrainFlags) -> Result<()> {
    use grouper::fedsim::{Algorithm, ScheduleKind, ServerKind};
    layered.set("algorithm", parse_enum::<Algorithm>("algo", f.algo.as_ref())?);
    layered.set("cohort_size", f.cohort);
    layered.set("tau", f.tau);
    layered.set("batch_size", f.batch_size);
    layered.set("client_lr", f.client_lr);
    layered.set("server_lr", f.server_lr);
    layered.set("schedule", parse_enum::<ScheduleKind>("schedule", f.schedule.as_ref())?);
    layered.set("warmup_fraction", f.warmup_fraction);
    layered.set("server_optimizer", parse_enum::<ServerKind>("server-opt", f.server_opt.as_ref())?);
    layered.set("rounds", f.rounds);
    layered.set("seed", f.seed);
    layered.set("vocab_size", f.vocab);
    layered.set("seq_len", f.seq_len);
    layered.set("text_field", f.text_field.clone());
    layered.set("init_std", f.init_std);
    layered.set("interleave_cycle", f.interleave_cycle);
    Ok(())
}

/// Splits off the dataset path, which is not part of [`TrainConfig`].
fn train_config(mut layered: Layered, data_flag: Option<PathBuf>) -> Result<(PathBuf, TrainConfig)> {
    let data = match data_flag {
        Some(d) => d,
        None => {
            let v = required(layered.take("data"), "data")?;
            serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("data: {e}")))?
        }
    };
    layered.take("data");
    let config: TrainConfig = layered.resolve()?;
    config.validate()?;
    Ok((data, config))
}

fn echo_train(out: &Path, data: &Path, config: &TrainConfig, extra: Option<(&str, Value)>) -> Result<()> {
    let mut v = serde_json::to_value(config)?;
    let obj = v.as_object_mut().expect("config is an object");
    obj.insert("data".into(), json!(data));
    if let Some((k, x)) = extra {
        obj.insert(k.into(), x);
    }
    write_json(&out.join(CONFIG_ECHO), &v)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layer_train(&mut layered, &a.train)?;
    let (data, config) = train_config(layered, a.train.data.clone())?;
    let ds = PartitionedDataset::open(&data)?;
    prepare_out(&a.common.out, a.common.force)?;
    echo_train(&a.common.out, &data, &config, None)?;
    let run = run_training(&ds, &config)?;
    let mut w = create(&a.common.out.join("metrics.csv"))?;
    write_metrics_csv(&run.metrics, &mut w)?;
    w.flush()?;
    let header = CheckpointHeader {
        dimension: run.params.len(),
        step: run.rounds_completed,
        schedule: config.schedule_spec(),
        vocab_size: config.vocab_size,
        seq_len: config.seq_len,
        server: run.server.clone(),
    };
    save_checkpoint(&a.common.out.join("checkpoint"), &header, &run.params)?;
    if let Some(last) = run.metrics.last() {
        eprintln!("{} rounds, final mean loss {}", run.rounds_completed, last.mean_loss);
    }
    match run.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PersonalizeRun {
    data: PathBuf,
    checkpoint: PathBuf,
    client_lr: f64,
    #[serde(default = "one")]
    epochs: usize,
    #[serde(default = "train_default_tau")]
    tau: usize,
    #[serde(default = "train_default_batch")]
    batch_size: usize,
    #[serde(default)]
    text_field: Option<String>,
}

fn train_default_tau() -> usize {
    TrainConfig::new(grouper::fedsim::Algorithm::Fedavg).tau
}

fn train_default_batch() -> usize {
    TrainConfig::new(grouper::fedsim::Algorithm::Fedavg).batch_size
}

fn cmd_personalize(a: PersonalizeArgs) -> Result<()> {
    use grouper::fedsim::Algorithm;
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layered.set("data", a.data);
    layered.set("checkpoint", a.checkpoint);
    layered.set("client_lr", a.client_lr);
    layered.set("epochs", a.epochs);
    layered.set("tau", a.tau);
    layered.set("batch_size", a.batch_size);
    layered.set("text_field", a.text_field);
    let run: PersonalizeRun = layered.resolve()?;
    let (header, params) = load_checkpoint(&run.checkpoint)?;
    let ds = PartitionedDataset::open(&run.data)?;
    let config = TrainConfig {
        tau: run.tau,
        batch_size: run.batch_size,
        vocab_size: header.vocab_size,
        seq_len: header.seq_len,
        text_field: run.text_field.clone(),
        ..TrainConfig::new(Algorithm::Fedavg)
    };
    let report = personalize_dataset(&ds, &params, &config, run.client_lr, run.epochs)?;
    prepare_out(&a.common.out, a.common.force)?;
    write_json(&a.common.out.join(CONFIG_ECHO), &run)?;
    let mut w = create(&a.common.out.join("personalization.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    write_json(&a.common.out.join("personalization_summary.json"), &report.summary()?)
}

fn lr_list(layered: &mut Layered, key: &str, flag: Option<Vec<f64>>) -> Result<Vec<f64>> {
    let from_file = layered.take(key);
    match (flag, from_file) {
        (Some(v), _) => Ok(v),
        (None, Some(v)) => serde_json::from_value(v).map_err(|e| Error::InvalidConfig(format!("{key}: {e}"))),
        (None, None) => Ok(default_lr_grid()),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layer_train(&mut layered, &a.train)?;
    let client_lrs = lr_list(&mut layered, "client_lrs", a.client_lrs)?;
    let server_lrs = lr_list(&mut layered, "server_lrs", a.server_lrs)?;
    if client_lrs.is_empty() || server_lrs.is_empty() {
        return Err(Error::InvalidConfig("learning-rate grids must not be empty".into()));
    }
    let (data, config) = train_config(layered, a.train.data.clone())?;
    let ds = PartitionedDataset::open(&data)?;
    prepare_out(&a.common.out, a.common.force)?;
    echo_train(
        &a.common.out,
        &data,
        &config,
        Some(("grid", json!({ "client_lrs": client_lrs, "server_lrs": server_lrs }))),
    )?;
    let points = run_sweep(&ds, &config, &client_lrs, &server_lrs)?;
    let mut w = create(&a.common.out.join("sweep.csv"))?;
    write_sweep_csv(&points, &mut w)?;
    w.flush()?;
    let best = best_point(&points).ok_or_else(|| Error::InvalidConfig("every grid point diverged".into()))?;
    write_json(&a.common.out.join("best.json"), best)?;
    eprintln!("best: client_lr {} server_lr {} (loss {})", best.client_lr, best.server_lr, best.mean_train_loss);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut layered = Layered::load(a.common.config.as_deref())?;
    layered.set("num_clients", a.clients);
    layered.set("vocab", a.vocab);
    layered.set("alpha", a.alpha);
    layered.set("seed", a.seed);
    layered.set("examples_per_client", a.examples_per_client);
    layered.set("words_per_example", a.words_per_example);
    layered.set("first_client", a.first_client);
    layered.set("num_shards", a.shards);
    let config: SynthConfig = layered.resolve()?;
    config.validate()?;
    prepare_out(&a.common.out, a.common.force)?;
    let ds = make_synthetic_task(&config, &a.common.out)?;
    write_json(&a.common.out.join(CONFIG_ECHO), &config)?;
    eprintln!("{} clients, {} examples", ds.manifest().num_groups, ds.manifest().num_examples);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition(a) => cmd_partition(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Personalize(a) => cmd_personalize(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let diag = json!({ "error": e.kind(), "message": e.to_string() });
            let mut stderr = std::io::stderr().lock();
            let _ = writeln!(stderr, "{diag}");
            ExitCode::from(1)
        }
    }
}
