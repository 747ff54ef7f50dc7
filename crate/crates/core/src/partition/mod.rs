//! Embarrassingly parallel partitioning of a flat corpus into sharded,
//! group-contiguous record files.
//!
//! The group of an example is a function of that example and the config
//! alone ([`KeyFn`] only ever sees one [`Example`]). Examples are numbered by
//! input position before fan-out, hashed to a shard by key, spooled per
//! worker, and finally sorted per shard by `(key, input_index)`. The output
//! is therefore byte-identical for any worker count.

mod dirichlet;
mod input;
mod sort;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use dirichlet::{
    dirichlet_group_probs, key_dirichlet, key_dirichlet_with_probs, ln_gamma_sample, sample_dirichlet,
    DirichletSpec,
};
pub use input::{read_corpus, read_corpus_from, Example, ExampleIter, InputFormat};

use crate::error::{Error, Result};
use crate::hashing::fnv1a64;
use crate::record_format::{encode_keyed_example_into, shard_file_name, RecordWriter};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MEMORY_BUDGET: u64 = 256 * 1024 * 1024;
const CHUNK_SIZE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Group by the value of one scalar feature.
    ByFeature { feature: String },
    /// Uniformly random group per example.
    Random { num_groups: u64 },
    /// Per-label Dirichlet split. Without `label_feature` every example
    /// shares the label `""`.
    Dirichlet {
        num_groups: u32,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_feature: Option<String>,
    },
}

fn default_memory_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub strategy: Strategy,
    pub seed: u64,
    pub num_shards: usize,
    pub workers: usize,
    /// In-memory sort budget for all shard finalizers together.
    #[serde(default = "default_memory_budget")]
    pub memory_budget_bytes: u64,
}

impl PartitionConfig {
    pub fn new(strategy: Strategy, num_shards: usize) -> Self {
        PartitionConfig {
            strategy,
            seed: 0,
            num_shards,
            workers: 1,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_shards == 0 {
            return Err(Error::InvalidConfig("num_shards must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        match &self.strategy {
            Strategy::ByFeature { feature } if feature.is_empty() => {
                Err(Error::InvalidConfig("feature name must not be empty".into()))
            }
            Strategy::Random { num_groups: 0 } => Err(Error::InvalidConfig("num_groups must be >= 1".into())),
            Strategy::Dirichlet { num_groups, alpha, .. } => DirichletSpec {
                num_groups: *num_groups,
                alpha: *alpha,
                seed: self.seed,
            }
            .validate(),
            _ => Ok(()),
        }
    }
}

/// Serializes a scalar feature as a group key: strings verbatim, numbers in
/// decimal, booleans as `true`/`false`.
pub fn scalar_feature(fields: &Map<String, Value>, feature_name: &str) -> Result<Vec<u8>> {
    match fields.get(feature_name) {
        None => Err(Error::MissingFeature(feature_name.to_owned())),
        Some(Value::String(s)) => Ok(s.as_bytes().to_vec()),
        Some(Value::Number(n)) => Ok(n.to_string().into_bytes()),
        Some(Value::Bool(b)) => Ok(b.to_string().into_bytes()),
        Some(_) => Err(Error::NonScalarFeature(feature_name.to_owned())),
    }
}

pub fn key_by_feature(example: &Example, feature_name: &str) -> Result<Vec<u8>> {
    scalar_feature(&example.fields, feature_name)
}

/// `fnv1a64(le(example_index), seed) mod num_groups`, in decimal.
pub fn key_random(example_index: u64, num_groups: u64, seed: u64) -> Vec<u8> {
    assert!(num_groups >= 1, "num_groups must be >= 1");
    (fnv1a64(&example_index.to_le_bytes(), seed) % num_groups)
        .to_string()
        .into_bytes()
}

/// Shard owning `key`. Unseeded, so a dataset's shard layout depends only on
/// its keys and shard count.
pub fn shard_of(key: &[u8], num_shards: usize) -> usize {
    (fnv1a64(key, 0) % num_shards as u64) as usize
}

/// Maps one example to its group key.
pub trait KeyFn: Sync {
    fn key(&self, example: &Example) -> Result<Vec<u8>>;
}

impl<F> KeyFn for F
where
    F: Fn(&Example) -> Result<Vec<u8>> + Sync,
{
    fn key(&self, example: &Example) -> Result<Vec<u8>> {
        self(example)
    }
}

/// [`KeyFn`] for the built-in strategies.
pub struct StrategyKeyFn {
    strategy: Strategy,
    seed: u64,
    // Dirichlet vectors are a pure function of (seed, label); memoised.
    label_probs: RwLock<HashMap<Vec<u8>, Arc<Vec<f64>>>>,
}

const LABEL_CACHE_LIMIT: usize = 65_536;

impl StrategyKeyFn {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        StrategyKeyFn {
            strategy,
            seed,
            label_probs: RwLock::new(HashMap::new()),
        }
    }

    fn probs_for(&self, label: &[u8], spec: &DirichletSpec) -> Arc<Vec<f64>> {
        if let Some(p) = self.label_probs.read().expect("cache poisoned").get(label) {
            return Arc::clone(p);
        }
        let probs = Arc::new(dirichlet_group_probs(label, spec));
        let mut cache = self.label_probs.write().expect("cache poisoned");
        if cache.len() < LABEL_CACHE_LIMIT {
            cache.insert(label.to_vec(), Arc::clone(&probs));
        }
        probs
    }
}

impl KeyFn for StrategyKeyFn {
    fn key(&self, example: &Example) -> Result<Vec<u8>> {
        match &self.strategy {
            Strategy::ByFeature { feature } => key_by_feature(example, feature),
            Strategy::Random { num_groups } => Ok(key_random(example.index, *num_groups, self.seed)),
            Strategy::Dirichlet {
                num_groups,
                alpha,
                label_feature,
            } => {
                let spec = DirichletSpec {
                    num_groups: *num_groups,
                    alpha: *alpha,
                    seed: self.seed,
                };
                let label = match label_feature {
                    Some(f) => key_by_feature(example, f)?,
                    None => Vec::new(),
                };
                let probs = self.probs_for(&label, &spec);
                Ok(key_dirichlet_with_probs(example.index, &probs, self.seed))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub shard_index: usize,
    pub num_groups: u64,
    pub num_examples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardManifest {
    pub format_version: u32,
    pub num_shards: usize,
    pub num_groups: u64,
    pub num_examples: u64,
    pub per_shard: Vec<ShardInfo>,
    pub partition_config: PartitionConfig,
    /// Layout of the stored payloads, when they came from a known corpus format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_format: Option<InputFormat>,
}

impl ShardManifest {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!("unsupported format_version {}", self.format_version));
        }
        if self.per_shard.len() != self.num_shards {
            return Err(format!(
                "per_shard lists {} shards, num_shards is {}",
                self.per_shard.len(),
                self.num_shards
            ));
        }
        for (i, s) in self.per_shard.iter().enumerate() {
            if s.shard_index != i {
                return Err(format!("per_shard entry {i} has shard_index {}", s.shard_index));
            }
        }
        let groups: u64 = self.per_shard.iter().map(|s| s.num_groups).sum();
        let examples: u64 = self.per_shard.iter().map(|s| s.num_examples).sum();
        if groups != self.num_groups || examples != self.num_examples {
            return Err(format!(
                "per-shard sums ({groups} groups, {examples} examples) disagree with totals ({}, {})",
                self.num_groups, self.num_examples
            ));
        }
        Ok(())
    }
}

/// A partitioned dataset on disk: `manifest.json` plus shard files.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    root: PathBuf,
    manifest: ShardManifest,
}

impl PartitionedDataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io_at(format!("reading {}", path.display()), e))?;
        let manifest: ShardManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        manifest
            .validate()
            .map_err(|message| Error::Manifest { path, message })?;
        Ok(PartitionedDataset { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ShardManifest {
        &self.manifest
    }

    pub fn num_shards(&self) -> usize {
        self.manifest.num_shards
    }

    pub fn shard_path(&self, shard: usize) -> PathBuf {
        self.root.join(shard_file_name(shard, self.manifest.num_shards))
    }

    /// Total bytes of all shard files.
    pub fn total_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for i in 0..self.num_shards() {
            let path = self.shard_path(i);
            total += fs::metadata(&path)
                .map_err(|e| Error::io_at(format!("reading {}", path.display()), e))?
                .len();
        }
        Ok(total)
    }

    /// Field holding example text in this dataset's payloads, if structured.
    pub fn default_text_field(&self) -> Option<&'static str> {
        self.manifest.input_format.and_then(InputFormat::default_text_field)
    }
}

/// Creates `dir` if needed and checks that it is empty.
pub(crate) fn prepare_empty_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(format!("creating {}", dir.display()), e))?;
    let mut entries = fs::read_dir(dir).map_err(|e| Error::io_at(format!("listing {}", dir.display()), e))?;
    if entries.next().is_some() {
        return Err(Error::InvalidConfig(format!("output directory {} is not empty", dir.display())));
    }
    Ok(())
}

/// Directory for spill files: `GROUPER_TMPDIR` if set, else the system temp dir.
pub fn spill_root() -> PathBuf {
    std::env::var_os("GROUPER_TMPDIR")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

type Spool = RecordWriter<BufWriter<File>>;

struct Worker<'a, K: ?Sized> {
    id: usize,
    key_fn: &'a K,
    num_shards: usize,
    spool_dir: &'a Path,
    spools: Vec<Option<Spool>>,
    keyed: Vec<u8>,
    record: Vec<u8>,
}

impl<K: KeyFn + ?Sized> Worker<'_, K> {
    fn spool_path(dir: &Path, worker: usize, shard: usize) -> PathBuf {
        dir.join(format!("spool-w{worker:04}-s{shard:05}"))
    }

    fn process(&mut self, example: &Example) -> Result<()> {
        let key = self.key_fn.key(example).map_err(|e| Error::Partition {
            index: example.index,
            source: Box::new(e),
        })?;
        self.keyed.clear();
        encode_keyed_example_into(&key, &example.payload, &mut self.keyed).map_err(|e| Error::Partition {
            index: example.index,
            source: Box::new(e),
        })?;
        sort::spool_record(example.index, &self.keyed, &mut self.record);
        let shard = shard_of(&key, self.num_shards);
        if self.spools[shard].is_none() {
            let path = Self::spool_path(self.spool_dir, self.id, shard);
            let file = File::create(&path).map_err(|e| Error::io_at(format!("creating {}", path.display()), e))?;
            self.spools[shard] = Some(RecordWriter::new(BufWriter::with_capacity(64 * 1024, file)));
        }
        self.spools[shard]
            .as_mut()
            .expect("spool opened above")
            .write_record(&self.record)?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        for mut spool in self.spools.into_iter().flatten() {
            spool.flush()?;
        }
        Ok(())
    }
}

fn keep_earliest(slot: &Mutex<Option<Error>>, err: Error) {
    let mut guard = slot.lock().expect("error slot poisoned");
    let replace = match (&*guard, &err) {
        (None, _) => true,
        (Some(Error::Partition { index: old, .. }), Error::Partition { index: new, .. }) => new < old,
        (Some(Error::Partition { .. }), _) => true,
        _ => false,
    };
    if replace {
        *guard = Some(err);
    }
}

/// Partitions `examples` with an arbitrary [`KeyFn`] into `output_dir`.
///
/// `spill_dir` hosts the temporary spools and sort runs; it defaults to
/// [`spill_root`].
pub fn partition_examples<I, K>(
    examples: I,
    key_fn: &K,
    config: &PartitionConfig,
    output_dir: &Path,
    spill_dir: Option<&Path>,
    input_format: Option<InputFormat>,
) -> Result<PartitionedDataset>
where
    I: Iterator<Item = Result<Example>>,
    K: KeyFn + ?Sized,
{
    config.validate()?;
    prepare_empty_dir(output_dir)?;
    let spill_parent = spill_dir.map(Path::to_path_buf).unwrap_or_else(spill_root);
    fs::create_dir_all(&spill_parent)
        .map_err(|e| Error::io_at(format!("creating {}", spill_parent.display()), e))?;
    let scratch = tempfile::Builder::new()
        .prefix("grouper-partition-")
        .tempdir_in(&spill_parent)
        .map_err(|e| Error::io_at(format!("creating scratch dir in {}", spill_parent.display()), e))?;
    let scratch_dir = scratch.path();
    let num_shards = config.num_shards;
    let workers = config.workers;

    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let (tx, rx) = crossbeam_channel::bounded::<Vec<Example>>(workers * 2);

    thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for id in 0..workers {
            let rx = rx.clone();
            let failure = &failure;
            handles.push(scope.spawn(move || {
                let mut worker = Worker {
                    id,
                    key_fn,
                    num_shards,
                    spool_dir: scratch_dir,
                    spools: (0..num_shards).map(|_| None).collect(),
                    keyed: Vec::new(),
                    record: Vec::new(),
                };
                for chunk in rx.iter() {
                    for example in &chunk {
                        if let Err(e) = worker.process(example) {
                            keep_earliest(failure, e);
                            // Drain so the reader never blocks on a full channel.
                            for _ in rx.iter() {}
                            return;
                        }
                    }
                }
                if let Err(e) = worker.finish() {
                    keep_earliest(failure, e);
                }
            }));
        }
        drop(rx);

        let mut chunk = Vec::with_capacity(CHUNK_SIZE);
        for item in examples {
            match item {
                Ok(example) => {
                    chunk.push(example);
                    if chunk.len() == CHUNK_SIZE {
                        let full = std::mem::replace(&mut chunk, Vec::with_capacity(CHUNK_SIZE));
                        if tx.send(full).is_err() {
                            break;
                        }
                    }
                }
                Err(e) => {
                    keep_earliest(&failure, e);
                    break;
                }
            }
            if failure.lock().expect("error slot poisoned").is_some() {
                break;
            }
        }
        if !chunk.is_empty() {
            let _ = tx.send(chunk);
        }
        drop(tx);
        for h in handles {
            if let Err(panic) = h.join() {
                std::panic::resume_unwind(panic);
            }
        }
    });

    if let Some(err) = failure.into_inner().expect("error slot poisoned") {
        return Err(err);
    }

    // Fan-in: one finalizer per shard, `workers` of them at a time.
    let concurrent = workers.min(num_shards).max(1);
    let budget = (config.memory_budget_bytes as usize / concurrent).max(1);
    let next_shard = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<sort::ShardCounts>>>> = Mutex::new((0..num_shards).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..concurrent {
            scope.spawn(|| loop {
                let shard = next_shard.fetch_add(1, Ordering::SeqCst);
                if shard >= num_shards {
                    break;
                }
                let spools: Vec<PathBuf> = (0..workers)
                    .map(|w| Worker::<K>::spool_path(scratch_dir, w, shard))
                    .filter(|p| p.exists())
                    .collect();
                let out = output_dir.join(shard_file_name(shard, num_shards));
                let result = sort::finalize_shard(&spools, &out, budget, scratch_dir);
                for spool in &spools {
                    let _ = fs::remove_file(spool);
                }
                results.lock().expect("results poisoned")[shard] = Some(result);
            });
        }
    });

    let mut per_shard = Vec::with_capacity(num_shards);
    for (shard_index, result) in results.into_inner().expect("results poisoned").into_iter().enumerate() {
        let counts = result.expect("every shard finalized")?;
        per_shard.push(ShardInfo {
            shard_index,
            num_groups: counts.num_groups,
            num_examples: counts.num_examples,
        });
    }
    let manifest = ShardManifest {
        format_version: FORMAT_VERSION,
        num_shards,
        num_groups: per_shard.iter().map(|s| s.num_groups).sum(),
        num_examples: per_shard.iter().map(|s| s.num_examples).sum(),
        per_shard,
        partition_config: config.clone(),
        input_format,
    };
    let manifest_path = output_dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io_at(format!("writing {}", manifest_path.display()), e))?;
    Ok(PartitionedDataset {
        root: output_dir.to_path_buf(),
        manifest,
    })
}

/// Partitions the corpus at `input` with the built-in strategy of `config`.
pub fn partition_corpus(
    input: &Path,
    format: InputFormat,
    config: &PartitionConfig,
    output_dir: &Path,
) -> Result<PartitionedDataset> {
    let examples = read_corpus(input, format)?;
    let key_fn = StrategyKeyFn::new(config.strategy.clone(), config.seed);
    partition_examples(examples, &key_fn, config, output_dir, None, Some(format))
}
