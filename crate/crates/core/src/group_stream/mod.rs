//! Group-level access to a partitioned dataset.
//!
//! Three backends share one [`GroupDataset`] view of a group:
//!
//! * the streaming group stream ([`build_group_stream`]): shard scanners
//!   interleaved at group granularity, optionally shuffled through a bounded
//!   buffer, with only stream operations exposed;
//! * an in-memory map ([`load_in_memory`]);
//! * a hierarchical sidecar index giving random access by key ([`lookup_group`]).

mod group;
mod index;
mod memory;
mod scanner;

use std::collections::VecDeque;
use std::thread::{self, JoinHandle};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use group::{take_repeat, GroupDataset, GroupExamples, TakeRepeat};
pub use index::{build_hierarchical_index, index_path, lookup_group, HierarchicalIndex, INDEX_FILE};
pub use memory::{load_in_memory, InMemoryDataset};

use crate::error::{Error, Result};
use crate::hashing::stream_rng;
use crate::partition::PartitionedDataset;
use scanner::ShardScanner;

pub const DEFAULT_PREFETCH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamOptions {
    /// Number of shards read concurrently.
    pub interleave_cycle: usize,
    /// Groups taken from one shard before rotating to the next.
    #[serde(default = "default_block_length")]
    pub block_length: usize,
    /// Buffered shuffle size; 0 keeps the interleaved order.
    pub shuffle_buffer: usize,
    pub seed: u64,
    /// Groups scanned ahead on a background thread; 0 scans synchronously.
    #[serde(default = "default_prefetch")]
    pub prefetch: usize,
}

fn default_block_length() -> usize {
    1
}

fn default_prefetch() -> usize {
    DEFAULT_PREFETCH
}

impl StreamOptions {
    pub fn new(interleave_cycle: usize, shuffle_buffer: usize, seed: u64) -> Self {
        StreamOptions {
            interleave_cycle,
            block_length: 1,
            shuffle_buffer,
            seed,
            prefetch: DEFAULT_PREFETCH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.interleave_cycle == 0 {
            return Err(Error::InvalidConfig("interleave_cycle must be >= 1".into()));
        }
        if self.block_length == 0 {
            return Err(Error::InvalidConfig("block_length must be >= 1".into()));
        }
        Ok(())
    }
}

type GroupIter = Box<dyn Iterator<Item = Result<GroupDataset>> + Send>;

/// Round-robin interleave of shard scanners.
///
/// Up to `cycle` shards are open at once. Each visit takes `block` groups
/// from the current slot; an exhausted slot is emptied and refilled with the
/// next unopened shard the next time the cursor reaches it.
struct Interleave {
    pending: VecDeque<std::path::PathBuf>,
    slots: Vec<Option<ShardScanner>>,
    cursor: usize,
    taken_in_block: usize,
    block: usize,
    failed: bool,
}

impl Interleave {
    fn new(shards: Vec<std::path::PathBuf>, cycle: usize, block: usize) -> Self {
        let cycle = cycle.min(shards.len()).max(1);
        Interleave {
            pending: shards.into(),
            slots: (0..cycle).map(|_| None).collect(),
            cursor: 0,
            taken_in_block: 0,
            block,
            failed: false,
        }
    }

    fn advance(&mut self) {
        self.cursor = (self.cursor + 1) % self.slots.len();
        self.taken_in_block = 0;
    }

    fn step(&mut self) -> Result<Option<GroupDataset>> {
        // Each loop iteration either yields, opens a shard, or empties a slot,
        // so a full cycle of idle slots with nothing pending means the end.
        let mut idle = 0;
        loop {
            if self.slots[self.cursor].is_none() {
                match self.pending.pop_front() {
                    Some(path) => self.slots[self.cursor] = Some(ShardScanner::open(path)?),
                    None => {
                        idle += 1;
                        if idle >= self.slots.len() {
                            return Ok(None);
                        }
                        self.advance();
                        continue;
                    }
                }
            }
            let scanner = self.slots[self.cursor].as_mut().expect("slot filled above");
            match scanner.next() {
                Some(Ok(group)) => {
                    self.taken_in_block += 1;
                    if self.taken_in_block >= self.block {
                        self.advance();
                    }
                    return Ok(Some(group));
                }
                Some(Err(e)) => return Err(e),
                None => {
                    log::trace!("shard {} exhausted", scanner.shard_path().display());
                    self.slots[self.cursor] = None;
                    self.advance();
                    idle = 0;
                }
            }
        }
    }
}

impl Iterator for Interleave {
    type Item = Result<GroupDataset>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.step().transpose();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Streaming shuffle: emit a uniformly random slot of a `capacity`-item
/// buffer and refill it from the source.
pub struct BufferedShuffle<I: Iterator> {
    source: I,
    buffer: Vec<I::Item>,
    capacity: usize,
    rng: ChaCha8Rng,
    source_done: bool,
}

impl<I: Iterator> BufferedShuffle<I> {
    pub fn new(source: I, capacity: usize, rng: ChaCha8Rng) -> Self {
        assert!(capacity >= 1, "shuffle buffer must hold at least one item");
        BufferedShuffle {
            source,
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            rng,
            source_done: false,
        }
    }
}

impl<I: Iterator> Iterator for BufferedShuffle<I> {
    type Item = I::Item;

    fn next(&mut self) -> Option<I::Item> {
        while !self.source_done && self.buffer.len() < self.capacity {
            match self.source.next() {
                Some(item) => self.buffer.push(item),
                None => self.source_done = true,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let slot = self.rng.random_range(0..self.buffer.len());
        Some(self.buffer.swap_remove(slot))
    }
}

/// Moves the wrapped iterator onto a thread that runs up to `depth` items
/// ahead of the consumer. Dropping the handle stops and joins the thread.
struct Prefetch {
    rx: Option<crossbeam_channel::Receiver<Result<GroupDataset>>>,
    handle: Option<JoinHandle<()>>,
}

impl Prefetch {
    fn spawn(source: GroupIter, depth: usize) -> Self {
        let (tx, rx) = crossbeam_channel::bounded(depth);
        let handle = thread::Builder::new()
            .name("group-prefetch".into())
            .spawn(move || {
                for item in source {
                    let stop = item.is_err();
                    if tx.send(item).is_err() || stop {
                        break;
                    }
                }
            })
            .expect("spawning prefetch thread");
        Prefetch {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

impl Iterator for Prefetch {
    type Item = Result<GroupDataset>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        // Disconnect first so a producer blocked on a full queue wakes up.
        self.rx.take();
        if let Some(h) = self.handle.take() {
            if let Err(panic) = h.join() {
                if !thread::panicking() {
                    std::panic::resume_unwind(panic);
                }
            }
        }
    }
}

/// A single pass over every group of a dataset.
///
/// Items are `Result`s because shard I/O happens lazily; after the first
/// error the stream ends.
pub struct GroupStream {
    inner: GroupIter,
    failed: bool,
}

impl GroupStream {
    /// Wraps an arbitrary group sequence, e.g. one already held in memory.
    pub fn from_groups<I>(groups: I) -> Self
    where
        I: IntoIterator<Item = GroupDataset>,
        I::IntoIter: Send + 'static,
    {
        GroupStream {
            inner: Box::new(groups.into_iter().map(Ok)),
            failed: false,
        }
    }

    /// Wraps a sequence whose items may fail, such as several passes chained.
    pub fn from_results<I>(groups: I) -> Self
    where
        I: IntoIterator<Item = Result<GroupDataset>>,
        I::IntoIter: Send + 'static,
    {
        GroupStream {
            inner: Box::new(groups.into_iter()),
            failed: false,
        }
    }

    /// Consecutive non-overlapping windows of `cohort_size` groups.
    pub fn batch_cohorts(self, cohort_size: usize) -> Cohorts {
        batch_cohorts(self, cohort_size)
    }
}

impl Iterator for GroupStream {
    type Item = Result<GroupDataset>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.inner.next();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Group stream with the default block length and prefetch depth.
pub fn build_group_stream(
    dataset: &PartitionedDataset,
    interleave_cycle: usize,
    shuffle_buffer: usize,
    seed: u64,
) -> Result<GroupStream> {
    build_group_stream_with(dataset, &StreamOptions::new(interleave_cycle, shuffle_buffer, seed))
}

pub fn build_group_stream_with(dataset: &PartitionedDataset, options: &StreamOptions) -> Result<GroupStream> {
    options.validate()?;
    let mut shards: Vec<_> = (0..dataset.num_shards()).map(|i| dataset.shard_path(i)).collect();
    if options.shuffle_buffer > 0 {
        let mut rng = stream_rng(options.seed, "shard-order", b"");
        for i in (1..shards.len()).rev() {
            shards.swap(i, rng.random_range(0..=i));
        }
    }
    let mut inner: GroupIter = Box::new(Interleave::new(shards, options.interleave_cycle, options.block_length));
    if options.shuffle_buffer > 0 {
        let rng = stream_rng(options.seed, "group-shuffle", b"");
        inner = Box::new(BufferedShuffle::new(inner, options.shuffle_buffer, rng));
    }
    if options.prefetch > 0 {
        inner = Box::new(Prefetch::spawn(inner, options.prefetch));
    }
    Ok(GroupStream { inner, failed: false })
}

/// The groups of one shard in stored (key) order, read synchronously.
pub fn shard_groups(dataset: &PartitionedDataset, shard: usize) -> Result<GroupStream> {
    if shard >= dataset.num_shards() {
        return Err(Error::InvalidConfig(format!(
            "shard {shard} out of range for {} shards",
            dataset.num_shards()
        )));
    }
    Ok(GroupStream {
        inner: Box::new(ShardScanner::open(dataset.shard_path(shard))?),
        failed: false,
    })
}

/// Up to `cohort_size` groups drawn consecutively from a stream.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub groups: Vec<GroupDataset>,
}

pub struct Cohorts {
    stream: GroupStream,
    size: usize,
    done: bool,
}

pub fn batch_cohorts(stream: GroupStream, cohort_size: usize) -> Cohorts {
    assert!(cohort_size >= 1, "cohort_size must be >= 1");
    Cohorts {
        stream,
        size: cohort_size,
        done: false,
    }
}

impl Iterator for Cohorts {
    type Item = Result<Cohort>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut groups = Vec::with_capacity(self.size);
        while groups.len() < self.size {
            match self.stream.next() {
                Some(Ok(g)) => groups.push(g),
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        if groups.is_empty() {
            None
        } else {
            Some(Ok(Cohort { groups }))
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::fs::{self, File};
    use std::io::BufWriter;
    use std::path::Path;

    use crate::partition::{
        PartitionConfig, PartitionedDataset, ShardInfo, ShardManifest, Strategy, FORMAT_VERSION, MANIFEST_FILE,
    };
    use crate::record_format::{encode_keyed_example, shard_file_name, RecordWriter};

    /// Writes shards with exactly the given `(key, payloads)` runs, in order.
    pub(crate) fn write_dataset(dir: &Path, shards: &[Vec<(&str, Vec<String>)>]) -> PartitionedDataset {
        fs::create_dir_all(dir).unwrap();
        let mut per_shard = Vec::new();
        for (i, groups) in shards.iter().enumerate() {
            let file = File::create(dir.join(shard_file_name(i, shards.len()))).unwrap();
            let mut w = RecordWriter::new(BufWriter::new(file));
            let mut examples = 0;
            for (key, payloads) in groups {
                for p in payloads {
                    w.write_record(&encode_keyed_example(key.as_bytes(), p.as_bytes()).unwrap())
                        .unwrap();
                    examples += 1;
                }
            }
            w.flush().unwrap();
            per_shard.push(ShardInfo {
                shard_index: i,
                num_groups: groups.len() as u64,
                num_examples: examples,
            });
        }
        let manifest = ShardManifest {
            format_version: FORMAT_VERSION,
            num_shards: shards.len(),
            num_groups: per_shard.iter().map(|s| s.num_groups).sum(),
            num_examples: per_shard.iter().map(|s| s.num_examples).sum(),
            per_shard,
            partition_config: PartitionConfig::new(Strategy::Random { num_groups: 1 }, shards.len()),
            input_format: None,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec(&manifest).unwrap()).unwrap();
        PartitionedDataset::open(dir).unwrap()
    }

    pub(crate) fn payloads(key: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{key}-{i}")).collect()
    }

    /// `groups` groups of `per_group` examples spread over `shards` shards,
    /// keys sorted within each shard.
    pub(crate) fn grid_dataset(dir: &Path, shards: usize, groups: usize, per_group: usize) -> PartitionedDataset {
        let keys: Vec<String> = (0..groups).map(|g| format!("g{g:05}")).collect();
        let layout: Vec<Vec<(&str, Vec<String>)>> = (0..shards)
            .map(|s| {
                keys.iter()
                    .enumerate()
                    .filter(|(g, _)| g % shards == s)
                    .map(|(_, k)| (k.as_str(), payloads(k, per_group)))
                    .collect()
            })
            .collect();
        write_dataset(dir, &layout)
    }
}
