//! Per-shard external merge sort on `(key, input_index)`.
//!
//! Worker spools hold framed `[u64 input_index][keyed example]` records in
//! arbitrary key order. The finalizer buffers entries up to a memory budget,
//! spills sorted runs to disk, and k-way merges the runs into the shard file.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::record_format::{split_keyed_example, RecordReader, RecordWriter};

/// Fixed per-entry bookkeeping charged against the memory budget.
const ENTRY_OVERHEAD: usize = 48;
const IO_BUFFER: usize = 64 * 1024;

/// A spooled record: `[u64 index][u32 key_len][key][payload]`.
#[derive(Debug, PartialEq, Eq)]
pub(crate) struct SortEntry {
    data: Vec<u8>,
    key_end: usize,
}

impl SortEntry {
    pub(crate) fn from_spool_record(data: Vec<u8>) -> Result<Self> {
        if data.len() < 8 {
            return Err(Error::Corrupt("spool record shorter than its index".into()));
        }
        let (key, _) = split_keyed_example(&data[8..])?;
        let key_end = 12 + key.len();
        Ok(SortEntry { data, key_end })
    }

    fn index(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.data[..8]);
        u64::from_le_bytes(b)
    }

    pub(crate) fn key(&self) -> &[u8] {
        &self.data[12..self.key_end]
    }

    /// The keyed-example encoding written to the shard.
    pub(crate) fn keyed(&self) -> &[u8] {
        &self.data[8..]
    }

    fn footprint(&self) -> usize {
        self.data.len() + ENTRY_OVERHEAD
    }
}

impl Ord for SortEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key()
            .cmp(other.key())
            .then_with(|| self.index().cmp(&other.index()))
    }
}

impl PartialOrd for SortEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn spool_record(index: u64, keyed: &[u8], out: &mut Vec<u8>) {
    out.clear();
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(keyed);
}

/// Counts produced while writing one shard.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct ShardCounts {
    pub num_groups: u64,
    pub num_examples: u64,
}

struct ShardSink {
    writer: RecordWriter<BufWriter<File>>,
    counts: ShardCounts,
    last_key: Option<Vec<u8>>,
}

impl ShardSink {
    fn create(path: &Path) -> Result<Self> {
        let file =
            File::create(path).map_err(|e| Error::io_at(format!("creating {}", path.display()), e))?;
        Ok(ShardSink {
            writer: RecordWriter::new(BufWriter::with_capacity(IO_BUFFER, file)),
            counts: ShardCounts::default(),
            last_key: None,
        })
    }

    fn push(&mut self, entry: &SortEntry) -> Result<()> {
        if self.last_key.as_deref() != Some(entry.key()) {
            self.counts.num_groups += 1;
            self.last_key = Some(entry.key().to_vec());
        }
        self.counts.num_examples += 1;
        self.writer.write_record(entry.keyed())?;
        Ok(())
    }

    fn finish(mut self) -> Result<ShardCounts> {
        self.writer.flush()?;
        Ok(self.counts)
    }
}

fn write_run(entries: &[SortEntry], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io_at(format!("creating {}", path.display()), e))?;
    let mut writer = RecordWriter::new(BufWriter::with_capacity(IO_BUFFER, file));
    for e in entries {
        writer.write_record(&e.data)?;
    }
    writer.flush()?;
    Ok(())
}

struct RunCursor {
    reader: RecordReader<BufReader<File>>,
}

impl RunCursor {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io_at(format!("opening {}", path.display()), e))?;
        Ok(RunCursor {
            reader: RecordReader::new(BufReader::with_capacity(IO_BUFFER, file)),
        })
    }

    fn next(&mut self) -> Result<Option<SortEntry>> {
        let mut buf = Vec::new();
        if self.reader.read_record(&mut buf)? {
            Ok(Some(SortEntry::from_spool_record(buf)?))
        } else {
            Ok(None)
        }
    }
}

/// Sorts the contents of `spools` into the shard file `out`.
///
/// At most `budget_bytes` of entries are held in memory; beyond that sorted
/// runs are spilled under `run_dir`.
pub(crate) fn finalize_shard(
    spools: &[PathBuf],
    out: &Path,
    budget_bytes: usize,
    run_dir: &Path,
) -> Result<ShardCounts> {
    let mut buffer: Vec<SortEntry> = Vec::new();
    let mut buffered = 0usize;
    let mut runs: Vec<PathBuf> = Vec::new();
    let run_stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "shard".into());

    for spool in spools {
        let mut cursor = RunCursor::open(spool)?;
        while let Some(entry) = cursor.next()? {
            buffered += entry.footprint();
            buffer.push(entry);
            if buffered > budget_bytes {
                buffer.sort_unstable();
                let path = run_dir.join(format!("{run_stem}.run{}", runs.len()));
                write_run(&buffer, &path)?;
                runs.push(path);
                buffer.clear();
                buffered = 0;
            }
        }
    }

    let mut sink = ShardSink::create(out)?;
    buffer.sort_unstable();
    if runs.is_empty() {
        for entry in &buffer {
            sink.push(entry)?;
        }
        return sink.finish();
    }
    if !buffer.is_empty() {
        let path = run_dir.join(format!("{run_stem}.run{}", runs.len()));
        write_run(&buffer, &path)?;
        runs.push(path);
    }
    drop(buffer);

    let mut cursors = runs.iter().map(|p| RunCursor::open(p)).collect::<Result<Vec<_>>>()?;
    let mut heap = BinaryHeap::with_capacity(cursors.len());
    for (i, cursor) in cursors.iter_mut().enumerate() {
        if let Some(entry) = cursor.next()? {
            heap.push(Reverse((entry, i)));
        }
    }
    while let Some(Reverse((entry, i))) = heap.pop() {
        sink.push(&entry)?;
        if let Some(next) = cursors[i].next()? {
            heap.push(Reverse((next, i)));
        }
    }
    let counts = sink.finish()?;
    for run in &runs {
        let _ = std::fs::remove_file(run);
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record_format::{encode_keyed_example, unframe_stream};

    fn spool(dir: &Path, name: &str, items: &[(u64, &str, &str)]) -> PathBuf {
        let path = dir.join(name);
        let mut w = RecordWriter::new(File::create(&path).unwrap());
        let mut buf = Vec::new();
        for (i, k, p) in items {
            spool_record(*i, &encode_keyed_example(k.as_bytes(), p.as_bytes()).unwrap(), &mut buf);
            w.write_record(&buf).unwrap();
        }
        path
    }

    fn read_shard(path: &Path) -> Vec<(String, String)> {
        unframe_stream(File::open(path).unwrap())
            .map(|r| {
                let r = r.unwrap();
                let (k, p) = split_keyed_example(&r).unwrap();
                (String::from_utf8(k.to_vec()).unwrap(), String::from_utf8(p.to_vec()).unwrap())
            })
            .collect()
    }

    #[test]
    fn spilling_matches_in_memory_sort() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = Vec::new();
        for i in 0..500u64 {
            items.push((i, ["b", "a", "c", "ab"][(i * 7 % 4) as usize], format!("p{i}")));
        }
        let (left, right) = items.split_at(250);
        fn as_refs<'a>(v: &'a [(u64, &'a str, String)]) -> Vec<(u64, &'a str, &'a str)> {
            v.iter().map(|(i, k, p)| (*i, *k, p.as_str())).collect()
        }
        let spools = vec![
            spool(dir.path(), "s0", &as_refs(right)),
            spool(dir.path(), "s1", &as_refs(left)),
        ];
        let in_mem = dir.path().join("mem.tfrecord");
        let spilled = dir.path().join("spill.tfrecord");
        let a = finalize_shard(&spools, &in_mem, usize::MAX, dir.path()).unwrap();
        let b = finalize_shard(&spools, &spilled, 300, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_groups, 4);
        assert_eq!(a.num_examples, 500);
        assert_eq!(std::fs::read(&in_mem).unwrap(), std::fs::read(&spilled).unwrap());

        let rows = read_shard(&in_mem);
        let mut expected: Vec<(String, u64)> = items.iter().map(|(i, k, _)| (k.to_string(), *i)).collect();
        expected.sort();
        let got: Vec<(String, u64)> = rows
            .iter()
            .map(|(k, p)| (k.clone(), p[1..].parse().unwrap()))
            .collect();
        assert_eq!(got, expected);
    }
}
