//! Hierarchical sidecar index: random access to groups by key.
//!
//! Layout of `group_index.bin` (all integers little endian):
//!
//! ```text
//! magic "GRPIDX01"
//! u64 num_entries
//! u64 table_offset
//! entries, sorted by key: [u32 key_len][key][u32 shard][u64 offset][u64 count]
//! table at table_offset: num_entries × u64 entry offsets
//! ```
//!
//! Lookups binary-search the offset table with positioned reads, so nothing
//! but the header is held in memory.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs::{self, File};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::PathBuf;
use std::sync::Arc;

use super::group::GroupDataset;
use super::scanner::{open_shard, ShardScanner};
use crate::error::{display_key, Error, Result};
use crate::partition::PartitionedDataset;

pub const INDEX_FILE: &str = "group_index.bin";
const MAGIC: &[u8; 8] = b"GRPIDX01";
const HEADER_LEN: u64 = 24;

pub fn index_path(dataset: &PartitionedDataset) -> PathBuf {
    dataset.root().join(INDEX_FILE)
}

/// Builds the index with one sequential scan of every shard.
///
/// Shards are merged by key so entries come out sorted without holding them
/// in memory; only the offset table (8 bytes per group) is buffered.
pub fn build_hierarchical_index(dataset: &PartitionedDataset) -> Result<PathBuf> {
    let final_path = index_path(dataset);
    let tmp_path = dataset.root().join(format!("{INDEX_FILE}.tmp"));
    let file = File::create(&tmp_path).map_err(|e| Error::io_at(format!("creating {}", tmp_path.display()), e))?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&[0u8; 16])?;

    let mut scanners = (0..dataset.num_shards())
        .map(|s| ShardScanner::open(dataset.shard_path(s)))
        .collect::<Result<Vec<_>>>()?;
    let mut heap = BinaryHeap::new();
    for (shard, scanner) in scanners.iter_mut().enumerate() {
        if let Some(g) = scanner.next().transpose()? {
            heap.push(Reverse(HeapItem { group: g, shard }));
        }
    }

    let mut table: Vec<u64> = Vec::new();
    let mut pos = HEADER_LEN;
    let mut last_key: Option<Vec<u8>> = None;
    while let Some(Reverse(HeapItem { group, shard })) = heap.pop() {
        if last_key.as_deref() == Some(group.key()) {
            return Err(Error::Corrupt(format!(
                "group {:?} is stored in more than one shard",
                display_key(group.key())
            )));
        }
        table.push(pos);
        let key = group.key();
        out.write_all(&(key.len() as u32).to_le_bytes())?;
        out.write_all(key)?;
        out.write_all(&(shard as u32).to_le_bytes())?;
        out.write_all(&group.offset().expect("scanned groups are stored").to_le_bytes())?;
        out.write_all(&group.num_examples().to_le_bytes())?;
        pos += 4 + key.len() as u64 + 4 + 8 + 8;
        last_key = Some(key.to_vec());
        if let Some(g) = scanners[shard].next().transpose()? {
            heap.push(Reverse(HeapItem { group: g, shard }));
        }
    }
    for offset in &table {
        out.write_all(&offset.to_le_bytes())?;
    }
    let mut file = out.into_inner().map_err(|e| e.into_error())?;
    file.seek(SeekFrom::Start(8))?;
    file.write_all(&(table.len() as u64).to_le_bytes())?;
    file.write_all(&pos.to_le_bytes())?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp_path, &final_path)
        .map_err(|e| Error::io_at(format!("renaming {} into place", tmp_path.display()), e))?;
    Ok(final_path)
}

struct HeapItem {
    group: GroupDataset,
    shard: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.group
            .key()
            .cmp(other.group.key())
            .then(self.shard.cmp(&other.shard))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: Vec<u8>,
    pub shard: usize,
    pub offset: u64,
    pub count: u64,
}

/// An open index file.
pub struct HierarchicalIndex {
    file: File,
    path: PathBuf,
    len: u64,
    table_offset: u64,
    dataset: PartitionedDataset,
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], pos: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, pos)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut pos: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, pos)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                pos += n as u64;
            }
        }
    }
    Ok(())
}

impl HierarchicalIndex {
    pub fn open(dataset: &PartitionedDataset) -> Result<Self> {
        let path = index_path(dataset);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::IndexMissing(path)),
            Err(e) => return Err(Error::io_at(format!("opening {}", path.display()), e)),
        };
        let mut header = [0u8; HEADER_LEN as usize];
        read_exact_at(&file, &mut header, 0).map_err(|_| Error::Corrupt(format!("{} has no header", path.display())))?;
        if &header[..8] != MAGIC {
            return Err(Error::Corrupt(format!("{} is not a group index", path.display())));
        }
        let len = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        let table_offset = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
        let file_len = file.metadata()?.len();
        if table_offset.checked_add(len.saturating_mul(8)) != Some(file_len) {
            return Err(Error::Corrupt(format!("{} has an inconsistent size", path.display())));
        }
        Ok(HierarchicalIndex {
            file,
            path,
            len,
            table_offset,
            dataset: dataset.clone(),
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::Corrupt(format!("{}: {what}", self.path.display()))
    }

    fn read_u64(&self, pos: u64) -> Result<u64> {
        let mut b = [0u8; 8];
        read_exact_at(&self.file, &mut b, pos).map_err(|_| self.corrupt("read past end"))?;
        Ok(u64::from_le_bytes(b))
    }

    /// Entry `i` in key order.
    pub fn entry(&self, i: u64) -> Result<IndexEntry> {
        let pos = self.read_u64(self.table_offset + 8 * i)?;
        let mut len = [0u8; 4];
        read_exact_at(&self.file, &mut len, pos).map_err(|_| self.corrupt("read past end"))?;
        let key_len = u32::from_le_bytes(len) as usize;
        let mut rest = vec![0u8; key_len + 20];
        read_exact_at(&self.file, &mut rest, pos + 4).map_err(|_| self.corrupt("read past end"))?;
        let tail = &rest[key_len..];
        let shard = u32::from_le_bytes(tail[..4].try_into().expect("4 bytes")) as usize;
        if shard >= self.dataset.num_shards() {
            return Err(self.corrupt(&format!("entry {i} names shard {shard}")));
        }
        Ok(IndexEntry {
            shard,
            offset: u64::from_le_bytes(tail[4..12].try_into().expect("8 bytes")),
            count: u64::from_le_bytes(tail[12..20].try_into().expect("8 bytes")),
            key: rest[..key_len].to_vec(),
        })
    }

    pub fn find(&self, key: &[u8]) -> Result<Option<IndexEntry>> {
        let (mut lo, mut hi) = (0, self.len);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let entry = self.entry(mid)?;
            match entry.key.as_slice().cmp(key) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Ok(Some(entry)),
            }
        }
        Ok(None)
    }

    /// All keys in sorted order.
    pub fn keys(&self) -> Result<Vec<Vec<u8>>> {
        (0..self.len).map(|i| self.entry(i).map(|e| e.key)).collect()
    }

    /// The group stored under `key`, opened from its shard.
    pub fn lookup(&self, key: &[u8]) -> Result<GroupDataset> {
        let entry = self.find(key)?.ok_or_else(|| Error::UnknownKey(display_key(key)))?;
        let path = self.dataset.shard_path(entry.shard);
        let file = open_shard(&path)?;
        Ok(GroupDataset::stored(entry.key, file, Arc::new(path), entry.offset, entry.count))
    }
}

/// Opens the dataset's index and returns the group stored under `key`.
///
/// Every call opens the index and the shard afresh, like one query against a
/// database-backed store.
pub fn lookup_group(dataset: &PartitionedDataset, key: &[u8]) -> Result<GroupDataset> {
    HierarchicalIndex::open(dataset)?.lookup(key)
}
