//! Sequential group discovery over one shard.
//!
//! The scanner reads each frame's header and key and skips the payload, so
//! finding group boundaries costs O(one key) memory. Payload checksums are
//! verified later, when a group's examples are actually read.

use std::fs::File;
use std::io::{self, BufReader, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::group::{GroupDataset, PositionedReader};
use crate::error::{display_key, Error, Result};
use crate::record_format::{parse_header, read_fully, FOOTER_LEN, HEADER_LEN};

const SCAN_BUFFER: usize = 64 * 1024;

impl Seek for PositionedReader {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(p) => Some(p),
            SeekFrom::Current(d) => self.pos().checked_add_signed(d),
            SeekFrom::End(d) => self.file().metadata()?.len().checked_add_signed(d),
        };
        let target =
            target.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "seek to a negative position"))?;
        self.set_pos(target);
        Ok(target)
    }
}

pub(crate) fn open_shard(path: &Path) -> Result<Arc<File>> {
    File::open(path)
        .map(Arc::new)
        .map_err(|e| Error::io_at(format!("opening shard {}", path.display()), e))
}

struct Entry {
    offset: u64,
}

pub(crate) struct ShardScanner {
    path: Arc<PathBuf>,
    file: Arc<File>,
    reader: BufReader<PositionedReader>,
    offset: u64,
    /// Key and offset of a record read past the end of the previous group.
    peeked: Option<(Vec<u8>, u64)>,
    key_buf: Vec<u8>,
    failed: bool,
}

impl ShardScanner {
    pub(crate) fn open(path: PathBuf) -> Result<Self> {
        let file = open_shard(&path)?;
        Ok(ShardScanner {
            reader: BufReader::with_capacity(SCAN_BUFFER, PositionedReader::new(Arc::clone(&file), 0)),
            path: Arc::new(path),
            file,
            offset: 0,
            peeked: None,
            key_buf: Vec::new(),
            failed: false,
        })
    }

    fn corrupt(&self, offset: u64, what: &str) -> Error {
        Error::Corrupt(format!("{} at offset {offset}: {what}", self.path.display()))
    }

    /// Reads the next frame's key into `key_buf` and skips its payload.
    fn read_entry(&mut self) -> Result<Option<Entry>> {
        let start = self.offset;
        let mut header = [0u8; HEADER_LEN];
        let got = read_fully(&mut self.reader, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < HEADER_LEN {
            return Err(Error::TruncatedFrame { offset: start });
        }
        let len = parse_header(&header, start)?;
        if len < 5 {
            return Err(self.corrupt(start, "record too short for a keyed example"));
        }
        let mut key_len = [0u8; 4];
        if read_fully(&mut self.reader, &mut key_len)? < 4 {
            return Err(Error::TruncatedFrame { offset: start });
        }
        let key_len = u32::from_le_bytes(key_len) as u64;
        if key_len == 0 || key_len + 4 > len {
            return Err(self.corrupt(start, "bad key length"));
        }
        self.key_buf.resize(key_len as usize, 0);
        if read_fully(&mut self.reader, &mut self.key_buf)? < key_len as usize {
            return Err(Error::TruncatedFrame { offset: start });
        }
        let skip = len - 4 - key_len + FOOTER_LEN as u64;
        self.reader.seek_relative(skip as i64)?;
        self.offset = start + HEADER_LEN as u64 + len + FOOTER_LEN as u64;
        Ok(Some(Entry { offset: start }))
    }

    fn scan_group(&mut self) -> Result<Option<GroupDataset>> {
        let (key, offset) = match self.peeked.take() {
            Some(p) => p,
            None => match self.read_entry()? {
                Some(e) => (self.key_buf.clone(), e.offset),
                None => return Ok(None),
            },
        };
        let mut count = 1u64;
        while let Some(entry) = self.read_entry()? {
            match self.key_buf.as_slice().cmp(key.as_slice()) {
                std::cmp::Ordering::Equal => count += 1,
                std::cmp::Ordering::Greater => {
                    self.peeked = Some((self.key_buf.clone(), entry.offset));
                    break;
                }
                std::cmp::Ordering::Less => {
                    return Err(self.corrupt(
                        entry.offset,
                        &format!(
                            "key {:?} follows {:?}; shard is not sorted",
                            display_key(&self.key_buf),
                            display_key(&key)
                        ),
                    ))
                }
            }
        }
        Ok(Some(GroupDataset::stored(
            key,
            Arc::clone(&self.file),
            Arc::clone(&self.path),
            offset,
            count,
        )))
    }

    pub(crate) fn shard_path(&self) -> &Path {
        &self.path
    }
}

impl Iterator for ShardScanner {
    type Item = Result<GroupDataset>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.scan_group().transpose();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}
