//! A single group's examples, read forward-only from its contiguous run.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::PathBuf;
use std::sync::Arc;

use crate::error::{display_key, Error, Result};
use crate::record_format::{split_keyed_example, RecordReader};

const GROUP_READ_BUFFER: usize = 16 * 1024;

/// Reads a shared file at an explicit position without touching the OS file
/// cursor, so many groups of one shard can be read independently.
pub(crate) struct PositionedReader {
    file: Arc<File>,
    pos: u64,
}

impl PositionedReader {
    pub(crate) fn new(file: Arc<File>, pos: u64) -> Self {
        PositionedReader { file, pos }
    }

    pub(crate) fn pos(&self) -> u64 {
        self.pos
    }

    pub(crate) fn set_pos(&mut self, pos: u64) {
        self.pos = pos;
    }

    pub(crate) fn file(&self) -> &File {
        &self.file
    }
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], pos: u64) -> io::Result<usize> {
    std::os::unix::fs::FileExt::read_at(file, buf, pos)
}

#[cfg(windows)]
fn read_at(file: &File, buf: &mut [u8], pos: u64) -> io::Result<usize> {
    std::os::windows::fs::FileExt::seek_read(file, buf, pos)
}

impl Read for PositionedReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = read_at(&self.file, buf, self.pos)?;
        self.pos += n as u64;
        Ok(n)
    }
}

#[derive(Clone)]
enum Source {
    Stored {
        file: Arc<File>,
        path: Arc<PathBuf>,
        offset: u64,
        count: u64,
    },
    Memory(Arc<Vec<Vec<u8>>>),
}

/// The examples of one group.
///
/// Stored groups only remember where their run starts; [`GroupDataset::examples`]
/// streams them one record at a time, so a group is never fully loaded.
#[derive(Clone)]
pub struct GroupDataset {
    key: Vec<u8>,
    source: Source,
}

impl std::fmt::Debug for GroupDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("GroupDataset");
        d.field("key", &display_key(&self.key));
        match &self.source {
            Source::Stored { path, offset, count, .. } => d
                .field("path", path)
                .field("offset", offset)
                .field("count", count),
            Source::Memory(items) => d.field("in_memory", &items.len()),
        };
        d.finish()
    }
}

impl GroupDataset {
    pub(crate) fn stored(key: Vec<u8>, file: Arc<File>, path: Arc<PathBuf>, offset: u64, count: u64) -> Self {
        GroupDataset {
            key,
            source: Source::Stored {
                file,
                path,
                offset,
                count,
            },
        }
    }

    /// A group backed by payloads already in memory.
    pub fn from_payloads(key: impl Into<Vec<u8>>, payloads: Vec<Vec<u8>>) -> Self {
        GroupDataset {
            key: key.into(),
            source: Source::Memory(Arc::new(payloads)),
        }
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    pub fn num_examples(&self) -> u64 {
        match &self.source {
            Source::Stored { count, .. } => *count,
            Source::Memory(items) => items.len() as u64,
        }
    }

    /// Byte offset of the group's first record in its shard, if stored.
    pub fn offset(&self) -> Option<u64> {
        match &self.source {
            Source::Stored { offset, .. } => Some(*offset),
            Source::Memory(_) => None,
        }
    }

    /// A fresh forward-only pass over the group's payloads.
    pub fn examples(&self) -> GroupExamples {
        let state = match &self.source {
            Source::Stored {
                file,
                path,
                offset,
                count,
            } => IterState::Stored {
                reader: RecordReader::with_offset(
                    BufReader::with_capacity(GROUP_READ_BUFFER, PositionedReader::new(Arc::clone(file), *offset)),
                    *offset,
                ),
                path: Arc::clone(path),
                remaining: *count,
                buf: Vec::new(),
            },
            Source::Memory(items) => IterState::Memory {
                items: Arc::clone(items),
                next: 0,
            },
        };
        GroupExamples {
            key: self.key.clone(),
            state,
            failed: false,
        }
    }
}

enum IterState {
    Stored {
        reader: RecordReader<BufReader<PositionedReader>>,
        path: Arc<PathBuf>,
        remaining: u64,
        buf: Vec<u8>,
    },
    Memory {
        items: Arc<Vec<Vec<u8>>>,
        next: usize,
    },
}

/// Iterator over one group's payloads; stops after the first error.
pub struct GroupExamples {
    key: Vec<u8>,
    state: IterState,
    failed: bool,
}

impl GroupExamples {
    fn read_stored(&mut self) -> Option<Result<Vec<u8>>> {
        let IterState::Stored {
            reader,
            path,
            remaining,
            buf,
        } = &mut self.state
        else {
            unreachable!()
        };
        if *remaining == 0 {
            return None;
        }
        match reader.read_record(buf) {
            Ok(true) => {}
            Ok(false) => {
                return Some(Err(Error::Corrupt(format!(
                    "{} ended inside group {:?}",
                    path.display(),
                    display_key(&self.key)
                ))))
            }
            Err(e) => return Some(Err(e)),
        }
        *remaining -= 1;
        match split_keyed_example(buf) {
            Ok((key, payload)) if key == self.key.as_slice() => Some(Ok(payload.to_vec())),
            Ok((key, _)) => Some(Err(Error::Corrupt(format!(
                "{}: expected group {:?}, found {:?}",
                path.display(),
                display_key(&self.key),
                display_key(key)
            )))),
            Err(e) => Some(Err(e)),
        }
    }
}

impl Iterator for GroupExamples {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = match &mut self.state {
            IterState::Memory { items, next } => {
                let item = items.get(*next).cloned().map(Ok);
                *next += 1;
                item
            }
            IterState::Stored { .. } => self.read_stored(),
        };
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

/// Cycles through a group's examples, yielding exactly `n` of them.
pub struct TakeRepeat {
    group: GroupDataset,
    current: GroupExamples,
    remaining: usize,
    yielded_this_pass: bool,
}

/// `n` examples of `group`, repeating from the start as often as needed.
pub fn take_repeat(group: &GroupDataset, n: usize) -> Result<TakeRepeat> {
    if group.num_examples() == 0 {
        return Err(Error::EmptyGroup(display_key(group.key())));
    }
    Ok(TakeRepeat {
        group: group.clone(),
        current: group.examples(),
        remaining: n,
        yielded_this_pass: false,
    })
}

impl Iterator for TakeRepeat {
    type Item = Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        loop {
            match self.current.next() {
                Some(Ok(item)) => {
                    self.remaining -= 1;
                    self.yielded_this_pass = true;
                    return Some(Ok(item));
                }
                Some(Err(e)) => {
                    self.remaining = 0;
                    return Some(Err(e));
                }
                None => {
                    if !self.yielded_this_pass {
                        self.remaining = 0;
                        return Some(Err(Error::EmptyGroup(display_key(self.group.key()))));
                    }
                    self.current = self.group.examples();
                    self.yielded_this_pass = false;
                }
            }
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (0, Some(self.remaining))
    }
}
