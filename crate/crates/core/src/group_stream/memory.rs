//! The in-memory backend: every group loaded into a key-value map.

use std::collections::BTreeMap;

use super::scanner::ShardScanner;
use super::GroupDataset;
use crate::error::{Error, Result};
use crate::partition::PartitionedDataset;

/// Bytes charged per stored payload on top of its length.
const PAYLOAD_OVERHEAD: u64 = 24;

/// Every group of a dataset, keyed for random access.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InMemoryDataset {
    pub groups: BTreeMap<Vec<u8>, Vec<Vec<u8>>>,
}

impl InMemoryDataset {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_examples(&self) -> u64 {
        self.groups.values().map(|v| v.len() as u64).sum()
    }

    pub fn get(&self, key: &[u8]) -> Option<&[Vec<u8>]> {
        self.groups.get(key).map(Vec::as_slice)
    }

    /// A group view over a copy of `key`'s payloads.
    pub fn group(&self, key: &[u8]) -> Option<GroupDataset> {
        self.groups
            .get(key)
            .map(|p| GroupDataset::from_payloads(key.to_vec(), p.clone()))
    }
}

/// Loads the whole dataset, failing fast once it cannot fit `budget_bytes`.
///
/// The shard files' total size is checked up front; the running size of the
/// loaded payloads is checked as loading proceeds.
pub fn load_in_memory(dataset: &PartitionedDataset, budget_bytes: u64) -> Result<InMemoryDataset> {
    let on_disk = dataset.total_bytes()?;
    if on_disk > budget_bytes {
        return Err(Error::MemoryBudgetExceeded {
            needed: on_disk,
            budget: budget_bytes,
        });
    }
    let mut out = InMemoryDataset::default();
    let mut used = 0u64;
    for shard in 0..dataset.num_shards() {
        for group in ShardScanner::open(dataset.shard_path(shard))? {
            let group = group?;
            used += group.key().len() as u64 + PAYLOAD_OVERHEAD;
            let mut payloads = Vec::with_capacity(group.num_examples() as usize);
            for payload in group.examples() {
                let payload = payload?;
                used += payload.len() as u64 + PAYLOAD_OVERHEAD;
                if used > budget_bytes {
                    return Err(Error::MemoryBudgetExceeded {
                        needed: used,
                        budget: budget_bytes,
                    });
                }
                payloads.push(payload);
            }
            if out.groups.insert(group.key().to_vec(), payloads).is_some() {
                return Err(Error::Corrupt(format!(
                    "group {:?} appears in more than one run",
                    String::from_utf8_lossy(group.key())
                )));
            }
        }
    }
    Ok(out)
}
