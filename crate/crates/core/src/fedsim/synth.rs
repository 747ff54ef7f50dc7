//! Synthetic heterogeneous next-token task.
//!
//! A shared base bigram matrix has rows drawn from a flat Dirichlet; each
//! client's row `r` is drawn from `Dirichlet(alpha · base_r)`, so `alpha`
//! controls how far clients stray from the base (small alpha, far). Client
//! text is sampled from the client's matrix using words that the hashed
//! tokenizer maps back to the intended token ids.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::word_id;
use crate::error::{Error, Result};
use crate::hashing::stream_rng;
use crate::partition::{
    partition_corpus, sample_dirichlet, spill_root, InputFormat, PartitionConfig, PartitionedDataset, Strategy,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_clients: usize,
    /// Vocabulary size including the pad id 0.
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_examples")]
    pub examples_per_client: usize,
    #[serde(default = "default_words")]
    pub words_per_example: usize,
    /// Index of the first client; a disjoint range with the same seed gives
    /// held-out clients of the same task.
    #[serde(default)]
    pub first_client: usize,
    #[serde(default = "default_shards")]
    pub num_shards: usize,
}

fn default_vocab() -> usize {
    64
}

fn default_examples() -> usize {
    16
}

fn default_words() -> usize {
    32
}

fn default_shards() -> usize {
    4
}

impl SynthConfig {
    pub fn new(num_clients: usize, vocab: usize, alpha: f64, seed: u64) -> Self {
        SynthConfig {
            num_clients,
            vocab,
            alpha,
            seed,
            examples_per_client: default_examples(),
            words_per_example: default_words(),
            first_client: 0,
            num_shards: default_shards(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::InvalidConfig("vocab must be >= 2".into()));
        }
        if self.num_clients < 2 {
            return Err(Error::InvalidConfig("num_clients must be >= 2".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.examples_per_client == 0 || self.words_per_example == 0 || self.num_shards == 0 {
            return Err(Error::InvalidConfig(
                "examples_per_client, words_per_example and num_shards must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-stochastic matrix over the non-pad tokens `1..vocab`; row `i` and
/// column `j` stand for token `i + 1` and `j + 1`.
pub type Transitions = Vec<Vec<f64>>;

pub fn base_matrix(config: &SynthConfig) -> Transitions {
    let k = config.vocab - 1;
    let mut rng = stream_rng(config.seed, "synth-base", b"");
    (0..k).map(|_| sample_dirichlet(&vec![1.0; k], &mut rng)).collect()
}

pub fn client_matrix(config: &SynthConfig, base: &Transitions, client: usize) -> Transitions {
    let mut rng = stream_rng(config.seed, "synth-client", &(client as u64).to_le_bytes());
    base.iter()
        .map(|row| {
            let conc: Vec<f64> = row.iter().map(|p| (config.alpha * p).max(f64::MIN_POSITIVE)).collect();
            sample_dirichlet(&conc, &mut rng)
        })
        .collect()
}

/// Total-variation distance averaged over rows.
pub fn mean_row_tv(a: &Transitions, b: &Transitions) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0)
        .sum();
    total / a.len() as f64
}

/// One word per non-pad token id, found by searching short strings until
/// every id has a preimage under the hashed tokenizer.
pub fn token_words(vocab: usize) -> Vec<String> {
    let mut words: Vec<Option<String>> = vec![None; vocab];
    let mut missing = vocab - 1;
    let mut n = 0u64;
    while missing > 0 {
        let w = format!("w{n}");
        let id = word_id(&w, vocab) as usize;
        if words[id].is_none() {
            words[id] = Some(w);
            missing -= 1;
        }
        n += 1;
    }
    words.into_iter().skip(1).map(|w| w.expect("every id found")).collect()
}

pub fn client_key(client: usize) -> String {
    format!("client{client:06}")
}

fn sample_row<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Writes the task as JSON lines `{"client": ..., "text": ...}`.
pub fn write_synthetic_corpus(config: &SynthConfig, out: &mut impl Write) -> Result<()> {
    config.validate()?;
    let base = base_matrix(config);
    let words = token_words(config.vocab);
    let k = config.vocab - 1;
    for client in config.first_client..config.first_client + config.num_clients {
        let m = client_matrix(config, &base, client);
        let mut rng = stream_rng(config.seed, "synth-text", &(client as u64).to_le_bytes());
        let key = client_key(client);
        for _ in 0..config.examples_per_client {
            let mut tok = rng.random_range(0..k);
            let mut text = String::new();
            for i in 0..config.words_per_example {
                if i > 0 {
                    text.push(' ');
                    tok = sample_row(&m[tok], &mut rng);
                }
                text.push_str(&words[tok]);
            }
            serde_json::to_writer(&mut *out, &serde_json::json!({"client": key, "text": text}))?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Generates the task and partitions it by client into `output_dir`.
pub fn make_synthetic_task(config: &SynthConfig, output_dir: &Path) -> Result<PartitionedDataset> {
    config.validate()?;
    let scratch = tempfile::Builder::new()
        .prefix("grouper-synth-")
        .tempdir_in(spill_root())
        .map_err(|e| Error::io_at("creating synthetic scratch dir", e))?;
    let corpus = scratch.path().join("corpus.jsonl");
    let file = File::create(&corpus).map_err(|e| Error::io_at(format!("creating {}", corpus.display()), e))?;
    let mut out = BufWriter::new(file);
    write_synthetic_corpus(config, &mut out)?;
    out.flush()?;
    drop(out);
    let partition = PartitionConfig {
        seed: config.seed,
        ..PartitionConfig::new(
            Strategy::ByFeature {
                feature: "client".into(),
            },
            config.num_shards,
        )
    };
    partition_corpus(&corpus, InputFormat::Jsonl, &partition, output_dir)
}
