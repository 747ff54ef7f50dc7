//! Fine-tuning evaluation: each client's loss before and after local SGD.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::model::Model;
use super::train::{client_batches, PreparedClient, TrainConfig};
use crate::error::{display_key, Error, Result};
use crate::group_stream::build_group_stream;
use crate::partition::PartitionedDataset;
use crate::stats::QuantileSummary;

fn mean_loss<M: Model>(model: &M, params: &[f64], batches: &[M::Batch]) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += model.loss(params, b)?;
    }
    Ok(total / batches.len() as f64)
}

/// Mean batch loss of `params`, then after `epochs` SGD passes over the same
/// batches in order, the mean batch loss of the fine-tuned model.
pub fn personalize_and_eval<M: Model>(
    model: &M,
    params: &[f64],
    batches: &[M::Batch],
    eta_c: f64,
    epochs: usize,
    client_key: &[u8],
) -> Result<(f64, f64)> {
    if batches.is_empty() {
        return Err(Error::EmptyInput);
    }
    let diverged = || Error::Divergence {
        round: 0,
        client: display_key(client_key),
    };
    let pre = mean_loss(model, params, batches)?;
    if !pre.is_finite() {
        return Err(diverged());
    }
    if epochs == 0 {
        return Ok((pre, pre));
    }
    let mut x = params.to_vec();
    let mut grad = vec![0.0; x.len()];
    for _ in 0..epochs {
        for b in batches {
            model.loss_grad(&x, b, &mut grad)?;
            for (xi, gi) in x.iter_mut().zip(&grad) {
                *xi -= eta_c * gi;
            }
        }
    }
    let post = mean_loss(model, &x, batches)?;
    if !post.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(diverged());
    }
    Ok((pre, post))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonalizationRow {
    pub client_key: String,
    pub pre_loss: f64,
    pub post_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonalizationSummary {
    pub num_clients: usize,
    pub pre_loss: QuantileSummary,
    pub post_loss: QuantileSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizationReport {
    /// Sorted by client key.
    pub rows: Vec<PersonalizationRow>,
}

impl PersonalizationReport {
    pub fn summary(&self) -> Result<PersonalizationSummary> {
        let pre: Vec<f64> = self.rows.iter().map(|r| r.pre_loss).collect();
        let post: Vec<f64> = self.rows.iter().map(|r| r.post_loss).collect();
        Ok(PersonalizationSummary {
            num_clients: self.rows.len(),
            pre_loss: QuantileSummary::of(&pre)?,
            post_loss: QuantileSummary::of(&post)?,
        })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["client_key", "pre_loss", "post_loss"])?;
        for r in &self.rows {
            w.write_record([r.client_key.clone(), r.pre_loss.to_string(), r.post_loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Personalizes every client of `dataset` in key order.
///
/// Each client uses the same τ · B sequences as in training; `eta_c` is the
/// fine-tuning rate (the tuned FedAvg client rate by convention).
pub fn personalize_dataset(
    dataset: &PartitionedDataset,
    params: &[f64],
    config: &TrainConfig,
    eta_c: f64,
    epochs: usize,
) -> Result<PersonalizationReport> {
    config.validate()?;
    let model = config.model();
    if params.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: params.len(),
        });
    }
    let text_field = config.text_field.as_deref().or(dataset.default_text_field());
    let mut clients = Vec::new();
    for group in build_group_stream(dataset, 1, 0, config.seed)? {
        let group = group?;
        match client_batches(&group, text_field, config.vocab_size, config.seq_len, config.tau, config.batch_size)? {
            Some(batches) => clients.push(PreparedClient {
                key: group.key().to_vec(),
                batches,
            }),
            None => warn!("skipping client {:?}: no tokens", display_key(group.key())),
        }
    }
    clients.sort_by(|a, b| a.key.cmp(&b.key));
    let rows = clients
        .par_iter()
        .map(|c| {
            let (pre_loss, post_loss) = personalize_and_eval(&model, params, &c.batches, eta_c, epochs, &c.key)?;
            Ok(PersonalizationRow {
                client_key: display_key(&c.key),
                pre_loss,
                post_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PersonalizationReport { rows })
}
