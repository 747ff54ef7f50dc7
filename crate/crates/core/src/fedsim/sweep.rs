//! Serial learning-rate grid search selected by mean training loss.

use std::io::Write;

use log::info;
use serde::Serialize;

use super::optim::Algorithm;
use super::train::{run_training, TrainConfig};
use crate::error::Result;
use crate::partition::PartitionedDataset;

/// `{1e-4, 1e-3, 1e-2, 1e-1, 1e0}`.
pub fn default_lr_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1e0]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub client_lr: f64,
    pub server_lr: f64,
    /// Mean over rounds of the per-round training loss; infinite if the run diverged.
    pub mean_train_loss: f64,
    pub diverged: bool,
}

/// Trains once per (client_lr, server_lr) pair, in grid order.
///
/// FedSGD never applies the client rate, so only `base.client_lr` is tried
/// for it.
pub fn run_sweep(
    dataset: &PartitionedDataset,
    base: &TrainConfig,
    client_lrs: &[f64],
    server_lrs: &[f64],
) -> Result<Vec<SweepPoint>> {
    let single = [base.client_lr];
    let client_lrs = if base.algorithm == Algorithm::Fedsgd { &single[..] } else { client_lrs };
    let mut points = Vec::new();
    for &client_lr in client_lrs {
        for &server_lr in server_lrs {
            let config = TrainConfig {
                client_lr,
                server_lr,
                ..base.clone()
            };
            let run = run_training(dataset, &config)?;
            let diverged = run.error.is_some();
            let mean_train_loss = if diverged || run.metrics.is_empty() {
                f64::INFINITY
            } else {
                run.metrics.iter().map(|m| m.mean_loss).sum::<f64>() / run.metrics.len() as f64
            };
            info!("sweep client_lr={client_lr} server_lr={server_lr}: {mean_train_loss}");
            points.push(SweepPoint {
                client_lr,
                server_lr,
                mean_train_loss,
                diverged,
            });
        }
    }
    Ok(points)
}

/// Lowest mean training loss; the earliest grid point wins ties.
pub fn best_point(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points
        .iter()
        .filter(|p| p.mean_train_loss.is_finite())
        .fold(None, |best: Option<&SweepPoint>, p| match best {
            Some(b) if b.mean_train_loss <= p.mean_train_loss => Some(b),
            _ => Some(p),
        })
}

pub fn write_sweep_csv(points: &[SweepPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["client_lr", "server_lr", "mean_train_loss", "diverged"])?;
    for p in points {
        w.write_record([
            p.client_lr.to_string(),
            p.server_lr.to_string(),
            p.mean_train_loss.to_string(),
            p.diverged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(c: f64, loss: f64) -> SweepPoint {
        SweepPoint {
            client_lr: c,
            server_lr: 1.0,
            mean_train_loss: loss,
            diverged: !loss.is_finite(),
        }
    }

    #[test]
    fn best_skips_divergent_and_keeps_first_tie() {
        let pts = vec![point(1.0, f64::INFINITY), point(2.0, 0.5), point(3.0, 0.5), point(4.0, 0.7)];
        assert_eq!(best_point(&pts).unwrap().client_lr, 2.0);
        assert!(best_point(&[point(1.0, f64::INFINITY)]).is_none());
    }
}
