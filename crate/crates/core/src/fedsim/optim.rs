//! Client updates, aggregation, server optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// τ local SGD steps; the update is the net parameter change.
    Fedavg,
    /// τ gradients at the broadcast model, averaged.
    Fedsgd,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedsgd => "fedsgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_key: Vec<u8>,
    /// `x^t − x_c^t` for FedAvg, the mean gradient for FedSGD.
    pub delta: Vec<f64>,
    /// Mean of the per-batch losses, each at the model in force for that batch.
    pub mean_loss: f64,
    pub num_batches: usize,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One client's contribution to a round.
///
/// The FedAvg delta is accumulated as the sum of the applied steps
/// `eta_c · g_i` rather than as `x^t − x_final`. The two agree exactly in real
/// arithmetic; the sum form makes τ = 1 give `eta_c · Δ_fedsgd` bit for bit.
pub fn client_update<M: Model>(
    model: &M,
    params: &[f64],
    batches: &[M::Batch],
    eta_c: f64,
    algorithm: Algorithm,
    round: usize,
    client_key: &[u8],
) -> Result<ClientUpdate> {
    if batches.is_empty() {
        return Err(Error::InvalidConfig("a client update needs at least one batch".into()));
    }
    if params.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: params.len(),
        });
    }
    let diverged = || Error::Divergence {
        round,
        client: String::from_utf8_lossy(client_key).into_owned(),
    };
    let dim = model.dim();
    let mut grad = vec![0.0; dim];
    let mut delta = vec![0.0; dim];
    let mut loss_sum = 0.0;
    match algorithm {
        Algorithm::Fedavg => {
            let mut x = params.to_vec();
            for batch in batches {
                let loss = model.loss_grad(&x, batch, &mut grad)?;
                if !loss.is_finite() || !all_finite(&grad) {
                    return Err(diverged());
                }
                loss_sum += loss;
                for ((xi, di), gi) in x.iter_mut().zip(&mut delta).zip(&grad) {
                    let step = eta_c * gi;
                    *xi -= step;
                    *di += step;
                }
            }
        }
        Algorithm::Fedsgd => {
            for batch in batches {
                let loss = model.loss_grad(params, batch, &mut grad)?;
                if !loss.is_finite() || !all_finite(&grad) {
                    return Err(diverged());
                }
                loss_sum += loss;
                for (di, gi) in delta.iter_mut().zip(&grad) {
                    *di += gi;
                }
            }
            let tau = batches.len() as f64;
            for d in &mut delta {
                *d /= tau;
            }
        }
    }
    if !all_finite(&delta) {
        return Err(diverged());
    }
    Ok(ClientUpdate {
        client_key: client_key.to_vec(),
        delta,
        mean_loss: loss_sum / batches.len() as f64,
        num_batches: batches.len(),
    })
}

/// Uniform mean of the client deltas, summed in ascending client-key order
/// so the result does not depend on the order updates arrived in.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let first = updates.first().ok_or(Error::EmptyInput)?;
    let dim = first.delta.len();
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by(|a, b| a.client_key.cmp(&b.client_key));
    let mut sum = vec![0.0; dim];
    for u in order {
        if u.delta.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: u.delta.len(),
            });
        }
        for (s, d) in sum.iter_mut().zip(&u.delta) {
            *s += d;
        }
    }
    let n = updates.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    Ok(sum)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    /// Bias-corrected Adam step treating `delta` as the gradient.
    pub fn step(&mut self, params: &mut [f64], delta: &[f64], lr: f64) -> Result<()> {
        check_server_inputs(params, delta, lr)?;
        if self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                found: params.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let d = delta[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * d;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * d * d;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        if !all_finite(params) {
            return Err(Error::NonFinite("server parameters"));
        }
        Ok(())
    }
}

fn check_server_inputs(params: &[f64], delta: &[f64], lr: f64) -> Result<()> {
    if params.len() != delta.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            found: delta.len(),
        });
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Domain(format!("server learning rate must be finite and >= 0, got {lr}")));
    }
    if !all_finite(delta) {
        return Err(Error::NonFinite("aggregated update"));
    }
    if !all_finite(params) {
        return Err(Error::NonFinite("server parameters"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerOptimizer {
    Adam(AdamState),
    /// `x ← x − lr·Δ`.
    Sgd,
}

impl ServerOptimizer {
    pub fn new(kind: ServerKind, dim: usize) -> Self {
        match kind {
            ServerKind::Adam => ServerOptimizer::Adam(AdamState::new(dim)),
            ServerKind::Sgd => ServerOptimizer::Sgd,
        }
    }

    pub fn step(&mut self, params: &mut [f64], delta: &[f64], lr: f64) -> Result<()> {
        match self {
            ServerOptimizer::Adam(state) => state.step(params, delta, lr),
            ServerOptimizer::Sgd => {
                check_server_inputs(params, delta, lr)?;
                for (x, d) in params.iter_mut().zip(delta) {
                    *x -= lr * d;
                }
                if !all_finite(params) {
                    return Err(Error::NonFinite("server parameters"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    WarmupExponential,
    WarmupCosine,
}

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;
/// Final-round multiplier of the exponential decay.
pub const EXPONENTIAL_FLOOR: f64 = 1e-3;

fn default_warmup_fraction() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub eta_max: f64,
    pub total_rounds: usize,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, eta_max: f64, total_rounds: usize) -> Self {
        ScheduleSpec {
            kind,
            eta_max,
            total_rounds,
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta_max must be positive, got {}", self.eta_max)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `ceil(warmup_fraction · total_rounds)`, computed so that products that
    /// are integers in exact arithmetic (0.1 · 30) do not round up.
    pub fn warmup_rounds(&self) -> usize {
        let x = self.warmup_fraction * self.total_rounds as f64;
        let nearest = x.round();
        if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            x.ceil() as usize
        }
    }
}

/// Learning rate of `round` (0-based).
///
/// Warmup variants rise linearly from 0 over `w` rounds, reach `eta_max` at
/// round `w`, then decay: cosine to exactly 0 at the final round, exponential
/// to `eta_max · 1e-3` at the final round.
pub fn lr_schedule(spec: &ScheduleSpec, round: usize) -> Result<f64> {
    if round >= spec.total_rounds {
        return Err(Error::ScheduleOutOfRange {
            round,
            total: spec.total_rounds,
        });
    }
    let eta = spec.eta_max;
    if spec.kind == ScheduleKind::Constant {
        return Ok(eta);
    }
    let w = spec.warmup_rounds();
    if round < w {
        return Ok(eta * round as f64 / w as f64);
    }
    let span = spec.total_rounds as i64 - 1 - w as i64;
    if span <= 0 {
        return Ok(eta);
    }
    let progress = (round - w) as f64 / span as f64;
    Ok(match spec.kind {
        ScheduleKind::WarmupCosine => eta * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        ScheduleKind::WarmupExponential => eta * EXPONENTIAL_FLOOR.powf(progress),
        ScheduleKind::Constant => unreachable!(),
    })
}
