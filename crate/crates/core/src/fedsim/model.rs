//! Reference models with analytic gradients.

use crate::error::{Error, Result};

use super::text::PAD;

/// A differentiable loss over a flat parameter vector.
pub trait Model: Sync {
    type Batch: Sync + Send + Clone;

    fn dim(&self) -> usize;

    /// Mean loss over `batch`; writes its gradient into `grad`.
    fn loss_grad(&self, params: &[f64], batch: &Self::Batch, grad: &mut [f64]) -> Result<f64>;

    fn loss(&self, params: &[f64], batch: &Self::Batch) -> Result<f64> {
        let mut scratch = vec![0.0; self.dim()];
        self.loss_grad(params, batch, &mut scratch)
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Next-token softmax model over a vocabulary of `vocab` ids.
///
/// Parameter row `r` (of `vocab` entries, row-major) holds the logits of the
/// token following token `r`. Positions whose target is [`PAD`] are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BigramLm {
    pub vocab: usize,
}

pub type SequenceBatch = Vec<Vec<u32>>;

impl BigramLm {
    pub fn new(vocab: usize) -> Self {
        assert!(vocab >= 2, "vocab must be >= 2");
        BigramLm { vocab }
    }

    /// (current, target) pairs of every non-pad prediction position, sorted.
    fn pairs(&self, batch: &SequenceBatch) -> Result<Vec<(u32, u32)>> {
        let mut pairs = Vec::new();
        for seq in batch {
            for w in seq.windows(2) {
                if w[1] == PAD {
                    continue;
                }
                if w[0] as usize >= self.vocab || w[1] as usize >= self.vocab {
                    return Err(Error::Domain(format!(
                        "token id {} outside vocabulary of {}",
                        w[0].max(w[1]),
                        self.vocab
                    )));
                }
                pairs.push((w[0], w[1]));
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoPredictions);
        }
        pairs.sort_unstable();
        Ok(pairs)
    }
}

impl Model for BigramLm {
    type Batch = SequenceBatch;

    fn dim(&self) -> usize {
        self.vocab * self.vocab
    }

    fn loss_grad(&self, params: &[f64], batch: &SequenceBatch, grad: &mut [f64]) -> Result<f64> {
        check_dim(self.dim(), params.len())?;
        check_dim(self.dim(), grad.len())?;
        let pairs = self.pairs(batch)?;
        let n = pairs.len() as f64;
        grad.fill(0.0);
        let v = self.vocab;
        let mut probs = vec![0.0; v];
        let mut total = 0.0;
        let mut i = 0;
        while i < pairs.len() {
            let row = pairs[i].0 as usize;
            let mut j = i;
            while j < pairs.len() && pairs[j].0 as usize == row {
                j += 1;
            }
            let logits = &params[row * v..(row + 1) * v];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &l) in probs.iter_mut().zip(logits) {
                *p = (l - max).exp();
                z += *p;
            }
            let log_z = max + z.ln();
            for p in &mut probs {
                *p /= z;
            }
            let count = (j - i) as f64;
            let g = &mut grad[row * v..(row + 1) * v];
            for (gk, &pk) in g.iter_mut().zip(&probs) {
                *gk = count * pk / n;
            }
            for &(_, target) in &pairs[i..j] {
                total += log_z - logits[target as usize];
                g[target as usize] -= 1.0 / n;
            }
            i = j;
        }
        Ok(total / n)
    }
}

/// Least squares `½ (w·x − y)²`, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearRegression {
    pub features: usize,
}

pub type RegressionBatch = Vec<(Vec<f64>, f64)>;

impl Model for LinearRegression {
    type Batch = RegressionBatch;

    fn dim(&self) -> usize {
        self.features
    }

    fn loss_grad(&self, params: &[f64], batch: &RegressionBatch, grad: &mut [f64]) -> Result<f64> {
        check_dim(self.features, params.len())?;
        check_dim(self.features, grad.len())?;
        if batch.is_empty() {
            return Err(Error::NoPredictions);
        }
        grad.fill(0.0);
        let n = batch.len() as f64;
        let mut total = 0.0;
        for (x, y) in batch {
            check_dim(self.features, x.len())?;
            let r = params.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() - y;
            total += 0.5 * r * r;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi / n;
            }
        }
        Ok(total / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::stream_rng;
    use rand::Rng;

    /// Loss computed straight from the definition, one position at a time.
    fn naive_bigram_loss(v: usize, params: &[f64], batch: &SequenceBatch) -> f64 {
        let mut total = 0.0;
        let mut n = 0.0;
        for seq in batch {
            for j in 0..seq.len() - 1 {
                let (c, t) = (seq[j] as usize, seq[j + 1] as usize);
                if t == 0 {
                    continue;
                }
                let row = &params[c * v..(c + 1) * v];
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                total -= (row[t].exp() / z).ln();
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        for v in [2, 7, 64] {
            let m = BigramLm::new(v);
            let batch = vec![vec![1, 1, 0], vec![(v - 1) as u32, 1, 1, 1]];
            let loss = m.loss(&vec![0.0; v * v], &batch).unwrap();
            assert!((loss - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_loss() {
        let mut rng = stream_rng(4, "bigram-naive", b"");
        let v = 9;
        let m = BigramLm::new(v);
        let params: Vec<f64> = (0..v * v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let batch: SequenceBatch = (0..3)
            .map(|_| (0..6).map(|_| rng.random_range(1..v as u32)).chain([0, 0]).collect())
            .collect();
        let a = m.loss(&params, &batch).unwrap();
        let b = naive_bigram_loss(v, &params, &batch);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = 7;
        let m = BigramLm::new(v);
        let mut rng = stream_rng(5, "bigram-fd", b"");
        let params: Vec<f64> = (0..v * v).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = vec![vec![1, 3, 3, 6, 2]];
        let mut grad = vec![0.0; v * v];
        m.loss_grad(&params, &batch, &mut grad).unwrap();
        let h = 1e-5;
        for k in 0..v * v {
            let mut p = params.clone();
            p[k] += h;
            let up = m.loss(&p, &batch).unwrap();
            p[k] -= 2.0 * h;
            let down = m.loss(&p, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[k].abs()).max(1e-8);
            assert!((fd - grad[k]).abs() / scale < 1e-6 || (fd - grad[k]).abs() < 1e-10, "k {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn all_pad_batch_has_no_predictions() {
        let m = BigramLm::new(4);
        assert!(matches!(
            m.loss(&[0.0; 16], &vec![vec![2, 0, 0]]),
            Err(Error::NoPredictions)
        ));
        assert!(matches!(m.loss(&[0.0; 15], &vec![vec![2, 1]]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.loss(&[0.0; 16], &vec![vec![2, 9]]), Err(Error::Domain(_))));
    }

    #[test]
    fn regression_gradient() {
        let m = LinearRegression { features: 3 };
        let batch = vec![(vec![1.0, 2.0, -1.0], 0.5), (vec![0.0, 1.0, 3.0], -2.0)];
        let w = [0.3, -0.2, 0.7];
        let mut g = vec![0.0; 3];
        let loss = m.loss_grad(&w, &batch, &mut g).unwrap();
        let r1: f64 = 0.3 - 0.4 - 0.7 - 0.5;
        let r2: f64 = -0.2 + 2.1 + 2.0;
        assert!((loss - (r1 * r1 + r2 * r2) / 4.0).abs() < 1e-12);
        assert!((g[2] - (r1 * -1.0 + r2 * 3.0) / 2.0).abs() < 1e-12);
    }
}
