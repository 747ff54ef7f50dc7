//! Per-label Dirichlet group assignment.
//!
//! Each label owns a probability vector over groups drawn from
//! `Dirichlet(alpha * 1_G)`, and each example draws its group from the
//! vector of its label. Both draws are seeded from data the example carries
//! (label and index), so assignment stays embarrassingly parallel.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub num_groups: u32,
    pub alpha: f64,
    pub seed: u64,
}

impl DirichletSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 {
            return Err(Error::InvalidConfig("dirichlet num_groups must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dirichlet alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Natural log of a `Gamma(shape, 1)` draw (Marsaglia and Tsang).
///
/// Shapes below one use the boost `Gamma(a) = Gamma(a + 1) * U^(1/a)`,
/// carried out in log space so tiny shapes do not underflow to zero.
pub fn ln_gamma_sample<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return ln_gamma_sample(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = 1.0 - rng.random::<f64>();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return (d * v).ln();
        }
    }
}

/// Draws from `Dirichlet(concentrations)` by normalising gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentrations: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = concentrations.iter().map(|&a| ln_gamma_sample(a, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Group probability vector of `label`, identical for every call with the
/// same `(spec.seed, label)`.
pub fn dirichlet_group_probs(label: &[u8], spec: &DirichletSpec) -> Vec<f64> {
    if spec.num_groups == 1 {
        return vec![1.0];
    }
    let mut rng = stream_rng(spec.seed, "dirichlet-label", label);
    sample_dirichlet(&vec![spec.alpha; spec.num_groups as usize], &mut rng)
}

/// Index of the category selected by uniform draw `u` in `[0, 1)`.
pub(crate) fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` beyond the cumulative sum; fall back to the last
    // category that has mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Group of example `example_index`, drawn from the precomputed `probs` of its label.
pub fn key_dirichlet_with_probs(example_index: u64, probs: &[f64], seed: u64) -> Vec<u8> {
    let mut rng = stream_rng(seed, "dirichlet-example", &example_index.to_le_bytes());
    let u: f64 = rng.random();
    sample_categorical(probs, u).to_string().into_bytes()
}

pub fn key_dirichlet(example_index: u64, label: &[u8], spec: &DirichletSpec) -> Vec<u8> {
    let probs = dirichlet_group_probs(label, spec);
    key_dirichlet_with_probs(example_index, &probs, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(num_groups: u32, alpha: f64) -> DirichletSpec {
        DirichletSpec {
            num_groups,
            alpha,
            seed: 11,
        }
    }

    #[test]
    fn single_group_is_certain() {
        assert_eq!(dirichlet_group_probs(b"x", &spec(1, 0.5)), vec![1.0]);
        for i in 0..100 {
            assert_eq!(key_dirichlet(i, b"x", &spec(1, 0.5)), b"0");
        }
    }

    #[test]
    fn probs_are_deterministic_and_normalised() {
        for alpha in [0.01, 0.1, 1.0, 10.0, 1000.0] {
            for label in [&b""[..], b"cat", b"dog"] {
                let s = spec(37, alpha);
                let a = dirichlet_group_probs(label, &s);
                assert_eq!(a, dirichlet_group_probs(label, &s));
                assert!(a.iter().all(|&p| p >= 0.0));
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn labels_get_different_vectors() {
        let s = spec(10, 1.0);
        assert_ne!(dirichlet_group_probs(b"a", &s), dirichlet_group_probs(b"b", &s));
    }

    #[test]
    fn large_alpha_concentrates_at_uniform() {
        // Monte Carlo: average over labels of max |p_g - 1/G|.
        let s = spec(10, 1000.0);
        let mut total = 0.0;
        for l in 0..1000u32 {
            let p = dirichlet_group_probs(&l.to_le_bytes(), &s);
            total += p.iter().map(|x| (x - 0.1).abs()).fold(0.0, f64::max);
        }
        assert!(total / 1000.0 < 0.02, "mean max deviation {}", total / 1000.0);
    }

    #[test]
    fn gamma_moments() {
        // Mean and variance of Gamma(k, 1) are both k.
        let mut rng = stream_rng(3, "gamma-test", b"");
        for shape in [0.3, 1.0, 4.5] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| ln_gamma_sample(shape, &mut rng).exp()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 0.02 * shape.max(1.0), "shape {shape} mean {mean}");
            assert!((var - shape).abs() < 0.05 * shape.max(1.0), "shape {shape} var {var}");
        }
    }

    #[test]
    fn empirical_frequencies_follow_label_vector() {
        let s = spec(8, 0.5);
        let probs = dirichlet_group_probs(b"only", &s);
        let n = 100_000u64;
        let mut counts = vec![0u64; 8];
        for i in 0..n {
            let key = key_dirichlet_with_probs(i, &probs, s.seed);
            let g: usize = std::str::from_utf8(&key).unwrap().parse().unwrap();
            counts[g] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.0), 0);
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.5), 1);
        assert_eq!(sample_categorical(&[0.3, 0.7, 0.0], 0.9999999999999999), 1);
    }
}
