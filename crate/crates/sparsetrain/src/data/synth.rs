//! Madelon-style synthetic classification generator.
//!
//! Class centroids sit at distinct hypercube vertices of side
//! `2·class_sep` in the informative subspace; informative coordinates add
//! unit Gaussian noise, redundant features are random linear combinations
//! of informative ones, remaining features are pure Gaussian probes. A
//! fraction of labels is reassigned and feature columns are permuted.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::{flip_labels, RawData};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::seeds::Rng;

#[derive(Clone, Debug)]
pub struct SynthParams {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_classes: usize,
    pub class_sep: f64,
    pub flip_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_samples: 100,
            n_features: 20,
            n_informative: 2,
            n_redundant: 2,
            n_classes: 2,
            class_sep: 1.0,
            flip_fraction: 0.01,
        }
    }
}

impl SynthParams {
    /// The Madelon profile: 2600 samples (2000 train / 600 test at a 0.23
    /// split), 500 features of which 5 are informative and 15 redundant.
    pub fn madelon() -> Self {
        SynthParams {
            n_samples: 2600,
            n_features: 500,
            n_informative: 5,
            n_redundant: 15,
            n_classes: 2,
            class_sep: 1.0,
            flip_fraction: 0.01,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Argument("n_samples must be >= 1".into()));
        }
        if self.n_informative == 0 {
            return Err(Error::Argument("need at least one informative feature".into()));
        }
        if self.n_informative + self.n_redundant > self.n_features {
            return Err(Error::Argument(format!(
                "informative {} + redundant {} exceed features {}",
                self.n_informative, self.n_redundant, self.n_features
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Argument("need at least two classes".into()));
        }
        let vertices = if self.n_informative >= 63 {
            u64::MAX
        } else {
            1u64 << self.n_informative
        };
        if (self.n_classes as u64) > vertices {
            return Err(Error::Argument(format!(
                "{} classes need more hypercube vertices than {} informative dims provide",
                self.n_classes, self.n_informative
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::Argument("flip fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn synth_classification(params: &SynthParams, rng: &mut Rng) -> Result<RawData> {
    params.validate()?;
    let inf = params.n_informative;
    let red = params.n_redundant;
    let d = params.n_features;
    let n = params.n_samples;
    let k = params.n_classes;

    // Distinct hypercube vertices, one per class.
    let mut codes: Vec<u64> = Vec::with_capacity(k);
    let mask = if inf >= 63 { u64::MAX } else { (1u64 << inf) - 1 };
    while codes.len() < k {
        let code = rng.random::<u64>() & mask;
        if !codes.contains(&code) {
            codes.push(code);
        }
    }
    let centroids: Vec<Vec<f64>> = codes
        .iter()
        .map(|&code| {
            (0..inf)
                .map(|b| if code >> b & 1 == 1 { params.class_sep } else { -params.class_sep })
                .collect()
        })
        .collect();

    // Mixing weights for redundant features, uniform in [-1, 1].
    let mixing: Vec<Vec<f64>> = (0..red)
        .map(|_| (0..inf).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    // Balanced class counts, remainder to the lowest class indices.
    let base = n / k;
    let extra = n % k;
    let mut labels: Vec<u32> = Vec::with_capacity(n);
    for c in 0..k {
        let count = base + usize::from(c < extra);
        labels.extend(std::iter::repeat(c as u32).take(count));
    }

    let probes = d - inf - red;
    let mut features = DenseMatrix::zeros(n, d);
    for (r, &y) in labels.iter().enumerate() {
        let row = features.row_mut(r);
        let centroid = &centroids[y as usize];
        for j in 0..inf {
            let noise: f64 = rng.sample(StandardNormal);
            row[j] = centroid[j] + noise;
        }
        for (j, weights) in mixing.iter().enumerate() {
            row[inf + j] = weights.iter().zip(&row[..inf]).map(|(w, x)| w * x).sum();
        }
        for j in 0..probes {
            row[inf + red + j] = rng.sample(StandardNormal);
        }
    }

    flip_labels(&mut labels, k, params.flip_fraction, rng);

    // One column permutation applied to every row.
    let mut perm: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let mut permuted = DenseMatrix::zeros(n, d);
    for r in 0..n {
        let src = features.row(r);
        let dst = permuted.row_mut(r);
        for (j, &p) in perm.iter().enumerate() {
            dst[j] = src[p];
        }
    }

    Ok(RawData {
        features: permuted,
        labels,
        class_count: k,
        label_names: (0..k).map(|c| c.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    #[test]
    fn infeasible_params_rejected() {
        let mut p = SynthParams::default();
        p.n_informative = 600;
        p.n_features = 500;
        assert!(synth_classification(&p, &mut seeds::rng_for(0, 0)).is_err());
        let mut p = SynthParams::default();
        p.n_informative = 1;
        p.n_classes = 3;
        assert!(synth_classification(&p, &mut seeds::rng_for(0, 0)).is_err());
    }

    #[test]
    fn reproducible_given_seed() {
        let p = SynthParams::default();
        let a = synth_classification(&p, &mut seeds::rng_for(4, 4)).unwrap();
        let b = synth_classification(&p, &mut seeds::rng_for(4, 4)).unwrap();
        assert_eq!(a.features.as_slice(), b.features.as_slice());
        assert_eq!(a.labels, b.labels);
    }

    /// Well-separated classes with no noise features are linearly
    /// separable: a perceptron-style probe must fit the training set.
    #[test]
    fn separable_case_admits_linear_probe() {
        let p = SynthParams {
            n_samples: 200,
            n_features: 4,
            n_informative: 4,
            n_redundant: 0,
            n_classes: 2,
            class_sep: 10.0,
            flip_fraction: 0.0,
        };
        let raw = synth_classification(&p, &mut seeds::rng_for(8, 0)).unwrap();
        // logistic regression by plain gradient descent
        let d = raw.features.cols();
        let mut w = vec![0.0f64; d + 1];
        for _ in 0..200 {
            let mut grad = vec![0.0f64; d + 1];
            for r in 0..raw.features.rows() {
                let x = raw.features.row(r);
                let z: f64 = w[d] + x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>();
                let pred = 1.0 / (1.0 + (-z).exp());
                let err = pred - raw.labels[r] as f64;
                for j in 0..d {
                    grad[j] += err * x[j];
                }
                grad[d] += err;
            }
            for (wj, g) in w.iter_mut().zip(&grad) {
                *wj -= 0.05 * g / raw.features.rows() as f64;
            }
        }
        let mut correct = 0;
        for r in 0..raw.features.rows() {
            let x = raw.features.row(r);
            let z: f64 = w[d] + x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>();
            if (z > 0.0) as u32 == raw.labels[r] {
                correct += 1;
            }
        }
        let acc = correct as f64 / raw.features.rows() as f64;
        assert!(acc >= 0.99, "linear probe accuracy {acc}");
    }
}
