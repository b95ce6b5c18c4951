//! Dataset ingestion, standardization, splitting, and sharding.

mod csv;
mod io;
mod synth;

pub use csv::{load_csv, load_csv_with_mapping};
pub use io::{read_sds1, write_sds1};
pub use synth::{synth_classification, SynthParams};

use rand::seq::SliceRandom as _;
use rand::Rng as _;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seeds::Rng;

/// An unsplit, unstandardized table of features and dense 0-based labels.
#[derive(Clone, Debug)]
pub struct RawData {
    pub features: DenseMatrix<f64>,
    pub labels: Vec<u32>,
    pub class_count: usize,
    /// Original label values in index order, when loaded from text.
    pub label_names: Vec<String>,
}

/// One partition: features plus aligned labels.
#[derive(Clone, Debug)]
pub struct Split<T> {
    pub features: DenseMatrix<T>,
    pub labels: Vec<u32>,
}

impl<T: Real> Split<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Split<U> {
        Split { features: self.features.cast(), labels: self.labels.clone() }
    }
}

/// Per-feature standardization statistics captured from the training
/// partition. `std` keeps 0 for constant features, which then pass
/// through shifted only.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizeStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A standardized, train/test-partitioned dataset.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub train: Split<T>,
    pub test: Split<T>,
    pub class_count: usize,
    pub stats: StandardizeStats,
}

impl<T: Real> Dataset<T> {
    pub fn features(&self) -> usize {
        self.train.features.cols()
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            train: self.train.cast(),
            test: self.test.cast(),
            class_count: self.class_count,
            stats: self.stats.clone(),
        }
    }

    /// Splits raw data, standardizes with train-partition statistics, and
    /// casts to the working precision.
    pub fn from_raw(raw: &RawData, test_fraction: f64, rng: &mut Rng) -> Result<Dataset<T>> {
        let (train, test) = split(raw, test_fraction, rng)?;
        let ds = standardize(train, test, raw.class_count)?;
        Ok(ds.cast())
    }

    /// Builds from already-partitioned raw splits (two-file loading).
    pub fn from_splits(train: Split<f64>, test: Split<f64>, class_count: usize) -> Result<Dataset<T>> {
        Ok(standardize(train, test, class_count)?.cast())
    }
}

/// Per-feature `x' = (x − mean_train)/std_train` with population std;
/// zero-variance features pass through shifted only. Test uses train
/// statistics.
pub fn standardize(mut train: Split<f64>, mut test: Split<f64>, class_count: usize) -> Result<Dataset<f64>> {
    if train.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let d = train.features.cols();
    if test.features.cols() != d && !test.is_empty() {
        return Err(Error::Data(format!(
            "test feature count {} != train {}",
            test.features.cols(),
            d
        )));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for r in 0..train.len() {
        for (m, &x) in mean.iter_mut().zip(train.features.row(r)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for r in 0..train.len() {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(train.features.row(r)) {
            let dx = x - m;
            *v += dx * dx;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let apply = |split: &mut Split<f64>| {
        for r in 0..split.len() {
            let row = split.features.row_mut(r);
            for j in 0..d {
                let centered = row[j] - mean[j];
                row[j] = if std[j] > 0.0 { centered / std[j] } else { centered };
            }
        }
    };
    apply(&mut train);
    apply(&mut test);
    for (r, row) in (0..train.len()).map(|r| (r, train.features.row(r))) {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("non-finite feature after standardization at train row {r}")));
        }
    }
    Ok(Dataset { train, test, class_count, stats: StandardizeStats { mean, std } })
}

/// Stratified train/test split. Falls back to an unstratified shuffle
/// split (with a warning) when some class is too small to stratify.
pub fn split(raw: &RawData, test_fraction: f64, rng: &mut Rng) -> Result<(Split<f64>, Split<f64>)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = raw.labels.len();
    if n < 2 {
        return Err(Error::Data("need at least 2 samples to split".into()));
    }
    let test_total = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); raw.class_count];
    for (i, &y) in raw.labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }

    // Largest-remainder apportionment of the test quota across classes.
    let mut quota: Vec<usize> = Vec::with_capacity(raw.class_count);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(raw.class_count);
    let mut assigned = 0usize;
    for (c, members) in by_class.iter().enumerate() {
        let exact = test_fraction * members.len() as f64;
        let floor = exact.floor() as usize;
        quota.push(floor.min(members.len()));
        assigned += quota[c];
        remainders.push((exact - floor as f64, c));
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut leftover = test_total.saturating_sub(assigned);
    for &(_, c) in &remainders {
        if leftover == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            leftover -= 1;
        }
    }

    let stratifiable = by_class
        .iter()
        .zip(&quota)
        .all(|(members, &q)| members.is_empty() || q < members.len() || members.len() == 1);
    let can_stratify = leftover == 0 && stratifiable;

    let (train_idx, test_idx) = if can_stratify {
        let mut train_idx = Vec::with_capacity(n - test_total);
        let mut test_idx = Vec::with_capacity(test_total);
        for (members, &q) in by_class.iter().zip(&quota) {
            let mut shuffled = members.clone();
            shuffled.shuffle(rng);
            test_idx.extend_from_slice(&shuffled[..q]);
            train_idx.extend_from_slice(&shuffled[q..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        (train_idx, test_idx)
    } else {
        log::warn!("split: class too small for stratification, falling back to unstratified");
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        let test_idx: Vec<usize> = {
            let mut t = all[..test_total].to_vec();
            t.sort_unstable();
            t
        };
        let mut train_idx = all[test_total..].to_vec();
        train_idx.sort_unstable();
        (train_idx, test_idx)
    };

    let make = |idx: &[usize]| Split {
        features: raw.features.gather_rows(idx),
        labels: idx.iter().map(|&i| raw.labels[i]).collect(),
    };
    Ok((make(&train_idx), make(&test_idx)))
}

/// Round-robin shard assignment: disjoint cover of `0..n` with sizes
/// differing by at most one. `shard(n, 1)` keeps the original order.
pub fn shard(n: usize, k: usize) -> Vec<Vec<usize>> {
    assert!(k >= 1, "need at least one shard");
    let mut shards = vec![Vec::with_capacity(n / k + 1); k];
    for i in 0..n {
        shards[i % k].push(i);
    }
    shards
}

/// Bernoulli label corruption used by the synthetic generator: flipped
/// samples get a uniformly random *different* class.
pub(crate) fn flip_labels(labels: &mut [u32], class_count: usize, fraction: f64, rng: &mut Rng) {
    if fraction <= 0.0 || class_count < 2 {
        return;
    }
    for y in labels.iter_mut() {
        if rng.random::<f64>() < fraction {
            let offset = rng.random_range(1..class_count as u32);
            *y = (*y + offset) % class_count as u32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn raw_two_class(n: usize) -> RawData {
        let features = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|i| i as f64).collect());
        let labels: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        RawData { features, labels, class_count: 2, label_names: vec![] }
    }

    #[test]
    fn split_sizes_and_stratification() {
        let raw = raw_two_class(10);
        let mut rng = seeds::rng_for(0, 0);
        let (train, test) = split(&raw, 0.3, &mut rng).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        // class proportions within one sample of global proportions
        let test_ones = test.labels.iter().filter(|&&y| y == 1).count();
        assert!(test_ones == 1 || test_ones == 2);
        // disjoint cover
        let mut seen: Vec<f64> = train
            .features
            .as_slice()
            .chunks(2)
            .chain(test.features.as_slice().chunks(2))
            .map(|r| r[0])
            .collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, (0..10).map(|i| (2 * i) as f64).collect::<Vec<_>>());
    }

    #[test]
    fn shard_sizes_differ_by_at_most_one() {
        let shards = shard(10, 3);
        assert_eq!(shards[0].len(), 4);
        assert_eq!(shards[1].len(), 3);
        assert_eq!(shards[2].len(), 3);
        let mut all: Vec<usize> = shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(shard(5, 1)[0], vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn standardize_hand_case_and_constant_column() {
        let train = Split {
            features: DenseMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]),
            labels: vec![0, 1],
        };
        let test = Split {
            features: DenseMatrix::from_rows(&[vec![2.0, 7.0]]),
            labels: vec![0],
        };
        let ds = standardize(train, test, 2).unwrap();
        assert_eq!(ds.train.features.row(0), &[-1.0, 0.0]);
        assert_eq!(ds.train.features.row(1), &[1.0, 0.0]);
        // test uses train stats: (2-2)/1 = 0; constant column shifts only
        assert_eq!(ds.test.features.row(0), &[0.0, 2.0]);
        assert_eq!(ds.stats.mean, vec![2.0, 5.0]);
        assert_eq!(ds.stats.std, vec![1.0, 0.0]);
    }

    #[test]
    fn standardize_recomputation_oracle() {
        use rand::Rng as _;
        let mut rng = seeds::rng_for(9, 1);
        let n = 50;
        let d = 8;
        let train = Split {
            features: DenseMatrix::from_vec(
                n,
                d,
                (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect(),
            ),
            labels: vec![0; n],
        };
        let test = Split { features: DenseMatrix::zeros(0, d), labels: vec![] };
        let ds = standardize(train, test, 1).unwrap();
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|r| ds.train.features.get(r, j)).collect();
            let mean: f64 = col.iter().sum::<f64>() / n as f64;
            let var: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn flip_half_balances_binary_labels() {
        let mut rng = seeds::rng_for(21, 0);
        let mut labels = vec![0u32; 10_000];
        flip_labels(&mut labels, 2, 0.5, &mut rng);
        let ones = labels.iter().filter(|&&y| y == 1).count();
        assert!((ones as f64 - 5_000.0).abs() < 300.0, "ones = {ones}");
    }
}
