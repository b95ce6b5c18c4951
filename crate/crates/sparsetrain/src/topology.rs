//! Sparse topology management: Erdős–Rényi initialization, SET
//! prune/regrow evolution, neuron-importance pruning, and sparse model
//! averaging with magnitude re-sparsification.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{InitScheme, SparseNetwork};
use crate::real::Real;
use crate::seeds::Rng;
use crate::sparse::{magnitude_prune_to_count, SparseWeights};

/// Evolution and importance-pruning schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionConfig {
    /// Prune fraction ζ applied per sign at every evolution step.
    pub zeta: f64,
    pub importance_enabled: bool,
    /// First epoch at which importance pruning may fire (τ).
    pub importance_start_epoch: u64,
    /// Importance pruning period in epochs (p).
    pub importance_period: u64,
    /// Per-layer percentile threshold ρ for neuron importance.
    pub importance_percentile: f64,
    /// Optional override for the per-layer keep count used when averaged
    /// models are re-sparsified; derived from the phase-1 model when unset.
    pub target_sparsity: Option<f64>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            zeta: 0.3,
            importance_enabled: false,
            importance_start_epoch: 200,
            importance_period: 5,
            importance_percentile: 5.0,
            target_sparsity: None,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Config(format!("zeta must be in (0, 1), got {}", self.zeta)));
        }
        if self.importance_period == 0 {
            return Err(Error::Config("importance period must be >= 1".into()));
        }
        if !(self.importance_percentile > 0.0 && self.importance_percentile < 100.0) {
            return Err(Error::Config(format!(
                "importance percentile must be in (0, 100), got {}",
                self.importance_percentile
            )));
        }
        if let Some(s) = self.target_sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::Config(format!("target sparsity must be in [0, 1), got {s}")));
            }
        }
        Ok(())
    }

    /// Whether importance pruning fires at the end of `epoch` (1-based).
    pub fn importance_fires(&self, epoch: u64) -> bool {
        self.importance_enabled
            && epoch >= self.importance_start_epoch
            && epoch % self.importance_period == 0
    }
}

/// What one importance-pruning pass did, per hidden layer.
#[derive(Clone, Debug, Default)]
pub struct ImportanceReport {
    /// Neuron importance values per hidden layer, before pruning.
    pub importances: Vec<Vec<f64>>,
    /// Indices of pruned neurons per hidden layer.
    pub pruned_neurons: Vec<Vec<usize>>,
    /// Connections removed per hidden layer (incoming plus outgoing).
    pub removed_connections: Vec<usize>,
}

impl ImportanceReport {
    pub fn total_removed(&self) -> usize {
        self.removed_connections.iter().sum()
    }

    pub fn total_pruned_neurons(&self) -> usize {
        self.pruned_neurons.iter().map(|v| v.len()).sum()
    }
}

/// Samples an Erdős–Rényi layer: every position is included independently
/// with probability `min(1, ε·(n_in + n_out)/(n_in·n_out))`, values drawn
/// from the init scheme.
pub fn er_init<T: Real>(
    n_in: usize,
    n_out: usize,
    epsilon: f64,
    init_scheme: InitScheme,
    rng: &mut Rng,
) -> SparseWeights<T> {
    let p = er_probability(n_in, n_out, epsilon);
    let mut row_ptr = Vec::with_capacity(n_in + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for _ in 0..n_in {
        for c in 0..n_out {
            if p >= 1.0 || rng.random::<f64>() < p {
                col_idx.push(c as u32);
                values.push(T::from_f64(init_scheme.sample(rng, n_in, n_out)));
            }
        }
        row_ptr.push(col_idx.len());
    }
    SparseWeights::from_csr(n_in, n_out, row_ptr, col_idx, values)
        .expect("er_init builds rows in order")
}

pub fn er_probability(n_in: usize, n_out: usize, epsilon: f64) -> f64 {
    (epsilon * (n_in + n_out) as f64 / (n_in * n_out) as f64).min(1.0)
}

/// One SET prune/regrow step. Removes ⌊ζ·#positive⌋ smallest positive
/// weights and ⌊ζ·#negative⌋ negatives closest to zero (plus any exact
/// zeros left behind by updates), then grows the same number of new
/// connections at uniformly random empty positions. nnz is conserved
/// exactly and surviving weights are untouched.
pub fn set_evolve<T: Real>(
    w: &SparseWeights<T>,
    zeta: f64,
    init_scheme: InitScheme,
    rng: &mut Rng,
) -> Result<SparseWeights<T>> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Argument(format!("zeta must be in (0, 1), got {zeta}")));
    }
    let nnz = w.nnz();
    let slots = w.rows() * w.cols();

    // Partition stored entries by sign; k is the flat entry index.
    let mut positives: Vec<usize> = Vec::new();
    let mut negatives: Vec<usize> = Vec::new();
    let mut zeros: Vec<usize> = Vec::new();
    for (k, &v) in w.values().iter().enumerate() {
        if v > T::zero() {
            positives.push(k);
        } else if v < T::zero() {
            negatives.push(k);
        } else {
            zeros.push(k);
        }
    }
    let vals = w.values();
    let sort_by_value = |keys: &mut Vec<usize>, ascending: bool| {
        keys.sort_unstable_by(|&a, &b| {
            let ord = vals[a].partial_cmp(&vals[b]).unwrap_or(Ordering::Equal);
            let ord = if ascending { ord } else { ord.reverse() };
            ord.then(a.cmp(&b))
        });
    };
    // Smallest positives first; negatives closest to zero (largest) first.
    sort_by_value(&mut positives, true);
    sort_by_value(&mut negatives, false);

    let n_pos_rm = (zeta * positives.len() as f64).floor() as usize;
    let n_neg_rm = (zeta * negatives.len() as f64).floor() as usize;
    let mut removed: Vec<usize> = zeros;
    removed.extend_from_slice(&positives[..n_pos_rm]);
    removed.extend_from_slice(&negatives[..n_neg_rm]);

    let mut n_grow = removed.len();
    let empty_before = slots - nnz;
    if n_grow > empty_before {
        // Pathologically dense layer: not enough never-occupied positions
        // to grow into without re-adding what was just removed.
        log::warn!(
            "set_evolve: layer {}x{} too dense to regrow {} connections; capping at {}",
            w.rows(),
            w.cols(),
            n_grow,
            empty_before
        );
        removed.truncate(empty_before);
        n_grow = empty_before;
    }
    if n_grow == 0 {
        if empty_before == 0 {
            log::debug!("set_evolve: layer already fully dense, no-op");
        }
        return Ok(w.clone());
    }

    let removed_set: HashSet<usize> = removed.iter().copied().collect();

    // Survivor entries, in row-major order.
    let rows_of = entry_rows(w);
    let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(nnz);
    for k in 0..nnz {
        if !removed_set.contains(&k) {
            entries.push((rows_of[k], w.col_idx()[k] as usize, vals[k]));
        }
    }

    // Uniformly random empty positions, never re-adding a pre-step
    // position (removed ones included).
    let occupied: HashSet<(usize, usize)> = w.entries().map(|(r, c, _)| (r, c)).collect();
    let new_positions = sample_empty_positions(w.rows(), w.cols(), &occupied, n_grow, rng);
    for (r, c) in new_positions {
        entries.push((r, c, T::from_f64(init_scheme.sample(rng, w.rows(), w.cols()))));
    }
    SparseWeights::from_entries(w.rows(), w.cols(), entries)
}

/// Draws `count` distinct positions outside `occupied`, uniformly.
/// Rejection sampling when the layer is sparse enough; otherwise a
/// partial Fisher–Yates over the enumerated empty slots.
fn sample_empty_positions(
    rows: usize,
    cols: usize,
    occupied: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let slots = rows * cols;
    let empty = slots - occupied.len();
    debug_assert!(count <= empty);
    if empty * 4 >= slots {
        let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let r = rng.random_range(0..rows);
            let c = rng.random_range(0..cols);
            let pos = (r, c);
            if !occupied.contains(&pos) && chosen.insert(pos) {
                out.push(pos);
            }
        }
        out
    } else {
        let mut empties: Vec<(usize, usize)> = Vec::with_capacity(empty);
        for r in 0..rows {
            for c in 0..cols {
                if !occupied.contains(&(r, c)) {
                    empties.push((r, c));
                }
            }
        }
        for i in 0..count {
            let j = rng.random_range(i..empties.len());
            empties.swap(i, j);
        }
        empties.truncate(count);
        empties
    }
}

fn entry_rows<T: Real>(w: &SparseWeights<T>) -> Vec<usize> {
    let mut out = vec![0usize; w.nnz()];
    for r in 0..w.rows() {
        for k in w.row_ptr()[r]..w.row_ptr()[r + 1] {
            out[k] = r;
        }
    }
    out
}

/// Neuron importance: `I_j = Σ_i |w[i][j]|` over incoming connections.
/// Neurons with no incoming connections get zero.
pub fn neuron_importance<T: Real>(w: &SparseWeights<T>) -> Vec<f64> {
    let mut importance = vec![0.0f64; w.cols()];
    for (_, c, v) in w.entries() {
        importance[c] += v.to_f64().abs();
    }
    importance
}

/// ρ-th percentile by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], rho: f64) -> f64 {
    assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = rho / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Removes every hidden neuron whose importance falls below the ρ-th
/// percentile of its layer's importance distribution, deleting both its
/// incoming connections and (so dead rows do not accumulate) its outgoing
/// connections in the next layer. Input and output neurons are never
/// pruned. Bumps the topology version once when anything was removed.
pub fn importance_prune<T: Real>(network: &mut SparseNetwork<T>, rho: f64) -> Result<ImportanceReport> {
    let total_layers = network.config().total_layers();
    let mut report = ImportanceReport::default();
    let mut changed = false;
    // Hidden layers in ascending absolute index 2..=L-1; incoming weights
    // are layer index l-2, outgoing l-1, so earlier prunes cascade.
    for l in 2..total_layers {
        let incoming_idx = l - 2;
        let outgoing_idx = l - 1;
        let importance = neuron_importance(&network.layers()[incoming_idx]);
        let mut sorted = importance.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let threshold = percentile(&sorted, rho);
        let pruned: Vec<usize> = importance
            .iter()
            .enumerate()
            .filter(|&(_, &i)| i < threshold)
            .map(|(j, _)| j)
            .collect();
        if pruned.len() == importance.len() {
            log::warn!(
                "importance_prune: refusing to remove every neuron of hidden layer {l}; skipping"
            );
            report.importances.push(importance);
            report.pruned_neurons.push(Vec::new());
            report.removed_connections.push(0);
            continue;
        }
        let mut removed = 0usize;
        if !pruned.is_empty() {
            let pruned_set: HashSet<u32> = pruned.iter().map(|&j| j as u32).collect();
            let incoming = &network.layers()[incoming_idx];
            let new_incoming =
                crate::sparse::rebuild_filtered(incoming, |_, _, c| !pruned_set.contains(&c))?;
            removed += incoming.nnz() - new_incoming.nnz();
            network.install_layer(incoming_idx, new_incoming);

            let pruned_rows: HashSet<usize> = pruned.iter().copied().collect();
            let outgoing = &network.layers()[outgoing_idx];
            let new_outgoing =
                crate::sparse::rebuild_filtered(outgoing, |_, r, _| !pruned_rows.contains(&r))?;
            removed += outgoing.nnz() - new_outgoing.nnz();
            network.install_layer(outgoing_idx, new_outgoing);
            changed = true;
        }
        report.importances.push(importance);
        report.pruned_neurons.push(pruned);
        report.removed_connections.push(removed);
    }
    if changed {
        network.bump_version();
    }
    Ok(report)
}

/// Averages K models sharing an architecture: per layer, the union of the
/// K supports with each entry valued `Σ present values / K`, then
/// magnitude-pruned back to `target_nnz` for that layer. Biases average
/// elementwise.
pub fn average_models<T: Real>(
    models: &[SparseNetwork<T>],
    target_nnz: &[usize],
) -> Result<SparseNetwork<T>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Protocol("average_models needs at least one model".into()))?;
    let sizes = &first.config().layer_sizes;
    for (i, m) in models.iter().enumerate() {
        if &m.config().layer_sizes != sizes {
            return Err(Error::Protocol(format!(
                "model {i} architecture {:?} does not match {:?}",
                m.config().layer_sizes,
                sizes
            )));
        }
    }
    if target_nnz.len() != first.layers().len() {
        return Err(Error::Protocol(format!(
            "expected {} per-layer targets, got {}",
            first.layers().len(),
            target_nnz.len()
        )));
    }
    let k_inv = 1.0 / models.len() as f64;
    let mut layers = Vec::with_capacity(first.layers().len());
    for (idx, target) in target_nnz.iter().enumerate() {
        // Union support with absent-as-zero averaging.
        let mut union: std::collections::BTreeMap<(usize, usize), f64> = std::collections::BTreeMap::new();
        for m in models {
            for (r, c, v) in m.layers()[idx].entries() {
                *union.entry((r, c)).or_insert(0.0) += v.to_f64();
            }
        }
        let entries: Vec<(usize, usize, T)> = union
            .into_iter()
            .map(|((r, c), sum)| (r, c, T::from_f64(sum * k_inv)))
            .collect();
        let averaged = SparseWeights::from_entries(
            first.layers()[idx].rows(),
            first.layers()[idx].cols(),
            entries,
        )?;
        if *target > averaged.nnz() {
            return Err(Error::Protocol(format!(
                "layer {idx}: union nnz {} below target {}",
                averaged.nnz(),
                target
            )));
        }
        layers.push(magnitude_prune_to_count(&averaged, *target)?);
    }
    let mut biases = Vec::with_capacity(first.biases().len());
    for idx in 0..first.biases().len() {
        let len = first.biases()[idx].len();
        let mut avg = vec![0.0f64; len];
        for m in models {
            for (slot, v) in avg.iter_mut().zip(&m.biases()[idx]) {
                *slot += v.to_f64();
            }
        }
        biases.push(avg.into_iter().map(|v| T::from_f64(v * k_inv)).collect());
    }
    let mut out = SparseNetwork::from_parts(first.config().clone(), layers, biases)?;
    for _ in 0..=models.iter().map(|m| m.topology_version()).max().unwrap() {
        out.bump_version();
    }
    Ok(out)
}

/// Runs one SET evolution step over every layer of a network, bumping the
/// topology version once.
pub fn evolve_network<T: Real>(
    network: &mut SparseNetwork<T>,
    zeta: f64,
    rng: &mut Rng,
) -> Result<()> {
    let scheme = network.config().init_scheme;
    for idx in 0..network.layers().len() {
        let evolved = set_evolve(&network.layers()[idx], zeta, scheme, rng)?;
        network.install_layer(idx, evolved);
    }
    network.bump_version();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LossKind, NetworkConfig};
    use crate::seeds;

    #[test]
    fn er_probability_caps_at_one() {
        let mut rng = seeds::rng_for(1, 1);
        let w: SparseWeights<f32> = er_init(4, 4, 1000.0, InitScheme::Xavier, &mut rng);
        assert_eq!(w.nnz(), 16);
    }

    #[test]
    fn er_expected_density() {
        // 784×1000 at ε=20: p ≈ 0.0455, expected nnz ≈ 35,680, σ ≈ 184.
        let mut rng = seeds::rng_for(2, 7);
        let w: SparseWeights<f32> = er_init(784, 1000, 20.0, InitScheme::HeUniform, &mut rng);
        let expected = er_probability(784, 1000, 20.0) * 784_000.0;
        let sigma = (784_000.0 * 0.0455 * (1.0 - 0.0455)).sqrt();
        assert!(
            (w.nnz() as f64 - expected).abs() < 4.0 * sigma,
            "nnz {} vs expected {expected}",
            w.nnz()
        );
        w.validate().unwrap();
    }

    #[test]
    fn set_evolve_floors_to_identity() {
        let w = SparseWeights::from_entries(4, 4, vec![(0, 0, 1.0f32)]).unwrap();
        let mut rng = seeds::rng_for(3, 1);
        let out = set_evolve(&w, 0.3, InitScheme::Xavier, &mut rng).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn set_evolve_prunes_weakest_per_sign() {
        let w = SparseWeights::from_entries(
            4,
            4,
            vec![(0, 0, 4.0f64), (1, 1, 0.1), (2, 2, -0.05), (3, 3, -7.0)],
        )
        .unwrap();
        let mut rng = seeds::rng_for(4, 2);
        let out = set_evolve(&w, 0.5, InitScheme::Xavier, &mut rng).unwrap();
        assert_eq!(out.nnz(), 4);
        assert_eq!(out.get(0, 0), Some(4.0));
        assert_eq!(out.get(3, 3), Some(-7.0));
        assert_eq!(out.get(1, 1), None);
        assert_eq!(out.get(2, 2), None);
    }

    #[test]
    fn set_evolve_conserves_and_never_readds() {
        let mut rng = seeds::rng_for(5, 5);
        let mut entries = Vec::new();
        let mut taken = std::collections::HashSet::new();
        while taken.len() < 200 {
            let r = rng.random_range(0..30usize);
            let c = rng.random_range(0..30usize);
            if taken.insert((r, c)) {
                entries.push((r, c, rng.random_range(-1.0..1.0f64)));
            }
        }
        let mut w = SparseWeights::from_entries(30, 30, entries).unwrap();
        for _ in 0..100 {
            let before: HashSet<(usize, usize)> = w.entries().map(|(r, c, _)| (r, c)).collect();
            let survivors: Vec<(usize, usize, f64)> = w.entries().collect();
            let out = set_evolve(&w, 0.3, InitScheme::Xavier, &mut rng).unwrap();
            out.validate().unwrap();
            assert_eq!(out.nnz(), 200);
            for (r, c, v) in out.entries() {
                if before.contains(&(r, c)) {
                    // surviving value unchanged bit-exactly
                    let orig = survivors.iter().find(|&&(sr, sc, _)| (sr, sc) == (r, c)).unwrap().2;
                    assert_eq!(v, orig);
                }
            }
            // regrown positions were empty before
            let removed: Vec<_> = survivors
                .iter()
                .filter(|&&(r, c, _)| out.get(r, c).is_none())
                .collect();
            let grown: Vec<_> = out
                .entries()
                .filter(|&(r, c, _)| !before.contains(&(r, c)))
                .collect();
            assert_eq!(removed.len(), grown.len());
            w = out;
        }
    }

    #[test]
    fn importance_is_absolute_sum() {
        let w = SparseWeights::from_entries(3, 2, vec![(0, 0, 0.5f64), (1, 0, -0.3), (2, 0, 0.2)]).unwrap();
        let i = neuron_importance(&w);
        assert!((i[0] - 1.0).abs() < 1e-15);
        assert_eq!(i[1], 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(percentile(&v, 25.0), 2.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&v, 12.5), 1.5);
    }

    fn prune_fixture() -> SparseNetwork<f64> {
        let config = NetworkConfig {
            layer_sizes: vec![3, 5, 2],
            epsilon: 100.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_scheme: InitScheme::Xavier,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 0,
        };
        // Hidden importances: {1, 2, 3, 4, 100}
        let l1 = SparseWeights::from_entries(
            3,
            5,
            vec![
                (0, 0, 1.0),
                (0, 1, -2.0),
                (1, 2, 3.0),
                (2, 3, 4.0),
                (0, 4, 60.0),
                (1, 4, -40.0),
            ],
        )
        .unwrap();
        let l2 = SparseWeights::from_entries(
            5,
            2,
            vec![(0, 0, 1.0), (1, 0, 1.0), (2, 1, 1.0), (3, 1, 1.0), (4, 0, 1.0)],
        )
        .unwrap();
        SparseNetwork::from_parts(config, vec![l1, l2], vec![vec![0.0; 5], vec![0.0; 2]]).unwrap()
    }

    #[test]
    fn importance_prune_threshold_example() {
        let mut net = prune_fixture();
        let before = net.total_nnz();
        let report = importance_prune(&mut net, 25.0).unwrap();
        assert_eq!(report.pruned_neurons[0], vec![0]);
        // one incoming + one outgoing connection removed
        assert_eq!(report.removed_connections[0], 2);
        assert_eq!(net.total_nnz(), before - 2);
        assert_eq!(net.layers()[0].get(0, 0), None);
        assert_eq!(net.layers()[1].get(0, 0), None);
        assert_eq!(net.topology_version(), 1);
    }

    #[test]
    fn importance_prune_rho_zero_like_noop() {
        // ρ→0 keeps the threshold at the minimum importance; nothing is
        // strictly below it.
        let mut net = prune_fixture();
        let report = importance_prune(&mut net, 1e-9).unwrap();
        assert_eq!(report.total_pruned_neurons(), 0);
        assert_eq!(net.topology_version(), 0);
    }

    #[test]
    fn importance_prune_idempotent_on_gapped_distribution() {
        let mut net = prune_fixture();
        importance_prune(&mut net, 25.0).unwrap();
        let nnz_after_first = net.total_nnz();
        // Importances are now {2, 3, 4, 100} (neuron 0 gone → importance 0,
        // but its connections are gone too). The 25th percentile sits
        // inside the surviving mass only if zeros re-enter; pruning again
        // at the same ρ removes the now-isolated neuron and then settles.
        importance_prune(&mut net, 25.0).unwrap();
        let nnz_after_second = net.total_nnz();
        importance_prune(&mut net, 25.0).unwrap();
        assert_eq!(net.total_nnz(), nnz_after_second);
        assert!(nnz_after_second <= nnz_after_first);
    }

    #[test]
    fn averaging_k1_is_identity() {
        let config = NetworkConfig {
            layer_sizes: vec![4, 6, 3],
            epsilon: 4.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_scheme: InitScheme::Xavier,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 11,
        };
        let net = SparseNetwork::<f64>::init(config).unwrap();
        let avg = average_models(std::slice::from_ref(&net), &net.layer_nnz()).unwrap();
        for (a, b) in avg.layers().iter().zip(net.layers()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn averaging_disjoint_supports() {
        let config = NetworkConfig {
            layer_sizes: vec![2, 2, 2],
            epsilon: 100.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_scheme: InitScheme::Xavier,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 0,
        };
        let mk = |entries: Vec<(usize, usize, f64)>| {
            let l1 = SparseWeights::from_entries(2, 2, entries).unwrap();
            let l2 = SparseWeights::from_entries(2, 2, vec![(0, 0, 1.0)]).unwrap();
            SparseNetwork::from_parts(config.clone(), vec![l1, l2], vec![vec![0.0; 2], vec![0.0; 2]])
                .unwrap()
        };
        let a = mk(vec![(0, 0, 4.0)]);
        let b = mk(vec![(1, 1, 2.0)]);
        let avg = average_models(&[a, b], &[1, 1]).unwrap();
        // union {2.0 at (0,0), 1.0 at (1,1)}; prune to 1 keeps the 2.0
        assert_eq!(avg.layers()[0].nnz(), 1);
        assert_eq!(avg.layers()[0].get(0, 0), Some(2.0));
    }

    #[test]
    fn averaging_rejects_architecture_mismatch() {
        let mut c1 = NetworkConfig {
            layer_sizes: vec![2, 3, 2],
            epsilon: 5.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_scheme: InitScheme::Xavier,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 1,
        };
        let a = SparseNetwork::<f32>::init(c1.clone()).unwrap();
        c1.layer_sizes = vec![2, 4, 2];
        let b = SparseNetwork::<f32>::init(c1).unwrap();
        assert!(matches!(
            average_models(&[a, b], &[1, 1]),
            Err(Error::Protocol(_))
        ));
    }
}
