//! Momentum SGD over the sparse support, with velocity realignment
//! across structural edits.
//!
//! The velocity recursion `v ← μ·v − η·g; w ← w + v` reproduces
//! `w_{t+1} = w_t + μ(w_t − w_{t−1}) − η_t·∇w_t` exactly for a fixed
//! topology.

use crate::error::{Error, Result};
use crate::nn::{GradientUpdate, SparseNetwork};
use crate::real::Real;
use crate::sparse::Support;

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    eta: T,
    mu: T,
    lambda: T,
    velocity: Vec<Vec<T>>,
    bias_velocity: Vec<Vec<T>>,
    topology_version: u64,
}

impl<T: Real> OptimizerState<T> {
    /// Zero-velocity state aligned to the network's current support.
    pub fn new(eta: f64, mu: f64, lambda: f64, network: &SparseNetwork<T>) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {eta}")));
        }
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {mu}")));
        }
        Ok(OptimizerState {
            eta: T::from_f64(eta),
            mu: T::from_f64(mu),
            lambda: T::from_f64(lambda),
            velocity: network.layers().iter().map(|w| vec![T::zero(); w.nnz()]).collect(),
            bias_velocity: network.biases().iter().map(|b| vec![T::zero(); b.len()]).collect(),
            topology_version: network.topology_version(),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta.to_f64()
    }

    /// Trainers adjust this for warmup or boosted-start schedules.
    pub fn set_eta(&mut self, eta: f64) {
        self.eta = T::from_f64(eta);
    }

    pub fn mu(&self) -> f64 {
        self.mu.to_f64()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn topology_version(&self) -> u64 {
        self.topology_version
    }

    pub fn velocity(&self, layer: usize) -> &[T] {
        &self.velocity[layer]
    }
}

/// One momentum step. The gradient must be aligned to the network's
/// current topology version (stale gradients are filtered upstream by the
/// parallel protocol).
pub fn sgd_momentum_step<T: Real>(
    network: &mut SparseNetwork<T>,
    opt: &mut OptimizerState<T>,
    grad: &GradientUpdate<T>,
) -> Result<()> {
    let current = network.topology_version();
    if grad.timestamp != current {
        return Err(Error::Stale { what: "gradient", found: grad.timestamp, current });
    }
    if opt.topology_version != current {
        return Err(Error::Stale { what: "optimizer state", found: opt.topology_version, current });
    }
    let (eta, mu) = (opt.eta, opt.mu);
    for (idx, g_layer) in grad.layer_grads.iter().enumerate() {
        let v_layer = &mut opt.velocity[idx];
        if g_layer.len() != v_layer.len() {
            return Err(Error::Stale { what: "gradient layer", found: grad.timestamp, current });
        }
        let weights = network.layer_values_mut(idx);
        for ((w, v), &g) in weights.iter_mut().zip(v_layer.iter_mut()).zip(g_layer) {
            *v = mu * *v - eta * g;
            *w = *w + *v;
        }
    }
    for (idx, g_bias) in grad.bias_grads.iter().enumerate() {
        let v_bias = &mut opt.bias_velocity[idx];
        let bias = network.bias_mut(idx);
        for ((b, v), &g) in bias.iter_mut().zip(v_bias.iter_mut()).zip(g_bias) {
            *v = mu * *v - eta * g;
            *b = *b + *v;
        }
    }
    Ok(())
}

/// Rebuilds velocities after a structural edit: surviving entries keep
/// their velocity, removed entries are discarded, new entries start at
/// zero. Call once after every structural edit, passing the supports
/// captured before the edit.
pub fn realign_optimizer<T: Real>(
    opt: &mut OptimizerState<T>,
    old_supports: &[Support],
    network: &SparseNetwork<T>,
) {
    debug_assert_eq!(old_supports.len(), network.layers().len());
    for (idx, old) in old_supports.iter().enumerate() {
        let new = network.layers()[idx];
        let old_v = &opt.velocity[idx];
        let mut new_v = vec![T::zero(); new.nnz()];
        for r in 0..new.rows() {
            let old_cols = old.row_cols(r);
            let old_base = old.row_ptr[r];
            let (new_cols, _) = new.row_entries(r);
            let new_base = new.row_ptr()[r];
            let mut oi = 0;
            for (nk, &nc) in new_cols.iter().enumerate() {
                while oi < old_cols.len() && old_cols[oi] < nc {
                    oi += 1;
                }
                if oi < old_cols.len() && old_cols[oi] == nc {
                    new_v[new_base + nk] = old_v[old_base + oi];
                    oi += 1;
                }
            }
        }
        opt.velocity[idx] = new_v;
    }
    opt.topology_version = network.topology_version();
}
