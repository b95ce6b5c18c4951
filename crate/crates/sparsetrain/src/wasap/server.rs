//! The parameter server: applies pushes after stale-update filtering and
//! runs the epoch-boundary topology evolution under exclusive access.

use std::collections::HashSet;
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{GradientUpdate, SparseNetwork};
use crate::optim::{sgd_momentum_step, OptimizerState};
use crate::real::Real;
use crate::seeds::Rng;
use crate::sparse::Support;
use crate::topology::EvolutionConfig;
use crate::train::{self, EpochRecord, PruneSummary};
use crate::wasap::messages::{AuditRecord, GradPush, ModelReply};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
    Done,
}

/// Keeps only the gradient entries addressing connections that exist in
/// the server's current topology.
///
/// A push whose timestamp matches the server's topology version passes
/// through unchanged. Otherwise the per-layer support carried by the push
/// is intersected position-wise with the server support; surviving values
/// land in a server-aligned gradient (absent positions contribute zero)
/// and everything else is dropped and counted.
pub fn retain_valid_updates<T: Real>(
    update: &GradientUpdate<T>,
    update_support: &[Support],
    server_model: &SparseNetwork<T>,
) -> Result<(GradientUpdate<T>, u64)> {
    let current = server_model.topology_version();
    if update.timestamp > current {
        return Err(Error::Protocol(format!(
            "push from topology version {} is ahead of the server at {current}",
            update.timestamp
        )));
    }
    if update.layer_grads.len() != server_model.layers().len()
        || update.bias_grads.len() != server_model.biases().len()
    {
        return Err(Error::Protocol("push layer count does not match the model".into()));
    }
    if update.timestamp == current {
        for (idx, g) in update.layer_grads.iter().enumerate() {
            if g.len() != server_model.layers()[idx].nnz() {
                return Err(Error::Protocol(format!(
                    "layer {idx}: gradient length {} does not match current support {}",
                    g.len(),
                    server_model.layers()[idx].nnz()
                )));
            }
        }
        return Ok((update.clone(), 0));
    }
    if update_support.len() != update.layer_grads.len() {
        return Err(Error::Protocol("stale push without a usable support snapshot".into()));
    }
    let mut dropped = 0u64;
    let mut layer_grads = Vec::with_capacity(update.layer_grads.len());
    for (idx, grads) in update.layer_grads.iter().enumerate() {
        let old = &update_support[idx];
        let new = &server_model.layers()[idx];
        if old.nnz() != grads.len() || old.rows != new.rows() || old.cols != new.cols() {
            return Err(Error::Protocol(format!(
                "layer {idx}: stale push support is inconsistent with its gradient"
            )));
        }
        let mut retained = vec![T::zero(); new.nnz()];
        for r in 0..new.rows() {
            let old_cols = old.row_cols(r);
            let old_base = old.row_ptr[r];
            let (new_cols, _) = new.row_entries(r);
            let new_base = new.row_ptr()[r];
            let mut ni = 0;
            for (ok, &oc) in old_cols.iter().enumerate() {
                while ni < new_cols.len() && new_cols[ni] < oc {
                    ni += 1;
                }
                if ni < new_cols.len() && new_cols[ni] == oc {
                    retained[new_base + ni] = grads[old_base + ok];
                    ni += 1;
                } else {
                    dropped += 1;
                }
            }
        }
        layer_grads.push(retained);
    }
    // Biases are dense and never restructured.
    for (idx, b) in update.bias_grads.iter().enumerate() {
        if b.len() != server_model.biases()[idx].len() {
            return Err(Error::Protocol(format!("layer {idx}: bias gradient length mismatch")));
        }
    }
    Ok((
        GradientUpdate {
            layer_grads,
            bias_grads: update.bias_grads.clone(),
            timestamp: current,
            sample_count: update.sample_count,
        },
        dropped,
    ))
}

/// Independent recheck of the retention result: every retained entry must
/// sit at a position the worker actually pushed, and the worker entries
/// reported dropped must be exactly those absent from the server support.
fn audit_retention<T: Real>(
    update: &GradientUpdate<T>,
    update_support: &[Support],
    server_model: &SparseNetwork<T>,
    dropped: u64,
) -> bool {
    if update.timestamp == server_model.topology_version() {
        return dropped == 0;
    }
    let mut expect_dropped = 0u64;
    for (idx, old) in update_support.iter().enumerate() {
        let server: HashSet<(usize, u32)> = {
            let w = &server_model.layers()[idx];
            let mut set = HashSet::with_capacity(w.nnz());
            for r in 0..w.rows() {
                for &c in w.row_entries(r).0 {
                    set.insert((r, c));
                }
            }
            set
        };
        for r in 0..old.rows {
            for &c in old.row_cols(r) {
                if !server.contains(&(r, c)) {
                    expect_dropped += 1;
                }
            }
        }
    }
    expect_dropped == dropped
}

pub struct ServerState<T: Real> {
    model: SparseNetwork<T>,
    opt: OptimizerState<T>,
    evo: EvolutionConfig,
    t_prime: u64,
    epoch: u64,
    updates_per_epoch: u64,
    tau1: u64,
    final_epoch: u64,
    phase: Phase,
    evolve_rng: Rng,
    base_eta: f64,
    lr_boost: f64,
    lr_boost_epochs: u64,
    // epoch accumulators
    loss_sum: f64,
    correct: usize,
    samples: usize,
    flow_sum: f64,
    updates_in_epoch: u64,
    pending_prune: Option<PruneSummary>,
    epoch_started: Instant,
    // run-wide accounting
    pub(crate) records: Vec<EpochRecord>,
    pub(crate) audit: Vec<AuditRecord>,
    pub(crate) dropped_entries: u64,
    pub(crate) full_drops: u64,
    audit_enabled: bool,
}

impl<T: Real> ServerState<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: SparseNetwork<T>,
        opt: OptimizerState<T>,
        evo: EvolutionConfig,
        updates_per_epoch: u64,
        tau1: u64,
        final_epoch: u64,
        evolve_rng: Rng,
        lr_boost: f64,
        lr_boost_epochs: u64,
        audit_enabled: bool,
    ) -> Self {
        let base_eta = opt.eta();
        ServerState {
            model,
            opt,
            evo,
            t_prime: 0,
            epoch: 0,
            updates_per_epoch: updates_per_epoch.max(1),
            tau1,
            final_epoch,
            phase: Phase::One,
            evolve_rng,
            base_eta,
            lr_boost,
            lr_boost_epochs,
            loss_sum: 0.0,
            correct: 0,
            samples: 0,
            flow_sum: 0.0,
            updates_in_epoch: 0,
            pending_prune: None,
            epoch_started: Instant::now(),
            records: Vec::new(),
            audit: Vec::new(),
            dropped_entries: 0,
            full_drops: 0,
            audit_enabled,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn t_prime(&self) -> u64 {
        self.t_prime
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn model(&self) -> &SparseNetwork<T> {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.opt
    }

    fn effective_eta(&self) -> f64 {
        if self.epoch < self.lr_boost_epochs {
            self.base_eta * self.lr_boost
        } else {
            self.base_eta
        }
    }

    /// Applies one push and replies with the post-update model. The epoch
    /// boundary (`t' % updates_per_epoch == 0`) runs importance pruning on
    /// schedule, SET evolution, realignment, and test evaluation while
    /// the server holds exclusive model access.
    pub fn server_step(&mut self, push: GradPush<T>, data: &Dataset<T>) -> Result<ModelReply<T>> {
        if self.phase != Phase::One {
            return Err(Error::Protocol(format!(
                "push from worker {} outside phase one",
                push.worker_id
            )));
        }
        match retain_valid_updates(&push.update, &push.support, &self.model) {
            Ok((grad, dropped)) => {
                if self.audit_enabled {
                    let ok = audit_retention(&push.update, &push.support, &self.model, dropped);
                    if !ok {
                        return Err(Error::Protocol(format!(
                            "retention audit failed for worker {}",
                            push.worker_id
                        )));
                    }
                }
                self.dropped_entries += dropped;
                self.opt.set_eta(self.effective_eta());
                sgd_momentum_step(&mut self.model, &mut self.opt, &grad)?;
                self.loss_sum += push.loss_sum;
                self.correct += push.correct;
                self.samples += push.batch_len;
                self.flow_sum += push.flow;
                self.updates_in_epoch += 1;
                self.t_prime += 1;
                if self.audit_enabled {
                    self.audit.push(AuditRecord {
                        msg_type: "push",
                        worker_id: push.worker_id,
                        t: push.t,
                        t_prime: self.t_prime,
                        layer_nnz: self.model.layer_nnz(),
                        dropped_entries: dropped,
                    });
                }
                if self.t_prime % self.updates_per_epoch == 0 {
                    self.complete_epoch(data)?;
                }
            }
            Err(err) => {
                // Undecodable or from-the-future push: discard entirely.
                log::warn!("dropping gradient from worker {}: {err}", push.worker_id);
                self.full_drops += 1;
                if self.audit_enabled {
                    self.audit.push(AuditRecord {
                        msg_type: "drop",
                        worker_id: push.worker_id,
                        t: push.t,
                        t_prime: self.t_prime,
                        layer_nnz: self.model.layer_nnz(),
                        dropped_entries: push.update.layer_grads.iter().map(|g| g.len() as u64).sum(),
                    });
                }
            }
        }
        let done = self.phase != Phase::One;
        Ok(ModelReply {
            model: self.model.clone(),
            t_prime: self.t_prime,
            phase_one_done: done,
            opt: if done { Some(self.opt.clone()) } else { None },
        })
    }

    fn complete_epoch(&mut self, data: &Dataset<T>) -> Result<()> {
        self.epoch += 1;
        // Restore the base rate before evolving so phase-two replicas
        // inherit an un-boosted optimizer.
        self.opt.set_eta(self.base_eta);
        let completing = self.epoch;
        let pruning = train::epoch_boundary(
            &mut self.model,
            &mut self.opt,
            &self.evo,
            completing,
            self.final_epoch,
            &mut self.evolve_rng,
        )?;
        self.pending_prune = pruning;
        let (test_loss, test_acc) =
            self.model
                .evaluate(&data.test.features, &data.test.labels, train::EVAL_BATCH)?;
        self.records.push(EpochRecord {
            epoch: self.epoch,
            train_loss: self.loss_sum / self.samples.max(1) as f64,
            train_acc: self.correct as f64 / self.samples.max(1) as f64,
            test_loss,
            test_acc,
            layer_nnz: self.model.layer_nnz(),
            gradient_flow: self.flow_sum / self.updates_in_epoch.max(1) as f64,
            seconds: self.epoch_started.elapsed().as_secs_f64(),
            pruning: self.pending_prune.take(),
        });
        self.loss_sum = 0.0;
        self.correct = 0;
        self.samples = 0;
        self.flow_sum = 0.0;
        self.updates_in_epoch = 0;
        self.epoch_started = Instant::now();
        if self.epoch >= self.tau1 {
            self.phase = Phase::Two;
        }
        Ok(())
    }

    /// Tears the server down at the end of phase one.
    pub fn into_parts(self) -> (SparseNetwork<T>, OptimizerState<T>, Rng, Vec<EpochRecord>, Vec<AuditRecord>, u64, u64) {
        (
            self.model,
            self.opt,
            self.evolve_rng,
            self.records,
            self.audit,
            self.dropped_entries,
            self.full_drops,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, InitScheme, LossKind, NetworkConfig};
    use crate::sparse::SparseWeights;

    fn fixture_network(entries: Vec<(usize, usize, f64)>) -> SparseNetwork<f64> {
        let config = NetworkConfig {
            layer_sizes: vec![2, 2, 2],
            epsilon: 10.0,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            init_scheme: InitScheme::Xavier,
            loss: LossKind::SoftmaxCrossEntropy,
            seed: 0,
        };
        let l1 = SparseWeights::from_entries(2, 2, entries).unwrap();
        let l2 = SparseWeights::from_entries(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        SparseNetwork::from_parts(config, vec![l1, l2], vec![vec![0.0; 2], vec![0.0; 2]]).unwrap()
    }

    #[test]
    fn matching_version_passes_through() {
        let server = fixture_network(vec![(0, 0, 1.0), (0, 1, 2.0)]);
        let update = GradientUpdate {
            layer_grads: vec![vec![0.5, -0.5], vec![0.1, 0.2]],
            bias_grads: vec![vec![0.0; 2], vec![0.0; 2]],
            timestamp: server.topology_version(),
            sample_count: 4,
        };
        let (retained, dropped) = retain_valid_updates(&update, &server.supports(), &server).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(retained.layer_grads, update.layer_grads);
    }

    #[test]
    fn stale_push_intersects_supports() {
        // worker topology {(0,0),(0,1)}, server topology {(0,1),(1,1)}
        let worker = fixture_network(vec![(0, 0, 1.0), (0, 1, 2.0)]);
        let mut server = fixture_network(vec![(0, 1, 2.0), (1, 1, 3.0)]);
        server.bump_version();
        let update = GradientUpdate {
            layer_grads: vec![vec![10.0, 20.0], vec![0.1, 0.2]],
            bias_grads: vec![vec![0.0; 2], vec![0.0; 2]],
            timestamp: 0,
            sample_count: 4,
        };
        let (retained, dropped) = retain_valid_updates(&update, &worker.supports(), &server).unwrap();
        assert_eq!(dropped, 1); // (0,0) had no home
        // server layout: [(0,1), (1,1)] → the (0,1) gradient lands first
        assert_eq!(retained.layer_grads[0], vec![20.0, 0.0]);
        assert_eq!(retained.timestamp, server.topology_version());
        assert!(audit_retention(&update, &worker.supports(), &server, dropped));
    }

    #[test]
    fn push_from_the_future_is_rejected() {
        let server = fixture_network(vec![(0, 0, 1.0)]);
        let update = GradientUpdate {
            layer_grads: vec![vec![1.0], vec![0.0, 0.0]],
            bias_grads: vec![vec![0.0; 2], vec![0.0; 2]],
            timestamp: 5,
            sample_count: 1,
        };
        assert!(retain_valid_updates(&update, &server.supports(), &server).is_err());
    }
}
