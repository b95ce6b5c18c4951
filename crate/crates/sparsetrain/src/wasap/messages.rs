//! Wire contract between workers and the parameter server. Workers in
//! this crate are threads, but the message schema is the module boundary:
//! a multi-process deployment changes transport only.

use crate::nn::{GradientUpdate, SparseNetwork};
use crate::optim::OptimizerState;
use crate::real::Real;
use crate::sparse::Support;

/// A worker's gradient push. Carries the support of the snapshot the
/// gradient was computed on, which is what sparse gradient communication
/// sends anyway and what lets the server intersect a stale update against
/// its current topology.
#[derive(Clone, Debug)]
pub struct GradPush<T> {
    pub worker_id: usize,
    /// Server update counter at the worker's last sync.
    pub t: u64,
    pub update: GradientUpdate<T>,
    pub support: Vec<Support>,
    /// Batch metrics for the server's epoch accounting.
    pub loss_sum: f64,
    pub correct: usize,
    pub batch_len: usize,
    /// Squared gradient norm of the pushed update.
    pub flow: f64,
}

/// The server's answer to one push: the post-update model snapshot.
#[derive(Clone, Debug)]
pub struct ModelReply<T: Real> {
    pub model: SparseNetwork<T>,
    pub t_prime: u64,
    pub phase_one_done: bool,
    /// Final optimizer state, present only in the phase-switch reply so
    /// replicas carry momentum into local training.
    pub opt: Option<OptimizerState<T>>,
}

/// One line of the protocol audit log.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRecord {
    pub msg_type: &'static str,
    pub worker_id: usize,
    pub t: u64,
    pub t_prime: u64,
    pub layer_nnz: Vec<usize>,
    pub dropped_entries: u64,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        let nnz: Vec<String> = self.layer_nnz.iter().map(|n| n.to_string()).collect();
        format!(
            "msg={} worker={} t={} t_prime={} nnz={} dropped={}",
            self.msg_type,
            self.worker_id,
            self.t,
            self.t_prime,
            nnz.join(","),
            self.dropped_entries
        )
    }
}
