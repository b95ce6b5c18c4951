//! Two-phase parallel training.
//!
//! Phase one trains asynchronously through a parameter server: workers
//! push gradients computed on their own model snapshots and receive the
//! updated model back; stale pushes are filtered against the server's
//! current topology. Phase two lets every worker train its replica
//! locally on its shard, evolving topology independently. The K replicas
//! are then averaged over the union support and magnitude-pruned back to
//! the phase-one per-layer connection counts.
//!
//! A synchronous variant (WASSP) replaces phase one with gradient
//! averaging over all K workers per step, with a linear learning-rate
//! warmup toward K·η.

mod messages;
mod server;

pub use messages::{AuditRecord, GradPush, ModelReply};
pub use server::{retain_valid_updates, Phase, ServerState};

use std::sync::mpsc;

use crate::data::{shard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{count_correct, gradient_flow, GradientUpdate, Mode, NetworkConfig, SparseNetwork};
use crate::optim::{sgd_momentum_step, OptimizerState};
use crate::real::Real;
use crate::seeds::{self, Rng};
use crate::topology::{average_models, EvolutionConfig};
use crate::train::{self, EpochContext, EpochRecord, TrainReport, TrainRngs};

/// How phase-one messages are interleaved.
#[derive(Clone, Debug)]
pub enum Schedule {
    /// Real threads over two queues; timing decides the interleaving.
    Threaded,
    /// A deterministic worker-id script, cycled until phase one ends.
    /// Serializes everything for reproducibility tests.
    Scripted(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct WasapOptions {
    pub workers: usize,
    /// Phase-one exit epoch τ₁.
    pub tau1: u64,
    /// Final epoch τ₂; phase two spans `tau1+1..=tau2`.
    pub tau2: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Phase-one boosted-start factor: the learning rate runs at
    /// `lr_boost · η` for the first `lr_boost_epochs` epochs.
    pub lr_boost: f64,
    pub lr_boost_epochs: u64,
    /// WASSP warmup span (epochs over which η ramps to K·η).
    pub warmup_epochs: u64,
    pub schedule: Schedule,
    pub audit: bool,
}

impl WasapOptions {
    pub fn new(workers: usize, tau1: u64, tau2: u64, batch_size: usize, seed: u64) -> Self {
        WasapOptions {
            workers,
            tau1,
            tau2,
            batch_size,
            seed,
            lr_boost: 2.0,
            lr_boost_epochs: 5,
            warmup_epochs: 5,
            schedule: Schedule::Threaded,
            audit: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Argument("need at least one worker".into()));
        }
        if self.tau1 == 0 || self.tau2 < self.tau1 {
            return Err(Error::Argument(format!(
                "phase epochs must satisfy 1 <= tau1 <= tau2, got {}/{}",
                self.tau1, self.tau2
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything a finished parallel run exposes.
pub struct WasapOutcome<T> {
    pub model: SparseNetwork<T>,
    pub report: TrainReport,
    pub audit: Vec<AuditRecord>,
    pub dropped_entries: u64,
    pub full_drops: u64,
    /// Per-layer connection counts of the phase-one model; the averaged
    /// model is re-sparsified to exactly these.
    pub phase1_nnz: Vec<usize>,
}

struct Worker<T> {
    id: usize,
    shard: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    model: SparseNetwork<T>,
    t: u64,
    rng: Rng,
    lambda: T,
    pushed: u64,
}

impl<T: Real> Worker<T> {
    fn new(id: usize, shard_idx: Vec<usize>, model: SparseNetwork<T>, seed: u64, lambda: T) -> Self {
        Worker {
            id,
            shard: shard_idx,
            order: Vec::new(),
            cursor: usize::MAX, // forces a shuffle before the first batch
            model,
            t: 0,
            rng: seeds::worker_rng(seed, id),
            lambda,
            pushed: 0,
        }
    }

    /// Computes one minibatch gradient against the worker's snapshot.
    fn compute_push(&mut self, data: &Dataset<T>, batch_size: usize) -> Result<GradPush<T>> {
        if self.cursor >= self.order.len() {
            use rand::seq::SliceRandom as _;
            self.order = self.shard.clone();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch_size).min(self.order.len());
        let chunk = &self.order[self.cursor..end];
        self.cursor = end;
        let batch = data.train.features.gather_rows(chunk);
        let labels: Vec<u32> = chunk.iter().map(|&i| data.train.labels[i]).collect();
        let trace = self.model.forward(&batch, Mode::Train, Some(&mut self.rng))?;
        let loss = self.model.config().loss.loss(trace.output(), &labels)?;
        let correct = count_correct(trace.output(), &labels);
        let update = self.model.backward(&trace, &labels, self.lambda)?;
        let flow = gradient_flow(&update);
        self.pushed += 1;
        Ok(GradPush {
            worker_id: self.id,
            t: self.t,
            update,
            support: self.model.supports(),
            loss_sum: loss * labels.len() as f64,
            correct,
            batch_len: labels.len(),
            flow,
        })
    }

    fn adopt(&mut self, reply: ModelReply<T>) -> Option<OptimizerState<T>> {
        self.model = reply.model;
        self.t = reply.t_prime;
        reply.opt
    }

    /// Total pushes needed for one pass over this worker's shard.
    fn chunks_per_epoch(&self, batch_size: usize) -> u64 {
        (self.shard.len() as u64).div_ceil(batch_size as u64)
    }

    /// Whether this worker has pushed its full shard for the given epoch.
    /// WASSP steps are lock-step; shorter shards sit out the last step.
    fn epoch_done(&self, batch_size: usize, epoch: u64) -> bool {
        self.pushed >= self.chunks_per_epoch(batch_size) * epoch
    }
}

fn make_workers<T: Real>(
    model: &SparseNetwork<T>,
    data: &Dataset<T>,
    opts: &WasapOptions,
    lambda: T,
) -> Vec<Worker<T>> {
    let shards = shard(data.train.len(), opts.workers);
    shards
        .into_iter()
        .enumerate()
        .map(|(k, s)| Worker::new(k, s, model.clone(), opts.seed, lambda))
        .collect()
}

/// Phase two: independent local SET training of each replica on its own
/// shard, momentum carried over from phase one. Replicas run on threads;
/// they share nothing, so the result is deterministic regardless of
/// scheduling. Worker 0's per-epoch records stream back to the caller as
/// they complete.
#[allow(clippy::type_complexity)]
fn run_phase_two<T: Real>(
    workers: Vec<Worker<T>>,
    final_model: &SparseNetwork<T>,
    final_opt: &OptimizerState<T>,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    opts: &WasapOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Vec<SparseNetwork<T>>, Vec<EpochRecord>)> {
    if opts.tau2 == opts.tau1 {
        return Ok((workers.into_iter().map(|w| w.model).collect(), Vec::new()));
    }
    let (record_tx, record_rx) = mpsc::channel::<EpochRecord>();
    let results: Vec<Result<SparseNetwork<T>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in workers {
            let evo = evo.clone();
            let model = final_model.clone();
            let opt = final_opt.clone();
            let record_tx = if worker.id == 0 { Some(record_tx.clone()) } else { None };
            handles.push(scope.spawn(move || -> Result<SparseNetwork<T>> {
                let mut model = model;
                let mut opt = opt;
                let mut rngs = TrainRngs {
                    data: worker.rng,
                    evolve: seeds::local_evolve_rng(opts.seed, worker.id),
                };
                for epoch in opts.tau1 + 1..=opts.tau2 {
                    let ctx = EpochContext {
                        epoch,
                        final_epoch: opts.tau2,
                        batch_size: opts.batch_size,
                        shard: &worker.shard,
                        evaluate: worker.id == 0,
                    };
                    let record = train::run_epoch(&mut model, &mut opt, &evo, data, &ctx, &mut rngs)?;
                    if let Some(tx) = &record_tx {
                        let _ = tx.send(record);
                    }
                }
                Ok(model)
            }));
        }
        drop(record_tx);
        // Stream worker 0's records while the replicas run.
        let mut records = Vec::new();
        while let Ok(record) = record_rx.recv() {
            on_epoch(&record);
            records.push(record);
        }
        let results: Vec<Result<SparseNetwork<T>>> = handles
            .into_iter()
            .map(|h| h.join().expect("phase-two worker panicked"))
            .collect();
        RECORDS.with(|slot| *slot.borrow_mut() = records);
        results
    });
    let records = RECORDS.with(|slot| std::mem::take(&mut *slot.borrow_mut()));
    let mut replicas = Vec::new();
    for result in results {
        replicas.push(result?);
    }
    Ok((replicas, records))
}

thread_local! {
    static RECORDS: std::cell::RefCell<Vec<EpochRecord>> = const { std::cell::RefCell::new(Vec::new()) };
}

fn finish_run<T: Real>(
    replicas: Vec<SparseNetwork<T>>,
    phase1_nnz: Vec<usize>,
    mut report: TrainReport,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    audit: Vec<AuditRecord>,
    dropped_entries: u64,
    full_drops: u64,
) -> Result<WasapOutcome<T>> {
    let targets: Vec<usize> = match evo.target_sparsity {
        Some(s) => replicas[0]
            .layers()
            .iter()
            .map(|w| (((1.0 - s) * (w.rows() * w.cols()) as f64).round() as usize).max(1))
            .collect(),
        None => phase1_nnz.clone(),
    };
    let model = average_models(&replicas, &targets)?;
    let final_eval = model.evaluate(&data.test.features, &data.test.labels, train::EVAL_BATCH)?;
    report.final_eval = Some(final_eval);
    Ok(WasapOutcome {
        model,
        report,
        audit,
        dropped_entries,
        full_drops,
        phase1_nnz,
    })
}

/// Runs WASAP: asynchronous parameter-server training until τ₁, local
/// replica training until τ₂, then sparse averaging with magnitude
/// re-sparsification back to the phase-one counts.
pub fn run_wasap<T: Real>(
    config: &NetworkConfig,
    eta: f64,
    mu: f64,
    lambda: f64,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    opts: &WasapOptions,
) -> Result<WasapOutcome<T>> {
    opts.validate()?;
    evo.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if opts.workers > cores {
        log::info!(
            "running {} workers on {} available cores; oversubscribing",
            opts.workers,
            cores
        );
    }
    let model = SparseNetwork::<T>::init(config.clone())?;
    let opt = OptimizerState::new(eta, mu, lambda, &model)?;
    let mut workers = make_workers(&model, data, opts, opt.lambda());
    let updates_per_epoch: u64 = workers.iter().map(|w| w.chunks_per_epoch(opts.batch_size)).sum();
    let mut server = ServerState::new(
        model,
        opt,
        evo.clone(),
        updates_per_epoch,
        opts.tau1,
        opts.tau2,
        seeds::evolve_rng(opts.seed),
        opts.lr_boost,
        opts.lr_boost_epochs,
        opts.audit,
    );

    match &opts.schedule {
        Schedule::Scripted(script) => {
            if script.is_empty() {
                return Err(Error::Argument("scripted schedule cannot be empty".into()));
            }
            if let Some(&bad) = script.iter().find(|&&w| w >= opts.workers) {
                return Err(Error::Argument(format!("script references worker {bad}")));
            }
            let mut step = 0usize;
            while server.phase() == Phase::One {
                let wid = script[step % script.len()];
                step += 1;
                let push = workers[wid].compute_push(data, opts.batch_size)?;
                let reply = server.server_step(push, data)?;
                workers[wid].adopt(reply);
            }
        }
        Schedule::Threaded => {
            workers = run_phase_one_threaded(&mut server, workers, data, opts)?;
        }
    }

    let (final_model, final_opt, _evolve_rng, records, audit, dropped, full_drops) =
        server.into_parts();
    // Every replica starts phase two from the final phase-one model.
    for w in &mut workers {
        w.model = final_model.clone();
    }
    let phase1_nnz = final_model.layer_nnz();
    let mut report = TrainReport { epochs: records, final_eval: None };
    let (replicas, phase2_records) =
        run_phase_two(workers, &final_model, &final_opt, evo, data, opts)?;
    report.epochs.extend(phase2_records);
    finish_run(replicas, phase1_nnz, report, evo, data, audit, dropped, full_drops)
}

/// Phase one over real threads: one push queue into the server, one reply
/// queue per worker. Every push is answered by exactly one reply; pushes
/// that were already in flight when phase one ended are answered with the
/// final model without being applied.
fn run_phase_one_threaded<T: Real>(
    server: &mut ServerState<T>,
    workers: Vec<Worker<T>>,
    data: &Dataset<T>,
    opts: &WasapOptions,
) -> Result<Vec<Worker<T>>> {
    let worker_count = workers.len();
    let (push_tx, push_rx) = mpsc::channel::<GradPush<T>>();
    std::thread::scope(|scope| -> Result<Vec<Worker<T>>> {
        let mut handles = Vec::new();
        let mut reply_txs = Vec::new();
        for mut worker in workers {
            let (reply_tx, reply_rx) = mpsc::channel::<ModelReply<T>>();
            reply_txs.push(reply_tx);
            let push_tx = push_tx.clone();
            handles.push(scope.spawn(move || -> Result<Worker<T>> {
                loop {
                    let push = worker.compute_push(data, opts.batch_size)?;
                    if push_tx.send(push).is_err() {
                        break;
                    }
                    match reply_rx.recv() {
                        Ok(reply) => {
                            let done = reply.phase_one_done;
                            worker.adopt(reply);
                            if done {
                                break;
                            }
                        }
                        Err(_) => break,
                    }
                }
                Ok(worker)
            }));
        }
        drop(push_tx);

        // Serve until every worker has received its phase-switch reply.
        let mut done_replies = 0usize;
        while done_replies < worker_count {
            let push = push_rx
                .recv()
                .map_err(|_| Error::Protocol("workers hung up before phase one finished".into()))?;
            let wid = push.worker_id;
            let reply = if server.phase() == Phase::One {
                server.server_step(push, data)?
            } else {
                ModelReply {
                    model: server.model().clone(),
                    t_prime: server.t_prime(),
                    phase_one_done: true,
                    opt: Some(server.optimizer().clone()),
                }
            };
            if reply.phase_one_done {
                done_replies += 1;
            }
            reply_txs[wid]
                .send(reply)
                .map_err(|_| Error::Protocol(format!("worker {wid} dropped its reply queue")))?;
        }

        let mut out = Vec::with_capacity(worker_count);
        for handle in handles {
            out.push(handle.join().expect("phase-one worker panicked")?);
        }
        Ok(out)
    })
}

/// Runs WASSP, the synchronous variant: per step all K workers compute
/// gradients against the same snapshot, the server applies their mean
/// with an effective batch of K·B, and the learning rate ramps linearly
/// from η to K·η over `warmup_epochs`. Phase two and averaging are
/// identical to WASAP.
pub fn run_wassp<T: Real>(
    config: &NetworkConfig,
    eta: f64,
    mu: f64,
    lambda: f64,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    opts: &WasapOptions,
) -> Result<WasapOutcome<T>> {
    opts.validate()?;
    evo.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let mut model = SparseNetwork::<T>::init(config.clone())?;
    let mut opt = OptimizerState::new(eta, mu, lambda, &model)?;
    let mut workers = make_workers(&model, data, opts, opt.lambda());
    let k = opts.workers;
    let steps_per_epoch: u64 = workers
        .iter()
        .map(|w| w.chunks_per_epoch(opts.batch_size))
        .max()
        .unwrap_or(1);
    let mut evolve_rng = seeds::evolve_rng(opts.seed);
    let mut records: Vec<EpochRecord> = Vec::new();

    for epoch in 1..=opts.tau1 {
        let started = std::time::Instant::now();
        let factor = if k == 1 {
            1.0
        } else if opts.warmup_epochs == 0 {
            k as f64
        } else {
            1.0 + (k as f64 - 1.0) * (epoch.min(opts.warmup_epochs) as f64 / opts.warmup_epochs as f64)
        };
        opt.set_eta(eta * factor);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut samples = 0usize;
        let mut flow_sum = 0.0;
        let mut updates = 0u64;
        for _ in 0..steps_per_epoch {
            // All workers read the same snapshot; computations are
            // independent, so threads change nothing but wall time.
            let pushes: Vec<Option<GradPush<T>>> = if k > 1 {
                let model_ref = &model;
                std::thread::scope(|scope| {
                    let handles: Vec<_> = workers
                        .iter_mut()
                        .map(|w| {
                            scope.spawn(move || -> Result<Option<GradPush<T>>> {
                                w.model = model_ref.clone();
                                if w.epoch_done(opts.batch_size, epoch) {
                                    Ok(None)
                                } else {
                                    w.compute_push(data, opts.batch_size).map(Some)
                                }
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("wassp worker panicked"))
                        .collect::<Result<Vec<_>>>()
                })?
            } else {
                let w = &mut workers[0];
                w.model = model.clone();
                if w.epoch_done(opts.batch_size, epoch) {
                    vec![None]
                } else {
                    vec![Some(w.compute_push(data, opts.batch_size)?)]
                }
            };
            let contributors: Vec<GradPush<T>> = pushes.into_iter().flatten().collect();
            if contributors.is_empty() {
                continue;
            }
            let grad = mean_gradients(&contributors, model.topology_version());
            for push in &contributors {
                loss_sum += push.loss_sum;
                correct += push.correct;
                samples += push.batch_len;
            }
            flow_sum += gradient_flow(&grad);
            updates += 1;
            sgd_momentum_step(&mut model, &mut opt, &grad)?;
        }

        opt.set_eta(eta);
        let pruning = train::epoch_boundary(&mut model, &mut opt, evo, epoch, opts.tau2, &mut evolve_rng)?;
        let (test_loss, test_acc) =
            model.evaluate(&data.test.features, &data.test.labels, train::EVAL_BATCH)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / samples.max(1) as f64,
            train_acc: correct as f64 / samples.max(1) as f64,
            test_loss,
            test_acc,
            layer_nnz: model.layer_nnz(),
            gradient_flow: flow_sum / updates.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
            pruning,
        });
    }

    let phase1_nnz = model.layer_nnz();
    for w in &mut workers {
        w.model = model.clone();
    }
    let mut report = TrainReport { epochs: records, final_eval: None };
    let (replicas, phase2_records) = run_phase_two(workers, &model, &opt, evo, data, opts)?;
    report.epochs.extend(phase2_records);
    finish_run(replicas, phase1_nnz, report, evo, data, Vec::new(), 0, 0)
}

/// Arithmetic mean of gradients computed against identical supports.
fn mean_gradients<T: Real>(pushes: &[GradPush<T>], version: u64) -> GradientUpdate<T> {
    let k_inv = T::from_f64(1.0 / pushes.len() as f64);
    let first = &pushes[0].update;
    let mut layer_grads = first.layer_grads.clone();
    let mut bias_grads = first.bias_grads.clone();
    for push in &pushes[1..] {
        for (acc, layer) in layer_grads.iter_mut().zip(&push.update.layer_grads) {
            for (a, &g) in acc.iter_mut().zip(layer) {
                *a = *a + g;
            }
        }
        for (acc, layer) in bias_grads.iter_mut().zip(&push.update.bias_grads) {
            for (a, &g) in acc.iter_mut().zip(layer) {
                *a = *a + g;
            }
        }
    }
    if pushes.len() > 1 {
        for layer in layer_grads.iter_mut().chain(bias_grads.iter_mut()) {
            for g in layer {
                *g = *g * k_inv;
            }
        }
    }
    GradientUpdate {
        layer_grads,
        bias_grads,
        timestamp: version,
        sample_count: pushes.iter().map(|p| p.batch_len).sum(),
    }
}
