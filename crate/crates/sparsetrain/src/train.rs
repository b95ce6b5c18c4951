//! Sequential momentum-SGD training with SET topology evolution and
//! importance-pruning scheduling.

use std::time::Instant;

use rand::seq::SliceRandom as _;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{count_correct, gradient_flow, Mode, SparseNetwork};
use crate::optim::{realign_optimizer, sgd_momentum_step, OptimizerState};
use crate::real::Real;
use crate::seeds::{self, Rng};
use crate::topology::{evolve_network, importance_prune, EvolutionConfig};

pub(crate) const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub epochs: u64,
    pub batch_size: usize,
    /// When set, the loop stops cleanly at the next epoch boundary after
    /// the flag goes true (the CLI wires SIGINT here).
    pub stop: Option<std::sync::Arc<std::sync::atomic::AtomicBool>>,
}

impl TrainOptions {
    pub fn new(epochs: u64, batch_size: usize) -> Self {
        TrainOptions { epochs, batch_size, stop: None }
    }

    fn stop_requested(&self) -> bool {
        self.stop
            .as_ref()
            .map(|f| f.load(std::sync::atomic::Ordering::SeqCst))
            .unwrap_or(false)
    }
}

/// The RNG streams a trainer consumes: `data` drives shard shuffling and
/// dropout, `evolve` drives topology regrowth. Deriving them separately
/// keeps sequential and single-worker parallel runs on identical streams.
pub struct TrainRngs {
    pub data: Rng,
    pub evolve: Rng,
}

impl TrainRngs {
    pub fn for_worker(master_seed: u64, worker: usize) -> Self {
        TrainRngs {
            data: seeds::worker_rng(master_seed, worker),
            evolve: seeds::evolve_rng(master_seed),
        }
    }
}

/// Importance-pruning summary attached to the epoch where it fired.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneSummary {
    pub pruned_neurons_per_layer: Vec<usize>,
    pub removed_connections: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub layer_nnz: Vec<usize>,
    /// Mean squared gradient norm over the epoch's minibatch updates.
    pub gradient_flow: f64,
    pub seconds: f64,
    pub pruning: Option<PruneSummary>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Test metrics of the final model when it differs from the last
    /// epoch's network (the averaged model of a parallel run).
    pub final_eval: Option<(f64, f64)>,
}

impl TrainReport {
    pub fn final_test_acc(&self) -> f64 {
        self.final_eval
            .map(|(_, acc)| acc)
            .or_else(|| self.epochs.last().map(|e| e.test_acc))
            .unwrap_or(0.0)
    }

    pub fn best_test_acc(&self) -> f64 {
        self.epochs.iter().map(|e| e.test_acc).fold(0.0, f64::max)
    }
}

/// Everything [`run_epoch`] needs to know about its place in a larger run.
pub(crate) struct EpochContext<'a> {
    /// 1-based global epoch number being run.
    pub epoch: u64,
    /// Global final epoch; evolution is skipped when completing it so the
    /// shipped model carries no untrained regrown weights.
    pub final_epoch: u64,
    pub batch_size: usize,
    /// Row indices of this trainer's shard of the training partition.
    pub shard: &'a [usize],
    pub evaluate: bool,
}

/// One full epoch: shuffle, minibatch SGD, then the epoch-boundary
/// structural routine (importance pruning on schedule, SET evolution,
/// optimizer realignment).
pub(crate) fn run_epoch<T: Real>(
    network: &mut SparseNetwork<T>,
    opt: &mut OptimizerState<T>,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    ctx: &EpochContext<'_>,
    rngs: &mut TrainRngs,
) -> Result<EpochRecord> {
    let started = Instant::now();
    let mut order: Vec<usize> = ctx.shard.to_vec();
    order.shuffle(&mut rngs.data);

    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut flow_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(ctx.batch_size) {
        let batch = data.train.features.gather_rows(chunk);
        let labels: Vec<u32> = chunk.iter().map(|&i| data.train.labels[i]).collect();
        let trace = network.forward(&batch, Mode::Train, Some(&mut rngs.data))?;
        loss_sum += network.config().loss.loss(trace.output(), &labels)? * labels.len() as f64;
        correct += count_correct(trace.output(), &labels);
        let grad = network.backward(&trace, &labels, opt.lambda())?;
        flow_sum += gradient_flow(&grad);
        sgd_momentum_step(network, opt, &grad)?;
        batches += 1;
    }

    let pruning = epoch_boundary(network, opt, evo, ctx.epoch, ctx.final_epoch, &mut rngs.evolve)?;

    let (test_loss, test_acc) = if ctx.evaluate {
        network.evaluate(&data.test.features, &data.test.labels, EVAL_BATCH)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(EpochRecord {
        epoch: ctx.epoch,
        train_loss: loss_sum / order.len() as f64,
        train_acc: correct as f64 / order.len() as f64,
        test_loss,
        test_acc,
        layer_nnz: network.layer_nnz(),
        gradient_flow: flow_sum / batches.max(1) as f64,
        seconds: started.elapsed().as_secs_f64(),
        pruning,
    })
}

/// The end-of-epoch structural routine shared by every trainer: prune by
/// importance when the schedule fires, evolve every layer, and realign
/// the optimizer after each structural edit. Skipped entirely when
/// completing the final epoch.
pub(crate) fn epoch_boundary<T: Real>(
    network: &mut SparseNetwork<T>,
    opt: &mut OptimizerState<T>,
    evo: &EvolutionConfig,
    completing_epoch: u64,
    final_epoch: u64,
    evolve_rng: &mut Rng,
) -> Result<Option<PruneSummary>> {
    if completing_epoch >= final_epoch {
        return Ok(None);
    }
    let mut summary = None;
    if evo.importance_fires(completing_epoch) {
        let before = network.supports();
        let report = importance_prune(network, evo.importance_percentile)?;
        realign_optimizer(opt, &before, network);
        summary = Some(PruneSummary {
            pruned_neurons_per_layer: report.pruned_neurons.iter().map(|v| v.len()).collect(),
            removed_connections: report.total_removed(),
        });
    }
    let before = network.supports();
    evolve_network(network, evo.zeta, evolve_rng)?;
    realign_optimizer(opt, &before, network);
    Ok(summary)
}

/// Sequential training over the full training partition; the baseline the
/// parallel trainers are compared against.
pub fn train_sequential<T: Real>(
    network: &mut SparseNetwork<T>,
    opt: &mut OptimizerState<T>,
    evo: &EvolutionConfig,
    data: &Dataset<T>,
    opts: &TrainOptions,
    rngs: &mut TrainRngs,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if opts.epochs == 0 {
        return Err(Error::Argument("epochs must be >= 1".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    evo.validate()?;
    let shard: Vec<usize> = (0..data.train.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=opts.epochs {
        let ctx = EpochContext {
            epoch,
            final_epoch: opts.epochs,
            batch_size: opts.batch_size,
            shard: &shard,
            evaluate: true,
        };
        let record = run_epoch(network, opt, evo, data, &ctx, rngs)?;
        on_epoch(&record);
        report.epochs.push(record);
        if opts.stop_requested() {
            log::warn!("stop requested; ending the run after epoch {epoch}");
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RawData, SynthParams};
    use crate::dense::DenseMatrix;
    use crate::nn::{Activation, InitScheme, LossKind, NetworkConfig};
    use crate::seeds;

    fn toy_dataset(seed: u64) -> Dataset<f32> {
        let params = SynthParams {
            n_samples: 80,
            n_features: 6,
            n_informative: 3,
            n_redundant: 1,
            n_classes: 2,
            class_sep: 2.0,
            flip_fraction: 0.0,
        };
        let raw = crate::data::synth_classification(&params, &mut seeds::synth_rng(seed)).unwrap();
        Dataset::from_raw(&raw, 0.25, &mut seeds::split_rng(seed)).unwrap()
    }

    fn toy_network(seed: u64, dropout: f64) -> SparseNetwork<f32> {
        SparseNetwork::init(NetworkConfig {
            layer_sizes: vec![6, 12, 8, 2],
            epsilon: 8.0,
            activation: Activation::AllRelu { alpha: 0.5 },
            dropout_rate: dropout,
            init_scheme: InitScheme::HeUniform,
            loss: LossKind::SoftmaxCrossEntropy,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn fixed_seed_runs_are_bit_identical() {
        let data = toy_dataset(3);
        let run = || {
            let mut net = toy_network(5, 0.2);
            let mut opt = OptimizerState::new(0.05, 0.9, 0.0002, &net).unwrap();
            let mut rngs = TrainRngs::for_worker(17, 0);
            train_sequential(
                &mut net,
                &mut opt,
                &EvolutionConfig::default(),
                &data,
                &TrainOptions { epochs: 6, batch_size: 8 },
                &mut rngs,
                |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.epochs.len(), b.epochs.len());
        for (ra, rb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.test_acc.to_bits(), rb.test_acc.to_bits());
            assert_eq!(ra.layer_nnz, rb.layer_nnz);
            assert_eq!(ra.gradient_flow.to_bits(), rb.gradient_flow.to_bits());
        }
    }

    #[test]
    fn nnz_constant_without_importance_pruning() {
        let data = toy_dataset(4);
        let mut net = toy_network(6, 0.0);
        let start = net.layer_nnz();
        let mut opt = OptimizerState::new(0.05, 0.9, 0.0, &net).unwrap();
        let mut rngs = TrainRngs::for_worker(1, 0);
        let report = train_sequential(
            &mut net,
            &mut opt,
            &EvolutionConfig::default(),
            &data,
            &TrainOptions { epochs: 5, batch_size: 8 },
            &mut rngs,
            |_| {},
        )
        .unwrap();
        for rec in &report.epochs {
            assert_eq!(rec.layer_nnz, start);
            assert!(rec.gradient_flow >= 0.0);
        }
    }

    #[test]
    fn importance_pruning_monotone_nnz() {
        let data = toy_dataset(5);
        let mut net = toy_network(7, 0.0);
        let mut opt = OptimizerState::new(0.05, 0.9, 0.0, &net).unwrap();
        let mut rngs = TrainRngs::for_worker(2, 0);
        let evo = EvolutionConfig {
            importance_enabled: true,
            importance_start_epoch: 2,
            importance_period: 2,
            importance_percentile: 10.0,
            ..EvolutionConfig::default()
        };
        let report = train_sequential(
            &mut net,
            &mut opt,
            &evo,
            &data,
            &TrainOptions { epochs: 8, batch_size: 8 },
            &mut rngs,
            |_| {},
        )
        .unwrap();
        let totals: Vec<usize> = report.epochs.iter().map(|r| r.layer_nnz.iter().sum()).collect();
        for pair in totals.windows(2) {
            assert!(pair[1] <= pair[0], "nnz grew: {totals:?}");
        }
        assert!(report.epochs.iter().any(|r| r.pruning.is_some()));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let data = toy_dataset(6);
        // learning rate cannot be 0 by construction; use the smallest
        // positive and no dropout: weights barely move, loss ~constant
        let mut net = toy_network(8, 0.0);
        let mut opt = OptimizerState::new(1e-30, 0.0, 0.0, &net).unwrap();
        let mut rngs = TrainRngs::for_worker(3, 0);
        let evo = EvolutionConfig { zeta: 1e-9, ..EvolutionConfig::default() };
        let report = train_sequential(
            &mut net,
            &mut opt,
            &evo,
            &data,
            &TrainOptions { epochs: 3, batch_size: 16 },
            &mut rngs,
            |_| {},
        )
        .unwrap();
        let first = report.epochs.first().unwrap().train_loss;
        for rec in &report.epochs {
            assert!((rec.train_loss - first).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = Dataset::<f32> {
            train: crate::data::Split { features: DenseMatrix::zeros(0, 6), labels: vec![] },
            test: crate::data::Split { features: DenseMatrix::zeros(0, 6), labels: vec![] },
            class_count: 2,
            stats: crate::data::StandardizeStats { mean: vec![], std: vec![] },
        };
        let mut net = toy_network(9, 0.0);
        let mut opt = OptimizerState::new(0.01, 0.9, 0.0, &net).unwrap();
        let mut rngs = TrainRngs::for_worker(4, 0);
        assert!(train_sequential(
            &mut net,
            &mut opt,
            &EvolutionConfig::default(),
            &data,
            &TrainOptions { epochs: 1, batch_size: 8 },
            &mut rngs,
            |_| {},
        )
        .is_err());
        let raw = RawData {
            features: DenseMatrix::zeros(0, 1),
            labels: vec![],
            class_count: 1,
            label_names: vec![],
        };
        assert!(crate::data::split(&raw, 0.3, &mut seeds::rng_for(0, 0)).is_err());
    }
}
