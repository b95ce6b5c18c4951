//! Command-line front end: `gen-data`, `train`, `eval`, `inspect`.
//!
//! The binary stays thin; everything here delegates to library calls so
//! the same flows are scriptable from the examples.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, RunConfig, TrainerKind};
use crate::data::{self, Dataset, SynthParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::SparseNetwork;
use crate::optim::OptimizerState;
use crate::seeds;
use crate::topology::{importance_prune, neuron_importance};
use crate::train::{train_sequential, TrainOptions, TrainRngs};
use crate::wasap::{run_wasap, run_wassp, Schedule, WasapOptions};

#[derive(Parser)]
#[command(name = "sparsetrain", version, about = "Truly sparse MLP training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic classification dataset into a directory.
    GenData(GenDataArgs),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its dataset.
    Eval(EvalArgs),
    /// Report per-layer sparsity and neuron importance of a checkpoint,
    /// optionally writing a one-shot importance-pruned copy.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 2600)]
    samples: usize,
    #[arg(long, default_value_t = 500)]
    features: usize,
    #[arg(long, default_value_t = 5)]
    informative: usize,
    #[arg(long, default_value_t = 15)]
    redundant: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1.0)]
    class_sep: f64,
    #[arg(long, default_value_t = 0.01)]
    flip: f64,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual `section.key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trainer: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Override the dataset location recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Apply one-shot importance pruning at this percentile and write the
    /// pruned copy to --out.
    #[arg(long)]
    prune_percentile: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn install_sigint_handler() {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as libc::sighandler_t);
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let params = SynthParams {
        n_samples: args.samples,
        n_features: args.features,
        n_informative: args.informative,
        n_redundant: args.redundant,
        n_classes: args.classes,
        class_sep: args.class_sep,
        flip_fraction: args.flip,
    };
    let raw = data::synth_classification(&params, &mut seeds::synth_rng(args.seed))?;
    let (train, test) = data::split(&raw, args.test_fraction, &mut seeds::split_rng(args.seed))?;
    std::fs::create_dir_all(&args.out)?;
    let to_raw = |s: &data::Split<f64>| data::RawData {
        features: s.features.clone(),
        labels: s.labels.clone(),
        class_count: raw.class_count,
        label_names: raw.label_names.clone(),
    };
    data::write_sds1(args.out.join("train.sds"), &to_raw(&train))?;
    data::write_sds1(args.out.join("test.sds"), &to_raw(&test))?;
    let sidecar = format!(
        "samples={} features={} informative={} redundant={} classes={} class_sep={} flip={} \
         test_fraction={} seed={} train_rows={} test_rows={}\n",
        args.samples,
        args.features,
        args.informative,
        args.redundant,
        args.classes,
        args.class_sep,
        args.flip,
        args.test_fraction,
        args.seed,
        train.len(),
        test.len(),
    );
    std::fs::write(args.out.join("dataset.txt"), sidecar)?;
    println!(
        "wrote {} train / {} test rows with {} features to {}",
        train.len(),
        test.len(),
        args.features,
        args.out.display()
    );
    Ok(())
}

/// Loads the dataset a run configuration points at, standardized with
/// train-partition statistics.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset<f32>> {
    let raw_pair = match &config.data.source {
        DataSource::Synth => {
            let raw = data::synth_classification(&config.data.synth, &mut seeds::synth_rng(config.data.seed))?;
            let (train, test) = data::split(&raw, config.data.test_fraction, &mut seeds::split_rng(config.data.seed))?;
            (train, test, raw.class_count)
        }
        DataSource::Sds(dir) => {
            let train = data::read_sds1(dir.join("train.sds"))?;
            let test = data::read_sds1(dir.join("test.sds"))?;
            if train.class_count != test.class_count || train.features.cols() != test.features.cols() {
                return Err(Error::Data("train/test containers disagree on shape".into()));
            }
            let class_count = train.class_count;
            (
                data::Split { features: train.features, labels: train.labels },
                data::Split { features: test.features, labels: test.labels },
                class_count,
            )
        }
        DataSource::Csv { train, test } => {
            let train_raw = data::load_csv(train, config.data.label_column, config.data.has_header)?;
            match test {
                Some(test_path) => {
                    let test_raw = data::load_csv_with_mapping(
                        test_path,
                        config.data.label_column,
                        config.data.has_header,
                        &train_raw.label_names,
                    )?;
                    let class_count = train_raw.class_count;
                    (
                        data::Split { features: train_raw.features, labels: train_raw.labels },
                        data::Split { features: test_raw.features, labels: test_raw.labels },
                        class_count,
                    )
                }
                None => {
                    let (train_split, test_split) =
                        data::split(&train_raw, config.data.test_fraction, &mut seeds::split_rng(config.data.seed))?;
                    (train_split, test_split, train_raw.class_count)
                }
            }
        }
    };
    let (train, test, class_count) = raw_pair;
    let dataset: Dataset<f32> = Dataset::from_splits(train, test, class_count)?;
    let sizes = &config.layer_sizes;
    if sizes[0] != dataset.features() {
        return Err(Error::Config(format!(
            "layer_sizes starts at {} but the data has {} features",
            sizes[0],
            dataset.features()
        )));
    }
    if *sizes.last().unwrap() != dataset.class_count {
        return Err(Error::Config(format!(
            "layer_sizes ends at {} but the data has {} classes",
            sizes.last().unwrap(),
            dataset.class_count
        )));
    }
    Ok(dataset)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_ini_file(path)?,
        None => RunConfig::default(),
    };
    for pair in &args.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.apply(key.trim(), value.trim())?;
    }
    if let Some(trainer) = &args.trainer {
        config.apply("train.trainer", trainer)?;
    }
    if let Some(workers) = args.workers {
        config.apply("train.workers", &workers.to_string())?;
    }
    if let Some(seed) = args.seed {
        config.apply("train.seed", &seed.to_string())?;
    }
    if let Some(epochs) = args.epochs {
        config.apply("train.epochs", &epochs.to_string())?;
    }
    if let Some(out) = &args.out {
        config.apply("train.out", &out.display().to_string())?;
    }
    config.validate()?;
    run_training(&config).map(|_| ())
}

/// Executes a validated run end to end: dataset, trainer, metrics stream,
/// checkpoint. Returns the final test accuracy.
pub fn run_training(config: &RunConfig) -> Result<f64> {
    install_sigint_handler();
    let dataset = load_dataset(config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let config_text = config.to_ini_string();
    std::fs::write(config.out_dir.join("config.ini"), &config_text)?;
    let metrics_path = config.out_dir.join("metrics.log");
    let mut metrics_file = std::fs::File::create(&metrics_path)?;
    let net_config = config.network_config()?;

    let final_acc;
    match config.trainer {
        TrainerKind::Sequential => {
            let mut network = SparseNetwork::<f32>::init(net_config)?;
            let mut opt = OptimizerState::new(config.eta, config.mu, config.lambda, &network)?;
            let mut rngs = TrainRngs::for_worker(config.seed, 0);
            let opts = TrainOptions { epochs: config.epochs, batch_size: config.batch_size };
            let report = train_sequential(
                &mut network,
                &mut opt,
                &config.evolution,
                &dataset,
                &opts,
                &mut rngs,
                |record| {
                    let _ = metrics::write_epoch(&mut metrics_file, record);
                    if STOP.load(Ordering::SeqCst) {
                        log::warn!("interrupt received; stopping at the epoch boundary");
                    }
                },
            )?;
            save_checkpoint(config.out_dir.join("checkpoint.snet"), &network, &config_text)?;
            final_acc = report.final_test_acc();
        }
        TrainerKind::Wasap | TrainerKind::Wassp => {
            let opts = WasapOptions {
                workers: config.workers,
                tau1: config.tau1,
                tau2: config.tau2,
                batch_size: config.batch_size,
                seed: config.seed,
                lr_boost: config.lr_boost,
                lr_boost_epochs: config.lr_boost_epochs,
                warmup_epochs: config.warmup_epochs,
                schedule: Schedule::Threaded,
                audit: true,
            };
            let outcome = if config.trainer == TrainerKind::Wasap {
                run_wasap(
                    &net_config,
                    config.eta,
                    config.mu,
                    config.lambda,
                    &config.evolution,
                    &dataset,
                    &opts,
                    &mut |record| {
                        let _ = metrics::write_epoch(&mut metrics_file, record);
                    },
                )?
            } else {
                run_wassp(
                    &net_config,
                    config.eta,
                    config.mu,
                    config.lambda,
                    &config.evolution,
                    &dataset,
                    &opts,
                    &mut |record| {
                        let _ = metrics::write_epoch(&mut metrics_file, record);
                    },
                )?
            };
            let mut audit_file = std::fs::File::create(config.out_dir.join("audit.log"))?;
            for record in &outcome.audit {
                writeln!(audit_file, "{}", record.to_line())?;
            }
            if let Some((loss, acc)) = outcome.report.final_eval {
                writeln!(metrics_file, "final test_loss={loss} test_acc={acc}")?;
                metrics_file.flush()?;
            }
            save_checkpoint(config.out_dir.join("checkpoint.snet"), &outcome.model, &config_text)?;
            final_acc = outcome.report.final_test_acc();
        }
    }
    println!("final test accuracy: {final_acc:.4}");
    println!("checkpoint: {}", config.out_dir.join("checkpoint.snet").display());
    println!("metrics: {}", metrics_path.display());
    Ok(final_acc)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (loss, acc) = evaluate_checkpoint(&args.checkpoint, args.data.as_deref())?;
    println!("test_loss={loss} test_acc={acc}");
    Ok(())
}

/// Loads a checkpoint and reproduces its test-set metrics.
pub fn evaluate_checkpoint(checkpoint: &Path, data_override: Option<&Path>) -> Result<(f64, f64)> {
    let loaded = load_checkpoint(checkpoint)?;
    let mut config = loaded.config;
    if let Some(dir) = data_override {
        config.data.source = DataSource::Sds(dir.to_path_buf());
    }
    let dataset = load_dataset(&config)?;
    loaded
        .network
        .evaluate(&dataset.test.features, &dataset.test.labels, 256)
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let network = &loaded.network;
    for (idx, layer) in network.layers().iter().enumerate() {
        println!(
            "layer={idx} rows={} cols={} nnz={} sparsity={:.6}",
            layer.rows(),
            layer.cols(),
            layer.nnz(),
            layer.sparsity()
        );
    }
    println!("total_nnz={}", network.total_nnz());
    // Importance histogram over each hidden layer's incoming matrix.
    let total_layers = network.config().total_layers();
    for l in 2..total_layers {
        let importance = neuron_importance(&network.layers()[l - 2]);
        let max = importance.iter().copied().fold(0.0f64, f64::max);
        let mut bins = [0usize; 10];
        for &i in &importance {
            let b = if max > 0.0 { ((i / max) * 10.0).min(9.0) as usize } else { 0 };
            bins[b] += 1;
        }
        let counts: Vec<String> = bins.iter().map(|c| c.to_string()).collect();
        println!("hidden_layer={l} importance_max={max} importance_hist={}", counts.join(","));
    }
    if let Some(rho) = args.prune_percentile {
        if !(0.0 < rho && rho < 100.0) {
            return Err(Error::Argument(format!("percentile must be in (0, 100), got {rho}")));
        }
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| args.checkpoint.with_extension("pruned.snet"));
        let before = network.total_nnz();
        let mut pruned = network.clone();
        let report = importance_prune(&mut pruned, rho)?;
        println!(
            "one_shot_prune percentile={rho} before={before} after={} pruned_neurons={} removed={}",
            pruned.total_nnz(),
            report.total_pruned_neurons(),
            report.total_removed()
        );
        save_checkpoint(&out, &pruned, &loaded.config_text)?;
        println!("pruned checkpoint: {}", out.display());
    }
    Ok(())
}
