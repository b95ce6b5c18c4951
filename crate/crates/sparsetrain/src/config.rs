//! Run configuration: a flat key-value text format (INI-style sections),
//! hand-editable and stable under round trips.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::SynthParams;
use crate::error::{Error, Result};
use crate::nn::{Activation, InitScheme, LossKind, NetworkConfig};
use crate::topology::EvolutionConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainerKind {
    Sequential,
    Wasap,
    Wassp,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Sequential => "sequential",
            TrainerKind::Wasap => "wasap",
            TrainerKind::Wassp => "wassp",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(TrainerKind::Sequential),
            "wasap" => Ok(TrainerKind::Wasap),
            "wassp" => Ok(TrainerKind::Wassp),
            other => Err(Error::Config(format!("unknown trainer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Directory containing `train.sds` and `test.sds`.
    Sds(PathBuf),
    /// CSV file(s); split by fraction when no test path is given.
    Csv { train: PathBuf, test: Option<PathBuf> },
    /// Regenerate synthetically from the recorded parameters and seed.
    Synth,
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub source: DataSource,
    pub label_column: usize,
    pub has_header: bool,
    pub test_fraction: f64,
    pub synth: SynthParams,
    /// Seed for generation and splitting, independent of the train seed.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            label_column: 0,
            has_header: false,
            test_fraction: 0.3,
            synth: SynthParams::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: DataConfig,
    // network
    pub layer_sizes: Vec<usize>,
    pub epsilon: f64,
    pub activation: String, // "relu" | "all_relu"
    pub alpha: f64,
    pub dropout: f64,
    pub init: InitScheme,
    pub loss: LossKind,
    // optimizer
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
    // evolution
    pub evolution: EvolutionConfig,
    // run
    pub trainer: TrainerKind,
    pub epochs: u64,
    pub batch_size: usize,
    pub workers: usize,
    pub tau1: u64,
    pub tau2: u64,
    pub warmup_epochs: u64,
    pub lr_boost: f64,
    pub lr_boost_epochs: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            layer_sizes: vec![20, 64, 32, 2],
            epsilon: 10.0,
            activation: "all_relu".into(),
            alpha: 0.5,
            dropout: 0.3,
            init: InitScheme::Normal,
            loss: LossKind::SoftmaxCrossEntropy,
            eta: 0.01,
            mu: 0.9,
            lambda: 0.0002,
            evolution: EvolutionConfig::default(),
            trainer: TrainerKind::Sequential,
            epochs: 100,
            batch_size: 32,
            workers: 1,
            tau1: 80,
            tau2: 100,
            warmup_epochs: 5,
            lr_boost: 2.0,
            lr_boost_epochs: 5,
            seed: 42,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let activation = match self.activation.as_str() {
            "relu" => Activation::Relu,
            "all_relu" => Activation::AllRelu { alpha: self.alpha },
            other => return Err(Error::Config(format!("unknown activation {other:?}"))),
        };
        let config = NetworkConfig {
            layer_sizes: self.layer_sizes.clone(),
            epsilon: self.epsilon,
            activation,
            dropout_rate: self.dropout,
            init_scheme: self.init,
            loss: self.loss,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Validates everything a run needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.network_config()?;
        self.evolution.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.trainer != TrainerKind::Sequential && (self.tau1 == 0 || self.tau2 < self.tau1) {
            return Err(Error::Config(format!(
                "parallel trainers need 1 <= tau1 <= tau2, got {}/{}",
                self.tau1, self.tau2
            )));
        }
        if !(0.0 < self.data.test_fraction && self.data.test_fraction < 1.0) {
            return Err(Error::Config("test fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let (source, path, test_path) = match &self.data.source {
            DataSource::Sds(p) => ("sds", p.display().to_string(), String::new()),
            DataSource::Csv { train, test } => (
                "csv",
                train.display().to_string(),
                test.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            DataSource::Synth => ("synth", String::new(), String::new()),
        };
        let _ = writeln!(s, "source = {source}");
        if !path.is_empty() {
            let _ = writeln!(s, "path = {path}");
        }
        if !test_path.is_empty() {
            let _ = writeln!(s, "test_path = {test_path}");
        }
        let _ = writeln!(s, "label_column = {}", self.data.label_column);
        let _ = writeln!(s, "has_header = {}", self.data.has_header);
        let _ = writeln!(s, "test_fraction = {}", self.data.test_fraction);
        let _ = writeln!(s, "samples = {}", self.data.synth.n_samples);
        let _ = writeln!(s, "features = {}", self.data.synth.n_features);
        let _ = writeln!(s, "informative = {}", self.data.synth.n_informative);
        let _ = writeln!(s, "redundant = {}", self.data.synth.n_redundant);
        let _ = writeln!(s, "classes = {}", self.data.synth.n_classes);
        let _ = writeln!(s, "class_sep = {}", self.data.synth.class_sep);
        let _ = writeln!(s, "flip = {}", self.data.synth.flip_fraction);
        let _ = writeln!(s, "data_seed = {}", self.data.seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "[network]");
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "layer_sizes = {}", sizes.join(","));
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "activation = {}", self.activation);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "init = {}", self.init.name());
        let _ = writeln!(s, "loss = {}", self.loss.name());
        let _ = writeln!(s);
        let _ = writeln!(s, "[optimizer]");
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "mu = {}", self.mu);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s);
        let _ = writeln!(s, "[evolution]");
        let _ = writeln!(s, "zeta = {}", self.evolution.zeta);
        let _ = writeln!(s, "importance = {}", self.evolution.importance_enabled);
        let _ = writeln!(s, "tau = {}", self.evolution.importance_start_epoch);
        let _ = writeln!(s, "period = {}", self.evolution.importance_period);
        let _ = writeln!(s, "percentile = {}", self.evolution.importance_percentile);
        if let Some(ts) = self.evolution.target_sparsity {
            let _ = writeln!(s, "target_sparsity = {ts}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "trainer = {}", self.trainer.name());
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch_size);
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "tau1 = {}", self.tau1);
        let _ = writeln!(s, "tau2 = {}", self.tau2);
        let _ = writeln!(s, "warmup = {}", self.warmup_epochs);
        let _ = writeln!(s, "lr_boost = {}", self.lr_boost);
        let _ = writeln!(s, "lr_boost_epochs = {}", self.lr_boost_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        s
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (key, value) in parse_ini(text)? {
            config.apply(&key, &value)?;
        }
        Ok(config)
    }

    pub fn from_ini_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_ini_str(&text)
    }

    /// Applies one `section.key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value {value:?} for {what}"));
        match key {
            "data.source" => {
                self.data.source = match value {
                    "synth" => DataSource::Synth,
                    "sds" => DataSource::Sds(PathBuf::new()),
                    "csv" => DataSource::Csv { train: PathBuf::new(), test: None },
                    _ => return Err(bad(key)),
                }
            }
            "data.path" => match &mut self.data.source {
                DataSource::Sds(p) => *p = PathBuf::from(value),
                DataSource::Csv { train, .. } => *train = PathBuf::from(value),
                DataSource::Synth => {
                    self.data.source = DataSource::Sds(PathBuf::from(value));
                }
            },
            "data.test_path" => match &mut self.data.source {
                DataSource::Csv { test, .. } => *test = Some(PathBuf::from(value)),
                _ => return Err(Error::Config("test_path only applies to csv sources".into())),
            },
            "data.label_column" => self.data.label_column = value.parse().map_err(|_| bad(key))?,
            "data.has_header" => self.data.has_header = value.parse().map_err(|_| bad(key))?,
            "data.test_fraction" => self.data.test_fraction = value.parse().map_err(|_| bad(key))?,
            "data.samples" => self.data.synth.n_samples = value.parse().map_err(|_| bad(key))?,
            "data.features" => self.data.synth.n_features = value.parse().map_err(|_| bad(key))?,
            "data.informative" => self.data.synth.n_informative = value.parse().map_err(|_| bad(key))?,
            "data.redundant" => self.data.synth.n_redundant = value.parse().map_err(|_| bad(key))?,
            "data.classes" => self.data.synth.n_classes = value.parse().map_err(|_| bad(key))?,
            "data.class_sep" => self.data.synth.class_sep = value.parse().map_err(|_| bad(key))?,
            "data.flip" => self.data.synth.flip_fraction = value.parse().map_err(|_| bad(key))?,
            "data.data_seed" => self.data.seed = value.parse().map_err(|_| bad(key))?,
            "network.layer_sizes" => {
                self.layer_sizes = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(key))?;
            }
            "network.epsilon" => self.epsilon = value.parse().map_err(|_| bad(key))?,
            "network.activation" => self.activation = value.to_string(),
            "network.alpha" => self.alpha = value.parse().map_err(|_| bad(key))?,
            "network.dropout" => self.dropout = value.parse().map_err(|_| bad(key))?,
            "network.init" => {
                self.init = match value {
                    "normal" => InitScheme::Normal,
                    "xavier" => InitScheme::Xavier,
                    "he_uniform" => InitScheme::HeUniform,
                    _ => return Err(bad(key)),
                }
            }
            "network.loss" => {
                self.loss = match value {
                    "softmax_cross_entropy" => LossKind::SoftmaxCrossEntropy,
                    "mse_sigmoid" => LossKind::MseSigmoid,
                    _ => return Err(bad(key)),
                }
            }
            "optimizer.eta" => self.eta = value.parse().map_err(|_| bad(key))?,
            "optimizer.mu" => self.mu = value.parse().map_err(|_| bad(key))?,
            "optimizer.lambda" => self.lambda = value.parse().map_err(|_| bad(key))?,
            "evolution.zeta" => self.evolution.zeta = value.parse().map_err(|_| bad(key))?,
            "evolution.importance" => {
                self.evolution.importance_enabled = value.parse().map_err(|_| bad(key))?
            }
            "evolution.tau" => {
                self.evolution.importance_start_epoch = value.parse().map_err(|_| bad(key))?
            }
            "evolution.period" => {
                self.evolution.importance_period = value.parse().map_err(|_| bad(key))?
            }
            "evolution.percentile" => {
                self.evolution.importance_percentile = value.parse().map_err(|_| bad(key))?
            }
            "evolution.target_sparsity" => {
                self.evolution.target_sparsity = Some(value.parse().map_err(|_| bad(key))?)
            }
            "train.trainer" => self.trainer = TrainerKind::parse(value)?,
            "train.epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "train.batch" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "train.workers" => self.workers = value.parse().map_err(|_| bad(key))?,
            "train.tau1" => self.tau1 = value.parse().map_err(|_| bad(key))?,
            "train.tau2" => self.tau2 = value.parse().map_err(|_| bad(key))?,
            "train.warmup" => self.warmup_epochs = value.parse().map_err(|_| bad(key))?,
            "train.lr_boost" => self.lr_boost = value.parse().map_err(|_| bad(key))?,
            "train.lr_boost_epochs" => self.lr_boost_epochs = value.parse().map_err(|_| bad(key))?,
            "train.seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "train.out" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// Parses INI text into ordered `section.key → value` pairs.
fn parse_ini(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", line_no + 1)));
        };
        let key = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        *seen.entry(key.clone()).or_insert(0) += 1;
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let mut config = RunConfig::default();
        config.layer_sizes = vec![500, 400, 100, 400, 2];
        config.epsilon = 10.0;
        config.alpha = 0.5;
        config.trainer = TrainerKind::Wasap;
        config.workers = 4;
        config.evolution.importance_enabled = true;
        let text = config.to_ini_string();
        let back = RunConfig::from_ini_str(&text).unwrap();
        assert_eq!(back.layer_sizes, config.layer_sizes);
        assert_eq!(back.trainer, TrainerKind::Wasap);
        assert_eq!(back.workers, 4);
        assert!(back.evolution.importance_enabled);
        // serialization is stable
        assert_eq!(back.to_ini_string(), text);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut config = RunConfig::default();
        config.apply("optimizer.eta", "0.05").unwrap();
        assert_eq!(config.eta, 0.05);
        assert!(config.apply("optimizer.nope", "1").is_err());
        assert!(config.apply("train.epochs", "abc").is_err());
    }

    #[test]
    fn validation_catches_bad_combos() {
        let mut config = RunConfig::default();
        config.epochs = 0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default();
        config.trainer = TrainerKind::Wasap;
        config.tau1 = 10;
        config.tau2 = 5;
        assert!(config.validate().is_err());
    }
}
