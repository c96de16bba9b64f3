//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. Unknown keys are
//! errors.

use std::path::{Path, PathBuf};

use hrvae::baseline::{AnnealKind, AnnealSchedule};
use hrvae::model::{ModelConfig, Variant};
use hrvae::train::{EvalOptions, TrainOptions};

use crate::CliError;

/// Value of `train_path` that selects the bundled synthetic corpus.
pub const BUILTIN_TOY: &str = "builtin:toy";

/// `(key, default, description)` for every accepted key, in file order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("train_path", BUILTIN_TOY, "training sentences, one per line; builtin:toy uses the bundled synthetic corpus"),
    ("dev_path", "none", "optional dev split, evaluated after training"),
    ("test_path", "none", "optional test split, evaluated after training"),
    ("embeddings_path", "none", "optional text word vectors `token v1 .. vD` to initialise embeddings"),
    ("out_dir", "runs/hrvae", "output directory"),
    ("seed", "0", "seed for init, shuffling and noise"),
    ("max_steps", "5000", "step budget, or none"),
    ("epochs", "none", "epoch budget, or none"),
    ("batch_size", "32", "sentences per batch, 1..=128"),
    ("min_freq", "1", "minimum training count for a vocabulary entry"),
    ("embed_dim", "512", "word embedding width"),
    ("hidden_dim", "256", "LSTM hidden width"),
    ("num_layers", "2", "LSTM layers in encoder and decoder"),
    ("latent_dim", "32", "latent code width"),
    ("decoder_setting", "standard", "standard or inputless"),
    ("variant", "hr", "hr or last_state_baseline"),
    ("posterior_source", "all_layers", "all_layers or top_layer"),
    ("anneal", "sigmoid", "KL weight schedule of the baseline: sigmoid or constant"),
    ("anneal_midpoint", "2000", "step where the sigmoid weight is 0.5"),
    ("anneal_steepness", "0.005", "sigmoid slope per step"),
    ("anneal_constant", "1", "weight used by the constant schedule"),
    ("lr", "0.0001", "Adam learning rate"),
    ("clip_norm", "5", "global gradient norm cap"),
    ("checkpoint_every", "500", "steps between periodic checkpoints"),
    ("eval_batch_size", "32", "sentences per evaluation batch"),
    ("eval_samples", "0", "0 evaluates at the posterior mean, k > 0 averages k samples"),
    ("compare_baseline", "last_state_baseline", "variant trained second by `compare`"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_path: String,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub max_steps: Option<u64>,
    pub epochs: Option<u64>,
    pub batch_size: usize,
    pub min_freq: u64,
    /// `vocab_size` is filled in from the training vocabulary.
    pub model: ModelConfig,
    pub anneal: AnnealSchedule,
    pub lr: f64,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
    pub eval_batch_size: usize,
    pub eval_samples: usize,
    pub compare_baseline: Variant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut config = Self {
            train_path: String::new(),
            dev_path: None,
            test_path: None,
            embeddings_path: None,
            out_dir: PathBuf::new(),
            seed: 0,
            max_steps: None,
            epochs: None,
            batch_size: 0,
            min_freq: 0,
            model: ModelConfig::default(),
            anneal: AnnealSchedule::default(),
            lr: 0.0,
            clip_norm: 0.0,
            checkpoint_every: 0,
            eval_batch_size: 0,
            eval_samples: 0,
            compare_baseline: Variant::LastStateBaseline,
        };
        for (key, value, _) in KEYS {
            config.set(key, value).expect("defaults parse");
        }
        config
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {value:?}")))
}

fn optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    match value {
        "none" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "none".to_string(), ToString::to_string)
}

fn show_path(value: &Option<PathBuf>) -> String {
    value.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "train_path" => self.train_path = value.to_string(),
            "dev_path" => self.dev_path = optional(key, value)?,
            "test_path" => self.test_path = optional(key, value)?,
            "embeddings_path" => self.embeddings_path = optional(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "max_steps" => self.max_steps = optional(key, value)?,
            "epochs" => self.epochs = optional(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "anneal" => self.anneal.kind = parse::<AnnealKind>(key, value)?,
            "anneal_midpoint" => self.anneal.midpoint_step = parse(key, value)?,
            "anneal_steepness" => self.anneal.steepness = parse(key, value)?,
            "anneal_constant" => self.anneal.constant_value = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "compare_baseline" => self.compare_baseline = parse(key, value)?,
            "vocab_size" => {
                return Err(CliError::config(
                    "vocab_size is derived from the training data and cannot be set",
                ))
            }
            _ => {
                let known = self
                    .model
                    .set(key, value)
                    .map_err(|e| CliError::config(format!("{key}: {e}")))?;
                if !known {
                    return Err(CliError::config(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut config = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value, got {line:?}", lineno + 1)))?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set expects key=value, got {item:?}")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let a = &self.anneal;
        match key {
            "train_path" => self.train_path.clone(),
            "dev_path" => show_path(&self.dev_path),
            "test_path" => show_path(&self.test_path),
            "embeddings_path" => show_path(&self.embeddings_path),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "max_steps" => show(&self.max_steps),
            "epochs" => show(&self.epochs),
            "batch_size" => self.batch_size.to_string(),
            "min_freq" => self.min_freq.to_string(),
            "anneal" => a.kind.to_string(),
            "anneal_midpoint" => a.midpoint_step.to_string(),
            "anneal_steepness" => format!("{:?}", a.steepness),
            "anneal_constant" => format!("{:?}", a.constant_value),
            "lr" => format!("{:?}", self.lr),
            "clip_norm" => format!("{:?}", self.clip_norm),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_batch_size" => self.eval_batch_size.to_string(),
            "eval_samples" => self.eval_samples.to_string(),
            "compare_baseline" => self.compare_baseline.to_string(),
            model_key => self
                .model
                .to_pairs()
                .into_iter()
                .find(|(k, _)| *k == model_key)
                .map(|(_, v)| v)
                .expect("every key is listed"),
        }
    }

    /// Every key with its value. Floats use Rust's shortest round-trip form
    /// so reparsing yields the same bits.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(key, _, _)| format!("{key} = {}\n", self.value_of(key)))
            .collect()
    }

    /// Makes input paths absolute so the snapshot works from any directory.
    pub fn resolve_paths(&mut self) -> Result<(), CliError> {
        let absolute = |field: &str, p: &Path| {
            std::fs::canonicalize(p).map_err(|e| CliError::config(format!("{field} {}: {e}", p.display())))
        };
        if self.train_path != BUILTIN_TOY {
            self.train_path = absolute("train_path", Path::new(&self.train_path))?
                .display()
                .to_string();
        }
        for (field, slot) in [
            ("dev_path", &mut self.dev_path),
            ("test_path", &mut self.test_path),
            ("embeddings_path", &mut self.embeddings_path),
        ] {
            if let Some(p) = slot.as_mut() {
                *p = absolute(field, p)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_options().validate().map_err(|e| CliError::config(e.to_string()))?;
        if !(1..=hrvae::data::MAX_BATCH_SIZE).contains(&self.batch_size) {
            return Err(CliError::config(format!("batch_size must be in 1..=128, got {}", self.batch_size)));
        }
        if !(1..=hrvae::data::MAX_BATCH_SIZE).contains(&self.eval_batch_size) {
            return Err(CliError::config(format!(
                "eval_batch_size must be in 1..=128, got {}",
                self.eval_batch_size
            )));
        }
        if self.min_freq == 0 {
            return Err(CliError::config("min_freq must be at least 1"));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            epochs: self.epochs,
            max_steps: self.max_steps,
            lr: self.lr,
            anneal: self.anneal,
            clip_norm: self.clip_norm,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            batch_size: self.eval_batch_size,
            samples: self.eval_samples,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            ..self.model.clone()
        }
    }
}
