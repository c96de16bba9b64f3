//! Optimisation loop, evaluation metrics, loss-curve logging and
//! checkpoints.

mod adam;
pub mod checkpoint;
mod eval;
mod history;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{clip_grad_norm, AdamState};
pub use checkpoint::{Checkpoint, Progress};
pub use eval::{evaluate, token_accuracy, EvalOptions, EvalReport};
pub use history::{format_sig9, HistoryWriter, HISTORY_HEADER};

use crate::autodiff::Tape;
use crate::baseline::AnnealSchedule;
use crate::data::{make_batches, Batch, Vocab};
use crate::error::{contract, Error, Result};
use crate::model::{sample_noise, HrVae, ModelConfig, Variant};

pub const DEFAULT_CLIP_NORM: f64 = 5.0;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Passes over the data; `None` runs until `max_steps`.
    pub epochs: Option<u64>,
    pub max_steps: Option<u64>,
    pub lr: f64,
    /// Only the last-state baseline follows this schedule; the HR model
    /// always trains with weight 1.
    pub anneal: AnnealSchedule,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: None,
            max_steps: Some(5000),
            lr: AdamState::DEFAULT_LR,
            anneal: AnnealSchedule::default(),
            clip_norm: DEFAULT_CLIP_NORM,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.epochs.is_none() && self.max_steps.is_none() {
            return Err(contract("training needs epochs or max_steps"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(contract(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(contract(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if self.checkpoint_every == 0 {
            return Err(contract("checkpoint_every must be positive"));
        }
        self.anneal.validate()
    }
}

/// One row of the loss curve. `step` counts completed updates, so the first
/// row has step 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub recon_loss: f64,
    pub kl_loss: f64,
    pub kl_weight: f64,
}

pub struct Trainer {
    model: HrVae,
    vocab: Vocab,
    adam: AdamState,
    rng: ChaCha8Rng,
    progress: Progress,
    options: TrainOptions,
}

impl Trainer {
    /// Initialises a fresh model; parameter init, shuffling and noise all
    /// draw from one generator seeded with `options.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::ConfigMismatch(format!(
                "vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let model = HrVae::new(config, &mut rng)?;
        let adam = AdamState::new(model.params(), options.lr);
        Ok(Self {
            model,
            vocab,
            adam,
            rng,
            progress: Progress::default(),
            options,
        })
    }

    /// Continues from a checkpoint. The optimiser keeps its stored state;
    /// everything else in `options` applies from here on.
    pub fn resume(checkpoint: Checkpoint, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        let Checkpoint {
            config,
            vocab,
            params,
            adam,
            progress,
            rng,
        } = checkpoint;
        let mut model = HrVae::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.load_params(params)?;
        if adam.m.len() != model.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(Self {
            model,
            vocab,
            adam,
            rng,
            progress,
            options,
        })
    }

    pub fn model(&self) -> &HrVae {
        &self.model
    }

    pub fn into_model(self) -> HrVae {
        self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn options(&self) -> &TrainOptions {
        &self.options
    }

    pub fn options_mut(&mut self) -> &mut TrainOptions {
        &mut self.options
    }

    pub fn model_mut(&mut self) -> &mut HrVae {
        &mut self.model
    }

    pub fn kl_weight(&self, step: u64) -> f64 {
        match self.model.config().variant {
            Variant::Hr => 1.0,
            Variant::LastStateBaseline => self.options.anneal.weight(step),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            vocab: self.vocab.clone(),
            params: self
                .model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone().with_requires_grad(false)))
                .collect(),
            adam: self.adam.clone(),
            progress: self.progress,
            rng: self.rng.clone(),
        }
    }

    /// One forward/backward/update on `batch`. A non-finite loss or
    /// gradient leaves parameters and optimiser untouched.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let step = self.progress.step;
        let weight = self.kl_weight(step);
        let noise = sample_noise(&mut self.rng, batch.size(), self.model.config().latent_dim);
        let mut tape = Tape::new();
        let bound = self.model.params().bind(&mut tape, true);
        let (breakdown, vars) = self.model.forward(&mut tape, &bound, batch, &noise, weight)?;
        if !breakdown.total_loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", step + 1)));
        }
        tape.backward(vars.total)?;
        let params = self.model.params_mut();
        params.collect_grads(&tape, &bound);
        clip_grad_norm(params, self.options.clip_norm);
        let result = self.adam.step(params);
        params.zero_grads();
        result?;
        self.progress.step += 1;
        Ok(StepRecord {
            step: self.progress.step,
            recon_loss: breakdown.reconstruction_nll,
            kl_loss: breakdown.kl_mean,
            kl_weight: weight,
        })
    }

    fn finished(&self) -> bool {
        let by_steps = self.options.max_steps.is_some_and(|m| self.progress.step >= m);
        let by_epochs = self.options.epochs.is_some_and(|e| self.progress.epoch >= e);
        by_steps || by_epochs
    }

    /// Trains until the step or epoch budget is spent, handing every record
    /// to `observe` right after its update.
    pub fn fit(
        &mut self,
        sequences: &[Vec<usize>],
        mut observe: impl FnMut(&Self, &StepRecord) -> Result<()>,
    ) -> Result<()> {
        if sequences.is_empty() {
            return Err(contract("training set is empty"));
        }
        while !self.finished() {
            if self.progress.batch_in_epoch == 0 {
                self.progress.epoch_seed = self.rng.random();
            }
            let batches = make_batches(sequences, self.options.batch_size, Some(self.progress.epoch_seed))?;
            let start = self.progress.batch_in_epoch as usize;
            for batch in batches.iter().skip(start) {
                if self.finished() {
                    return Ok(());
                }
                let record = self.train_step(batch)?;
                self.progress.batch_in_epoch += 1;
                observe(self, &record)?;
            }
            self.progress.epoch += 1;
            self.progress.batch_in_epoch = 0;
        }
        Ok(())
    }

    /// [`Trainer::fit`] plus the on-disk artifacts: `history.csv` flushed per
    /// row, `checkpoint.ckpt` every `checkpoint_every` steps and
    /// `final.ckpt` at the end. On failure the last periodic checkpoint is
    /// left as it was.
    pub fn fit_to_dir(&mut self, sequences: &[Vec<usize>], out_dir: &Path) -> Result<Vec<StepRecord>> {
        std::fs::create_dir_all(out_dir)?;
        let mut history = HistoryWriter::create(&out_dir.join("history.csv"))?;
        let periodic: PathBuf = out_dir.join("checkpoint.ckpt");
        let every = self.options.checkpoint_every;
        let mut records = Vec::new();
        self.fit(sequences, |trainer, record| {
            history.append(record)?;
            records.push(*record);
            if record.step % every == 0 {
                trainer.checkpoint().save(&periodic)?;
            }
            Ok(())
        })?;
        self.checkpoint().save(&out_dir.join("final.ckpt"))?;
        Ok(records)
    }
}
