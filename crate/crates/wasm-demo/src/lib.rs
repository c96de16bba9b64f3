//! Browser bindings: a Gaussian KL explorer, the baseline's annealing curve,
//! and a small side-by-side training session (HR model vs last-state
//! baseline) on the built-in toy corpus.
//!
//! Everything also builds natively, where errors come back as `String`.

use hrvae::autodiff::{Tape, Tensor};
use hrvae::baseline::AnnealSchedule;
use hrvae::data::{Corpus, Vocab};
use hrvae::model::{kl_diag_gaussian_vs_standard, DecodeMode, DecoderSetting, GaussianPosterior, ModelConfig, Variant};
use hrvae::train::{TrainOptions, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn text(err: hrvae::Error) -> String {
    err.to_string()
}

/// KL(N(mu, exp(log_var)) || N(0, I)) for a single diagonal Gaussian.
#[wasm_bindgen]
pub fn gaussian_kl(mu: &[f64], log_var: &[f64]) -> Result<f64, String> {
    if mu.len() != log_var.len() || mu.is_empty() {
        return Err(format!("mu has {} entries, log_var {}", mu.len(), log_var.len()));
    }
    let mut tape = Tape::new();
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec()).map_err(|e| e.to_string());
    let post = GaussianPosterior {
        mu: tape.constant(row(mu)?),
        log_var: tape.constant(row(log_var)?),
    };
    let kl = kl_diag_gaussian_vs_standard(&mut tape, post).map_err(text)?;
    tape.value(kl).item().map_err(|e| e.to_string())
}

/// Sigmoid KL weight at `points` evenly spaced steps in `[0, last_step]`.
#[wasm_bindgen]
pub fn anneal_curve(midpoint: u32, steepness: f64, last_step: u32, points: u32) -> Vec<f64> {
    let schedule = AnnealSchedule::sigmoid(midpoint as u64, steepness);
    let n = points.max(2) as u64;
    (0..n).map(|i| schedule.weight(i * last_step as u64 / (n - 1))).collect()
}

pub const DEMO_ANNEAL_MIDPOINT: u64 = 300;
pub const DEMO_ANNEAL_STEEPNESS: f64 = 0.02;

/// Two small models trained in lockstep on the same batches.
#[wasm_bindgen]
pub struct CompareSession {
    hr: Trainer,
    base: Trainer,
    sequences: Vec<Vec<usize>>,
    history: Vec<f64>,
}

#[wasm_bindgen]
impl CompareSession {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, inputless: bool) -> Result<CompareSession, String> {
        let corpus = Corpus::synthetic_toy();
        let vocab = Vocab::build(&corpus, 1).map_err(text)?;
        let sequences = vocab.encode_corpus(&corpus);
        let arm = |variant| {
            let config = ModelConfig {
                vocab_size: vocab.len(),
                embed_dim: 24,
                hidden_dim: 24,
                num_layers: 1,
                latent_dim: 8,
                decoder_setting: if inputless { DecoderSetting::Inputless } else { DecoderSetting::Standard },
                variant,
                ..ModelConfig::default()
            };
            let options = TrainOptions {
                batch_size: 10,
                max_steps: Some(0),
                lr: 3e-3,
                anneal: AnnealSchedule::sigmoid(DEMO_ANNEAL_MIDPOINT, DEMO_ANNEAL_STEEPNESS),
                seed: seed as u64,
                ..TrainOptions::default()
            };
            Trainer::new(config, vocab.clone(), options).map_err(text)
        };
        Ok(CompareSession {
            hr: arm(Variant::Hr)?,
            base: arm(Variant::LastStateBaseline)?,
            sequences,
            history: Vec::new(),
        })
    }

    /// Runs `n` more updates on both models.
    pub fn train(&mut self, n: u32) -> Result<(), String> {
        let target = self.steps() + n as u64;
        let mut rows = [Vec::new(), Vec::new()];
        for (trainer, rows) in [&mut self.hr, &mut self.base].into_iter().zip(rows.iter_mut()) {
            trainer.options_mut().max_steps = Some(target);
            trainer
                .fit(&self.sequences, |_, r| {
                    rows.push((r.recon_loss, r.kl_loss, r.kl_weight));
                    Ok(())
                })
                .map_err(text)?;
        }
        for (h, b) in rows[0].iter().zip(&rows[1]) {
            self.history.extend([h.0, h.1, b.0, b.1, b.2]);
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.hr.progress().step
    }

    /// Flat rows of `recon_hr, kl_hr, recon_base, kl_base, kl_weight_base`.
    pub fn history(&self) -> Vec<f64> {
        self.history.clone()
    }

    /// Greedy reconstructions `[hr, baseline]` of one sentence.
    pub fn reconstruct(&self, sentence: &str) -> Result<Vec<String>, String> {
        let corpus = Corpus::from_lines([sentence]);
        let tokens = corpus.sentences().first().ok_or("empty sentence")?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        [&self.hr, &self.base]
            .iter()
            .map(|t| {
                let ids = t.model().reconstruct(&t.vocab().encode(tokens), DecodeMode::Greedy, &mut rng).map_err(text)?;
                Ok(t.vocab().detokenize(&ids))
            })
            .collect()
    }

    /// A sentence from the training corpus, for the input box.
    pub fn example(&self, index: u32) -> String {
        let ids = &self.sequences[index as usize % self.sequences.len()];
        self.hr.vocab().detokenize(ids)
    }
}
