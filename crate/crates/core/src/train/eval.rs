use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::make_batches;
use crate::error::{contract, Error, Result};
use crate::model::{sample_noise, DecodeMode, HrVae};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// 0 evaluates at `z = mu`. Otherwise the token NLL is averaged over
    /// this many posterior samples drawn from `seed`.
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            samples: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean over sentences of the summed token NLL.
    pub nll: f64,
    pub ppl: f64,
    /// Mean over batches of the variant's KL term.
    pub kl: f64,
    pub token_count: usize,
    pub sentence_count: usize,
    pub total_nll: f64,
}

/// Teacher-forced metrics over `sequences` in their given order.
pub fn evaluate(model: &HrVae, sequences: &[Vec<usize>], options: EvalOptions) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(contract("evaluation set is empty"));
    }
    let latent = model.config().latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let batches = make_batches(sequences, options.batch_size, None)?;
    let mut total_nll = 0.0;
    let mut kl_sum = 0.0;
    let mut tokens = 0;
    for batch in &batches {
        let draws = options.samples.max(1);
        let mut batch_nll = 0.0;
        let mut batch_kl = 0.0;
        for _ in 0..draws {
            let noise = if options.samples == 0 {
                Tensor::zeros(&[batch.size(), latent])
            } else {
                sample_noise(&mut rng, batch.size(), latent)
            };
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, false);
            let (breakdown, vars) = model.forward(&mut tape, &bound, batch, &noise, 1.0)?;
            batch_nll += tape.value(vars.token_nll_sum).item()?;
            batch_kl += breakdown.kl_mean;
        }
        total_nll += batch_nll / draws as f64;
        kl_sum += batch_kl / draws as f64;
        tokens += batch.token_count();
    }
    let report = EvalReport {
        nll: total_nll / sequences.len() as f64,
        ppl: (total_nll / tokens as f64).exp(),
        kl: kl_sum / batches.len() as f64,
        token_count: tokens,
        sentence_count: sequences.len(),
        total_nll,
    };
    if ![report.nll, report.ppl, report.kl].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("evaluation report {report:?}")));
    }
    Ok(report)
}

/// Fraction of reference positions (EOS included) that greedy
/// reconstruction reproduces at the same index.
pub fn token_accuracy(model: &HrVae, sequences: &[Vec<usize>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(contract("evaluation set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = 0usize;
    let mut total = 0usize;
    for sentence in sequences {
        let out = model.reconstruct(sentence, DecodeMode::Greedy, &mut rng)?;
        hits += sentence.iter().zip(&out).filter(|(a, b)| a == b).count();
        total += sentence.len();
    }
    Ok(hits as f64 / total as f64)
}
