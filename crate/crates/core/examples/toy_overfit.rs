//! Overfits the synthetic toy corpus and reports greedy reconstruction
//! accuracy every few hundred steps.
//!
//! cargo run --release -p hrvae --example toy_overfit -- [steps] [batch] [lr] [variant]

use std::time::Instant;

use hrvae::data::{Corpus, Vocab};
use hrvae::model::{DecoderSetting, ModelConfig};
use hrvae::train::{token_accuracy, TrainOptions, Trainer};

fn main() -> hrvae::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).map_or(5000, |s| s.parse().unwrap());
    let batch_size = args.get(2).map_or(20, |s| s.parse().unwrap());
    let lr = args.get(3).map_or(1e-4, |s| s.parse().unwrap());
    let variant = args.get(4).map_or("hr", String::as_str).parse()?;

    let corpus = Corpus::synthetic_toy();
    let vocab = Vocab::build(&corpus, 1)?;
    let seqs = vocab.encode_corpus(&corpus);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 64,
        hidden_dim: 64,
        latent_dim: 16,
        decoder_setting: DecoderSetting::Inputless,
        variant,
        ..ModelConfig::default()
    };
    let options = TrainOptions {
        batch_size,
        max_steps: Some(steps),
        lr,
        anneal: hrvae::baseline::AnnealSchedule::constant(1.0),
        ..TrainOptions::default()
    };
    let mut trainer = Trainer::new(config, vocab, options)?;
    let start = Instant::now();
    trainer.fit(&seqs, |t, r| {
        if r.step % 250 == 0 {
            let acc = token_accuracy(t.model(), &seqs)?;
            println!(
                "step {:5}  recon {:8.3}  kl {:7.4}  acc {:.3}  {:6.1}s",
                r.step,
                r.recon_loss,
                r.kl_loss,
                acc,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    Ok(())
}
