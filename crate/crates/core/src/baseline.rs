//! Last-state VAE baseline and KL annealing schedules.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{sigmoid, Tape, Tensor};
use crate::data::Batch;
use crate::error::{contract, Error, Result};
use crate::layers::Bound;
use crate::model::{reparameterize, EncoderTrace, HrVae, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnealKind {
    Constant,
    #[default]
    Sigmoid,
}

impl FromStr for AnnealKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::Parse(format!(
                "unknown anneal kind {other:?} (expected constant or sigmoid)"
            ))),
        }
    }
}

impl fmt::Display for AnnealKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Sigmoid => "sigmoid",
        })
    }
}

/// KL weight as a function of the global step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub kind: AnnealKind,
    pub midpoint_step: u64,
    pub steepness: f64,
    pub constant_value: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            kind: AnnealKind::Sigmoid,
            midpoint_step: 2000,
            steepness: 0.005,
            constant_value: 1.0,
        }
    }
}

impl AnnealSchedule {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: AnnealKind::Constant,
            constant_value: value,
            ..Self::default()
        }
    }

    pub fn sigmoid(midpoint_step: u64, steepness: f64) -> Self {
        Self {
            kind: AnnealKind::Sigmoid,
            midpoint_step,
            steepness,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.constant_value) {
            return Err(contract(format!(
                "anneal constant {} outside [0, 1]",
                self.constant_value
            )));
        }
        if !(self.steepness >= 0.0 && self.steepness.is_finite()) {
            return Err(contract(format!("anneal steepness {} must be finite and >= 0", self.steepness)));
        }
        Ok(())
    }

    pub fn weight(&self, step: u64) -> f64 {
        match self.kind {
            AnnealKind::Constant => self.constant_value,
            AnnealKind::Sigmoid => sigmoid(self.steepness * (step as f64 - self.midpoint_step as f64)),
        }
    }
}

impl HrVae {
    /// Posterior from `[h; c]` at each sentence's last valid timestep only;
    /// its single KL carries weight `1 / batch` per sentence.
    pub fn encode_last_state(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        noise: &Tensor,
    ) -> Result<EncoderTrace> {
        if batch.token_count() == 0 {
            return Err(contract("batch has no tokens"));
        }
        let b = batch.size();
        let features = self.encoder_features(tape, bound, batch)?;
        let last = tape.gather_rows(features, &Self::last_rows(batch))?;
        let posterior = self.heads(tape, bound, last)?;
        let z = reparameterize(tape, posterior, noise)?;
        Ok(EncoderTrace {
            posteriors: posterior,
            kl_row_weights: vec![1.0 / b as f64; b],
            final_posterior: posterior,
            z,
            batch_size: b,
            lengths: batch.lengths().to_vec(),
            variant: Variant::LastStateBaseline,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::EOS;
    use crate::model::{kl_diag_gaussian_vs_standard, DecoderSetting, ModelConfig};

    fn toy(variant: Variant) -> HrVae {
        let config = ModelConfig {
            vocab_size: 12,
            embed_dim: 5,
            hidden_dim: 4,
            latent_dim: 3,
            decoder_setting: DecoderSetting::Inputless,
            variant,
            ..ModelConfig::default()
        };
        HrVae::new(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn sigmoid_schedule_centre_and_tail() {
        let s = AnnealSchedule::sigmoid(2000, 0.005);
        assert_eq!(s.weight(2000), 0.5);
        assert!(s.weight(100_000) > 0.999_999);
        let w0 = s.weight(0);
        assert!((w0 - 1.0 / (1.0 + 10f64.exp())).abs() < 1e-15);
        assert!(w0 < 0.01 && (w0 - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn constant_schedule_is_flat() {
        let s = AnnealSchedule::constant(1.0);
        assert!([0, 17, 1_000_000].iter().all(|&t| s.weight(t) == 1.0));
        assert!(AnnealSchedule::constant(1.5).validate().is_err());
        assert!(AnnealSchedule::sigmoid(10, -1.0).validate().is_err());
    }

    #[test]
    fn kind_parses() {
        assert_eq!("sigmoid".parse::<AnnealKind>().unwrap(), AnnealKind::Sigmoid);
        assert!("linear".parse::<AnnealKind>().is_err());
    }

    proptest! {
        #[test]
        fn sigmoid_weight_bounded_and_monotone(mid in 0u64..10_000, k in 0.0f64..1.0, a in 0u64..20_000, d in 0u64..20_000) {
            let s = AnnealSchedule::sigmoid(mid, k);
            let (w1, w2) = (s.weight(a), s.weight(a + d));
            prop_assert!((0.0..=1.0).contains(&w1));
            prop_assert!(w2 >= w1);
        }
    }

    #[test]
    fn one_step_sentence_matches_hr_posterior() {
        let hr = toy(Variant::Hr);
        let mut base = hr.clone();
        base.config.variant = Variant::LastStateBaseline;
        let batch = Batch::new(&[vec![EOS], vec![EOS]]).unwrap();
        let noise = Tensor::zeros(&[2, 3]);
        let mut tape = Tape::new();
        let bound = hr.params().bind(&mut tape, false);
        let a = hr.encode(&mut tape, &bound, &batch, &noise).unwrap();
        let b = base.encode(&mut tape, &bound, &batch, &noise).unwrap();
        assert_eq!(a.num_posteriors(), 1);
        assert_eq!(tape.value(a.posteriors.mu), tape.value(b.posteriors.mu));
        assert_eq!(tape.value(a.posteriors.log_var), tape.value(b.posteriors.log_var));
        let logits = hr.decode(&mut tape, &bound, a.z, &batch).unwrap();
        let (ea, _) = hr.elbo_loss(&mut tape, &a, logits, &batch, 1.0).unwrap();
        let (eb, _) = base.elbo_loss(&mut tape, &b, logits, &batch, 1.0).unwrap();
        assert_eq!(ea.kl_mean, eb.kl_mean);
    }

    #[test]
    fn posterior_taken_at_each_last_step() {
        let base = toy(Variant::LastStateBaseline);
        let hr = toy(Variant::Hr);
        let batch = Batch::new(&[vec![4, 5, EOS], vec![6, 7, 8, 9, EOS]]).unwrap();
        let noise = Tensor::zeros(&[2, 3]);
        let mut tape = Tape::new();
        let bound = base.params().bind(&mut tape, false);
        let last = base.encode(&mut tape, &bound, &batch, &noise).unwrap();
        let all = hr.encode(&mut tape, &bound, &batch, &noise).unwrap();
        let at3 = all.posterior_at(&mut tape, 2).unwrap();
        let at5 = all.posterior_at(&mut tape, 4).unwrap();
        assert_eq!(tape.value(last.posteriors.mu).row(0), tape.value(at3.mu).row(0));
        assert_eq!(tape.value(last.posteriors.mu).row(1), tape.value(at5.mu).row(1));
    }

    #[test]
    fn baseline_kl_is_closed_form_of_its_posterior() {
        let base = toy(Variant::LastStateBaseline);
        let batch = Batch::new(&[vec![4, 5, EOS], vec![6, EOS]]).unwrap();
        let mut tape = Tape::new();
        let bound = base.params().bind(&mut tape, false);
        let trace = base.encode(&mut tape, &bound, &batch, &Tensor::zeros(&[2, 3])).unwrap();
        let logits = base.decode(&mut tape, &bound, trace.z, &batch).unwrap();
        let (elbo, _) = base.elbo_loss(&mut tape, &trace, logits, &batch, 1.0).unwrap();
        let direct = kl_diag_gaussian_vs_standard(&mut tape, trace.posteriors).unwrap();
        assert!((elbo.kl_mean - tape.value(direct).item().unwrap()).abs() < 1e-15);
        assert_eq!(elbo.kl_per_timestep.len(), 1);
    }

    #[test]
    fn parameter_shapes_match_hr() {
        let hr = toy(Variant::Hr);
        let base = toy(Variant::LastStateBaseline);
        assert_eq!(hr.params().num_scalars(), base.params().num_scalars());
        for ((na, ta), (nb, tb)) in hr.params().iter().zip(base.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
        }
    }
}
