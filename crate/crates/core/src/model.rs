//! The sequence VAE: a two-layer LSTM encoder with a Gaussian posterior at
//! every timestep over the concatenated `[h_t; c_t]`, reparameterised
//! sampling from the final valid timestep, and an LSTM decoder run either
//! with teacher forcing (`standard`) or on the latent code alone
//! (`inputless`).
//!
//! The KL term is the per-sentence mean of the per-timestep KLs, averaged
//! over the batch, and enters the loss with weight 1. The last-state
//! baseline lives in [`crate::baseline`] and shares everything here except
//! where the KL attaches.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Batch, EOS, PAD, SOS};
use crate::error::{contract, Error, Result};
use crate::layers::{Bound, Embedding, Linear, LstmStack, LstmState, ParamStore};

/// Longest reconstruction emitted by [`HrVae::reconstruct`].
pub const MAX_DECODE_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoderSetting {
    /// Step input is `[embed(previous ground-truth token); z]`.
    #[default]
    Standard,
    /// Step input is `z` alone.
    Inputless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// KL imposed on the posterior at every encoder timestep, averaged.
    #[default]
    Hr,
    /// KL imposed only on the posterior at the last valid timestep.
    LastStateBaseline,
}

/// Which encoder states feed the posterior heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosteriorSource {
    /// `[h; c]` of every layer, `2 · layers · hidden` wide.
    #[default]
    AllLayers,
    /// `[h; c]` of the top layer only.
    TopLayer,
}

macro_rules! string_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Parse(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

string_enum!(DecoderSetting, "decoder setting",
    DecoderSetting::Standard => "standard",
    DecoderSetting::Inputless => "inputless");
string_enum!(Variant, "variant",
    Variant::Hr => "hr",
    Variant::LastStateBaseline => "last_state_baseline");
string_enum!(PosteriorSource, "posterior source",
    PosteriorSource::AllLayers => "all_layers",
    PosteriorSource::TopLayer => "top_layer");

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub latent_dim: usize,
    pub decoder_setting: DecoderSetting,
    pub variant: Variant,
    pub posterior_source: PosteriorSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            embed_dim: 512,
            hidden_dim: 256,
            num_layers: 2,
            latent_dim: 32,
            decoder_setting: DecoderSetting::Standard,
            variant: Variant::Hr,
            posterior_source: PosteriorSource::AllLayers,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 8] = [
        "vocab_size",
        "embed_dim",
        "hidden_dim",
        "num_layers",
        "latent_dim",
        "decoder_setting",
        "variant",
        "posterior_source",
    ];

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("latent_dim", self.latent_dim),
        ] {
            if value == 0 {
                return Err(contract(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= EOS {
            return Err(contract("vocab_size must cover the reserved tokens"));
        }
        Ok(())
    }

    /// Width of the vector the posterior heads read at each timestep.
    pub fn feature_dim(&self) -> usize {
        match self.posterior_source {
            PosteriorSource::AllLayers => 2 * self.num_layers * self.hidden_dim,
            PosteriorSource::TopLayer => 2 * self.hidden_dim,
        }
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("decoder_setting", self.decoder_setting.to_string()),
            ("variant", self.variant.to_string()),
            ("posterior_source", self.posterior_source.to_string()),
        ]
    }

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys that
    /// are not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let int = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Parse(format!("{key}: expected a non-negative integer, got {v:?}")))
        };
        match key {
            "vocab_size" => self.vocab_size = int(value)?,
            "embed_dim" => self.embed_dim = int(value)?,
            "hidden_dim" => self.hidden_dim = int(value)?,
            "num_layers" => self.num_layers = int(value)?,
            "latent_dim" => self.latent_dim = int(value)?,
            "decoder_setting" => self.decoder_setting = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "posterior_source" => self.posterior_source = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed config line {line:?}")))?;
            if !config.set(key.trim(), value.trim())? {
                return Err(Error::Parse(format!("unknown model key {:?}", key.trim())));
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// Diagonal Gaussian `N(mu, exp(log_var))`, each `[rows × latent]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianPosterior {
    pub mu: Var,
    pub log_var: Var,
}

/// Elementwise `mu² + exp(log_var) - log_var - 1`, twice the per-dimension KL
/// from the posterior to `N(0, I)`.
fn kl_terms(tape: &mut Tape, post: GaussianPosterior) -> Result<Var> {
    if tape.shape(post.mu) != tape.shape(post.log_var) {
        return Err(contract(format!(
            "posterior mu {:?} and log_var {:?} differ in shape",
            tape.shape(post.mu),
            tape.shape(post.log_var)
        )));
    }
    let mu2 = tape.mul(post.mu, post.mu)?;
    let var = tape.exp(post.log_var);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, post.log_var)?;
    let ones = tape.constant(Tensor::filled(tape.shape(b), 1.0));
    Ok(tape.sub(b, ones)?)
}

/// Closed-form `KL(q ‖ N(0, I))` summed over latent dimensions and averaged
/// over rows.
pub fn kl_diag_gaussian_vs_standard(tape: &mut Tape, post: GaussianPosterior) -> Result<Var> {
    let rows = tape.shape(post.mu)[0];
    let terms = kl_terms(tape, post)?;
    let total = tape.sum(terms);
    Ok(tape.scale(total, 0.5 / rows as f64))
}

/// `sum_r weight_r · KL_r` where `KL_r` is the KL of row `r`.
fn weighted_kl(tape: &mut Tape, post: GaussianPosterior, row_weights: &[f64]) -> Result<Var> {
    let shape = tape.shape(post.mu).to_vec();
    if shape[0] != row_weights.len() {
        return Err(contract("one KL weight per posterior row required"));
    }
    let latent = shape[1];
    let weights: Vec<f64> = row_weights
        .iter()
        .flat_map(|&w| std::iter::repeat_n(0.5 * w, latent))
        .collect();
    let terms = kl_terms(tape, post)?;
    let w = tape.constant(Tensor::new(shape, weights)?);
    let weighted = tape.mul(terms, w)?;
    Ok(tape.sum(weighted))
}

/// `z = mu + exp(log_var / 2) ∘ noise`; the noise is a constant.
pub fn reparameterize(tape: &mut Tape, post: GaussianPosterior, noise: &Tensor) -> Result<Var> {
    if tape.shape(post.mu) != noise.shape() || tape.shape(post.log_var) != noise.shape() {
        return Err(contract(format!(
            "noise shape {:?} does not match posterior {:?}",
            noise.shape(),
            tape.shape(post.mu)
        )));
    }
    let half = tape.scale(post.log_var, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(noise.clone());
    let spread = tape.mul(std, eps)?;
    Ok(tape.add(post.mu, spread)?)
}

/// Standard normal draws of shape `[rows × latent]`.
pub fn sample_noise(rng: &mut impl Rng, rows: usize, latent: usize) -> Tensor {
    let data = (0..rows * latent).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, latent], data).expect("shape and data agree")
}

/// Everything the loss needs from one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Posteriors stacked time-major (`row = t · batch + b`) for the HR
    /// variant, or one row per sentence for the baseline.
    pub posteriors: GaussianPosterior,
    /// KL weight of each posterior row; zero on padded timesteps.
    pub kl_row_weights: Vec<f64>,
    /// Posterior at each sentence's last valid timestep, `[batch × latent]`.
    pub final_posterior: GaussianPosterior,
    /// Sample from `final_posterior`.
    pub z: Var,
    pub batch_size: usize,
    pub lengths: Vec<usize>,
    pub variant: Variant,
}

impl EncoderTrace {
    /// Number of posterior timesteps recorded.
    pub fn num_posteriors(&self) -> usize {
        self.kl_row_weights.len() / self.batch_size
    }

    /// Posterior at timestep `t`, `[batch × latent]`.
    pub fn posterior_at(&self, tape: &mut Tape, t: usize) -> Result<GaussianPosterior> {
        let b = self.batch_size;
        let rows = t * b..(t + 1) * b;
        Ok(GaussianPosterior {
            mu: tape.slice(self.posteriors.mu, 0, rows.clone())?,
            log_var: tape.slice(self.posteriors.log_var, 0, rows)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    /// Masked token NLL summed per sentence, averaged over the batch.
    pub reconstruction_nll: f64,
    /// Mean KL over the sentences still running at each timestep.
    pub kl_per_timestep: Vec<f64>,
    pub kl_mean: f64,
    pub kl_weight: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    /// Token NLL summed over the whole batch.
    pub token_nll_sum: Var,
    pub reconstruction: Var,
    pub kl: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone)]
pub struct HrVae {
    pub(crate) config: ModelConfig,
    pub(crate) params: ParamStore,
    pub(crate) embedding: Embedding,
    pub(crate) encoder: LstmStack,
    pub(crate) mu_head: Linear,
    pub(crate) log_var_head: Linear,
    pub(crate) latent_to_state: Linear,
    pub(crate) decoder: LstmStack,
    pub(crate) output: Linear,
}

impl HrVae {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let init = 1.0 / (c.hidden_dim as f64).sqrt();
        let mut params = ParamStore::new();
        let embedding = Embedding::new(&mut params, "embedding", c.vocab_size, c.embed_dim, rng);
        let encoder = LstmStack::new(&mut params, "encoder", c.embed_dim, c.hidden_dim, c.num_layers, rng);
        let mu_head = Linear::new(&mut params, "posterior.mu", c.feature_dim(), c.latent_dim, init, rng);
        let log_var_head = Linear::new(&mut params, "posterior.log_var", c.feature_dim(), c.latent_dim, init, rng);
        let latent_to_state = Linear::new(
            &mut params,
            "decoder.init",
            c.latent_dim,
            2 * c.num_layers * c.hidden_dim,
            init,
            rng,
        );
        let decoder_in = match c.decoder_setting {
            DecoderSetting::Standard => c.embed_dim + c.latent_dim,
            DecoderSetting::Inputless => c.latent_dim,
        };
        let decoder = LstmStack::new(&mut params, "decoder", decoder_in, c.hidden_dim, c.num_layers, rng);
        let output = Linear::new(&mut params, "decoder.output", c.hidden_dim, c.vocab_size, init, rng);
        Ok(Self {
            config,
            params,
            embedding,
            encoder,
            mu_head,
            log_var_head,
            latent_to_state,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn mu_head(&self) -> &Linear {
        &self.mu_head
    }

    pub fn log_var_head(&self) -> &Linear {
        &self.log_var_head
    }

    pub fn output_head(&self) -> &Linear {
        &self.output
    }

    /// Runs the encoder over the batch and returns `[steps · batch × feature]`
    /// state features, time-major.
    pub(crate) fn encoder_features(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        let b = batch.size();
        let emb = self.embedding.lookup(tape, bound, &batch.time_major())?;
        let mut states = self.encoder.zero_states(tape, b);
        let mut features = Vec::with_capacity(batch.max_len());
        for t in 0..batch.max_len() {
            let x = tape.slice(emb, 0, t * b..(t + 1) * b)?;
            states = self.encoder.step(tape, bound, x, &states)?;
            let parts: Vec<Var> = match self.config.posterior_source {
                PosteriorSource::AllLayers => states.iter().flat_map(|s| [s.h, s.c]).collect(),
                PosteriorSource::TopLayer => {
                    let top = states[states.len() - 1];
                    vec![top.h, top.c]
                }
            };
            features.push(tape.concat(&parts, 1)?);
        }
        Ok(tape.concat(&features, 0)?)
    }

    pub(crate) fn heads(&self, tape: &mut Tape, bound: &Bound, features: Var) -> Result<GaussianPosterior> {
        Ok(GaussianPosterior {
            mu: self.mu_head.forward(tape, bound, features)?,
            log_var: self.log_var_head.forward(tape, bound, features)?,
        })
    }

    /// Row of each sentence's last valid timestep in a time-major stack.
    pub(crate) fn last_rows(batch: &Batch) -> Vec<usize> {
        let b = batch.size();
        batch
            .lengths()
            .iter()
            .enumerate()
            .map(|(i, &len)| (len - 1) * b + i)
            .collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.token_count() == 0 {
            return Err(contract("batch has no tokens"));
        }
        if let Some(&bad) = batch.ids().iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(contract(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Encodes a batch, dispatching on the configured variant. `noise` has
    /// shape `[batch × latent]` and drives the sample of `z`.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, batch: &Batch, noise: &Tensor) -> Result<EncoderTrace> {
        match self.config.variant {
            Variant::Hr => self.encode_all_steps(tape, bound, batch, noise),
            Variant::LastStateBaseline => self.encode_last_state(tape, bound, batch, noise),
        }
    }

    /// Posterior at every timestep; KL weight `1 / (len_b · batch)` on the
    /// valid rows of sentence `b`.
    pub fn encode_all_steps(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        noise: &Tensor,
    ) -> Result<EncoderTrace> {
        self.check_batch(batch)?;
        let b = batch.size();
        let features = self.encoder_features(tape, bound, batch)?;
        let posteriors = self.heads(tape, bound, features)?;
        let last = Self::last_rows(batch);
        let final_posterior = GaussianPosterior {
            mu: tape.gather_rows(posteriors.mu, &last)?,
            log_var: tape.gather_rows(posteriors.log_var, &last)?,
        };
        let z = reparameterize(tape, final_posterior, noise)?;
        let kl_row_weights = (0..batch.max_len())
            .flat_map(|t| (0..b).map(move |i| (t, i)))
            .map(|(t, i)| {
                if batch.mask(i, t) {
                    1.0 / (batch.lengths()[i] * b) as f64
                } else {
                    0.0
                }
            })
            .collect();
        Ok(EncoderTrace {
            posteriors,
            kl_row_weights,
            final_posterior,
            z,
            batch_size: b,
            lengths: batch.lengths().to_vec(),
            variant: Variant::Hr,
        })
    }

    /// Decoder initial state for every layer from a linear map of `z`.
    fn initial_states(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Vec<LstmState>> {
        let h = self.config.hidden_dim;
        let init = self.latent_to_state.forward(tape, bound, z)?;
        (0..self.config.num_layers)
            .map(|l| {
                Ok(LstmState {
                    h: tape.slice(init, 1, 2 * l * h..(2 * l + 1) * h)?,
                    c: tape.slice(init, 1, (2 * l + 1) * h..(2 * l + 2) * h)?,
                })
            })
            .collect()
    }

    /// Input to one decoder step given the previous tokens (ignored when
    /// inputless).
    fn decoder_input(&self, tape: &mut Tape, bound: &Bound, z: Var, previous: &[usize]) -> Result<Var> {
        match self.config.decoder_setting {
            DecoderSetting::Inputless => Ok(z),
            DecoderSetting::Standard => {
                let emb = self.embedding.lookup(tape, bound, previous)?;
                Ok(tape.concat(&[emb, z], 1)?)
            }
        }
    }

    /// Teacher-forced decoder logits `[batch × steps × vocab]`.
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, z: Var, batch: &Batch) -> Result<Var> {
        let b = batch.size();
        let steps = batch.max_len();
        if tape.shape(z) != [b, self.config.latent_dim] {
            return Err(contract(format!(
                "latent shape {:?} does not match batch {b} × latent {}",
                tape.shape(z),
                self.config.latent_dim
            )));
        }
        let mut states = self.initial_states(tape, bound, z)?;
        let mut tops = Vec::with_capacity(steps);
        let mut previous = vec![SOS; b];
        for t in 0..steps {
            let x = self.decoder_input(tape, bound, z, &previous)?;
            states = self.decoder.step(tape, bound, x, &states)?;
            tops.push(states[states.len() - 1].h);
            for (i, p) in previous.iter_mut().enumerate() {
                *p = batch.id(i, t);
            }
        }
        let hidden = tape.concat(&tops, 0)?;
        let logits = self.output.forward(tape, bound, hidden)?;
        let logits = tape.reshape(logits, vec![steps, b, self.config.vocab_size])?;
        Ok(tape.transpose01(logits)?)
    }

    /// Replaces every parameter from `(name, tensor)` pairs in registration
    /// order, checking names and shapes.
    pub fn load_params(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::ConfigMismatch(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for ((name, tensor), (have, current)) in named.iter().zip(self.params.iter()) {
            if name != have || tensor.shape() != current.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {name} {:?} does not match {have} {:?}",
                    tensor.shape(),
                    current.shape()
                )));
            }
        }
        for ((_, tensor), (_, slot)) in named.into_iter().zip(self.params.iter_mut()) {
            *slot = tensor.with_requires_grad(true);
        }
        Ok(())
    }

    /// Builds the loss: masked reconstruction NLL plus `kl_weight` times the
    /// mask-aware mean KL.
    pub fn elbo_loss(
        &self,
        tape: &mut Tape,
        trace: &EncoderTrace,
        logits: Var,
        batch: &Batch,
        kl_weight: f64,
    ) -> Result<(ElboBreakdown, ElboVars)> {
        if batch.token_count() == 0 {
            return Err(contract("all-PAD batch"));
        }
        if !(0.0..=1.0).contains(&kl_weight) {
            return Err(contract(format!("kl_weight {kl_weight} outside [0, 1]")));
        }
        let b = batch.size();
        let nll_sum = tape.softmax_cross_entropy(logits, batch.ids(), Some(PAD))?;
        let reconstruction = tape.scale(nll_sum, 1.0 / b as f64);
        let kl = weighted_kl(tape, trace.posteriors, &trace.kl_row_weights)?;
        let weighted = tape.scale(kl, kl_weight);
        let total = tape.add(reconstruction, weighted)?;

        let breakdown = ElboBreakdown {
            reconstruction_nll: tape.value(reconstruction).item()?,
            kl_per_timestep: kl_per_timestep(tape, trace),
            kl_mean: tape.value(kl).item()?,
            kl_weight,
            total_loss: tape.value(total).item()?,
        };
        Ok((
            breakdown,
            ElboVars {
                token_nll_sum: nll_sum,
                reconstruction,
                kl,
                total,
            },
        ))
    }

    /// Encode, decode and loss in one call.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        noise: &Tensor,
        kl_weight: f64,
    ) -> Result<(ElboBreakdown, ElboVars)> {
        let trace = self.encode(tape, bound, batch, noise)?;
        let logits = self.decode(tape, bound, trace.z, batch)?;
        self.elbo_loss(tape, &trace, logits, batch, kl_weight)
    }

    /// Encodes one sentence and decodes autoregressively until EOS or
    /// [`MAX_DECODE_LEN`] tokens. Greedy mode uses `z = mu` and argmax
    /// tokens; sample mode draws both from `rng`. The returned ids include
    /// the EOS when one was emitted.
    pub fn reconstruct(&self, sentence: &[usize], mode: DecodeMode, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if sentence.is_empty() {
            return Err(contract("cannot reconstruct an empty sentence"));
        }
        let latent = self.config.latent_dim;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let batch = Batch::new(&[sentence.to_vec()])?;
        let noise = match mode {
            DecodeMode::Greedy => Tensor::zeros(&[1, latent]),
            DecodeMode::Sample => sample_noise(rng, 1, latent),
        };
        let trace = self.encode(&mut tape, &bound, &batch, &noise)?;
        let z = trace.z;
        let mut states = self.initial_states(&mut tape, &bound, z)?;
        let mut previous = SOS;
        let mut out = Vec::new();
        while out.len() < MAX_DECODE_LEN {
            let x = self.decoder_input(&mut tape, &bound, z, &[previous])?;
            states = self.decoder.step(&mut tape, &bound, x, &states)?;
            let logits = self.output.forward(&mut tape, &bound, states[states.len() - 1].h)?;
            let row = tape.value(logits).data();
            let token = match mode {
                DecodeMode::Greedy => argmax(row),
                DecodeMode::Sample => sample_softmax(row, rng),
            };
            out.push(token);
            if token == EOS {
                break;
            }
            previous = token;
        }
        Ok(out)
    }
}

fn kl_per_timestep(tape: &Tape, trace: &EncoderTrace) -> Vec<f64> {
    let mu = tape.value(trace.posteriors.mu);
    let lv = tape.value(trace.posteriors.log_var);
    let b = trace.batch_size;
    let longest = trace.lengths.iter().copied().max().unwrap_or(0);
    let steps = match trace.variant {
        Variant::Hr => longest,
        Variant::LastStateBaseline => 1,
    };
    (0..steps)
        .map(|t| {
            let mut total = 0.0;
            let mut count = 0;
            for i in 0..b {
                let valid = match trace.variant {
                    Variant::Hr => t < trace.lengths[i],
                    Variant::LastStateBaseline => true,
                };
                if !valid {
                    continue;
                }
                let r = t * b + i;
                total += 0.5
                    * mu.row(r)
                        .iter()
                        .zip(lv.row(r))
                        .map(|(m, l)| m * m + l.exp() - l - 1.0)
                        .sum::<f64>();
                count += 1;
            }
            total / count as f64
        })
        .collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_softmax(row: &[f64], rng: &mut impl Rng) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    row.len() - 1
}
