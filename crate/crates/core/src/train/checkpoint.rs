//! Binary checkpoint file. The byte layout is described in
//! `docs/checkpoint-format.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::{HrVae, ModelConfig};

use super::AdamState;

pub const MAGIC: &[u8; 6] = b"HRVAE\0";
pub const FORMAT_VERSION: u32 = 1;

/// Position of a run inside its data stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Progress {
    pub step: u64,
    pub epoch: u64,
    /// Batches of the current epoch already consumed.
    pub batch_in_epoch: u64,
    /// Shuffle seed of the current epoch.
    pub epoch_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Vec<(String, Tensor)>,
    pub adam: AdamState,
    pub progress: Progress,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        put_str(&mut w, &self.config.to_text());

        put_u64(&mut w, self.vocab.min_freq());
        put_u32(&mut w, self.vocab.len() as u32);
        for (token, count) in self.vocab.entries() {
            put_str(&mut w, token);
            put_u64(&mut w, count);
        }

        let p = self.progress;
        for v in [p.step, p.epoch, p.batch_in_epoch, p.epoch_seed] {
            put_u64(&mut w, v);
        }

        put_u32(&mut w, self.params.len() as u32);
        for (name, tensor) in &self.params {
            put_str(&mut w, name);
            put_u32(&mut w, tensor.shape().len() as u32);
            for &d in tensor.shape() {
                put_u64(&mut w, d as u64);
            }
            put_f64s(&mut w, tensor.data());
        }

        let a = &self.adam;
        put_u64(&mut w, a.step);
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            put_f64(&mut w, v);
        }
        for (m, v) in a.m.iter().zip(&a.v) {
            put_f64s(&mut w, m);
            put_f64s(&mut w, v);
        }

        w.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut w, self.rng.get_stream());
        w.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = ModelConfig::from_text(&r.string()?)?;

        let min_freq = r.u64()?;
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let token = r.string()?;
            entries.push((token, r.u64()?));
        }
        let vocab = Vocab::from_entries(entries, min_freq)?;

        let progress = Progress {
            step: r.u64()?,
            epoch: r.u64()?,
            batch_in_epoch: r.u64()?,
            epoch_seed: r.u64()?,
        };

        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} shape overflows")))?;
            let data = r.f64s(numel)?;
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            params.push((name, tensor));
        }

        let step = r.u64()?;
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for (_, tensor) in &params {
            m.push(r.f64s(tensor.len())?);
            v.push(r.f64s(tensor.len())?);
        }
        let adam = AdamState {
            step,
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
        };

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if config.vocab_size != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "config vocab_size {} but {} vocabulary entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            config,
            vocab,
            params,
            adam,
            progress,
            rng,
        })
    }

    /// Writes to a sibling temporary file and renames it into place so a
    /// crash never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        let mut file = fs::File::create(&tmp)?;
        file.write_all(&self.to_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {:?}, expected {:?}",
                self.config, expected
            )));
        }
        Ok(())
    }

    /// Rebuilds the model with the stored parameters.
    pub fn model(&self) -> Result<HrVae> {
        let mut model = HrVae::new(self.config.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        model.load_params(self.params.clone())?;
        Ok(model)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(w: &mut Vec<u8>, values: &[f64]) {
    values.iter().for_each(|&v| put_f64(w, v));
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}
