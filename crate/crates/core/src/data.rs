//! Tokenization, vocabulary construction, padding and batching.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

pub const MAX_BATCH_SIZE: usize = 128;
/// Longest stored sentence, counting the trailing end-of-sentence marker.
pub const MAX_SENTENCE_TOKENS: usize = 60;

/// Bundled 200-sentence synthetic corpus of restaurant-description templates.
pub const SYNTHETIC_TOY_CORPUS: &str = include_str!("../data/synthetic_toy_corpus.txt");

/// Lowercased whitespace split with the end marker appended. Blank lines
/// produce an empty list.
pub fn tokenize(line: &str) -> Vec<String> {
    let mut tokens: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
    if !tokens.is_empty() {
        tokens.push(RESERVED_TOKENS[EOS].to_string());
    }
    tokens
}

/// Tokenized sentences, one per non-blank input line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    sentences: Vec<Vec<String>>,
    truncated: usize,
}

impl Corpus {
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut corpus = Corpus::default();
        for line in lines {
            let mut tokens = tokenize(line.as_ref());
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() > MAX_SENTENCE_TOKENS {
                tokens.truncate(MAX_SENTENCE_TOKENS - 1);
                tokens.push(RESERVED_TOKENS[EOS].to_string());
                corpus.truncated += 1;
            }
            corpus.sentences.push(tokens);
        }
        corpus
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_lines(text.lines())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_text(&text))
    }

    pub fn synthetic_toy() -> Self {
        Self::from_text(SYNTHETIC_TOY_CORPUS)
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Number of sentences cut down to [`MAX_SENTENCE_TOKENS`].
    pub fn truncated(&self) -> usize {
        self.truncated
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Token/id mapping. Ids 0..4 are reserved for PAD, SOS, EOS and UNK; the
/// remaining ids follow descending training frequency, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    min_freq: u64,
}

impl Vocab {
    pub fn build(corpus: &Corpus, min_freq: u64) -> Result<Self> {
        if min_freq == 0 {
            return Err(contract("min_freq must be at least 1"));
        }
        if corpus.is_empty() {
            return Err(contract("cannot build a vocabulary from an empty corpus"));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for sentence in corpus.sentences() {
            for token in sentence {
                if !RESERVED_TOKENS.contains(&token.as_str()) {
                    *freq.entry(token).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, u64)> = freq.iter().map(|(t, c)| (*t, *c)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let unk: u64 = kept.iter().filter(|(_, c)| *c < min_freq).map(|(_, c)| c).sum();
        kept.retain(|(_, c)| *c >= min_freq);

        let mut entries: Vec<(String, u64)> = vec![
            (RESERVED_TOKENS[PAD].into(), 0),
            (RESERVED_TOKENS[SOS].into(), 0),
            (RESERVED_TOKENS[EOS].into(), corpus.len() as u64),
            (RESERVED_TOKENS[UNK].into(), unk),
        ];
        entries.extend(kept.into_iter().map(|(t, c)| (t.to_string(), c)));
        Self::from_entries(entries, min_freq)
    }

    /// Rebuilds a vocabulary from `(token, count)` pairs in id order.
    pub fn from_entries(entries: Vec<(String, u64)>, min_freq: u64) -> Result<Self> {
        if entries.len() < RESERVED_TOKENS.len()
            || entries.iter().zip(RESERVED_TOKENS).any(|((t, _), r)| t != r)
        {
            return Err(contract("vocabulary must start with the reserved tokens"));
        }
        let mut ids = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (id, (token, count)) in entries.into_iter().enumerate() {
            if ids.insert(token.clone(), id).is_some() {
                return Err(contract(format!("duplicate vocabulary token {token:?}")));
            }
            tokens.push(token);
            counts.push(count);
        }
        Ok(Self {
            ids,
            tokens,
            counts,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> u64 {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens.iter().map(String::as_str).zip(self.counts.iter().copied())
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode_corpus(&self, corpus: &Corpus) -> Vec<Vec<usize>> {
        corpus.sentences().iter().map(|s| self.encode(s)).collect()
    }

    /// Joins tokens up to the first EOS, skipping PAD and SOS.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != SOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `token<TAB>id<TAB>count` per line, reserved tokens first.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for (id, (token, count)) in self.entries().enumerate() {
            writeln!(out, "{token}\t{id}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv(input: impl BufRead, min_freq: u64) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Parse(format!("vocab line {}: {line:?}", lineno + 1));
            let [token, id, count] = fields[..] else { return Err(bad()) };
            if id.parse::<usize>().map_err(|_| bad())? != lineno {
                return Err(bad());
            }
            entries.push((token.to_string(), count.parse().map_err(|_| bad())?));
        }
        Self::from_entries(entries, min_freq)
    }
}

/// Padded mini-batch stored row-major as `[batch × max_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    ids: Vec<usize>,
    lengths: Vec<usize>,
    max_len: usize,
}

impl Batch {
    pub fn new(sequences: &[Vec<usize>]) -> Result<Self> {
        let max_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
        Self::padded_to(sequences, max_len)
    }

    /// Like [`Batch::new`] but pads every row to `len`, which may exceed the
    /// longest sequence.
    pub fn padded_to(sequences: &[Vec<usize>], len: usize) -> Result<Self> {
        if sequences.is_empty() {
            return Err(contract("batch must hold at least one sentence"));
        }
        if sequences.len() > MAX_BATCH_SIZE {
            return Err(contract(format!(
                "batch of {} exceeds the maximum of {MAX_BATCH_SIZE}",
                sequences.len()
            )));
        }
        if let Some(i) = sequences.iter().position(Vec::is_empty) {
            return Err(contract(format!("sentence {i} in batch is empty")));
        }
        let longest = sequences.iter().map(Vec::len).max().unwrap_or(0);
        if len < longest {
            return Err(contract(format!("pad length {len} shorter than sentence of {longest}")));
        }
        let mut ids = vec![PAD; sequences.len() * len];
        for (row, seq) in ids.chunks_exact_mut(len).zip(sequences) {
            row[..seq.len()].copy_from_slice(seq);
        }
        Ok(Self {
            ids,
            lengths: sequences.iter().map(Vec::len).collect(),
            max_len: len,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn id(&self, row: usize, t: usize) -> usize {
        self.ids[row * self.max_len + t]
    }

    pub fn row(&self, row: usize) -> &[usize] {
        &self.ids[row * self.max_len..(row + 1) * self.max_len]
    }

    pub fn mask(&self, row: usize, t: usize) -> bool {
        t < self.lengths[row]
    }

    /// Ids in time-major order: index `t * size + row`.
    pub fn time_major(&self) -> Vec<usize> {
        (0..self.max_len)
            .flat_map(|t| (0..self.size()).map(move |b| (b, t)))
            .map(|(b, t)| self.id(b, t))
            .collect()
    }

    /// Non-PAD token count (EOS included).
    pub fn token_count(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// Splits sequences into consecutive chunks of `batch_size`, each padded to
/// its own longest sentence. With a seed the order is shuffled first.
pub fn make_batches(
    sequences: &[Vec<usize>],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size > MAX_BATCH_SIZE {
        return Err(contract(format!(
            "batch_size must be in 1..={MAX_BATCH_SIZE}, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<Vec<usize>> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            Batch::new(&rows)
        })
        .collect()
}
