use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use hrvae::data::{Corpus, Vocab};
use hrvae::model::{DecodeMode, Variant};
use hrvae::train::{evaluate, format_sig9, Checkpoint, EvalOptions, EvalReport, StepRecord, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, BUILTIN_TOY};
use crate::CliError;

pub const COMPARE_HEADER: &str = "step,recon_hr,kl_hr,recon_base,kl_base,kl_weight_base";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub records: Vec<StepRecord>,
    pub dev: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

fn read_corpus(field: &str, path: &Path) -> Result<Corpus, CliError> {
    Corpus::from_path(path).map_err(|e| CliError::config(format!("{field} {}: {e}", path.display())))
}

fn training_corpus(config: &ExperimentConfig) -> Result<Corpus, CliError> {
    let corpus = if config.train_path == BUILTIN_TOY {
        Corpus::synthetic_toy()
    } else {
        read_corpus("train_path", Path::new(&config.train_path))?
    };
    if corpus.is_empty() {
        return Err(CliError::config(format!("train_path {}: no sentences", config.train_path)));
    }
    Ok(corpus)
}

pub fn report_json(report: &EvalReport) -> String {
    serde_json::json!({
        "nll": report.nll,
        "ppl": report.ppl,
        "kl": report.kl,
        "tokens": report.token_count,
        "sentences": report.sentence_count,
    })
    .to_string()
}

/// Trains one model as described by `config`, writing `resolved.cfg`,
/// `vocab.tsv`, `history.csv`, `checkpoint.ckpt`, `final.ckpt` and, when
/// splits are configured, `dev_eval.json` / `test_eval.json`.
pub fn train(config: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let mut config = config.clone();
    config.resolve_paths()?;
    config.validate()?;
    run_training(&config)
}

fn run_training(config: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let out = config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::config(format!("out_dir {}: {e}", out.display())))?;
    fs::write(out.join("resolved.cfg"), config.to_text())?;

    let corpus = training_corpus(config)?;
    let vocab = Vocab::build(&corpus, config.min_freq)?;
    vocab.write_tsv(fs::File::create(out.join("vocab.tsv"))?)?;
    let sequences = vocab.encode_corpus(&corpus);

    let mut trainer = Trainer::new(config.model_config(vocab.len()), vocab.clone(), config.train_options())?;
    if let Some(path) = &config.embeddings_path {
        let file = fs::File::open(path).map_err(|e| CliError::config(format!("embeddings_path {}: {e}", path.display())))?;
        let embedding = trainer.model().embedding().clone();
        let loaded = embedding
            .load_text_vectors(trainer.model_mut().params_mut(), &vocab, BufReader::new(file))
            .map_err(|e| CliError::from(e).context("embeddings_path"))?;
        eprintln!("loaded {loaded} embedding rows from {}", path.display());
    }
    eprintln!(
        "training {} on {} sentences, vocab {}, {} parameters",
        config.model.variant,
        sequences.len(),
        vocab.len(),
        trainer.model().params().num_scalars()
    );
    let records = trainer.fit_to_dir(&sequences, &out)?;
    if let Some(last) = records.last() {
        eprintln!(
            "step {}: recon {:.4} kl {:.4} weight {:.4}",
            last.step, last.recon_loss, last.kl_loss, last.kl_weight
        );
    }

    let split = |field: &str, path: &Option<PathBuf>| -> Result<Option<EvalReport>, CliError> {
        let Some(path) = path else { return Ok(None) };
        let corpus = read_corpus(field, path)?;
        let report = evaluate(trainer.model(), &vocab.encode_corpus(&corpus), config.eval_options())?;
        let name = field.trim_end_matches("_path");
        fs::write(out.join(format!("{name}_eval.json")), report_json(&report) + "\n")?;
        eprintln!("{name}: {}", report_json(&report));
        Ok(Some(report))
    };
    let dev = split("dev_path", &config.dev_path)?;
    let test = split("test_path", &config.test_path)?;
    Ok(TrainOutcome {
        out_dir: out,
        records,
        dev,
        test,
    })
}

/// Trains the HR model into `<out>/hr` and `compare_baseline` into
/// `<out>/base` from identical seed and data, then writes the merged curve
/// to `<out>/compare.csv`.
pub fn compare(config: &ExperimentConfig) -> Result<(TrainOutcome, TrainOutcome), CliError> {
    let mut config = config.clone();
    config.resolve_paths()?;
    config.validate()?;
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::config(format!("out_dir {}: {e}", config.out_dir.display())))?;
    fs::write(config.out_dir.join("resolved.cfg"), config.to_text())?;

    let arm = |variant: Variant, dir: &str| {
        let mut c = config.clone();
        c.model.variant = variant;
        c.out_dir = config.out_dir.join(dir);
        run_training(&c)
    };
    let hr = arm(Variant::Hr, "hr")?;
    let base = arm(config.compare_baseline, "base")?;
    fs::write(config.out_dir.join("compare.csv"), merged_csv(&hr.records, &base.records))?;
    Ok((hr, base))
}

pub fn merged_csv(hr: &[StepRecord], base: &[StepRecord]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for i in 0..hr.len().max(base.len()) {
        let (a, b) = (hr.get(i), base.get(i));
        let step = a.or(b).map(|r| r.step).expect("one side has a row");
        let cell = |r: Option<&StepRecord>, f: fn(&StepRecord) -> f64| r.map(|r| format_sig9(f(r))).unwrap_or_default();
        out.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            cell(a, |r| r.recon_loss),
            cell(a, |r| r.kl_loss),
            cell(b, |r| r.recon_loss),
            cell(b, |r| r.kl_loss),
            cell(b, |r| r.kl_weight),
        ));
    }
    out
}

/// Loads a checkpoint and, when a config is given, checks that its model
/// settings and training vocabulary agree with the checkpoint.
fn load_checked(checkpoint: &Path, config: Option<&ExperimentConfig>) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| CliError::from(e).context(checkpoint.display()))?;
    if let Some(config) = config {
        ckpt.expect_config(&config.model_config(ckpt.vocab.len()))?;
        let vocab = Vocab::build(&training_corpus(config)?, config.min_freq)?;
        if vocab != ckpt.vocab {
            return Err(CliError::mismatch(format!(
                "vocabulary rebuilt from {} ({} entries) differs from the checkpoint's ({} entries)",
                config.train_path,
                vocab.len(),
                ckpt.vocab.len()
            )));
        }
    }
    Ok(ckpt)
}

pub fn eval(
    checkpoint: &Path,
    test: &Path,
    config: Option<&ExperimentConfig>,
    options: EvalOptions,
) -> Result<EvalReport, CliError> {
    let ckpt = load_checked(checkpoint, config)?;
    let model = ckpt.model()?;
    let corpus = read_corpus("test file", test)?;
    Ok(evaluate(&model, &ckpt.vocab.encode_corpus(&corpus), options)?)
}

/// One `input<TAB>reconstruction` line per input line. Blank lines give an
/// empty reconstruction. `sample_seed` switches from greedy to sampled
/// decoding.
pub fn reconstruct(
    checkpoint: &Path,
    input: &Path,
    config: Option<&ExperimentConfig>,
    sample_seed: Option<u64>,
) -> Result<Vec<String>, CliError> {
    let ckpt = load_checked(checkpoint, config)?;
    let model = ckpt.model()?;
    let text = fs::read_to_string(input).map_err(|e| CliError::config(format!("input {}: {e}", input.display())))?;
    let mode = match sample_seed {
        Some(_) => DecodeMode::Sample,
        None => DecodeMode::Greedy,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed.unwrap_or(0));
    let mut lines = Vec::new();
    for line in text.lines() {
        let source = line.trim();
        let corpus = Corpus::from_lines([source]);
        let output = match corpus.sentences().first() {
            Some(tokens) => {
                let ids = model.reconstruct(&ckpt.vocab.encode(tokens), mode, &mut rng)?;
                ckpt.vocab.detokenize(&ids)
            }
            None => String::new(),
        };
        lines.push(format!("{source}\t{output}"));
    }
    Ok(lines)
}
