use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hrvae::data::{Corpus, Vocab};
use hrvae::model::{DecoderSetting, ModelConfig};
use hrvae::train::{TrainOptions, Trainer};

const TINY: &str = "\
# small enough for debug builds
embed_dim = 8
hidden_dim = 6
latent_dim = 3
batch_size = 16
max_steps = 4
checkpoint_every = 2
";

fn hrvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_tiny(dir: &Path, extra: &[&str]) -> PathBuf {
    let cfg = write(dir, "exp.cfg", TINY);
    let out = dir.join("run");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    let res = hrvae(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    out
}

#[test]
fn train_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &["--set", "seed=7"]);
    for name in ["history.csv", "final.ckpt", "resolved.cfg", "vocab.tsv", "checkpoint.ckpt"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let resolved = fs::read_to_string(out.join("resolved.cfg")).unwrap();
    assert!(resolved.contains("seed = 7\n"));
    assert!(resolved.contains("hidden_dim = 6\n"));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
    assert!(history.starts_with("step,recon_loss,kl_loss,kl_weight\n"));
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "hiden_dim = 8\n");
    let res = hrvae(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("hiden_dim"));

    let res = hrvae(&["train", "--set", "batch_size=999", "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("batch_size"));
}

#[test]
fn missing_train_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let res = hrvae(&["train", "--set", "train_path=/no/such/file.txt", "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("train_path"));
}

#[test]
fn resolved_config_reproduces_history() {
    let dir = tempfile::tempdir().unwrap();
    let first = train_tiny(dir.path(), &["--set", "seed=3"]);
    let again = dir.path().join("again");
    let res = hrvae(&["train", "--config", s(&first.join("resolved.cfg")), "--out", s(&again)]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        fs::read(first.join("history.csv")).unwrap(),
        fs::read(again.join("history.csv")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("final.ckpt")).unwrap(),
        fs::read(again.join("final.ckpt")).unwrap()
    );
}

#[test]
fn eval_after_zero_steps_is_finite_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &["--set", "max_steps=0"]);
    assert_eq!(fs::read_to_string(out.join("history.csv")).unwrap().lines().count(), 1);
    let test = write(dir.path(), "test.txt", "the eagle is a pub .\nblue spice serves chinese food .\n");
    let ckpt = out.join("final.ckpt");
    let a = hrvae(&["eval", s(&ckpt), s(&test)]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = hrvae(&["eval", s(&ckpt), s(&test)]);
    assert_eq!(stdout(&a), stdout(&b));
    let json: serde_json::Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    for key in ["nll", "ppl", "kl"] {
        assert!(json[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert_eq!(json["sentences"], 2);
    assert_eq!(json["tokens"].as_u64().unwrap(), 14);
}

#[test]
fn uniform_logit_checkpoint_has_ppl_equal_to_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let words: Vec<String> = (0..46).map(|i| format!("w{i:02}")).collect();
    let corpus = Corpus::from_lines([words.join(" ")]);
    let vocab = Vocab::build(&corpus, 1).unwrap();
    assert_eq!(vocab.len(), 50);
    let config = ModelConfig {
        vocab_size: 50,
        embed_dim: 4,
        hidden_dim: 3,
        latent_dim: 2,
        decoder_setting: DecoderSetting::Standard,
        ..ModelConfig::default()
    };
    let mut trainer = Trainer::new(config, vocab, TrainOptions::default()).unwrap();
    let head = trainer.model().output_head().clone();
    for id in [head.weight, head.bias] {
        trainer.model_mut().params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let ckpt = dir.path().join("uniform.ckpt");
    trainer.checkpoint().save(&ckpt).unwrap();
    let test = write(dir.path(), "t.txt", "w01 w02 w03\nw40 unseen\n");
    let res = hrvae(&["eval", s(&ckpt), s(&test)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let json: serde_json::Value = serde_json::from_str(stdout(&res).trim()).unwrap();
    // exp(ln 50) rounds to 49.99999999999999 in f64.
    let ppl = json["ppl"].as_f64().unwrap();
    assert!((ppl - 50.0).abs() < 50.0 * 1e-12, "{ppl}");
}

#[test]
fn mismatched_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &[]);
    let test = write(dir.path(), "test.txt", "the eagle is a pub .\n");
    let ckpt = out.join("final.ckpt");
    let cfg = s(&out.join("resolved.cfg")).to_string();

    let ok = hrvae(&["eval", s(&ckpt), s(&test), "--config", &cfg]);
    assert!(ok.status.success(), "{}", stderr(&ok));

    let res = hrvae(&["eval", s(&ckpt), s(&test), "--config", &cfg, "--set", "hidden_dim=7"]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));

    let other = write(dir.path(), "other.txt", "completely different words here\n");
    let res = hrvae(&["eval", s(&ckpt), s(&test), "--config", &cfg, "--set", &format!("train_path={}", s(&other))]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    assert!(stderr(&res).contains("vocabulary"));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.ckpt", "not a checkpoint");
    let test = write(dir.path(), "t.txt", "a b\n");
    let res = hrvae(&["eval", s(&bad), s(&test)]);
    assert_eq!(res.status.code(), Some(3));
    let res = hrvae(&["reconstruct", s(&bad), s(&test)]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn empty_eval_set_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &["--set", "max_steps=0"]);
    let empty = write(dir.path(), "empty.txt", "");
    let res = hrvae(&["eval", s(&out.join("final.ckpt")), s(&empty)]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn reconstruct_formats_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), &[]);
    let ckpt = out.join("final.ckpt");
    let empty = write(dir.path(), "empty.txt", "");
    let res = hrvae(&["reconstruct", s(&ckpt), s(&empty)]);
    assert!(res.status.success());
    assert_eq!(stdout(&res), "");

    let input = write(dir.path(), "in.txt", "The Eagle is a pub .\n\nblue spice\n");
    let a = hrvae(&["reconstruct", s(&ckpt), s(&input)]);
    let b = hrvae(&["reconstruct", s(&ckpt), s(&input)]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("The Eagle is a pub .\t"));
    assert_eq!(lines[1], "\t");
    assert!(stdout(&a).lines().all(|l| l.matches('\t').count() == 1));

    let c = hrvae(&["reconstruct", s(&ckpt), s(&input), "--sample-seed", "5"]);
    let d = hrvae(&["reconstruct", s(&ckpt), s(&input), "--sample-seed", "5"]);
    assert_eq!(stdout(&c), stdout(&d));
}

#[test]
fn single_sentence_is_reconstructed_after_overfitting() {
    let dir = tempfile::tempdir().unwrap();
    let sentence = "the golden curry serves cheap indian food near the river .";
    let train = write(dir.path(), "one.txt", &format!("{sentence}\n"));
    let out = dir.path().join("one");
    let cfg = write(dir.path(), "exp.cfg", TINY);
    let res = hrvae(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        &format!("train_path={}", s(&train)),
        "--set",
        "lr=0.01",
        "--set",
        "max_steps=300",
        "--set",
        "decoder_setting=inputless",
        "--out",
        s(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let res = hrvae(&["reconstruct", s(&out.join("final.ckpt")), s(&train)]);
    assert_eq!(stdout(&res), format!("{sentence}\t{sentence}\n"));
}

#[test]
fn compare_writes_merged_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.cfg", TINY);
    let out = dir.path().join("cmp");
    let res = hrvae(&["compare", "--config", s(&cfg), "--out", s(&out), "--set", "anneal=constant"]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,recon_hr,kl_hr,recon_base,kl_base,kl_weight_base"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        assert!(row.iter().all(|c| !c.is_empty()));
        assert_eq!(row[5], "1.00000000");
    }
    for sub in ["hr", "base"] {
        assert!(out.join(sub).join("history.csv").exists());
        assert!(out.join(sub).join("final.ckpt").exists());
    }
    assert!(out.join("resolved.cfg").exists());
}

#[test]
fn compare_with_identical_variants_gives_identical_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.cfg", TINY);
    let out = dir.path().join("cmp");
    let res = hrvae(&["compare", "--config", s(&cfg), "--out", s(&out), "--set", "compare_baseline=hr"]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        assert_eq!(c[1], c[3]);
        assert_eq!(c[2], c[4]);
    }
}

#[test]
fn numerical_blowup_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.cfg", TINY);
    let out = dir.path().join("boom");
    let res = hrvae(&[
        "train",
        "--config",
        s(&cfg),
        "--set",
        "lr=1e300",
        "--set",
        "max_steps=6",
        "--out",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(4), "{}", stderr(&res));
    assert!(stderr(&res).contains("non-finite"));
    assert!(out.join("history.csv").exists());
}
