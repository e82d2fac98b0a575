use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = [
    "synth_n_source=150",
    "synth_n_target=150",
    "synth_embed_dim=6",
    "synth_subjectivity_size=30",
    "synth_fillers=12",
    "synth_cues_per_class=2",
];

fn dan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dan")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dan(args);
    assert!(
        out.status.success(),
        "dan {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path) {
    let mut args = vec!["gen-synth", "--output", dir.to_str().unwrap(), "--seed", "5"];
    for s in SMALL {
        args.extend(["--set", s]);
    }
    ok(&args);
}

fn train(dir: &Path, out: &Path, extra: &[&str]) -> String {
    let cfg = dir.join("run.cfg");
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--set",
        "hidden=4",
        "--set",
        "ffn_hidden=4",
        "--set",
        "max_iterations=20",
        "--set",
        "eval_every=10",
    ];
    args.extend(extra);
    ok(&args)
}

fn last_field(stdout: &str, column: &str) -> f64 {
    let mut lines = stdout.lines().filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let row: Vec<&str> = lines.next_back().unwrap().split('\t').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    row[i].parse().unwrap()
}

#[test]
fn gen_synth_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path());
    gen(b.path());
    for f in [
        "source.tsv",
        "target.tsv",
        "embeddings.txt",
        "subjectivity.tsv",
        "source_silver.tsv",
        "target_silver.tsv",
        "run.cfg",
    ] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn smoke_train_writes_every_output_and_reruns_identically() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    let out = d.path().join("out");
    let first = train(d.path(), &out, &[]);
    for f in ["model.ckpt", "train_log.tsv", "metrics.tsv", "config.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
    assert!(log.starts_with("iteration\tlr\tL_stance"));
    assert_eq!(log.lines().count(), 21);
    let ckpt = fs::read(out.join("model.ckpt")).unwrap();
    let second = train(d.path(), &out, &[]);
    assert_eq!(first, second);
    assert_eq!(ckpt, fs::read(out.join("model.ckpt")).unwrap());

    let target = d.path().join("target.tsv");
    let ck = out.join("model.ckpt");
    let stdout = ok(&["eval", "--checkpoint", ck.to_str().unwrap(), "--corpus", target.to_str().unwrap()]);
    let f1 = last_field(&stdout, "macro_f1");
    assert!((0.0..=1.0).contains(&f1));
}

#[test]
fn flags_select_the_source_only_configuration() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    let out = d.path().join("so");
    train(d.path(), &out, &["--aligner", "none", "--view", "single"]);
    let cfg = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l == "view = single"), "{cfg}");
    assert!(cfg.lines().any(|l| l == "aligner = none"), "{cfg}");
    let log = fs::read_to_string(out.join("train_log.tsv")).unwrap();
    let row: Vec<&str> = log.lines().nth(1).unwrap().split('\t').collect();
    // No auxiliary or confusion terms in a source-only run.
    assert!(row[3..7].iter().all(|c| c.is_empty()), "{row:?}");
}

#[test]
fn untrained_zero_model_scores_near_one_sixth() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    let out = d.path().join("zero");
    train(d.path(), &out, &["--set", "init=zero", "--set", "max_iterations=0"]);
    let mut corpus = String::from("id\ttopic\ttext\tstance\n");
    for (i, s) in ["FAVOR", "AGAINST", "NONE"].iter().cycle().take(30).enumerate() {
        corpus += &format!("b{i}\tsynthetic\tfil0 fil1 fil2\t{s}\n");
    }
    let path = d.path().join("balanced.tsv");
    fs::write(&path, corpus).unwrap();
    let ck = out.join("model.ckpt");
    let stdout = ok(&["eval", "--checkpoint", ck.to_str().unwrap(), "--corpus", path.to_str().unwrap()]);
    let f1 = last_field(&stdout, "macro_f1");
    assert!((0.15..=0.20).contains(&f1), "{f1}");
}

#[test]
fn exported_features_have_zero_self_pad() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    let out = d.path().join("run");
    train(d.path(), &out, &[]);
    let ck = out.join("model.ckpt");
    let src = d.path().join("source.tsv");
    let feats = d.path().join("features.csv");
    ok(&[
        "export-features",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--source",
        src.to_str().unwrap(),
        "--output",
        feats.to_str().unwrap(),
    ]);
    let f = feats.to_str().unwrap();
    let stdout = ok(&["pad", "--features", f, "--target-features", f]);
    let pad = last_field(&stdout, "pad");
    assert!(pad.abs() <= 0.2, "{pad}");
}

#[test]
fn missing_embeddings_exit_with_code_one() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    fs::remove_file(d.path().join("embeddings.txt")).unwrap();
    let out = d.path().join("out");
    let cfg = d.path().join("run.cfg");
    let r = dan(&["train", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("embeddings"));
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn help_lists_flags_and_config_keys() {
    let top = ok(&["--help"]);
    for c in ["train", "eval", "pad", "silver-label", "gen-synth", "export-features"] {
        assert!(top.contains(c), "{c}");
    }
    let t = ok(&["train", "--help"]);
    for f in ["--config", "--aligner", "--view", "--seed", "--output", "--set", "lambda1", "synth_shift_rate"] {
        assert!(t.contains(f), "{f}");
    }
    assert_eq!(dan(&["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn silver_label_writes_one_row_per_example() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path());
    let out = d.path().join("silver.tsv");
    ok(&[
        "silver-label",
        "--subjectivity",
        d.path().join("subjectivity.tsv").to_str().unwrap(),
        "--corpus",
        d.path().join("source.tsv").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().next(), Some("id\tsubj\tobj"));
    assert_eq!(text.lines().count(), 151);
}
