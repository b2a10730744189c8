use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ctxnmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxnmt"))
        .args(args)
        .env_remove("CTXNMT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const DOCS: &str = "the cat sat on the mat\nit was warm\n\na dog ran past\nthe end\n";

#[test]
fn bleu_of_identical_files_is_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.txt");
    fs::write(&f, DOCS).unwrap();
    let o = ctxnmt(&["bleu", "--hyp", p(&f), "--ref", p(&f)]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("bleu: 100.00"));
}

#[test]
fn bleu_rejects_misaligned_references() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::write(&a, DOCS).unwrap();
    fs::write(&b, "one line\n").unwrap();
    let o = ctxnmt(&["bleu", "--hyp", p(&a), "--ref", p(&b)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn signtest_against_itself_is_all_ties() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.txt");
    fs::write(&f, DOCS).unwrap();
    let o = ctxnmt(&["signtest", "--a", p(&f), "--b", p(&f), "--ref", p(&f)]);
    assert!(o.status.success());
    let out = stdout(&o);
    for want in ["wins: 0", "losses: 0", "ties: 4", "p_value: 1.0"] {
        assert!(out.lines().any(|l| l == want), "missing {want:?} in\n{out}");
    }
}

#[test]
fn grad_check_passes() {
    let o = ctxnmt(&["grad-check", "--seed", "2"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.contains("gated-aux: "));
    assert!(out.lines().any(|l| l.starts_with("max_rel_error: ")));
}

#[test]
fn gen_synth_follows_seed_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str, seed: &str| {
        let prefix = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_ctxnmt"))
            .args(["gen-synth", "--out", p(&prefix), "--docs", "5"])
            .env("CTXNMT_SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success());
        fs::read_to_string(prefix.with_extension("src")).unwrap()
    };
    let a = gen("a", "4");
    assert_eq!(a, gen("b", "4"));
    assert_ne!(a, gen("c", "5"));
    assert_eq!(a.split("\n\n").count(), 5);
}

#[test]
fn train_translate_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    for (name, docs, seed) in [("train", "30", "1"), ("dev", "4", "2")] {
        let o = ctxnmt(&["gen-synth", "--out", p(&d(name)), "--docs", docs, "--seed", seed, "--filler", "6"]);
        assert!(o.status.success());
    }
    let o = ctxnmt(&["build-vocab", "--input", p(&d("train.src")), "--cap", "100", "--out", p(&d("src.vocab"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("coverage: 1.0000"));

    let cfg = d("run.cfg");
    fs::write(&cfg, "profile = toy\nstrategy = gated-aux\nemb_dim = 8\nhidden = 8\nepochs = 2\nbatch_size = 16\n").unwrap();
    let o = ctxnmt(&[
        "train",
        "--config",
        p(&cfg),
        "--set",
        "seed=3",
        "--train-src",
        p(&d("train.src")),
        "--train-tgt",
        p(&d("train.tgt")),
        "--dev-src",
        p(&d("dev.src")),
        "--dev-tgt",
        p(&d("dev.tgt")),
        "--src-vocab",
        p(&d("src.vocab")),
        "--out",
        p(&d("model.bin")),
        "--log",
        p(&d("train.log")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(d("train.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("epoch 2 loss ")));
    assert!(log.contains("config seed = 3"));

    let o = ctxnmt(&["translate", "--model", p(&d("model.bin")), "--input", p(&d("dev.src")), "--out", p(&d("dev.hyp")), "--beam", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let shape = |s: &str| s.trim_end().split("\n\n").map(|doc| doc.lines().count()).collect::<Vec<_>>();
    let src = fs::read_to_string(d("dev.src")).unwrap();
    assert_eq!(shape(&fs::read_to_string(d("dev.hyp")).unwrap()), shape(&src));

    let o = ctxnmt(&["gate-stats", "--model", p(&d("model.bin")), "--src", p(&d("dev.src")), "--tgt", p(&d("dev.tgt")), "--key", p(&d("dev.key"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("keyed_mean: ") && out.contains("other_mean: "), "{out}");

    let mut bytes = fs::read(d("model.bin")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(d("bad.bin"), &bytes).unwrap();
    let o = ctxnmt(&["translate", "--model", p(&d("bad.bin")), "--input", p(&d("dev.src")), "--out", p(&d("x.hyp"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt model file"));
}

#[test]
fn unknown_strategy_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a");
    fs::write(&f, DOCS).unwrap();
    let o = ctxnmt(&[
        "train", "--set", "strategy=nope", "--train-src", p(&f), "--train-tgt", p(&f), "--dev-src", p(&f), "--dev-tgt",
        p(&f), "--out", p(&dir.path().join("m")),
    ]);
    assert!(!o.status.success());
}
