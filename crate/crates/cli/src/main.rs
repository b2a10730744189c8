use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ctxnmt::config::{Precision, RunConfig, SEED_ENV};
use ctxnmt::corpus::{format_documents, make_examples, parse_parallel, read_documents, Sentence, Vocabulary};
use ctxnmt::decode::DecodeOptions;
use ctxnmt::eval::{corpus_bleu, gate_stats, sentence_scores, sign_test};
use ctxnmt::gradcheck::{check_all, TOLERANCE};
use ctxnmt::model::io as model_io;
use ctxnmt::numerics::Real;
use ctxnmt::synthgen::{generate, AnswerKey, SynthSpec};
use ctxnmt::train::{train, translate_documents};

#[derive(Parser)]
#[command(name = "ctxnmt", version, about = "Document-context neural machine translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ambiguity corpus (<prefix>.src, .tgt, .key).
    GenSynth(GenSynth),
    /// Build a vocabulary file from one side of a corpus.
    BuildVocab(BuildVocab),
    /// Train a model with early stopping on dev BLEU.
    Train(Train),
    /// Translate source documents with a trained model.
    Translate(Translate),
    /// Corpus BLEU of hypotheses against references.
    Bleu(Bleu),
    /// Sign test between two systems on per-sentence smoothed BLEU.
    Signtest(Signtest),
    /// Context-gate activation statistics under teacher forcing.
    GateStats(GateStats),
    /// Finite-difference gradient check of every strategy.
    GradCheck(GradCheck),
}

fn default_seed() -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.parse().ok()).unwrap_or(1)
}

#[derive(Args)]
struct GenSynth {
    /// Output path prefix.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 4)]
    sentences: usize,
    #[arg(long, default_value_t = 2)]
    topics: usize,
    #[arg(long, default_value_t = 4)]
    ambiguous: usize,
    #[arg(long, default_value_t = 20)]
    filler: usize,
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    #[arg(long, default_value_t = 3)]
    min_words: usize,
    #[arg(long, default_value_t = 6)]
    max_words: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BuildVocab {
    /// Document-format text file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 35_000)]
    cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Run configuration file; omitted keys take the full profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_tgt: PathBuf,
    /// Prebuilt vocabularies; built from the training data when absent.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long)]
    tgt_vocab: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the training log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Translate {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Fixed output cap; defaults to twice the source length plus 10.
    #[arg(long)]
    max_out: Option<usize>,
}

#[derive(Args)]
struct Bleu {
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file; repeat for multiple references.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long)]
    case_sensitive: bool,
}

#[derive(Args)]
struct Signtest {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
}

#[derive(Args)]
struct GateStats {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    /// Answer key; keyed steps are summarized separately.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = 80)]
    max_len: usize,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long)]
    seed: Option<u64>,
}

fn sentences(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_documents(path)?.into_iter().flatten().collect())
}

fn gen_synth(a: GenSynth) -> Result<()> {
    let spec = SynthSpec {
        n_docs: a.docs,
        sentences_per_doc: a.sentences,
        n_topics: a.topics,
        n_ambiguous: a.ambiguous,
        n_filler: a.filler,
        ambiguity_rate: a.rate,
        seed: a.seed.unwrap_or_else(default_seed),
        min_words: a.min_words,
        max_words: a.max_words,
    };
    let g = generate(&spec)?;
    let p = |ext: &str| PathBuf::from(format!("{}.{ext}", a.out.display()));
    g.corpus.write(&p("src"), &p("tgt"))?;
    g.key.save(&p("key"))?;
    println!("documents: {}", spec.n_docs);
    println!("sentences: {}", g.corpus.num_sentences());
    println!("keyed_slots: {}", g.key.entries.len());
    Ok(())
}

fn build_vocab(a: BuildVocab) -> Result<()> {
    let sents = sentences(&a.input)?;
    let v = Vocabulary::build(sents.iter(), a.cap)?;
    v.save(&a.out)?;
    println!("size: {}", v.len());
    println!("coverage: {:.4}", v.coverage);
    Ok(())
}

fn run_training<T: Real>(a: &Train, cfg: &RunConfig) -> Result<()> {
    let tr = parse_parallel(&a.train_src, &a.train_tgt)?;
    let dev = parse_parallel(&a.dev_src, &a.dev_tgt)?;
    let sv = match &a.src_vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::build(tr.sources().iter().flatten(), cfg.src_vocab_cap)?,
    };
    let tv = match &a.tgt_vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::build(tr.targets().iter().flatten(), cfg.tgt_vocab_cap)?,
    };
    let mut log_file = match &a.log {
        Some(p) => Some(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => None,
    };
    let mut write_err = None;
    let mut sink = |line: &str| {
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                write_err.get_or_insert(e);
            }
        }
    };
    for line in cfg.to_text().lines() {
        sink(&format!("config {line}"));
    }
    let out = train::<T>(cfg, &tr, &dev, &sv, &tv, &mut sink)?;
    if let Some(e) = write_err {
        return Err(e).context("writing training log");
    }
    model_io::save(
        &a.out,
        &out.model,
        &sv,
        &tv,
        &[
            ("best_epoch", out.best_epoch.to_string()),
            ("dev_bleu", format!("{:.4}", 100.0 * out.best_bleu)),
            ("max_len", cfg.max_len.to_string()),
        ],
    )?;
    Ok(())
}

fn cmd_train(a: Train) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::full(),
    };
    for o in &a.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got {o:?}");
        };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_training::<f32>(&a, &cfg),
        Precision::F64 => run_training::<f64>(&a, &cfg),
    }
}

fn cmd_translate(a: Translate) -> Result<()> {
    let ck = model_io::load(&a.model)?;
    let docs = read_documents(&a.input)?;
    let max_len = ck
        .metadata
        .get("max_len")
        .and_then(|v| v.parse().ok())
        .unwrap_or(80);
    let opts = DecodeOptions {
        beam: a.beam,
        alpha: a.alpha,
        max_out: a.max_out,
        max_len,
    };
    let out = translate_documents(&ck.model, &docs, &ck.src_vocab, &ck.tgt_vocab, &opts)?;
    fs::write(&a.out, format_documents(&out)).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn references(paths: &[PathBuf], n: usize) -> Result<Vec<Vec<Sentence>>> {
    let mut refs: Vec<Vec<Sentence>> = vec![Vec::new(); n];
    for p in paths {
        let r = sentences(p)?;
        if r.len() != n {
            bail!("{} has {} sentences, hypotheses have {n}", p.display(), r.len());
        }
        for (set, s) in refs.iter_mut().zip(r) {
            set.push(s);
        }
    }
    Ok(refs)
}

fn cmd_bleu(a: Bleu) -> Result<()> {
    let hyps = sentences(&a.hyp)?;
    let refs = references(&a.refs, hyps.len())?;
    print!("{}", corpus_bleu(&hyps, &refs, !a.case_sensitive)?.report());
    Ok(())
}

fn cmd_signtest(a: Signtest) -> Result<()> {
    let sa = sentences(&a.a)?;
    let sb = sentences(&a.b)?;
    if sa.len() != sb.len() {
        bail!("systems have {} and {} sentences", sa.len(), sb.len());
    }
    let refs = references(&a.refs, sa.len())?;
    print!("{}", sign_test(&sentence_scores(&sa, &refs)?, &sentence_scores(&sb, &refs)?)?.report());
    Ok(())
}

fn cmd_gate_stats(a: GateStats) -> Result<()> {
    let ck = model_io::load(&a.model)?;
    let corpus = parse_parallel(&a.src, &a.tgt)?;
    let set = make_examples(&corpus, &ck.src_vocab, &ck.tgt_vocab, ck.model.config.window(), a.max_len);
    let keyed = match &a.key {
        Some(p) => {
            let key = AnswerKey::load(p)?;
            if key.n_docs != corpus.documents.len() {
                bail!("answer key covers {} documents, corpus has {}", key.n_docs, corpus.documents.len());
            }
            Some(
                set.examples
                    .iter()
                    .map(|e| {
                        key.entries
                            .iter()
                            .filter(|k| k.doc == e.doc && k.sentence == e.sentence)
                            .map(|k| k.position)
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let report = gate_stats(&ck.model, &set.examples, keyed.as_deref(), 64)?;
    print!("{}", report.report());
    Ok(())
}

fn cmd_grad_check(a: GradCheck) -> Result<bool> {
    let reports = check_all(a.seed.unwrap_or_else(default_seed))?;
    let mut worst = 0.0f64;
    for r in &reports {
        println!("{}: {:.3e}", r.strategy, r.max_rel_error());
        worst = worst.max(r.max_rel_error());
    }
    println!("max_rel_error: {worst:.3e}");
    println!("tolerance: {TOLERANCE:e}");
    Ok(reports.iter().all(|r| r.passed(TOLERANCE)))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenSynth(a) => gen_synth(a)?,
        Command::BuildVocab(a) => build_vocab(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Translate(a) => cmd_translate(a)?,
        Command::Bleu(a) => cmd_bleu(a)?,
        Command::Signtest(a) => cmd_signtest(a)?,
        Command::GateStats(a) => cmd_gate_stats(a)?,
        Command::GradCheck(a) => return cmd_grad_check(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
