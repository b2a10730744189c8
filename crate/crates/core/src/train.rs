//! Mini-batch training with greedy-BLEU early stopping.

use crate::config::RunConfig;
use crate::corpus::{frame_source, make_examples, Batcher, DocumentCorpus, PaddedBatch, Sentence, Vocabulary};
use crate::decode::{translate_corpus, DecodeOptions};
use crate::error::{contract, Result};
use crate::eval::corpus_bleu;
use crate::model::Model;
use crate::numerics::{Adam, Graph, Real};

/// Sentences decoded together during dev evaluation.
pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss.
    pub loss: f64,
    pub dev_bleu: f64,
}

pub struct TrainOutcome<T: Real> {
    /// Parameters from the best dev epoch.
    pub model: Model<T>,
    pub best_epoch: usize,
    pub best_bleu: f64,
    pub history: Vec<EpochRecord>,
    pub skipped: usize,
}

/// Framed source ids per document.
pub fn encode_sources(corpus: &DocumentCorpus, vocab: &Vocabulary) -> Vec<Vec<Vec<usize>>> {
    corpus
        .sources()
        .iter()
        .map(|doc| doc.iter().map(|s| frame_source(vocab, s)).collect())
        .collect()
}

pub fn decode_documents(docs: &[Vec<Vec<usize>>], vocab: &Vocabulary) -> Vec<Vec<Sentence>> {
    docs.iter()
        .map(|d| d.iter().map(|s| vocab.decode(s)).collect())
        .collect()
}

/// Document-aware translation of a whole corpus side.
pub fn translate_documents<T: Real>(
    model: &Model<T>,
    sources: &[Vec<Sentence>],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    opts: &DecodeOptions,
) -> Result<Vec<Vec<Sentence>>> {
    let ids: Vec<Vec<Vec<usize>>> = sources
        .iter()
        .map(|d| d.iter().map(|s| frame_source(src_vocab, s)).collect())
        .collect();
    let out = translate_corpus(model, &ids, opts, EVAL_BATCH)?;
    Ok(decode_documents(&out, tgt_vocab))
}

/// Case-insensitive corpus BLEU of greedy translations against the corpus
/// targets.
pub fn dev_bleu<T: Real>(
    model: &Model<T>,
    dev: &DocumentCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_len: usize,
) -> Result<f64> {
    let opts = DecodeOptions {
        max_len,
        ..DecodeOptions::default()
    };
    let hyps = translate_documents(model, &dev.sources(), src_vocab, tgt_vocab, &opts)?;
    let hyps: Vec<Sentence> = hyps.into_iter().flatten().collect();
    let refs: Vec<Vec<Sentence>> = dev.targets().into_iter().flatten().map(|r| vec![r]).collect();
    Ok(corpus_bleu(&hyps, &refs, true)?.bleu)
}

/// Trains `cfg.strategy`, evaluating dev BLEU after every epoch and stopping
/// once `patience` epochs pass without improvement. Log lines carry no
/// timing, so equal inputs give equal logs.
pub fn train<T: Real>(
    cfg: &RunConfig,
    train: &DocumentCorpus,
    dev: &DocumentCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    log: &mut dyn FnMut(&str),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dev.documents.is_empty() {
        return contract("early stopping needs a non-empty dev corpus");
    }
    let sc = cfg.strategy_config(src_vocab.len(), tgt_vocab.len());
    let mut model: Model<T> = Model::new(sc, cfg.seed, cfg.init_scale)?;
    let set = make_examples(train, src_vocab, tgt_vocab, sc.window(), cfg.max_len);
    let examples = set.examples;
    let batcher = Batcher::new(examples.len(), cfg.batch_size, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr, cfg.clip_norm)?;

    log(&format!(
        "strategy {} k {} params {} examples {} skipped {}",
        cfg.strategy,
        sc.window(),
        model.store.num_scalars(),
        examples.len(),
        set.skipped
    ));
    let mut best: Option<(usize, f64, Model<T>)> = None;
    let mut stale = 0usize;
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut tokens) = (0.0f64, 0usize);
        for idx in batcher.epoch(epoch as u64) {
            let refs: Vec<_> = idx.iter().map(|&i| &examples[i]).collect();
            let batch = PaddedBatch::new(&refs)?;
            let mut g = Graph::new();
            let (loss, n) = model.batch_loss(&mut g, &batch)?;
            loss_sum += g.value(loss).data()[0].f64() * n as f64;
            tokens += n;
            g.backward(loss, &mut model.store)?;
            adam.step(&mut model.store);
        }
        let loss = loss_sum / tokens.max(1) as f64;
        let bleu = dev_bleu(&model, dev, src_vocab, tgt_vocab, cfg.max_len)?;
        let improved = best.as_ref().map_or(true, |b| bleu > b.1);
        if improved {
            best = Some((epoch, bleu, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        log(&format!(
            "epoch {epoch} loss {loss:.6} dev_bleu {:.2}{}",
            100.0 * bleu,
            if improved { " *" } else { "" }
        ));
        history.push(EpochRecord {
            epoch,
            loss,
            dev_bleu: bleu,
        });
        if stale >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_bleu, best_model) = best.expect("at least one epoch");
    log(&format!(
        "stop after epoch {} best epoch {best_epoch} dev_bleu {:.2}",
        history.len(),
        100.0 * best_bleu
    ));
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_bleu,
        history,
        skipped: set.skipped,
    })
}
