//! Document-aware parallel corpora.
//!
//! Text format: one whitespace-tokenized sentence per line, a single blank
//! line ends a document. Source and target files must put their blank lines
//! on the same line numbers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub type Sentence = Vec<String>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub pairs: Vec<SentencePair>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocumentCorpus {
    pub documents: Vec<Document>,
}

impl DocumentCorpus {
    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(|d| d.pairs.len()).sum()
    }

    pub fn doc_sizes(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.pairs.len()).collect()
    }

    pub fn sources(&self) -> Vec<Vec<Sentence>> {
        self.documents
            .iter()
            .map(|d| d.pairs.iter().map(|p| p.source.clone()).collect())
            .collect()
    }

    pub fn targets(&self) -> Vec<Vec<Sentence>> {
        self.documents
            .iter()
            .map(|d| d.pairs.iter().map(|p| p.target.clone()).collect())
            .collect()
    }

    pub fn to_text(&self) -> (String, String) {
        (format_documents(&self.sources()), format_documents(&self.targets()))
    }

    pub fn write(&self, src: &Path, tgt: &Path) -> Result<()> {
        let (s, t) = self.to_text();
        fs::write(src, s)?;
        fs::write(tgt, t)?;
        Ok(())
    }
}

/// Writes documents in the blank-line-delimited format.
pub fn format_documents(docs: &[Vec<Sentence>]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for s in doc {
            out.push_str(&s.join(" "));
            out.push('\n');
        }
    }
    out
}

struct Line<'a> {
    number: usize,
    tokens: Option<Vec<&'a str>>,
}

fn lines(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            let toks: Vec<&str> = l.split_whitespace().collect();
            Line {
                number: i + 1,
                tokens: (!toks.is_empty()).then_some(toks),
            }
        })
        .collect()
}

/// Parses one side into documents of sentences.
pub fn parse_documents(text: &str, path: &Path) -> Result<Vec<Vec<Sentence>>> {
    let mut docs = Vec::new();
    let mut cur: Vec<Sentence> = Vec::new();
    for line in lines(text) {
        match line.tokens {
            Some(t) => cur.push(t.into_iter().map(String::from).collect()),
            None => {
                if cur.is_empty() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line.number,
                        msg: format!("empty document {} (repeated blank line)", docs.len()),
                    });
                }
                docs.push(std::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        docs.push(cur);
    }
    Ok(docs)
}

pub fn read_documents(path: &Path) -> Result<Vec<Vec<Sentence>>> {
    let text = fs::read_to_string(path)?;
    parse_documents(&text, path)
}

pub fn parse_parallel_text(src: &str, tgt: &str, src_path: &Path, tgt_path: &Path) -> Result<DocumentCorpus> {
    let (sl, tl) = (lines(src), lines(tgt));
    let mut corpus = DocumentCorpus::default();
    let mut doc = Document::default();
    let mut doc_start = 1;
    let err = |line: usize, msg: String| Error::Parse {
        path: src_path.to_path_buf(),
        line,
        msg,
    };
    for (s, t) in sl.iter().zip(&tl) {
        match (&s.tokens, &t.tokens) {
            (Some(a), Some(b)) => doc.pairs.push(SentencePair {
                source: a.iter().map(|x| x.to_string()).collect(),
                target: b.iter().map(|x| x.to_string()).collect(),
            }),
            (None, None) => {
                if doc.pairs.is_empty() {
                    return Err(err(s.number, format!("empty document {}", corpus.documents.len())));
                }
                corpus.documents.push(std::mem::take(&mut doc));
                doc_start = s.number + 1;
            }
            (None, Some(_)) => {
                return Err(err(
                    s.number,
                    format!(
                        "document {} misaligned: blank line in source but not in {} (document starts at line {doc_start})",
                        corpus.documents.len(),
                        tgt_path.display()
                    ),
                ))
            }
            (Some(_), None) => {
                return Err(err(
                    s.number,
                    format!(
                        "document {} misaligned: blank line in {} but not in source (document starts at line {doc_start})",
                        corpus.documents.len(),
                        tgt_path.display()
                    ),
                ))
            }
        }
    }
    if sl.len() != tl.len() {
        let (longer, n) = if sl.len() > tl.len() { ("source", tl.len()) } else { ("target", sl.len()) };
        let rest = if sl.len() > tl.len() { &sl[n..] } else { &tl[n..] };
        if rest.iter().any(|l| l.tokens.is_some()) {
            return Err(err(
                n + 1,
                format!(
                    "document {}: sentence counts differ, {longer} continues past line {n} (document starts at line {doc_start})",
                    corpus.documents.len()
                ),
            ));
        }
    }
    if !doc.pairs.is_empty() {
        corpus.documents.push(doc);
    }
    Ok(corpus)
}

pub fn parse_parallel(src_path: &Path, tgt_path: &Path) -> Result<DocumentCorpus> {
    let src = fs::read_to_string(src_path)?;
    let tgt = fs::read_to_string(tgt_path)?;
    parse_parallel_text(&src, &tgt, src_path, tgt_path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Fraction of running tokens in the building corpus covered by the vocabulary.
    pub coverage: f64,
}

impl Vocabulary {
    /// Reserved entries plus the `cap - 4` most frequent tokens, ties broken
    /// lexicographically.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>, cap: usize) -> Result<Self> {
        if cap < 5 {
            return Err(Error::Config(format!("vocabulary cap must be at least 5, got {cap}")));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total = 0usize;
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
                total += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap - RESERVED.len());
        let kept: usize = ranked.iter().map(|(_, c)| c).sum();
        let mut v = Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()));
        v.coverage = if total == 0 { 1.0 } else { kept as f64 / total as f64 };
        Ok(v)
    }

    fn from_tokens(tokens: impl Iterator<Item = String>) -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(tokens).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            coverage: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Sentence {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One token per line; the reserved entries occupy lines 1-4, so a
    /// token's id is its zero-based line number.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, r) in RESERVED.iter().enumerate() {
            if lines.get(i) != Some(r) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected reserved token {r}"),
                });
            }
        }
        let mut seen = HashMap::new();
        for (i, l) in lines.iter().enumerate().skip(RESERVED.len()) {
            if l.is_empty() || l.split_whitespace().count() != 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "vocabulary lines hold exactly one token".into(),
                });
            }
            if seen.insert(*l, i).is_some() || RESERVED.contains(l) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("duplicate token {l:?}"),
                });
            }
        }
        Ok(Self::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Up to `k` source sentences preceding the current one, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextWindow {
    pub sentences: Vec<Vec<usize>>,
}

impl ContextWindow {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Window for sentence `m` of a document given its encoded source
    /// sentences (each already framed with EOS).
    pub fn for_position(doc: &[Vec<usize>], m: usize, k: usize, max_len: usize) -> Self {
        let start = m.saturating_sub(k);
        Self {
            sentences: doc[start..m].iter().map(|s| truncate_framed(s, max_len)).collect(),
        }
    }
}

/// Keeps at most `max_len` tokens followed by the closing EOS.
fn truncate_framed(s: &[usize], max_len: usize) -> Vec<usize> {
    if s.len() <= max_len + 1 {
        s.to_vec()
    } else {
        let mut v = s[..max_len].to_vec();
        v.push(EOS);
        v
    }
}

/// Source ids followed by EOS.
pub fn frame_source(vocab: &Vocabulary, sentence: &[String]) -> Vec<usize> {
    let mut ids = vocab.encode(sentence);
    ids.push(EOS);
    ids
}

/// BOS, target ids, EOS.
pub fn frame_target(vocab: &Vocabulary, sentence: &[String]) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sentence.len() + 2);
    ids.push(BOS);
    ids.extend(vocab.encode(sentence));
    ids.push(EOS);
    ids
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub doc: usize,
    pub sentence: usize,
    /// Source ids with a closing EOS.
    pub source: Vec<usize>,
    /// Target ids framed as BOS ... EOS.
    pub target: Vec<usize>,
    pub window: ContextWindow,
    /// Sentence indices (within `doc`) that make up `window`.
    pub window_sentences: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    /// Pairs dropped for exceeding `max_len`.
    pub skipped: usize,
}

/// One example per sentence pair within `max_len`. Over-length pairs are
/// dropped but stay available as context for later sentences.
pub fn make_examples(
    corpus: &DocumentCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    k: usize,
    max_len: usize,
) -> ExampleSet {
    let mut out = ExampleSet::default();
    for (d, doc) in corpus.documents.iter().enumerate() {
        let sources: Vec<Vec<usize>> = doc.pairs.iter().map(|p| frame_source(src_vocab, &p.source)).collect();
        for (m, pair) in doc.pairs.iter().enumerate() {
            if pair.source.len() > max_len || pair.target.len() > max_len {
                out.skipped += 1;
                continue;
            }
            out.examples.push(TrainingExample {
                doc: d,
                sentence: m,
                source: sources[m].clone(),
                target: frame_target(tgt_vocab, &pair.target),
                window: ContextWindow::for_position(&sources, m, k, max_len),
                window_sentences: (m.saturating_sub(k)..m).collect(),
            });
        }
    }
    out
}

/// Position-major padded token matrix: `ids[t][row]`, `mask[t][row]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PaddedSeq {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl PaddedSeq {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = vec![vec![PAD; seqs.len()]; max];
        let mut mask = vec![vec![false; seqs.len()]; max];
        for (r, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                ids[t][r] = id;
                mask[t][r] = true;
            }
        }
        Self {
            ids,
            mask,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.ids.len()
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }
}

/// Context slot `k` across a batch: the `k`-th oldest window sentence of each
/// row, or nothing for rows whose window is shorter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSlot {
    pub tokens: PaddedSeq,
    pub present: Vec<bool>,
}

/// Lays windows out slot by slot: slot `k` holds each row's `k`-th oldest
/// sentence, absent for rows with shorter windows.
pub fn window_slots(windows: &[&ContextWindow]) -> Vec<WindowSlot> {
    let slots = windows.iter().map(|w| w.len()).max().unwrap_or(0);
    let empty: &[usize] = &[];
    (0..slots)
        .map(|k| {
            let seqs: Vec<&[usize]> = windows
                .iter()
                .map(|w| w.sentences.get(k).map(|s| s.as_slice()).unwrap_or(empty))
                .collect();
            WindowSlot {
                present: seqs.iter().map(|s| !s.is_empty()).collect(),
                tokens: PaddedSeq::new(&seqs),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub source: PaddedSeq,
    /// Decoder inputs `y_{i-1}` (BOS first).
    pub target_in: Vec<Vec<usize>>,
    /// Prediction targets `y_i` (EOS last).
    pub target_out: Vec<Vec<usize>>,
    pub target_mask: Vec<Vec<bool>>,
    pub window: Vec<WindowSlot>,
}

impl PaddedBatch {
    pub fn new(examples: &[&TrainingExample]) -> Result<Self> {
        if examples.is_empty() {
            return contract("cannot batch zero examples");
        }
        if examples.iter().any(|e| e.source.is_empty() || e.target.len() < 2) {
            return contract("examples need a non-empty source and a framed target");
        }
        let rows = examples.len();
        let source = PaddedSeq::new(&examples.iter().map(|e| e.source.as_slice()).collect::<Vec<_>>());
        let tin: Vec<&[usize]> = examples.iter().map(|e| &e.target[..e.target.len() - 1]).collect();
        let tout: Vec<&[usize]> = examples.iter().map(|e| &e.target[1..]).collect();
        let tin = PaddedSeq::new(&tin);
        let tout = PaddedSeq::new(&tout);
        let windows: Vec<&ContextWindow> = examples.iter().map(|e| &e.window).collect();
        let window = window_slots(&windows);
        debug_assert_eq!(tin.rows(), rows);
        Ok(Self {
            source,
            target_in: tin.ids,
            target_mask: tout.mask,
            target_out: tout.ids,
            window,
        })
    }

    pub fn rows(&self) -> usize {
        self.source.rows()
    }

    pub fn target_tokens(&self) -> usize {
        self.target_mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// Seeded shuffled batches; each epoch reshuffles with a seed derived from
/// `(seed, epoch)`.
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(num_examples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if num_examples == 0 {
            return contract("cannot batch an empty example list");
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            len: num_examples,
            batch_size,
            seed,
        })
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Convenience wrapper: the padded batches of one epoch.
pub fn batch(examples: &[TrainingExample], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<PaddedBatch>> {
    let b = Batcher::new(examples.len(), batch_size, seed)?;
    b.epoch(epoch)
        .iter()
        .map(|idx| PaddedBatch::new(&idx.iter().map(|&i| &examples[i]).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    fn toks(s: &str) -> Sentence {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn one_document_two_lines() {
        let c = parse_parallel_text("a b\nc\n", "x\ny z\n", p(), p()).unwrap();
        assert_eq!(c.doc_sizes(), vec![2]);
        assert_eq!(c.documents[0].pairs[1].target, toks("y z"));
    }

    #[test]
    fn misaligned_blank_cites_line() {
        let err = parse_parallel_text("a\nb\n\nc\n", "a\nb\nc\nd\n", p(), p()).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("document 0"), "{msg}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn count_mismatch_at_end_is_reported() {
        let err = parse_parallel_text("a\nb\nc\n", "a\nb\n", p(), p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn document_sizes_preserved() {
        let src = "a\nb\n\nc\n\nd\ne\nf\ng";
        let c = parse_parallel_text(src, src, p(), p()).unwrap();
        assert_eq!(c.doc_sizes(), vec![2, 1, 4]);
    }

    #[test]
    fn vocab_small_corpus() {
        let s = [toks("a a b")];
        let v = Vocabulary::build(&s, 6).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "<s>", "</s>", "a", "b"]);
        assert_eq!(v.coverage, 1.0);
    }

    #[test]
    fn vocab_truncation_and_coverage() {
        let s = [toks("a a b c")];
        let v = Vocabulary::build(&s, 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.coverage, 0.5);
    }

    #[test]
    fn vocab_tie_break_is_lexicographic() {
        let s = [toks("c b")];
        let v = Vocabulary::build(&s, 5).unwrap();
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("c"), UNK);
        assert!(Vocabulary::build(&s, 4).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let s = [toks("x y y z")];
        let v = Vocabulary::build(&s, 10).unwrap();
        let back = Vocabulary::from_text(&v.to_text(), p()).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert!(Vocabulary::from_text("a\nb\n", p()).is_err());
    }

    fn doc_corpus(sizes: &[usize]) -> DocumentCorpus {
        DocumentCorpus {
            documents: sizes
                .iter()
                .enumerate()
                .map(|(d, &n)| Document {
                    pairs: (0..n)
                        .map(|i| SentencePair {
                            source: toks(&format!("d{d} s{i} w")),
                            target: toks(&format!("D{d} S{i}")),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn vocabs(c: &DocumentCorpus) -> (Vocabulary, Vocabulary) {
        let src: Vec<Sentence> = c.sources().concat();
        let tgt: Vec<Sentence> = c.targets().concat();
        (Vocabulary::build(&src, 100).unwrap(), Vocabulary::build(&tgt, 100).unwrap())
    }

    #[test]
    fn window_sizes_follow_k() {
        let c = doc_corpus(&[5]);
        let (sv, tv) = vocabs(&c);
        let ex = make_examples(&c, &sv, &tv, 3, 80).examples;
        assert_eq!(ex.iter().map(|e| e.window.len()).collect::<Vec<_>>(), [0, 1, 2, 3, 3]);
        assert_eq!(ex[4].window.sentences[0], frame_source(&sv, &c.documents[0].pairs[1].source));
        let ex0 = make_examples(&c, &sv, &tv, 0, 80).examples;
        assert!(ex0.iter().all(|e| e.window.is_empty()));
    }

    #[test]
    fn long_sentence_dropped_but_kept_as_history() {
        let mut c = doc_corpus(&[4]);
        c.documents[0].pairs[1].source = toks("very long source sentence here");
        let (sv, tv) = vocabs(&c);
        let set = make_examples(&c, &sv, &tv, 3, 3);
        assert_eq!(set.skipped, 1);
        assert_eq!(set.examples.iter().map(|e| e.sentence).collect::<Vec<_>>(), [0, 2, 3]);
        let third = &set.examples[1];
        assert_eq!(third.window_sentences, [0, 1]);
        // history sentences are cut to max_len plus EOS
        assert_eq!(third.window.sentences[1].len(), 4);
        assert_eq!(*third.window.sentences[1].last().unwrap(), EOS);
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let c = doc_corpus(&[5]);
        let (sv, tv) = vocabs(&c);
        let ex = make_examples(&c, &sv, &tv, 3, 80).examples;
        let b = batch(&ex, 2, 7, 0).unwrap();
        assert_eq!(b.iter().map(|x| x.rows()).collect::<Vec<_>>(), [2, 2, 1]);
        assert_eq!(b, batch(&ex, 2, 7, 0).unwrap());
        assert!(batch(&[], 2, 7, 0).is_err());
        assert!(batch(&ex, 0, 7, 0).is_err());
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let orders: Vec<Vec<Vec<usize>>> = (0..3).map(|s| Batcher::new(12, 4, s).unwrap().epoch(0)).collect();
        assert_ne!(orders[0], orders[1]);
        assert_ne!(orders[1], orders[2]);
        assert_ne!(orders[0], orders[2]);
    }

    #[test]
    fn padded_batch_masks() {
        let c = doc_corpus(&[3]);
        let (sv, tv) = vocabs(&c);
        let mut ex = make_examples(&c, &sv, &tv, 3, 80).examples;
        ex[0].source.insert(0, 9);
        let b = PaddedBatch::new(&ex.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(b.source.lengths, [5, 4, 4]);
        assert_eq!(b.source.mask[4], [true, false, false]);
        assert_eq!(b.window.len(), 2);
        assert_eq!(b.window[0].present, [false, true, true]);
        assert_eq!(b.window[1].present, [false, false, true]);
        assert_eq!(b.target_in[0], [BOS; 3]);
        assert_eq!(b.target_tokens(), 9);
    }

    fn sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec("[a-z]{1,3}", 1..5)
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(docs in prop::collection::vec(prop::collection::vec((sentence(), sentence()), 1..4), 1..4)) {
            let corpus = DocumentCorpus {
                documents: docs.into_iter().map(|d| Document {
                    pairs: d.into_iter().map(|(source, target)| SentencePair { source, target }).collect(),
                }).collect(),
            };
            let (s, t) = corpus.to_text();
            let back = parse_parallel_text(&s, &t, p(), p()).unwrap();
            prop_assert_eq!(back, corpus);
        }

        #[test]
        fn windows_precede_their_sentence(sizes in prop::collection::vec(1usize..7, 1..5), k in 0usize..4) {
            let c = doc_corpus(&sizes);
            let (sv, tv) = vocabs(&c);
            for e in make_examples(&c, &sv, &tv, k, 80).examples {
                prop_assert!(e.window.len() <= k);
                prop_assert!(e.window_sentences.iter().all(|&s| s < e.sentence));
                prop_assert_eq!(e.window_sentences.len(), e.window.len());
            }
        }
    }
}
