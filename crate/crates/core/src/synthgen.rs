//! Synthetic document corpora with context-dependent lexical ambiguity.
//!
//! Every document has one topic `t`. Its first sentence carries the marker
//! `topic_t` (translated `TOPIC_t`); later sentences are filler words copied
//! verbatim, except that with probability `p` one slot holds an ambiguous
//! word `amb_a` whose translation `SENSE_a_t` depends on the document topic.
//! Markers and ambiguous words never share a sentence, so the sense cannot be
//! recovered from the current sentence alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, DocumentCorpus, Sentence, SentencePair};
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub sentences_per_doc: usize,
    pub n_topics: usize,
    pub n_ambiguous: usize,
    pub n_filler: usize,
    pub ambiguity_rate: f64,
    pub seed: u64,
    /// Inclusive range of filler words per sentence (the marker or ambiguous
    /// word is extra).
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_docs: 100,
            sentences_per_doc: 4,
            n_topics: 2,
            n_ambiguous: 4,
            n_filler: 20,
            ambiguity_rate: 0.5,
            seed: 1,
            min_words: 3,
            max_words: 6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_topics < 2 {
            return bad("need at least 2 topics");
        }
        if self.n_ambiguous < 1 {
            return bad("need at least 1 ambiguous word");
        }
        if self.sentences_per_doc < 2 {
            return bad("documents need at least 2 sentences");
        }
        if self.n_filler < 1 {
            return bad("need at least 1 filler word");
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return bad("ambiguity rate must lie in [0, 1]");
        }
        if self.min_words < 1 || self.min_words > self.max_words {
            return bad("sentence length range must satisfy 1 <= min <= max");
        }
        if self.n_docs < 1 {
            return bad("need at least 1 document");
        }
        Ok(())
    }
}

pub fn topic_marker(t: usize) -> String {
    format!("topic_{t}")
}

pub fn topic_translation(t: usize) -> String {
    format!("TOPIC_{t}")
}

pub fn ambiguous_word(a: usize) -> String {
    format!("amb_{a}")
}

pub fn sense(a: usize, t: usize) -> String {
    format!("SENSE_{a}_{t}")
}

pub fn filler(i: usize) -> String {
    format!("w{i}")
}

/// One ambiguous slot: its location and the correct translation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyEntry {
    pub doc: usize,
    pub sentence: usize,
    pub position: usize,
    pub sense: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AnswerKey {
    pub n_docs: usize,
    pub entries: Vec<KeyEntry>,
}

impl AnswerKey {
    /// `# documents = N`, then one tab-separated
    /// `doc sentence position sense` record per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# documents = {}\n", self.n_docs);
        for e in &self.entries {
            writeln!(s, "{}\t{}\t{}\t{}", e.doc, e.sentence, e.position, e.sense).expect("string write");
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let n_docs = lines
            .next()
            .and_then(|l| l.strip_prefix("# documents = "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| err(1, "expected '# documents = N' header"))?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(i + 2, "expected a non-negative integer"));
            if f.len() != 4 || f[3].is_empty() {
                return Err(err(i + 2, "expected doc, sentence, position and sense separated by tabs"));
            }
            let e = KeyEntry {
                doc: num(f[0])?,
                sentence: num(f[1])?,
                position: num(f[2])?,
                sense: f[3].to_string(),
            };
            if e.doc >= n_docs {
                return Err(err(i + 2, "document index out of range"));
            }
            entries.push(e);
        }
        Ok(Self { n_docs, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }
}

pub struct SynthCorpus {
    pub corpus: DocumentCorpus,
    pub key: AnswerKey,
    /// Topic drawn for each document.
    pub topics: Vec<usize>,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut documents = Vec::with_capacity(spec.n_docs);
    let mut topics = Vec::with_capacity(spec.n_docs);
    let mut entries = Vec::new();
    for d in 0..spec.n_docs {
        let t = rng.gen_range(0..spec.n_topics);
        topics.push(t);
        let mut pairs = Vec::with_capacity(spec.sentences_per_doc);
        for m in 0..spec.sentences_per_doc {
            let len = rng.gen_range(spec.min_words..=spec.max_words);
            let mut src: Sentence = (0..len).map(|_| filler(rng.gen_range(0..spec.n_filler))).collect();
            let mut tgt = src.clone();
            if m == 0 {
                let pos = rng.gen_range(0..=len);
                src.insert(pos, topic_marker(t));
                tgt.insert(pos, topic_translation(t));
            } else if rng.gen_bool(spec.ambiguity_rate) {
                let pos = rng.gen_range(0..len);
                let a = rng.gen_range(0..spec.n_ambiguous);
                src[pos] = ambiguous_word(a);
                tgt[pos] = sense(a, t);
                entries.push(KeyEntry {
                    doc: d,
                    sentence: m,
                    position: pos,
                    sense: sense(a, t),
                });
            }
            pairs.push(SentencePair { source: src, target: tgt });
        }
        documents.push(Document { pairs });
    }
    Ok(SynthCorpus {
        corpus: DocumentCorpus { documents },
        key: AnswerKey {
            n_docs: spec.n_docs,
            entries,
        },
        topics,
    })
}

/// Fraction of keyed slots whose hypothesis sentence contains the correct
/// sense token anywhere. A key without slots scores 1.0.
pub fn score_senses(hypotheses: &[Vec<Sentence>], key: &AnswerKey) -> Result<f64> {
    if hypotheses.len() != key.n_docs {
        return contract(format!(
            "answer key covers {} documents, hypotheses have {}",
            key.n_docs,
            hypotheses.len()
        ));
    }
    if key.entries.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for e in &key.entries {
        let Some(sent) = hypotheses[e.doc].get(e.sentence) else {
            return contract(format!("document {} has no sentence {}", e.doc, e.sentence));
        };
        if sent.iter().any(|w| *w == e.sense) {
            correct += 1;
        }
    }
    Ok(correct as f64 / key.entries.len() as f64)
}
