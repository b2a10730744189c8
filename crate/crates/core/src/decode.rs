//! Greedy and beam search, and document-aware translation.
//!
//! Sentence `m` of a document is translated with the window of its (up to)
//! `k` preceding source sentences, so translation never depends on earlier
//! outputs and sentences may be decoded in any order.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{window_slots, ContextWindow, PaddedSeq, BOS, EOS, PAD};
use crate::error::{contract, Result};
use crate::model::{Encoded, Model};
use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Length-normalization exponent.
    pub alpha: f64,
    /// Output cap including EOS; `None` means `2 * source tokens + 10`.
    pub max_out: Option<usize>,
    /// Window sentences are cut to this many tokens.
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 1,
            alpha: 1.0,
            max_out: None,
            max_len: 80,
        }
    }
}

impl DecodeOptions {
    /// `source` is framed with a closing EOS.
    pub fn max_out_for(&self, source: &[usize]) -> usize {
        self.max_out
            .unwrap_or(2 * source.len().saturating_sub(1) + 10)
            .max(1)
    }
}

/// Source of per-step log-probabilities for search.
pub trait StepScorer {
    type State: Clone;

    fn vocab(&self) -> usize;

    fn initial(&mut self) -> Result<Self::State>;

    /// Advances every `(state, previous token)` pair by one step and returns
    /// the new states with one log-probability row each.
    fn advance(&mut self, states: &[Self::State], y_prev: &[usize]) -> Result<(Vec<Self::State>, Vec<Vec<f64>>)>;
}

/// A finished hypothesis. `tokens` excludes the closing EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// `log_prob / len^alpha`, where the length counts the EOS.
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / ((self.tokens.len() + 1) as f64).powf(alpha)
    }
}

fn eligible(tok: usize, forced_stop: bool) -> bool {
    if forced_stop {
        tok == EOS
    } else {
        tok != PAD && tok != BOS
    }
}

/// Beam search. `beam = 1` is greedy argmax; ties go to the lower token id.
pub fn beam_search<S: StepScorer>(scorer: &mut S, beam: usize, alpha: f64, max_out: usize) -> Result<Hypothesis> {
    if beam == 0 || max_out == 0 {
        return contract("beam width and max_out must be at least 1");
    }
    if scorer.vocab() <= EOS {
        return contract("vocabulary lacks the reserved tokens");
    }
    struct Live<St> {
        tokens: Vec<usize>,
        log_prob: f64,
        state: St,
    }
    let mut live = vec![Live {
        tokens: vec![],
        log_prob: 0.0,
        state: scorer.initial()?,
    }];
    let mut completed: Vec<Hypothesis> = Vec::new();
    for t in 0..max_out {
        if live.is_empty() || completed.len() >= beam {
            break;
        }
        let states: Vec<S::State> = live.iter().map(|h| h.state.clone()).collect();
        let prev: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
        let (next, rows) = scorer.advance(&states, &prev)?;
        let forced = t + 1 == max_out;
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, row) in rows.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                if eligible(tok, forced) {
                    cands.push((live[h].log_prob + lp, h, tok));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(beam - completed.len());
        let mut survivors = Vec::with_capacity(cands.len());
        for (lp, h, tok) in cands {
            if tok == EOS {
                completed.push(Hypothesis {
                    tokens: live[h].tokens.clone(),
                    log_prob: lp,
                });
            } else {
                let mut tokens = live[h].tokens.clone();
                tokens.push(tok);
                survivors.push(Live {
                    tokens,
                    log_prob: lp,
                    state: next[h].clone(),
                });
            }
        }
        live = survivors;
    }
    let mut best: Option<Hypothesis> = None;
    for h in completed {
        if best.as_ref().map_or(true, |b| h.score(alpha) > b.score(alpha)) {
            best = Some(h);
        }
    }
    best.ok_or_else(|| crate::Error::Contract("search ended without a finished hypothesis".into()))
}

/// Scores one source sentence with a model; hypotheses are decoded as rows.
pub struct ModelScorer<'m, T: Real> {
    model: &'m Model<T>,
    g: Graph<T>,
    encoded: Encoded,
    /// Encoder results replicated to `n` rows, keyed by `n`.
    replicated: HashMap<usize, Encoded>,
    s0: Vec<T>,
}

impl<'m, T: Real> ModelScorer<'m, T> {
    pub fn new(model: &'m Model<T>, source: &[usize], window: &ContextWindow) -> Result<Self> {
        let mut g = Graph::new();
        let (encoded, s0) = model.prepare(&mut g, source, window)?;
        let s0 = g.value(s0).data().to_vec();
        Ok(Self {
            model,
            g,
            encoded,
            replicated: HashMap::new(),
            s0,
        })
    }
}

impl<T: Real> StepScorer for ModelScorer<'_, T> {
    type State = Vec<T>;

    fn vocab(&self) -> usize {
        self.model.dims().tgt_vocab
    }

    fn initial(&mut self) -> Result<Vec<T>> {
        Ok(self.s0.clone())
    }

    fn advance(&mut self, states: &[Vec<T>], y_prev: &[usize]) -> Result<(Vec<Vec<T>>, Vec<Vec<f64>>)> {
        let n = states.len();
        if n > 1 && !self.replicated.contains_key(&n) {
            let rep = self.model.gather_encoded(&mut self.g, &self.encoded, &vec![0; n])?;
            self.replicated.insert(n, rep);
        }
        let enc = if n == 1 { &self.encoded } else { &self.replicated[&n] };
        let dh = self.s0.len();
        let data: Vec<T> = states.iter().flatten().copied().collect();
        let s = self.g.constant(Tensor::new(&[n, dh], data)?)?;
        let out = self.model.step(&mut self.g, enc, s, y_prev)?;
        let sv = self.g.value(out.state);
        let lp = self.g.value(out.log_probs);
        Ok((
            (0..n).map(|r| sv.row_slice(r).to_vec()).collect(),
            (0..n).map(|r| lp.row_slice(r).iter().map(|x| x.f64()).collect()).collect(),
        ))
    }
}

/// Translates one framed source sentence; the result excludes EOS.
pub fn translate_sentence<T: Real>(
    model: &Model<T>,
    source: &[usize],
    window: &ContextWindow,
    beam: usize,
    max_out: usize,
) -> Result<Vec<usize>> {
    translate_scored(model, source, window, beam, 1.0, max_out).map(|h| h.tokens)
}

pub fn translate_scored<T: Real>(
    model: &Model<T>,
    source: &[usize],
    window: &ContextWindow,
    beam: usize,
    alpha: f64,
    max_out: usize,
) -> Result<Hypothesis> {
    let mut scorer = ModelScorer::new(model, source, window)?;
    beam_search(&mut scorer, beam, alpha, max_out)
}

/// Greedy decoding of many sentences at once. Row results equal
/// single-sentence greedy search exactly.
pub fn greedy_batch<T: Real>(
    model: &Model<T>,
    sources: &[&[usize]],
    windows: &[&ContextWindow],
    max_out: &[usize],
) -> Result<Vec<Hypothesis>> {
    let rows = sources.len();
    if rows == 0 {
        return Ok(vec![]);
    }
    if windows.len() != rows || max_out.len() != rows {
        return contract("sources, windows and caps differ in length");
    }
    if max_out.iter().any(|&m| m == 0) {
        return contract("max_out must be at least 1");
    }
    let mut g = Graph::new();
    let enc = model.encode_batch(&mut g, &PaddedSeq::new(sources), &window_slots(windows))?;
    let mut s: Var = model.init_state(&mut g, enc.h_last, enc.d())?;
    let mut out: Vec<Hypothesis> = vec![
        Hypothesis {
            tokens: vec![],
            log_prob: 0.0
        };
        rows
    ];
    let mut done = vec![false; rows];
    let mut prev = vec![BOS; rows];
    let longest = *max_out.iter().max().expect("non-empty");
    for t in 0..longest {
        if done.iter().all(|&d| d) {
            break;
        }
        let step = model.step(&mut g, &enc, s, &prev)?;
        let lp = g.value(step.log_probs);
        for r in 0..rows {
            if done[r] {
                continue;
            }
            let forced = t + 1 == max_out[r];
            let row = lp.row_slice(r);
            let mut best: Option<(f64, usize)> = None;
            for (tok, &v) in row.iter().enumerate() {
                if eligible(tok, forced) && best.map_or(true, |(b, _)| v.f64() > b) {
                    best = Some((v.f64(), tok));
                }
            }
            let (v, tok) = best.expect("EOS is always eligible");
            out[r].log_prob += v;
            if tok == EOS {
                done[r] = true;
            } else {
                out[r].tokens.push(tok);
            }
            prev[r] = tok;
        }
        s = step.state;
    }
    Ok(out)
}

/// Windows for every sentence of a framed source document.
pub fn document_windows(doc: &[Vec<usize>], k: usize, max_len: usize) -> Vec<ContextWindow> {
    (0..doc.len())
        .map(|m| ContextWindow::for_position(doc, m, k, max_len))
        .collect()
}

/// Translates a document sentence by sentence. `observe(m, window)` is called
/// before sentence `m` is decoded.
pub fn translate_document_with<T: Real>(
    model: &Model<T>,
    doc: &[Vec<usize>],
    opts: &DecodeOptions,
    mut observe: impl FnMut(usize, &ContextWindow),
) -> Result<Vec<Vec<usize>>> {
    if doc.is_empty() {
        return contract("cannot translate an empty document");
    }
    let windows = document_windows(doc, model.config.window(), opts.max_len);
    doc.iter()
        .zip(&windows)
        .enumerate()
        .map(|(m, (src, w))| {
            observe(m, w);
            translate_sentence(model, src, w, opts.beam, opts.max_out_for(src))
        })
        .collect()
}

pub fn translate_document<T: Real>(model: &Model<T>, doc: &[Vec<usize>], opts: &DecodeOptions) -> Result<Vec<Vec<usize>>> {
    translate_document_with(model, doc, opts, |_, _| {})
}

/// Translates documents in parallel, preserving order. Greedy requests are
/// batched `batch` sentences at a time.
pub fn translate_corpus<T: Real>(
    model: &Model<T>,
    docs: &[Vec<Vec<usize>>],
    opts: &DecodeOptions,
    batch: usize,
) -> Result<Vec<Vec<Vec<usize>>>> {
    if docs.iter().any(|d| d.is_empty()) {
        return contract("cannot translate an empty document");
    }
    if opts.beam > 1 {
        return docs.par_iter().map(|d| translate_document(model, d, opts)).collect();
    }
    let windows: Vec<Vec<ContextWindow>> = docs
        .iter()
        .map(|d| document_windows(d, model.config.window(), opts.max_len))
        .collect();
    let flat: Vec<(&[usize], &ContextWindow)> = docs
        .iter()
        .zip(&windows)
        .flat_map(|(d, w)| d.iter().map(|s| s.as_slice()).zip(w))
        .collect();
    let chunks: Vec<Vec<Hypothesis>> = flat
        .par_chunks(batch.max(1))
        .map(|c| {
            let srcs: Vec<&[usize]> = c.iter().map(|(s, _)| *s).collect();
            let ws: Vec<&ContextWindow> = c.iter().map(|(_, w)| *w).collect();
            let caps: Vec<usize> = srcs.iter().map(|s| opts.max_out_for(s)).collect();
            greedy_batch(model, &srcs, &ws, &caps)
        })
        .collect::<Result<_>>()?;
    let mut flat_out = chunks.into_iter().flatten().map(|h| h.tokens);
    Ok(docs
        .iter()
        .map(|d| (0..d.len()).map(|_| flat_out.next().expect("one output per sentence")).collect())
        .collect())
}
