//! BLEU, per-sentence smoothed BLEU, the sign test and gate statistics.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{PaddedBatch, Sentence, TrainingExample};
use crate::error::{contract, Result};
use crate::model::Model;
use crate::numerics::{Graph, Real};

pub const MAX_ORDER: usize = 4;

/// Pseudo-count used for the unigram precision of a sentence with no
/// matching unigrams in [`sentence_bleu_smoothed`].
pub const UNIGRAM_FLOOR: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct BleuResult {
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuResult {
    /// `key: value` lines; BLEU and precisions are scaled by 100.
    pub fn report(&self) -> String {
        let mut s = format!("bleu: {:.2}\n", 100.0 * self.bleu);
        for (n, p) in self.precisions.iter().enumerate() {
            writeln!(s, "p{}: {:.2}", n + 1, 100.0 * p).expect("string write");
        }
        writeln!(s, "bp: {:.4}", self.brevity_penalty).expect("string write");
        writeln!(s, "hyp_len: {}", self.hyp_len).expect("string write");
        writeln!(s, "ref_len: {}", self.ref_len).expect("string write");
        s
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

struct Stats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

/// Closest reference length; ties go to the shorter reference.
fn closest_ref_len(hyp_len: usize, refs: &[Sentence]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .expect("non-empty reference set")
}

fn sentence_stats(hyp: &[String], refs: &[Sentence]) -> Stats {
    let mut st = Stats {
        matches: [0; MAX_ORDER],
        totals: [0; MAX_ORDER],
        hyp_len: hyp.len(),
        ref_len: closest_ref_len(hyp.len(), refs),
    };
    for n in 1..=MAX_ORDER {
        let h = ngrams(hyp, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngrams(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        st.matches[n - 1] = h.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    st
}

fn lower(s: &[String]) -> Sentence {
    s.iter().map(|w| w.to_lowercase()).collect()
}

fn brevity(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Corpus BLEU with clipped counts, closest-length brevity penalty, N = 4 and
/// uniform weights. Zero if any order has no match.
pub fn corpus_bleu(hyps: &[Sentence], refs: &[Vec<Sentence>], lowercase: bool) -> Result<BleuResult> {
    if hyps.len() != refs.len() {
        return contract(format!("{} hypotheses but {} reference sets", hyps.len(), refs.len()));
    }
    if refs.iter().any(|r| r.is_empty()) {
        return contract("every hypothesis needs at least one reference");
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, rs) in hyps.iter().zip(refs) {
        let st = if lowercase {
            let rs: Vec<Sentence> = rs.iter().map(|r| lower(r)).collect();
            sentence_stats(&lower(h), &rs)
        } else {
            sentence_stats(h, rs)
        };
        for n in 0..MAX_ORDER {
            matches[n] += st.matches[n];
            totals[n] += st.totals[n];
        }
        hyp_len += st.hyp_len;
        ref_len += st.ref_len;
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let bp = brevity(hyp_len, ref_len);
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64).exp()
    };
    Ok(BleuResult {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        hyp_len,
        ref_len,
    })
}

/// Sentence BLEU for paired comparisons: orders n >= 2 use
/// `(matches + 1) / (total + 1)`; the unigram precision is unsmoothed unless
/// no unigram matches, in which case it is `UNIGRAM_FLOOR / total`. Case is
/// folded.
pub fn sentence_bleu_smoothed(hyp: &[String], refs: &[Sentence]) -> Result<f64> {
    if hyp.is_empty() {
        return contract("sentence BLEU of an empty hypothesis");
    }
    if refs.is_empty() {
        return contract("sentence BLEU needs a reference");
    }
    let refs: Vec<Sentence> = refs.iter().map(|r| lower(r)).collect();
    let st = sentence_stats(&lower(hyp), &refs);
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if n == 0 {
            if st.matches[0] == 0 {
                UNIGRAM_FLOOR / st.totals[0] as f64
            } else {
                st.matches[0] as f64 / st.totals[0] as f64
            }
        } else {
            (st.matches[n] + 1) as f64 / (st.totals[n] + 1) as f64
        };
        log_sum += p.ln();
    }
    Ok(brevity(st.hyp_len, st.ref_len) * (log_sum / MAX_ORDER as f64).exp())
}

/// Smoothed sentence BLEU per hypothesis; an empty output scores 0.
pub fn sentence_scores(hyps: &[Sentence], refs: &[Vec<Sentence>]) -> Result<Vec<f64>> {
    if hyps.len() != refs.len() {
        return contract(format!("{} hypotheses but {} reference sets", hyps.len(), refs.len()));
    }
    hyps.iter()
        .zip(refs)
        .map(|(h, r)| if h.is_empty() { Ok(0.0) } else { sentence_bleu_smoothed(h, r) })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

impl SignTest {
    /// Number of informative (non-tied) comparisons.
    pub fn n(&self) -> usize {
        self.wins + self.losses
    }

    pub fn report(&self) -> String {
        format!(
            "wins: {}\nlosses: {}\nties: {}\nn: {}\np_value: {:?}\n",
            self.wins,
            self.losses,
            self.ties,
            self.n(),
            self.p_value
        )
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
fn upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if n <= 52 {
        // Exact: the integer numerator stays below 2^53.
        let mut c: u64 = 1;
        let mut sum: u64 = 0;
        for i in 0..=n {
            if i >= k {
                sum += c;
            }
            if i < n {
                c = c * (n - i) as u64 / (i + 1) as u64;
            }
        }
        return sum as f64 / 2f64.powi(n as i32);
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(n - k + 1);
    for i in 0..=n {
        if i >= k {
            terms.push(ln_c + ln_half_n);
        }
        if i < n {
            ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max.exp() * terms.iter().map(|t| (t - max).exp()).sum::<f64>()
}

/// Exact two-sided sign test over paired scores; ties are dropped. All ties
/// give `p = 1`.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() || a.is_empty() {
        return contract("sign test needs two equal-length, non-empty score lists");
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        (2.0 * upper_tail(n, wins.max(losses))).min(1.0)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepGate {
    /// Number of gate components aggregated at this step.
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateReport {
    pub steps: Vec<StepGate>,
    /// Components per tenth of [0, 1]; 1.0 falls in the last bin.
    pub histogram: [usize; 10],
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Mean activation on keyed steps and on all other steps.
    pub keyed_mean: Option<f64>,
    pub other_mean: Option<f64>,
}

impl GateReport {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}: {v}").expect("string write");
        kv("steps", self.steps.len().to_string());
        kv("mean", format!("{:.6}", self.mean));
        kv("min", format!("{:.6}", self.min));
        kv("max", format!("{:.6}", self.max));
        if let Some(k) = self.keyed_mean {
            kv("keyed_mean", format!("{k:.6}"));
        }
        if let Some(o) = self.other_mean {
            kv("other_mean", format!("{o:.6}"));
        }
        for (i, c) in self.histogram.iter().enumerate() {
            kv(&format!("hist_{i}"), c.to_string());
        }
        for (i, st) in self.steps.iter().enumerate() {
            kv(
                &format!("step_{i}"),
                format!("mean={:.6} min={:.6} max={:.6} n={}", st.mean, st.min, st.max, st.count),
            );
        }
        s
    }
}

#[derive(Default)]
struct Acc {
    sum: f64,
    count: usize,
    min: f64,
    max: f64,
}

impl Acc {
    fn add(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        }
        self.sum += x;
        self.count += 1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Gate activations under teacher forcing on the reference targets. Step `i`
/// is the step that predicts target token `i`; `keyed[e]` lists such steps of
/// example `e` to be reported separately.
pub fn gate_stats<T: Real>(
    model: &Model<T>,
    examples: &[TrainingExample],
    keyed: Option<&[Vec<usize>]>,
    batch_size: usize,
) -> Result<GateReport> {
    if !model.strategy().gated() {
        return contract(format!("strategy {} has no context gate", model.strategy()));
    }
    if examples.is_empty() {
        return contract("gate statistics need at least one example");
    }
    if keyed.is_some_and(|k| k.len() != examples.len()) {
        return contract("keyed step lists must align with examples");
    }
    let mut steps: Vec<Acc> = Vec::new();
    let mut all = Acc::default();
    let mut key_acc = Acc::default();
    let mut other_acc = Acc::default();
    let mut histogram = [0usize; 10];
    for (c, chunk) in examples.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&TrainingExample> = chunk.iter().collect();
        let batch = PaddedBatch::new(&refs)?;
        let mut g = Graph::new();
        let tf = model.teacher_forced(&mut g, &batch)?;
        for (i, st) in tf.steps.iter().enumerate() {
            if steps.len() <= i {
                steps.push(Acc::default());
            }
            let z = g.value(st.gate.expect("gated strategy"));
            for r in 0..z.rows() {
                if !batch.target_mask[i][r] {
                    continue;
                }
                let e = c * batch_size.max(1) + r;
                let is_key = keyed.is_some_and(|k| k[e].contains(&i));
                for v in z.row_slice(r) {
                    let v = v.f64();
                    steps[i].add(v);
                    all.add(v);
                    if is_key {
                        key_acc.add(v);
                    } else {
                        other_acc.add(v);
                    }
                    histogram[((v * 10.0) as usize).min(9)] += 1;
                }
            }
        }
    }
    Ok(GateReport {
        steps: steps
            .iter()
            .map(|a| StepGate {
                count: a.count,
                mean: a.mean().unwrap_or(0.0),
                min: a.min,
                max: a.max,
            })
            .collect(),
        histogram,
        mean: all.mean().unwrap_or(0.0),
        min: all.min,
        max: all.max,
        keyed_mean: keyed.and(key_acc.mean()),
        other_mean: keyed.and(other_acc.mean()),
    })
}
