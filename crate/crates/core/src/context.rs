//! Hierarchical cross-sentence context.
//!
//! A sentence-level GRU compresses each history sentence to its final state
//! `S_k`; a document-level GRU then reads `S_1..S_K` oldest to newest and its
//! final state is the context vector `D`. Both start from zero. An empty
//! window yields `D = 0`.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContextWindow, PaddedSeq, WindowSlot};
use crate::error::{contract, Result};
use crate::layers::GruCell;
use crate::numerics::{Graph, ParameterStore, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub sentence: GruCell,
    pub document: GruCell,
    /// Embedding table shared with the source encoder.
    pub embeddings: String,
}

/// `D` plus the per-sentence summaries that produced it.
pub struct ContextSummary {
    pub d: Var,
    pub sentence_summaries: Vec<Var>,
}

impl ContextEncoder {
    pub fn new(emb_dim: usize, ctx_dim: usize, embeddings: &str) -> Self {
        Self {
            sentence: GruCell::new("ctx.sent", &[("x", emb_dim)], ctx_dim),
            document: GruCell::new("ctx.doc", &[("x", ctx_dim)], ctx_dim),
            embeddings: embeddings.to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.document.hidden
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        self.sentence.register(store, rng, scale)?;
        self.document.register(store, rng, scale)
    }

    /// Final sentence-RNN state for each row of a padded token batch.
    fn sentence_states<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        tokens: &PaddedSeq,
    ) -> Result<Var> {
        let table = g.param(store, &self.embeddings)?;
        let rows = tokens.rows();
        let mut h = g.constant(Tensor::zeros(&[rows, self.dim()]))?;
        for (ids, mask) in tokens.ids.iter().zip(&tokens.mask) {
            let x = g.embed(table, ids)?;
            let next = self.sentence.step(g, store, &[x], h)?;
            h = g.select_rows(next, h, mask)?;
        }
        Ok(h)
    }

    /// Context vectors `[rows x d]` for a batch whose windows are laid out in
    /// slots, oldest sentence first.
    pub fn summarize_slots<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        slots: &[WindowSlot],
        rows: usize,
    ) -> Result<ContextSummary> {
        let mut d = g.constant(Tensor::zeros(&[rows, self.dim()]))?;
        let mut summaries = Vec::with_capacity(slots.len());
        for slot in slots {
            if slot.tokens.rows() != rows {
                return contract("context slot row count differs from batch");
            }
            let s = self.sentence_states(g, store, &slot.tokens)?;
            let next = self.document.step(g, store, &[s], d)?;
            d = g.select_rows(next, d, &slot.present)?;
            summaries.push(s);
        }
        Ok(ContextSummary {
            d,
            sentence_summaries: summaries,
        })
    }
}

/// `S = h_N` of the sentence RNN run over `tokens` from a zero state.
pub fn summarize_sentence<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    encoder: &ContextEncoder,
    tokens: &[usize],
) -> Result<Var> {
    if tokens.is_empty() {
        return contract("cannot summarize an empty sentence");
    }
    encoder.sentence_states(g, store, &PaddedSeq::new(&[tokens]))
}

/// Single-window form of [`ContextEncoder::summarize_slots`].
pub fn summarize_context<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    encoder: &ContextEncoder,
    window: &ContextWindow,
) -> Result<ContextSummary> {
    if window.sentences.iter().any(|s| s.is_empty()) {
        return contract("context window holds an empty sentence");
    }
    let slots: Vec<WindowSlot> = window
        .sentences
        .iter()
        .map(|s| WindowSlot {
            tokens: PaddedSeq::new(&[s.as_slice()]),
            present: vec![true],
        })
        .collect();
    encoder.summarize_slots(g, store, &slots, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::uniform;
    use rand::SeedableRng;

    const EMB: usize = 3;
    const CTX: usize = 4;
    const VOCAB: usize = 10;

    fn setup(seed: u64, scale: f64) -> (ContextEncoder, ParameterStore<f64>) {
        let enc = ContextEncoder::new(EMB, CTX, "src.emb");
        let mut store = ParameterStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        store.insert("src.emb", uniform(&mut rng, &[VOCAB, EMB], 1.0)).unwrap();
        enc.register(&mut store, &mut rng, scale).unwrap();
        (enc, store)
    }

    fn zero_rnns(store: &mut ParameterStore<f64>) {
        for (name, p) in store.iter_mut() {
            if name.starts_with("ctx.") {
                p.value.fill(0.0);
            }
        }
    }

    fn d_of(store: &ParameterStore<f64>, enc: &ContextEncoder, window: &[Vec<usize>]) -> Vec<f64> {
        let mut g = Graph::new();
        let w = ContextWindow {
            sentences: window.to_vec(),
        };
        let s = summarize_context(&mut g, store, enc, &w).unwrap();
        g.value(s.d).to_f64()
    }

    /// Step-by-step unroll using the layer's own single GRU step.
    fn manual(store: &ParameterStore<f64>, enc: &ContextEncoder, window: &[Vec<usize>]) -> Vec<f64> {
        let mut g = Graph::new();
        let table = g.param(store, "src.emb").unwrap();
        let mut d = g.constant(Tensor::zeros(&[1, CTX])).unwrap();
        for sent in window {
            let mut h = g.constant(Tensor::zeros(&[1, CTX])).unwrap();
            for &tok in sent {
                let x = g.embed(table, &[tok]).unwrap();
                h = enc.sentence.step(&mut g, store, &[x], h).unwrap();
            }
            d = enc.document.step(&mut g, store, &[h], d).unwrap();
        }
        g.value(d).to_f64()
    }

    #[test]
    fn empty_window_gives_zero() {
        let (enc, store) = setup(1, 0.5);
        assert_eq!(d_of(&store, &enc, &[]), vec![0.0; CTX]);
    }

    #[test]
    fn zero_weights_give_zero_summaries() {
        let (enc, mut store) = setup(2, 0.5);
        zero_rnns(&mut store);
        let mut g = Graph::new();
        let s = summarize_sentence(&mut g, &store, &enc, &[4, 5, 6]).unwrap();
        assert_eq!(g.value(s).to_f64(), vec![0.0; CTX]);
        assert_eq!(d_of(&store, &enc, &[vec![7, 8]]), vec![0.0; CTX]);
        assert!(summarize_sentence(&mut g, &store, &enc, &[]).is_err());
    }

    #[test]
    fn single_token_sentence_is_one_step() {
        let (enc, store) = setup(3, 0.5);
        let mut g = Graph::new();
        let s = summarize_sentence(&mut g, &store, &enc, &[6]).unwrap();
        let table = g.param(&store, "src.emb").unwrap();
        let x = g.embed(table, &[6]).unwrap();
        let zero = g.constant(Tensor::zeros(&[1, CTX])).unwrap();
        let want = enc.sentence.step(&mut g, &store, &[x], zero).unwrap();
        assert_eq!(g.value(s), g.value(want));
    }

    #[test]
    fn matches_manual_unroll() {
        let (enc, store) = setup(4, 0.5);
        let four = vec![4, 5, 6, 7];
        let mut g = Graph::new();
        let s = summarize_sentence(&mut g, &store, &enc, &four).unwrap();
        let mut h = g.constant(Tensor::zeros(&[1, CTX])).unwrap();
        let table = g.param(&store, "src.emb").unwrap();
        for &t in &four {
            let x = g.embed(table, &[t]).unwrap();
            h = enc.sentence.step(&mut g, &store, &[x], h).unwrap();
        }
        assert_eq!(g.value(s), g.value(h));

        let window = vec![vec![4, 5, 3], vec![6, 3], vec![7, 8, 9, 3]];
        let got = d_of(&store, &enc, &window);
        for (a, b) in got.iter().zip(manual(&store, &enc, &window)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(got.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn order_matters() {
        let (enc, store) = setup(5, 0.5);
        let a = vec![vec![4, 5, 3], vec![6, 3], vec![7, 8, 3]];
        let mut b = a.clone();
        b.swap(0, 2);
        assert_ne!(d_of(&store, &enc, &a), d_of(&store, &enc, &b));
    }

    #[test]
    fn batched_rows_match_single_windows() {
        let (enc, store) = setup(6, 0.5);
        let windows = [vec![], vec![vec![4, 3]], vec![vec![5, 6, 7, 3], vec![8, 3]]];
        let ex: Vec<ContextWindow> = windows.iter().map(|w| ContextWindow { sentences: w.clone() }).collect();
        let slots: Vec<WindowSlot> = (0..2)
            .map(|k| {
                let seqs: Vec<&[usize]> = ex.iter().map(|w| w.sentences.get(k).map(|s| s.as_slice()).unwrap_or(&[])).collect();
                WindowSlot {
                    present: seqs.iter().map(|s| !s.is_empty()).collect(),
                    tokens: PaddedSeq::new(&seqs),
                }
            })
            .collect();
        let mut g = Graph::new();
        let s = enc.summarize_slots(&mut g, &store, &slots, 3).unwrap();
        let batched = g.value(s.d).clone();
        for (r, w) in windows.iter().enumerate() {
            assert_eq!(batched.row_slice(r), d_of(&store, &enc, w).as_slice());
        }
    }

    #[test]
    fn gradients_reach_both_rnns_and_embeddings() {
        let (enc, mut store) = setup(7, 0.5);
        let mut g = Graph::new();
        let w = ContextWindow {
            sentences: vec![vec![4, 5, 3], vec![6, 7, 3]],
        };
        let s = summarize_context(&mut g, &store, &enc, &w).unwrap();
        let l = g.sum(s.d).unwrap();
        g.backward(l, &mut store).unwrap();
        for (name, p) in store.iter() {
            if name.ends_with(".b") || name.contains(".W_") || name.contains(".U_") || name == "src.emb" {
                assert!(p.grad.norm_sq() > 0.0, "{name} has zero gradient");
            }
        }
    }
}
