//! Encoder, context summarizer and decoder assembled per integration
//! strategy.
//!
//! | strategy           | encoder init | decoder init `W_D D` | decoder input      |
//! |--------------------|--------------|----------------------|--------------------|
//! | `Baseline`         | zeros        | no                   | `[y ; c]`          |
//! | `InitEnc`          | `D`          | no                   | `[y ; c]`          |
//! | `InitDec`          | zeros        | yes                  | `[y ; c]`          |
//! | `InitBoth`         | `D`          | yes                  | `[y ; c]`          |
//! | `Aux`              | zeros        | no                   | `[y ; c ; D]`      |
//! | `GatedAux`         | zeros        | no                   | `[y ; c ; z * D]`  |
//! | `InitBothGatedAux` | `D`          | yes                  | `[y ; c ; z * D]`  |

pub mod io;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{ContextEncoder, ContextSummary};
use crate::corpus::{ContextWindow, PaddedBatch, PaddedSeq, TrainingExample, WindowSlot};
use crate::error::{contract, Error, Result};
use crate::layers::{linear, AttentionLayer, AttentionMemory, BiEncoder, ContextGate, GruCell, Readout};
use crate::numerics::params::uniform;
use crate::numerics::{Graph, ParameterStore, Real, Tensor, Var};

pub const SRC_EMB: &str = "src.emb";
pub const TGT_EMB: &str = "tgt.emb";
pub const INIT_STATE: &str = "init.W_s";
pub const INIT_CONTEXT: &str = "init.W_D";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Baseline,
    InitEnc,
    InitDec,
    InitBoth,
    Aux,
    GatedAux,
    InitBothGatedAux,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Baseline,
        Strategy::InitEnc,
        Strategy::InitDec,
        Strategy::InitBoth,
        Strategy::Aux,
        Strategy::GatedAux,
        Strategy::InitBothGatedAux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::InitEnc => "init-enc",
            Strategy::InitDec => "init-dec",
            Strategy::InitBoth => "init-both",
            Strategy::Aux => "aux",
            Strategy::GatedAux => "gated-aux",
            Strategy::InitBothGatedAux => "init-both-gated-aux",
        }
    }

    pub fn uses_context(self) -> bool {
        self != Strategy::Baseline
    }

    pub fn init_encoder(self) -> bool {
        matches!(self, Strategy::InitEnc | Strategy::InitBoth | Strategy::InitBothGatedAux)
    }

    pub fn init_decoder(self) -> bool {
        matches!(self, Strategy::InitDec | Strategy::InitBoth | Strategy::InitBothGatedAux)
    }

    /// Whether `D` (possibly gated) is fed to every decoder step.
    pub fn auxiliary(self) -> bool {
        matches!(self, Strategy::Aux | Strategy::GatedAux | Strategy::InitBothGatedAux)
    }

    pub fn gated(self) -> bool {
        matches!(self, Strategy::GatedAux | Strategy::InitBothGatedAux)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', '+'], "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm || format!("{st:?}").to_ascii_lowercase() == norm.replace('-', ""))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub ctx_dim: usize,
    pub attn_dim: usize,
    pub readout_dim: usize,
}

impl ModelDims {
    /// All hidden sizes equal to `hidden`; attention and readout sized like
    /// the decoder state and the embeddings respectively.
    pub fn uniform(src_vocab: usize, tgt_vocab: usize, emb_dim: usize, hidden: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            emb_dim,
            enc_hidden: hidden,
            dec_hidden: hidden,
            ctx_dim: hidden,
            attn_dim: hidden,
            readout_dim: emb_dim,
        }
    }

    pub fn annotation_dim(&self) -> usize {
        2 * self.enc_hidden
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Number of preceding source sentences summarized into `D`.
    pub k: usize,
    pub dims: ModelDims,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if self.strategy.init_encoder() && d.ctx_dim != d.enc_hidden {
            return Err(Error::Config(format!(
                "{} initializes the encoder from D, so ctx_dim ({}) must equal enc_hidden ({})",
                self.strategy, d.ctx_dim, d.enc_hidden
            )));
        }
        if self.strategy.uses_context() && self.k == 0 {
            return Err(Error::Config(format!("{} needs k >= 1", self.strategy)));
        }
        let sizes = [
            d.emb_dim,
            d.enc_hidden,
            d.dec_hidden,
            d.ctx_dim,
            d.attn_dim,
            d.readout_dim,
        ];
        if sizes.iter().any(|&x| x == 0) {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if d.src_vocab < 5 || d.tgt_vocab < 5 {
            return Err(Error::Config("vocabularies need at least one non-reserved entry".into()));
        }
        Ok(())
    }

    /// Effective window size; `Baseline` never reads context.
    pub fn window(&self) -> usize {
        if self.strategy.uses_context() {
            self.k
        } else {
            0
        }
    }
}

/// Test and analysis overrides for the context pathway.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hooks {
    /// Forces every gate component to this value.
    pub gate: Option<f64>,
    /// Replaces the computed `D` for every row.
    pub context: Option<Vec<f64>>,
}

pub struct Model<T> {
    pub config: StrategyConfig,
    pub store: ParameterStore<T>,
    pub hooks: Hooks,
    context: Option<ContextEncoder>,
    encoder: BiEncoder,
    attention: AttentionLayer,
    gate: Option<ContextGate>,
    decoder: GruCell,
    readout: Readout,
}

impl<T: Real> Clone for Model<T> {
    fn clone(&self) -> Self {
        let mut m = Model::skeleton(self.config);
        m.store = self.store.clone();
        m.hooks = self.hooks.clone();
        m
    }
}

/// Encoder-side results for a batch; constant across decoding steps.
pub struct Encoded {
    pub memory: AttentionMemory,
    pub h_last: Var,
    pub context: Option<ContextSummary>,
    pub rows: usize,
}

impl Encoded {
    pub fn d(&self) -> Option<Var> {
        self.context.as_ref().map(|c| c.d)
    }
}

/// Per-step outputs of the decoder.
pub struct StepOutput {
    pub state: Var,
    pub log_probs: Var,
    pub attention: Var,
    pub context: Var,
    pub gate: Option<Var>,
}

pub struct TeacherForced {
    /// Summed token negative log-likelihood.
    pub loss: Var,
    pub tokens: usize,
    pub steps: Vec<StepOutput>,
    pub encoded: Encoded,
}

impl<T: Real> Model<T> {
    fn skeleton(config: StrategyConfig) -> Self {
        let d = config.dims;
        let ann = d.annotation_dim();
        let st = config.strategy;
        let mut dec_inputs = vec![("y", d.emb_dim), ("c", ann)];
        if st.auxiliary() {
            dec_inputs.push(("d", d.ctx_dim));
        }
        Self {
            config,
            store: ParameterStore::new(0),
            hooks: Hooks::default(),
            context: st.uses_context().then(|| ContextEncoder::new(d.emb_dim, d.ctx_dim, SRC_EMB)),
            encoder: BiEncoder::new("enc", d.emb_dim, d.enc_hidden),
            attention: AttentionLayer::new("att", d.dec_hidden, ann, d.attn_dim),
            gate: st
                .gated()
                .then(|| ContextGate::new("gate", d.ctx_dim, d.dec_hidden, d.emb_dim, ann)),
            decoder: GruCell::new("dec", &dec_inputs, d.dec_hidden),
            readout: Readout {
                prefix: "out".into(),
                dec_hidden: d.dec_hidden,
                emb_dim: d.emb_dim,
                annotation_dim: ann,
                readout_dim: d.readout_dim,
                vocab: d.tgt_vocab,
            },
        }
    }

    /// Builds a model with seeded initialization: uniform in
    /// `[-init_scale, init_scale]`, orthogonal recurrent matrices, zero biases.
    pub fn new(config: StrategyConfig, seed: u64, init_scale: f64) -> Result<Self> {
        config.validate()?;
        let mut m = Self::skeleton(config);
        let d = config.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = &mut m.store;
        s.rng_seed = seed;
        s.insert(SRC_EMB, uniform(&mut rng, &[d.src_vocab, d.emb_dim], init_scale))?;
        s.insert(TGT_EMB, uniform(&mut rng, &[d.tgt_vocab, d.emb_dim], init_scale))?;
        if let Some(c) = &m.context {
            c.register(s, &mut rng, init_scale)?;
        }
        m.encoder.register(s, &mut rng, init_scale)?;
        s.insert(INIT_STATE, uniform(&mut rng, &[d.dec_hidden, d.annotation_dim()], init_scale))?;
        if config.strategy.init_decoder() {
            s.insert(INIT_CONTEXT, uniform(&mut rng, &[d.dec_hidden, d.ctx_dim], init_scale))?;
        }
        m.attention.register(s, &mut rng, init_scale)?;
        if let Some(gate) = &m.gate {
            gate.register(s, &mut rng, init_scale)?;
        }
        m.decoder.register(s, &mut rng, init_scale)?;
        m.readout.register(s, &mut rng, init_scale)?;
        Ok(m)
    }

    /// Wraps an existing store, checking that it holds exactly the expected
    /// parameters.
    pub fn from_store(config: StrategyConfig, store: ParameterStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config, 0, 0.01)?;
        if reference.store.len() != store.len() {
            return contract(format!(
                "expected {} parameters, found {}",
                reference.store.len(),
                store.len()
            ));
        }
        for ((want, wp), (got, gp)) in reference.store.iter().zip(store.iter()) {
            if want != got || wp.value.shape() != gp.value.shape() {
                return contract(format!(
                    "parameter mismatch: expected {want} {:?}, found {got} {:?}",
                    wp.value.shape(),
                    gp.value.shape()
                ));
            }
        }
        let mut m = Self::skeleton(config);
        m.store = store;
        Ok(m)
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    pub fn context_encoder(&self) -> Option<&ContextEncoder> {
        self.context.as_ref()
    }

    pub fn encoder(&self) -> &BiEncoder {
        &self.encoder
    }

    pub fn attention(&self) -> &AttentionLayer {
        &self.attention
    }

    pub fn gate(&self) -> Option<&ContextGate> {
        self.gate.as_ref()
    }

    pub fn decoder(&self) -> &GruCell {
        &self.decoder
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    fn zeros(&self, g: &mut Graph<T>, rows: usize, cols: usize) -> Result<Var> {
        g.constant(Tensor::zeros(&[rows, cols]))
    }

    /// Context vectors for a batch, honoring the context hook.
    pub fn summarize(&self, g: &mut Graph<T>, slots: &[WindowSlot], rows: usize) -> Result<Option<ContextSummary>> {
        let Some(ctx) = &self.context else {
            return Ok(None);
        };
        if slots.len() > self.config.k {
            return contract(format!("window has {} slots, model reads at most {}", slots.len(), self.config.k));
        }
        let mut summary = ctx.summarize_slots(g, &self.store, slots, rows)?;
        if let Some(d) = &self.hooks.context {
            if d.len() != ctx.dim() {
                return contract(format!("context hook has {} values, expected {}", d.len(), ctx.dim()));
            }
            let data: Vec<T> = (0..rows).flat_map(|_| d.iter().map(|&x| T::of(x))).collect();
            summary.d = g.constant(Tensor::new(&[rows, ctx.dim()], data)?)?;
        }
        Ok(Some(summary))
    }

    /// Bidirectional annotations for a padded source batch. Encoder-init
    /// strategies start both directions from `d`, others from zeros.
    pub fn encode_with(&self, g: &mut Graph<T>, source: &PaddedSeq, d: Option<Var>) -> Result<(Vec<Var>, Var)> {
        let rows = source.rows();
        let n = source.steps();
        if n == 0 || source.lengths.iter().any(|&l| l == 0) {
            return contract("cannot encode an empty source sentence");
        }
        let table = g.param(&self.store, SRC_EMB)?;
        let embs = source.ids.iter().map(|ids| g.embed(table, ids)).collect::<Result<Vec<_>>>()?;
        let h = self.encoder.hidden();
        let init = match (self.config.strategy.init_encoder(), d) {
            (true, Some(d)) => d,
            (true, None) => return contract("encoder initialization requires a context vector"),
            (false, _) => self.zeros(g, rows, h)?,
        };
        let annotations = self.encoder.encode(g, &self.store, &embs, &source.mask, init, init)?;
        let mut onehot = vec![T::zero(); rows * n];
        for (r, &len) in source.lengths.iter().enumerate() {
            onehot[r * n + len - 1] = T::one();
        }
        let pick = g.constant(Tensor::new(&[rows, n], onehot)?)?;
        let h_last = g.weighted_sum(pick, &annotations)?;
        Ok((annotations, h_last))
    }

    pub fn encode_batch(&self, g: &mut Graph<T>, source: &PaddedSeq, window: &[WindowSlot]) -> Result<Encoded> {
        let rows = source.rows();
        let context = self.summarize(g, window, rows)?;
        let (annotations, h_last) = self.encode_with(g, source, context.as_ref().map(|c| c.d))?;
        let n = source.steps();
        let all_real = source.mask.iter().flatten().all(|&m| m);
        let mask = (!all_real).then(|| {
            let mut m = vec![false; rows * n];
            for (t, row) in source.mask.iter().enumerate() {
                for (r, &keep) in row.iter().enumerate() {
                    m[r * n + t] = keep;
                }
            }
            m
        });
        let memory = self.attention.memory(g, &self.store, annotations, mask)?;
        Ok(Encoded {
            memory,
            h_last,
            context,
            rows,
        })
    }

    /// `s_0 = tanh(W_s h_N [+ W_D D])`.
    pub fn init_state(&self, g: &mut Graph<T>, h_last: Var, d: Option<Var>) -> Result<Var> {
        let mut pre = linear(g, &self.store, h_last, INIT_STATE)?;
        if self.config.strategy.init_decoder() {
            let Some(d) = d else {
                return contract("decoder initialization requires a context vector");
            };
            let wd = linear(g, &self.store, d, INIT_CONTEXT)?;
            pre = g.add(pre, wd)?;
        }
        g.tanh(pre)
    }

    /// One decoder step for every row: attention from `s_prev`, then the GRU
    /// update and the output distribution.
    pub fn step(&self, g: &mut Graph<T>, enc: &Encoded, s_prev: Var, y_prev: &[usize]) -> Result<StepOutput> {
        if y_prev.len() != g.value(s_prev).rows() || y_prev.len() != enc.rows {
            return contract("previous-token count differs from decoder rows");
        }
        if let Some(&bad) = y_prev.iter().find(|&&y| y >= self.config.dims.tgt_vocab) {
            return contract(format!("unknown target token id {bad}"));
        }
        let table = g.param(&self.store, TGT_EMB)?;
        let y = g.embed(table, y_prev)?;
        let (c, attention) = self.attention.attend(g, &self.store, s_prev, &enc.memory)?;
        let mut inputs = vec![y, c];
        let mut gate = None;
        if self.config.strategy.auxiliary() {
            let d = enc.d().expect("auxiliary strategies always summarize context");
            if let Some(gl) = &self.gate {
                let z = match self.hooks.gate {
                    Some(v) => g.constant(Tensor::full(&[y_prev.len(), gl.ctx_dim], T::of(v)))?,
                    None => crate::layers::gate_forward(g, &self.store, gl, s_prev, y, c)?,
                };
                gate = Some(z);
                inputs.push(g.mul(z, d)?);
            } else {
                inputs.push(d);
            }
        }
        let state = self.decoder.step(g, &self.store, &inputs, s_prev)?;
        let log_probs = self.readout.log_probs(g, &self.store, state, y, c)?;
        Ok(StepOutput {
            state,
            log_probs,
            attention,
            context: c,
            gate,
        })
    }

    /// Teacher-forced pass over a padded batch.
    pub fn teacher_forced(&self, g: &mut Graph<T>, batch: &PaddedBatch) -> Result<TeacherForced> {
        let encoded = self.encode_batch(g, &batch.source, &batch.window)?;
        let mut s = self.init_state(g, encoded.h_last, encoded.d())?;
        let mut loss: Option<Var> = None;
        let mut steps = Vec::with_capacity(batch.target_in.len());
        for ((y_prev, y), mask) in batch.target_in.iter().zip(&batch.target_out).zip(&batch.target_mask) {
            let out = self.step(g, &encoded, s, y_prev)?;
            let w: Vec<T> = mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
            let l = g.nll(out.log_probs, y, &w)?;
            loss = Some(match loss {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
            s = out.state;
            steps.push(out);
        }
        Ok(TeacherForced {
            loss: loss.expect("targets have at least one step"),
            tokens: batch.target_tokens(),
            steps,
            encoded,
        })
    }

    /// Mean per-token loss of a batch, ready for [`Graph::backward`].
    pub fn batch_loss(&self, g: &mut Graph<T>, batch: &PaddedBatch) -> Result<(Var, usize)> {
        let tf = self.teacher_forced(g, batch)?;
        let mean = g.scale(tf.loss, T::of(1.0 / tf.tokens as f64))?;
        Ok((mean, tf.tokens))
    }

    // Single-example API.

    /// `D` for one window (zero for an empty window).
    pub fn context_vector(&self, g: &mut Graph<T>, window: &ContextWindow) -> Result<Option<ContextSummary>> {
        self.summarize(g, &single_window(window), 1)
    }

    /// Annotations and `h_N` for one unpadded source sentence.
    pub fn encode_source(&self, g: &mut Graph<T>, source: &[usize], d: Option<Var>) -> Result<(Vec<Var>, Var)> {
        self.encode_with(g, &PaddedSeq::new(&[source]), d)
    }

    pub fn init_decoder(&self, g: &mut Graph<T>, h_last: Var, d: Option<Var>) -> Result<Var> {
        self.init_state(g, h_last, d)
    }

    pub fn prepare(&self, g: &mut Graph<T>, source: &[usize], window: &ContextWindow) -> Result<(Encoded, Var)> {
        let enc = self.encode_batch(g, &PaddedSeq::new(&[source]), &single_window(window))?;
        let s0 = self.init_state(g, enc.h_last, enc.d())?;
        Ok((enc, s0))
    }

    /// Re-indexes encoder results so that output row `i` is input row
    /// `idx[i]`; used to lay beam hypotheses out as rows.
    pub fn gather_encoded(&self, g: &mut Graph<T>, enc: &Encoded, idx: &[usize]) -> Result<Encoded> {
        let gather = |g: &mut Graph<T>, vs: &[Var]| -> Result<Vec<Var>> { vs.iter().map(|&v| g.gather_rows(v, idx)).collect() };
        let annotations = gather(g, &enc.memory.annotations)?;
        let keys = gather(g, &enc.memory.keys)?;
        let n = annotations.len();
        let mask = enc
            .memory
            .mask
            .as_ref()
            .map(|m| idx.iter().flat_map(|&r| m[r * n..(r + 1) * n].iter().copied()).collect());
        let context = match &enc.context {
            Some(c) => Some(ContextSummary {
                d: g.gather_rows(c.d, idx)?,
                sentence_summaries: gather(g, &c.sentence_summaries)?,
            }),
            None => None,
        };
        Ok(Encoded {
            memory: AttentionMemory { annotations, keys, mask },
            h_last: g.gather_rows(enc.h_last, idx)?,
            context,
            rows: idx.len(),
        })
    }

    /// Summed negative log-likelihood of one example under teacher forcing.
    pub fn sentence_loss(&self, g: &mut Graph<T>, example: &TrainingExample, max_len: usize) -> Result<Var> {
        if example.target.len() < 2 {
            return contract("target must be framed with BOS and EOS");
        }
        if example.source.len() > max_len + 1 || example.target.len() > max_len + 2 {
            return contract(format!("example longer than max_len {max_len}"));
        }
        let batch = PaddedBatch::new(&[example])?;
        Ok(self.teacher_forced(g, &batch)?.loss)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut m = Model::<U>::skeleton(self.config);
        m.store = self.store.cast();
        m.hooks = self.hooks.clone();
        m
    }
}

pub fn single_window(window: &ContextWindow) -> Vec<WindowSlot> {
    window
        .sentences
        .iter()
        .map(|s| WindowSlot {
            tokens: PaddedSeq::new(&[s.as_slice()]),
            present: vec![true],
        })
        .collect()
}
