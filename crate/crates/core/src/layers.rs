//! Differentiable building blocks: GRU cell, bidirectional encoder, additive
//! attention, the context gate and the output readout.
//!
//! All weights are stored `[out x in]` and applied to row-batched activations
//! as `x * W^T`.

use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::numerics::params::{stacked_orthogonal, uniform};
use crate::numerics::{Graph, ParameterStore, Real, Tensor, Var};

fn check_cols<T: Real>(g: &Graph<T>, v: Var, want: usize, what: &str) -> Result<()> {
    let got = g.value(v).cols();
    if got != want {
        return contract(format!("{what}: expected width {want}, got {got}"));
    }
    Ok(())
}

/// `x * W^T` for a stored `[out x in]` weight.
pub fn linear<T: Real>(g: &mut Graph<T>, store: &ParameterStore<T>, x: Var, weight: &str) -> Result<Var> {
    let wt = g.param_t(store, weight)?;
    g.matmul(x, wt)
}

/// Gated recurrent unit with the update/reset convention
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
///
/// The input may be split into named blocks, each with its own `[3h x in]`
/// weight; the block products are summed in declaration order, which is the
/// same map as one matrix applied to the concatenated input.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub prefix: String,
    pub inputs: Vec<(String, usize)>,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(prefix: &str, inputs: &[(&str, usize)], hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            inputs: inputs.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
            hidden,
        }
    }

    pub fn input_weight(&self, block: &str) -> String {
        format!("{}.W_{block}", self.prefix)
    }

    pub fn recurrent_gates(&self) -> String {
        format!("{}.U_zr", self.prefix)
    }

    pub fn recurrent_candidate(&self) -> String {
        format!("{}.U_h", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.iter().map(|(_, d)| d).sum()
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        let h = self.hidden;
        for (name, dim) in &self.inputs {
            store.insert(&self.input_weight(name), uniform(rng, &[3 * h, *dim], scale))?;
        }
        store.insert(&self.recurrent_gates(), stacked_orthogonal(rng, 2, h))?;
        store.insert(&self.recurrent_candidate(), stacked_orthogonal(rng, 1, h))?;
        store.insert(&self.bias(), Tensor::zeros(&[3 * h]))?;
        Ok(())
    }

    /// Sum of the input-block projections plus bias, `[rows x 3h]`. Independent
    /// of the recurrent state, so callers may hoist it out of a loop.
    pub fn project_inputs<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, xs: &[Var]) -> Result<Var> {
        if xs.len() != self.inputs.len() {
            return contract(format!(
                "{}: expected {} input blocks, got {}",
                self.prefix,
                self.inputs.len(),
                xs.len()
            ));
        }
        let mut acc: Option<Var> = None;
        for ((name, dim), &x) in self.inputs.iter().zip(xs) {
            check_cols(g, x, *dim, &format!("{} input {name}", self.prefix))?;
            let p = linear(g, store, x, &self.input_weight(name))?;
            acc = Some(match acc {
                None => p,
                Some(a) => g.add(a, p)?,
            });
        }
        let b = g.param(store, &self.bias())?;
        g.add_bias(acc.expect("at least one block"), b)
    }

    /// One step from pre-projected inputs.
    pub fn step_projected<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, xw: Var, h_prev: Var) -> Result<Var> {
        let h = self.hidden;
        check_cols(g, h_prev, h, &format!("{} hidden state", self.prefix))?;
        if g.value(xw).rows() != g.value(h_prev).rows() {
            return contract(format!("{}: input and state batch sizes differ", self.prefix));
        }
        let hu = linear(g, store, h_prev, &self.recurrent_gates())?;
        let xzr = g.slice_cols(xw, 0, 2 * h)?;
        let pre = g.add(xzr, hu)?;
        let zr = g.sigmoid(pre)?;
        let z = g.slice_cols(zr, 0, h)?;
        let r = g.slice_cols(zr, h, h)?;
        let xh = g.slice_cols(xw, 2 * h, h)?;
        let rh = g.mul(r, h_prev)?;
        let uh = linear(g, store, rh, &self.recurrent_candidate())?;
        let cand_pre = g.add(xh, uh)?;
        let cand = g.tanh(cand_pre)?;
        g.gru_mix(z, h_prev, cand)
    }

    pub fn step<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, xs: &[Var], h_prev: Var) -> Result<Var> {
        let xw = self.project_inputs(g, store, xs)?;
        self.step_projected(g, store, xw, h_prev)
    }

    /// Runs the cell over `xs[t]` in the given order. Rows whose `mask[t][row]`
    /// is false keep their previous state. Returns the state after every step.
    pub fn run<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        xs: &[Var],
        masks: &[Vec<bool>],
        init: Var,
        order: impl Iterator<Item = usize>,
    ) -> Result<Vec<Option<Var>>> {
        let mut states = vec![None; xs.len()];
        let mut h = init;
        for t in order {
            let next = self.step(g, store, &[xs[t]], h)?;
            h = g.select_rows(next, h, &masks[t])?;
            states[t] = Some(h);
        }
        Ok(states)
    }
}

/// Bidirectional GRU encoder; annotation `j` is `[forward_j ; backward_j]`.
#[derive(Clone, Debug)]
pub struct BiEncoder {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiEncoder {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: GruCell::new(&format!("{prefix}.fwd"), &[("x", input)], hidden),
            backward: GruCell::new(&format!("{prefix}.bwd"), &[("x", input)], hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        self.forward.register(store, rng, scale)?;
        self.backward.register(store, rng, scale)
    }

    /// Encodes a (possibly padded) batch. `masks[t][row]` marks real tokens;
    /// padding sits at the end of each row. The forward pass starts from
    /// `init_fwd` and the backward pass from `init_bwd`, both `[rows x h]`.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        embeddings: &[Var],
        masks: &[Vec<bool>],
        init_fwd: Var,
        init_bwd: Var,
    ) -> Result<Vec<Var>> {
        let n = embeddings.len();
        if n == 0 {
            return contract("cannot encode an empty sequence");
        }
        let h = self.hidden();
        check_cols(g, init_fwd, h, "forward init")?;
        check_cols(g, init_bwd, h, "backward init")?;
        let fwd = self.forward.run(g, store, embeddings, masks, init_fwd, 0..n)?;
        let bwd = self.backward.run(g, store, embeddings, masks, init_bwd, (0..n).rev())?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| g.concat(&[f.expect("visited"), b.expect("visited")]))
            .collect()
    }
}

/// Single-example form: encodes one unpadded sequence of `[1 x emb]` rows.
pub fn encode_bidirectional<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    encoder: &BiEncoder,
    embeddings: &[Var],
    init_fwd: Var,
    init_bwd: Var,
) -> Result<Vec<Var>> {
    let masks = vec![vec![true]; embeddings.len()];
    encoder.encode(g, store, embeddings, &masks, init_fwd, init_bwd)
}

/// Additive attention `e_j = v^T tanh(W_a s + U_a h_j)`.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub prefix: String,
    pub query_dim: usize,
    pub annotation_dim: usize,
    pub attn_dim: usize,
}

/// Annotations with their key projections `U_a h_j` precomputed.
pub struct AttentionMemory {
    pub annotations: Vec<Var>,
    pub keys: Vec<Var>,
    /// `rows x len` row-major; `None` when every position is real.
    pub mask: Option<Vec<bool>>,
}

impl AttentionLayer {
    pub fn new(prefix: &str, query_dim: usize, annotation_dim: usize, attn_dim: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            query_dim,
            annotation_dim,
            attn_dim,
        }
    }

    pub fn w_query(&self) -> String {
        format!("{}.W", self.prefix)
    }

    pub fn w_key(&self) -> String {
        format!("{}.U", self.prefix)
    }

    pub fn score_vec(&self) -> String {
        format!("{}.v", self.prefix)
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        store.insert(&self.w_query(), uniform(rng, &[self.attn_dim, self.query_dim], scale))?;
        store.insert(&self.w_key(), uniform(rng, &[self.attn_dim, self.annotation_dim], scale))?;
        store.insert(&self.score_vec(), uniform(rng, &[self.attn_dim, 1], scale))?;
        Ok(())
    }

    pub fn memory<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        annotations: Vec<Var>,
        mask: Option<Vec<bool>>,
    ) -> Result<AttentionMemory> {
        if annotations.is_empty() {
            return contract("attention over zero annotations");
        }
        let mut keys = Vec::with_capacity(annotations.len());
        for &a in &annotations {
            check_cols(g, a, self.annotation_dim, "annotation")?;
            keys.push(linear(g, store, a, &self.w_key())?);
        }
        Ok(AttentionMemory {
            annotations,
            keys,
            mask,
        })
    }

    /// Returns the context vector `c` and the attention weights `[rows x N]`.
    pub fn attend<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        s_prev: Var,
        memory: &AttentionMemory,
    ) -> Result<(Var, Var)> {
        check_cols(g, s_prev, self.query_dim, "attention query")?;
        let q = linear(g, store, s_prev, &self.w_query())?;
        let v = g.param(store, &self.score_vec())?;
        let mut scores = Vec::with_capacity(memory.keys.len());
        for &k in &memory.keys {
            let pre = g.add(q, k)?;
            let act = g.tanh(pre)?;
            scores.push(g.matmul(act, v)?);
        }
        let e = g.concat(&scores)?;
        let weights = g.masked_softmax(e, memory.mask.clone())?;
        let c = g.weighted_sum(weights, &memory.annotations)?;
        Ok((c, weights))
    }
}

/// Single-example attention over unpadded annotations.
pub fn attend<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    layer: &AttentionLayer,
    s_prev: Var,
    annotations: &[Var],
) -> Result<(Var, Var)> {
    let memory = layer.memory(g, store, annotations.to_vec(), None)?;
    layer.attend(g, store, s_prev, &memory)
}

/// `z = sigmoid(U_z s_prev + W_z y_prev + C_z c)`, no bias.
#[derive(Clone, Debug)]
pub struct ContextGate {
    pub prefix: String,
    pub ctx_dim: usize,
    pub dec_hidden: usize,
    pub emb_dim: usize,
    pub annotation_dim: usize,
}

impl ContextGate {
    pub fn new(prefix: &str, ctx_dim: usize, dec_hidden: usize, emb_dim: usize, annotation_dim: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            ctx_dim,
            dec_hidden,
            emb_dim,
            annotation_dim,
        }
    }

    pub fn u_state(&self) -> String {
        format!("{}.U_z", self.prefix)
    }

    pub fn w_prev(&self) -> String {
        format!("{}.W_z", self.prefix)
    }

    pub fn c_context(&self) -> String {
        format!("{}.C_z", self.prefix)
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        store.insert(&self.u_state(), uniform(rng, &[self.ctx_dim, self.dec_hidden], scale))?;
        store.insert(&self.w_prev(), uniform(rng, &[self.ctx_dim, self.emb_dim], scale))?;
        store.insert(&self.c_context(), uniform(rng, &[self.ctx_dim, self.annotation_dim], scale))?;
        Ok(())
    }
}

pub fn gate_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    gate: &ContextGate,
    s_prev: Var,
    y_prev_emb: Var,
    c: Var,
) -> Result<Var> {
    check_cols(g, s_prev, gate.dec_hidden, "gate state")?;
    check_cols(g, y_prev_emb, gate.emb_dim, "gate previous word")?;
    check_cols(g, c, gate.annotation_dim, "gate attention context")?;
    let a = linear(g, store, s_prev, &gate.u_state())?;
    let b = linear(g, store, y_prev_emb, &gate.w_prev())?;
    let cc = linear(g, store, c, &gate.c_context())?;
    let ab = g.add(a, b)?;
    let pre = g.add(ab, cc)?;
    g.sigmoid(pre)
}

/// `logits = W_o tanh(U_o s + V_o y_prev + C_o c)`.
#[derive(Clone, Debug)]
pub struct Readout {
    pub prefix: String,
    pub dec_hidden: usize,
    pub emb_dim: usize,
    pub annotation_dim: usize,
    pub readout_dim: usize,
    pub vocab: usize,
}

impl Readout {
    pub fn w_state(&self) -> String {
        format!("{}.U_o", self.prefix)
    }

    pub fn w_prev(&self) -> String {
        format!("{}.V_o", self.prefix)
    }

    pub fn w_context(&self) -> String {
        format!("{}.C_o", self.prefix)
    }

    pub fn w_vocab(&self) -> String {
        format!("{}.W_o", self.prefix)
    }

    pub fn register<T: Real>(&self, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
        let r = self.readout_dim;
        store.insert(&self.w_state(), uniform(rng, &[r, self.dec_hidden], scale))?;
        store.insert(&self.w_prev(), uniform(rng, &[r, self.emb_dim], scale))?;
        store.insert(&self.w_context(), uniform(rng, &[r, self.annotation_dim], scale))?;
        store.insert(&self.w_vocab(), uniform(rng, &[self.vocab, r], scale))?;
        Ok(())
    }

    pub fn logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        s: Var,
        y_prev_emb: Var,
        c: Var,
    ) -> Result<Var> {
        check_cols(g, s, self.dec_hidden, "readout state")?;
        check_cols(g, y_prev_emb, self.emb_dim, "readout previous word")?;
        check_cols(g, c, self.annotation_dim, "readout attention context")?;
        let a = linear(g, store, s, &self.w_state())?;
        let b = linear(g, store, y_prev_emb, &self.w_prev())?;
        let cc = linear(g, store, c, &self.w_context())?;
        let ab = g.add(a, b)?;
        let pre = g.add(ab, cc)?;
        let t = g.tanh(pre)?;
        linear(g, store, t, &self.w_vocab())
    }

    /// Log-probabilities over the target vocabulary.
    pub fn log_probs<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        s: Var,
        y_prev_emb: Var,
        c: Var,
    ) -> Result<Var> {
        let logits = self.logits(g, store, s, y_prev_emb, c)?;
        g.log_softmax(logits)
    }
}

/// Probabilities over the target vocabulary, one row per batch entry.
pub fn output_distribution<T: Real>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    readout: &Readout,
    s: Var,
    y_prev_emb: Var,
    c: Var,
) -> Result<Var> {
    let logits = readout.logits(g, store, s, y_prev_emb, c)?;
    g.masked_softmax(logits, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn zero_store(cells: &[&GruCell]) -> ParameterStore<f64> {
        let mut store = ParameterStore::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in cells {
            c.register(&mut store, &mut rng, 0.08).unwrap();
        }
        for (_, p) in store.iter_mut() {
            p.value.fill(0.0);
        }
        store
    }

    fn row(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.constant(Tensor::row(v.to_vec())).unwrap()
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weight_gru_halves_state() {
        let cell = GruCell::new("gru", &[("x", 3)], 4);
        let store = zero_store(&[&cell]);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.3, -2.0, 1.0]);
        let h = row(&mut g, &[0.2, -0.4, 0.8, 0.0]);
        let out = cell.step(&mut g, &store, &[x], h).unwrap();
        assert_eq!(g.value(out).data(), &[0.1, -0.2, 0.4, 0.0]);

        let zero = row(&mut g, &[0.0; 4]);
        let out = cell.step(&mut g, &store, &[x], zero).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 4]);
    }

    /// Scalar-loop GRU step reading weights straight out of the store.
    fn gru_oracle(store: &ParameterStore<f64>, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = cell.hidden;
        let w = store.value(&cell.input_weight("x")).unwrap();
        let u = store.value(&cell.recurrent_gates()).unwrap();
        let uh = store.value(&cell.recurrent_candidate()).unwrap();
        let b = store.value(&cell.bias()).unwrap();
        let wx = |row: usize| -> f64 { (0..x.len()).map(|k| w.get2(row, k) * x[k]).sum() };
        let mut z = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        for i in 0..hd {
            let uz: f64 = (0..hd).map(|k| u.get2(i, k) * h[k]).sum();
            let ur: f64 = (0..hd).map(|k| u.get2(hd + i, k) * h[k]).sum();
            z[i] = sig(wx(i) + uz + b.data()[i]);
            r[i] = sig(wx(hd + i) + ur + b.data()[hd + i]);
        }
        (0..hd)
            .map(|i| {
                let rec: f64 = (0..hd).map(|k| uh.get2(i, k) * r[k] * h[k]).sum();
                let cand = (wx(2 * hd + i) + rec + b.data()[2 * hd + i]).tanh();
                (1.0 - z[i]) * h[i] + z[i] * cand
            })
            .collect()
    }

    fn seeded_store(cells: &[&GruCell], seed: u64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in cells {
            c.register(&mut store, &mut rng, 0.5).unwrap();
        }
        for (_, p) in store.iter_mut() {
            if p.value.shape().len() == 1 {
                for v in p.value.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        store
    }

    #[test]
    fn gru_step_matches_scalar_oracle() {
        let cell = GruCell::new("gru", &[("x", 3)], 4);
        let store = seeded_store(&[&cell], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let xv = row(&mut g, &x);
        let hv = row(&mut g, &h);
        let out = cell.step(&mut g, &store, &[xv], hv).unwrap();
        for (a, b) in g.value(out).data().iter().zip(gru_oracle(&store, &cell, &x, &h)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_rejects_wrong_widths() {
        let cell = GruCell::new("gru", &[("x", 3)], 4);
        let store = zero_store(&[&cell]);
        let mut g = Graph::new();
        let x = row(&mut g, &[0.0; 2]);
        let h = row(&mut g, &[0.0; 4]);
        assert!(cell.step(&mut g, &store, &[x], h).is_err());
    }

    #[test]
    fn bidirectional_zero_weights() {
        let enc = BiEncoder::new("enc", 2, 3);
        let store = zero_store(&[&enc.forward, &enc.backward]);
        let mut g = Graph::new();
        let x = row(&mut g, &[1.0, -1.0]);
        let zero = row(&mut g, &[0.0; 3]);
        let ann = encode_bidirectional(&mut g, &store, &enc, &[x], zero, zero).unwrap();
        assert_eq!(g.value(ann[0]).data(), &[0.0; 6]);

        let f0 = row(&mut g, &[0.2, 0.4, -0.6]);
        let b0 = row(&mut g, &[1.0, -0.8, 0.1]);
        let ann = encode_bidirectional(&mut g, &store, &enc, &[x], f0, b0).unwrap();
        assert_eq!(g.value(ann[0]).data(), &[0.1, 0.2, -0.3, 0.5, -0.4, 0.05]);
        assert!(encode_bidirectional(&mut g, &store, &enc, &[], f0, b0).is_err());
    }

    #[test]
    fn bidirectional_matches_manual_unroll() {
        let enc = BiEncoder::new("enc", 3, 4);
        let store = seeded_store(&[&enc.forward, &enc.backward], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let f0: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b0: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();

        let mut fwd = vec![f0.clone()];
        for x in &xs {
            let next = gru_oracle(&store, &enc.forward, x, fwd.last().unwrap());
            fwd.push(next);
        }
        let mut bwd = vec![Vec::new(); 3];
        let mut h = b0.clone();
        for t in (0..3).rev() {
            h = gru_oracle(&store, &enc.backward, &xs[t], &h);
            bwd[t] = h.clone();
        }

        let mut g = Graph::new();
        let xv: Vec<Var> = xs.iter().map(|x| row(&mut g, x)).collect();
        let fv = row(&mut g, &f0);
        let bv = row(&mut g, &b0);
        let ann = encode_bidirectional(&mut g, &store, &enc, &xv, fv, bv).unwrap();
        for t in 0..3 {
            let want: Vec<f64> = fwd[t + 1].iter().chain(&bwd[t]).copied().collect();
            for (a, b) in g.value(ann[t]).data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn attention_store(layer: &AttentionLayer, seed: u64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        layer.register(&mut store, &mut rng, 0.5).unwrap();
        store
    }

    #[test]
    fn single_annotation_gets_full_weight() {
        let layer = AttentionLayer::new("att", 3, 4, 5);
        let store = attention_store(&layer, 1);
        let mut g = Graph::new();
        let s = row(&mut g, &[0.1, 0.2, 0.3]);
        let a = row(&mut g, &[1.0, 2.0, 3.0, 4.0]);
        let (c, w) = attend(&mut g, &store, &layer, s, &[a]).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(attend(&mut g, &store, &layer, s, &[]).is_err());
    }

    #[test]
    fn identical_annotations_split_evenly() {
        let layer = AttentionLayer::new("att", 3, 2, 5);
        let store = attention_store(&layer, 2);
        let mut g = Graph::new();
        let s = row(&mut g, &[0.1, 0.2, 0.3]);
        let a = row(&mut g, &[0.5, -1.5]);
        let b = row(&mut g, &[0.5, -1.5]);
        let (c, w) = attend(&mut g, &store, &layer, s, &[a, b]).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);
        assert_eq!(g.value(c).data(), &[0.5, -1.5]);
    }

    #[test]
    fn constructed_scores_give_two_thirds() {
        // attn_dim 1, W = 0, U = [1, 0], v = [1]: e_j = tanh(a_j[0]).
        let layer = AttentionLayer::new("att", 1, 2, 1);
        let mut store = attention_store(&layer, 3);
        store.set("att.W", Tensor::from_f64(&[1, 1], &[0.0]).unwrap()).unwrap();
        store.set("att.U", Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap()).unwrap();
        store.set("att.v", Tensor::from_f64(&[1, 1], &[1.0]).unwrap()).unwrap();
        let ln2 = std::f64::consts::LN_2;
        let mut g = Graph::new();
        let s = row(&mut g, &[0.7]);
        let a = row(&mut g, &[ln2.atanh(), 1.0]);
        let b = row(&mut g, &[0.0, 2.0]);
        let (_, w) = attend(&mut g, &store, &layer, s, &[a, b]).unwrap();
        let w = g.value(w).data();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    fn gate_store(gate: &ContextGate, seed: u64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gate.register(&mut store, &mut rng, 0.5).unwrap();
        store
    }

    #[test]
    fn zero_gate_is_one_half() {
        let gate = ContextGate::new("gate", 4, 3, 2, 6);
        let mut store = gate_store(&gate, 1);
        let mut g = Graph::new();
        let s = row(&mut g, &[0.0; 3]);
        let y = row(&mut g, &[0.0; 2]);
        let c = row(&mut g, &[0.0; 6]);
        let z = gate_forward(&mut g, &store, &gate, s, y, c).unwrap();
        assert_eq!(g.value(z).data(), &[0.5; 4]);

        for (_, p) in store.iter_mut() {
            p.value.fill(0.0);
        }
        let mut g = Graph::new();
        let s = row(&mut g, &[0.3, -1.0, 2.0]);
        let y = row(&mut g, &[1.0, 1.0]);
        let c = row(&mut g, &[0.5; 6]);
        let z = gate_forward(&mut g, &store, &gate, s, y, c).unwrap();
        assert_eq!(g.value(z).data(), &[0.5; 4]);
    }

    #[test]
    fn gate_matches_scalar_oracle() {
        let gate = ContextGate::new("gate", 4, 3, 2, 6);
        let store = gate_store(&gate, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (u, w, cz) = (
            store.value("gate.U_z").unwrap(),
            store.value("gate.W_z").unwrap(),
            store.value("gate.C_z").unwrap(),
        );
        let want: Vec<f64> = (0..4)
            .map(|i| {
                let a: f64 = (0..3).map(|k| u.get2(i, k) * s[k]).sum();
                let b: f64 = (0..2).map(|k| w.get2(i, k) * y[k]).sum();
                let d: f64 = (0..6).map(|k| cz.get2(i, k) * c[k]).sum();
                sig(a + b + d)
            })
            .collect();
        let mut g = Graph::new();
        let (sv, yv, cv) = (row(&mut g, &s), row(&mut g, &y), row(&mut g, &c));
        let z = gate_forward(&mut g, &store, &gate, sv, yv, cv).unwrap();
        for (a, b) in g.value(z).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn readout(vocab: usize) -> Readout {
        Readout {
            prefix: "out".into(),
            dec_hidden: 3,
            emb_dim: 2,
            annotation_dim: 4,
            readout_dim: 3,
            vocab,
        }
    }

    #[test]
    fn zero_readout_is_uniform() {
        let r = readout(7);
        let mut store = ParameterStore::new(0);
        r.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 0.1).unwrap();
        store.set("out.W_o", Tensor::zeros(&[7, 3])).unwrap();
        let mut g = Graph::new();
        let (s, y, c) = (row(&mut g, &[0.2; 3]), row(&mut g, &[0.1; 2]), row(&mut g, &[0.3; 4]));
        let p = output_distribution(&mut g, &store, &r, s, y, c).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn saturated_logit_dominates() {
        let r = readout(5);
        let mut store = ParameterStore::new(0);
        r.register(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 0.1).unwrap();
        store.set("out.U_o", Tensor::from_f64(&[3, 3], &[0., 0., 0., 0., 0., 0., 0., 0., 0.]).unwrap()).unwrap();
        store.set("out.V_o", Tensor::from_f64(&[3, 2], &[100., 0., 0., 0., 0., 0.]).unwrap()).unwrap();
        store.set("out.C_o", Tensor::zeros(&[3, 4])).unwrap();
        let mut w = vec![0.0; 15];
        w[3 * 3] = 1000.0; // token 3 reads hidden unit 0, tanh(100) = 1
        store.set("out.W_o", Tensor::from_f64(&[5, 3], &w).unwrap()).unwrap();
        let mut g = Graph::new();
        let (s, y, c) = (row(&mut g, &[0.2; 3]), row(&mut g, &[1.0, 0.0]), row(&mut g, &[0.3; 4]));
        let p = output_distribution(&mut g, &store, &r, s, y, c).unwrap();
        assert!(g.value(p).data()[3] >= 1.0 - 1e-9);
    }

    #[test]
    fn readout_matches_exp_normalize_oracle() {
        let r = readout(6);
        let mut store = ParameterStore::new(0);
        r.register(&mut store, &mut ChaCha8Rng::seed_from_u64(21), 0.9).unwrap();
        let (s, y, c) = ([0.3, -0.1, 0.8], [0.5, -0.7], [0.1, 0.2, -0.3, 0.9]);
        let mat = |n: &str| store.value(n).unwrap().clone();
        let (uo, vo, co, wo) = (mat("out.U_o"), mat("out.V_o"), mat("out.C_o"), mat("out.W_o"));
        let hidden: Vec<f64> = (0..3)
            .map(|i| {
                let a: f64 = (0..3).map(|k| uo.get2(i, k) * s[k]).sum();
                let b: f64 = (0..2).map(|k| vo.get2(i, k) * y[k]).sum();
                let d: f64 = (0..4).map(|k| co.get2(i, k) * c[k]).sum();
                (a + b + d).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..6).map(|v| (0..3).map(|k| wo.get2(v, k) * hidden[k]).sum()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let mut g = Graph::new();
        let (sv, yv, cv) = (row(&mut g, &s), row(&mut g, &y), row(&mut g, &c));
        let p = output_distribution(&mut g, &store, &r, sv, yv, cv).unwrap();
        for (a, l) in g.value(p).data().iter().zip(&logits) {
            assert!((a - l.exp() / z).abs() < 1e-12);
        }
        let total: f64 = g.value(p).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
