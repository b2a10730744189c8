//! Central finite-difference checks of the analytic gradients in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ContextWindow, TrainingExample, BOS, EOS, RESERVED};
use crate::error::Result;
use crate::model::{Model, ModelDims, Strategy, StrategyConfig};
use crate::numerics::Graph;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Weight scale of the checked models. Smaller weights leave some gradients
/// near 1e-5, where central differences lose their last digits to rounding.
pub const INIT_SCALE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// `|g_a - g_n| / max(|g_a|, |g_n|)` over the whole tensor (Euclidean
    /// norms); zero when both vanish.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub strategy: Strategy,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

fn loss(model: &Model<f64>, ex: &TrainingExample) -> Result<f64> {
    let mut g = Graph::new();
    let l = model.sentence_loss(&mut g, ex, usize::MAX / 4)?;
    Ok(g.value(l).data()[0])
}

/// Compares analytic and central-difference gradients of the sentence loss
/// for every parameter tensor.
pub fn check_model(model: &mut Model<f64>, ex: &TrainingExample, eps: f64) -> Result<Vec<ParamCheck>> {
    model.store.zero_grads();
    let mut g = Graph::new();
    let l = model.sentence_loss(&mut g, ex, usize::MAX / 4)?;
    g.backward(l, &mut model.store)?;
    let names: Vec<String> = model.store.names().map(String::from).collect();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let analytic = model.store.grad(&name)?.data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.store.value(&name)?.data()[i];
            model.store.get_mut(&name)?.value.data_mut()[i] = orig + eps;
            let up = loss(model, ex)?;
            model.store.get_mut(&name)?.value.data_mut()[i] = orig - eps;
            let down = loss(model, ex)?;
            model.store.get_mut(&name)?.value.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        out.push(ParamCheck {
            name,
            rel_error: if scale == 0.0 { 0.0 } else { norm(&diff) / scale },
            analytic_norm: norm(&analytic),
        });
    }
    model.store.zero_grads();
    Ok(out)
}

/// Dimensions used by the standard check: every size at most 8, all
/// different where the strategy allows, so transposition slips show up.
pub fn check_dims() -> ModelDims {
    ModelDims {
        src_vocab: 12,
        tgt_vocab: 11,
        emb_dim: 6,
        enc_hidden: 8,
        dec_hidden: 7,
        ctx_dim: 8,
        attn_dim: 5,
        readout_dim: 4,
    }
}

/// A seeded example whose window holds two sentences.
pub fn check_example(seed: u64, dims: &ModelDims) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = RESERVED.len();
    let mut sent = |vocab: usize, n: usize| -> Vec<usize> {
        let mut s: Vec<usize> = (0..n).map(|_| rng.gen_range(lo..vocab)).collect();
        s.push(EOS);
        s
    };
    let window = ContextWindow {
        sentences: vec![sent(dims.src_vocab, 3), sent(dims.src_vocab, 2)],
    };
    let source = sent(dims.src_vocab, 4);
    let mut target = vec![BOS];
    target.extend(sent(dims.tgt_vocab, 3));
    TrainingExample {
        doc: 0,
        sentence: 2,
        source,
        target,
        window,
        window_sentences: vec![0, 1],
    }
}

pub fn check_strategy(strategy: Strategy, dims: ModelDims, seed: u64) -> Result<GradCheckReport> {
    check_strategy_scaled(strategy, dims, seed, INIT_SCALE)
}

pub fn check_strategy_scaled(strategy: Strategy, dims: ModelDims, seed: u64, scale: f64) -> Result<GradCheckReport> {
    let cfg = StrategyConfig { strategy, k: 3, dims };
    let mut model: Model<f64> = Model::new(cfg, seed, scale)?;
    let ex = check_example(seed ^ 0x5eed, &dims);
    Ok(GradCheckReport {
        strategy,
        params: check_model(&mut model, &ex, EPSILON)?,
    })
}

pub fn check_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    Strategy::ALL
        .iter()
        .map(|&s| check_strategy(s, check_dims(), seed))
        .collect()
}
