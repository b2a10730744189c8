//! Run configuration: flat `key = value` text with `#` comments.
//!
//! A `profile` key (`full` or `toy`) selects the base defaults; every other
//! key overrides one field. Without an explicit `seed`, the `CTXNMT_SEED`
//! environment variable supplies it.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelDims, Strategy, StrategyConfig};

pub const SEED_ENV: &str = "CTXNMT_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub strategy: Strategy,
    pub k: usize,
    pub src_vocab_cap: usize,
    pub tgt_vocab_cap: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub ctx_dim: usize,
    pub attn_dim: usize,
    pub readout_dim: usize,
    pub init_scale: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub patience: usize,
    pub beam: usize,
    pub seed: u64,
    pub precision: Precision,
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl RunConfig {
    /// Full-size settings: K = 3, 35K vocabularies, sentences up to 80 words,
    /// batch 80, embeddings 600, hidden layers 1000.
    pub fn full() -> Self {
        Self {
            profile: "full".into(),
            strategy: Strategy::GatedAux,
            k: 3,
            src_vocab_cap: 35_000,
            tgt_vocab_cap: 35_000,
            max_len: 80,
            batch_size: 80,
            emb_dim: 600,
            enc_hidden: 1000,
            dec_hidden: 1000,
            ctx_dim: 1000,
            attn_dim: 1000,
            readout_dim: 600,
            init_scale: 0.08,
            lr: 1e-3,
            clip_norm: 1.0,
            epochs: 20,
            patience: 3,
            beam: 5,
            seed: env_seed().unwrap_or(1),
            precision: Precision::F32,
        }
    }

    /// Desk-scale settings for synthetic corpora.
    pub fn toy() -> Self {
        Self {
            profile: "toy".into(),
            src_vocab_cap: 1000,
            tgt_vocab_cap: 1000,
            max_len: 40,
            batch_size: 32,
            emb_dim: 32,
            enc_hidden: 64,
            dec_hidden: 64,
            ctx_dim: 64,
            attn_dim: 64,
            readout_dim: 32,
            init_scale: 0.2,
            lr: 3e-3,
            clip_norm: 5.0,
            epochs: 30,
            patience: 8,
            ..Self::full()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            _ => Err(Error::Config(format!("unknown profile {name:?}"))),
        }
    }

    pub fn strategy_config(&self, src_vocab: usize, tgt_vocab: usize) -> StrategyConfig {
        StrategyConfig {
            strategy: self.strategy,
            k: self.k,
            dims: ModelDims {
                src_vocab,
                tgt_vocab,
                emb_dim: self.emb_dim,
                enc_hidden: self.enc_hidden,
                dec_hidden: self.dec_hidden,
                ctx_dim: self.ctx_dim,
                attn_dim: self.attn_dim,
                readout_dim: self.readout_dim,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.src_vocab_cap < 5 || self.tgt_vocab_cap < 5 {
            return bad("vocabulary caps must be at least 5".into());
        }
        if self.max_len == 0 || self.batch_size == 0 || self.beam == 0 {
            return bad("max_len, batch_size and beam must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad("lr and clip_norm must be positive".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative".into());
        }
        // Vocabulary sizes only matter for the size check, which needs >= 5.
        self.strategy_config(5, 5).validate()
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "profile" => {
                let seed = self.seed;
                *self = Self::profile(value)?;
                self.seed = seed;
            }
            "strategy" => self.strategy = value.parse()?,
            "k" => self.k = num(key, value)?,
            "src_vocab_cap" => self.src_vocab_cap = num(key, value)?,
            "tgt_vocab_cap" => self.tgt_vocab_cap = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "emb_dim" => self.emb_dim = num(key, value)?,
            "enc_hidden" => self.enc_hidden = num(key, value)?,
            "dec_hidden" => self.dec_hidden = num(key, value)?,
            "ctx_dim" => self.ctx_dim = num(key, value)?,
            "attn_dim" => self.attn_dim = num(key, value)?,
            "readout_dim" => self.readout_dim = num(key, value)?,
            "hidden" => {
                let h: usize = num(key, value)?;
                self.enc_hidden = h;
                self.dec_hidden = h;
                self.ctx_dim = h;
                self.attn_dim = h;
            }
            "init_scale" => self.init_scale = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "beam" => self.beam = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses config text. `profile` is applied first wherever it appears.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::full();
        let mut seen = std::collections::HashSet::new();
        let at = |line: usize, e: Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: match e {
                Error::Config(m) => m,
                other => other.to_string(),
            },
        };
        for (line, k, _) in &entries {
            if !seen.insert(k.clone()) {
                return Err(at(*line, Error::Config(format!("duplicate key {k:?}"))));
            }
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 == "profile") {
            cfg.set(k, v).map_err(|e| at(*line, e))?;
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 != "profile") {
            cfg.set(k, v).map_err(|e| at(*line, e))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, path)
    }

    /// Every field, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let fields: [(&str, String); 21] = [
            ("profile", self.profile.clone()),
            ("strategy", self.strategy.to_string()),
            ("k", self.k.to_string()),
            ("src_vocab_cap", self.src_vocab_cap.to_string()),
            ("tgt_vocab_cap", self.tgt_vocab_cap.to_string()),
            ("max_len", self.max_len.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("emb_dim", self.emb_dim.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("ctx_dim", self.ctx_dim.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("readout_dim", self.readout_dim.to_string()),
            ("init_scale", format!("{:?}", self.init_scale)),
            ("lr", format!("{:?}", self.lr)),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("beam", self.beam.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
        ];
        fields.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_text(text, Path::new("run.cfg"))
    }

    #[test]
    fn full_defaults() {
        let c = RunConfig::full();
        assert_eq!((c.k, c.max_len, c.batch_size), (3, 80, 80));
        assert_eq!((c.emb_dim, c.enc_hidden, c.dec_hidden), (600, 1000, 1000));
        assert_eq!((c.src_vocab_cap, c.tgt_vocab_cap), (35_000, 35_000));
        c.validate().unwrap();
        RunConfig::toy().validate().unwrap();
    }

    #[test]
    fn profile_applies_before_overrides() {
        let c = parse("emb_dim = 16  # small\nprofile = toy\n\n# comment\nstrategy = aux\nseed = 9\n").unwrap();
        assert_eq!(c.emb_dim, 16);
        assert_eq!(c.enc_hidden, 64);
        assert_eq!(c.strategy, Strategy::Aux);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn round_trip() {
        let c = parse("profile = toy\nstrategy = init-both-gated-aux\nlr = 0.0025\nprecision = f64\nseed = 4\n").unwrap();
        let back = parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("profile = toy\nk = three\n").unwrap_err();
        assert!(e.to_string().starts_with("run.cfg:2:"), "{e}");
        let e = parse("bogus = 1\n").unwrap_err();
        assert!(e.to_string().starts_with("run.cfg:1:"), "{e}");
        let e = parse("k = 1\nk = 2\n").unwrap_err();
        assert!(e.to_string().starts_with("run.cfg:2:"), "{e}");
        assert!(parse("no equals sign\n").is_err());
        assert!(parse("lr = 0\n").is_err());
        assert!(parse("strategy = init-enc\nctx_dim = 10\n").is_err());
        assert!(parse("strategy = aux\nk = 0\n").is_err());
        assert!(parse("strategy = baseline\nk = 0\n").is_ok());
    }
}
