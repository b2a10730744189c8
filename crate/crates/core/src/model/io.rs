//! Binary checkpoints.
//!
//! Layout (integers are u64 little-endian):
//!
//! ```text
//! "CTXNMT01"
//! len, metadata      `key = value` lines, UTF-8
//! len, source vocab  one token per line
//! len, target vocab
//! count
//! per parameter: name len, name, rank, extents..., f32 LE values
//! sha256 of every preceding byte (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{Model, ModelDims, Strategy, StrategyConfig};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"CTXNMT01";

pub struct Checkpoint {
    pub model: Model<f32>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub metadata: IndexMap<String, String>,
}

fn put(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put(buf, b.len() as u64);
    buf.extend_from_slice(b);
}

pub fn to_bytes<T: Real>(
    model: &Model<T>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    extra: &[(&str, String)],
) -> Result<Vec<u8>> {
    let d = model.dims();
    if d.src_vocab != src_vocab.len() || d.tgt_vocab != tgt_vocab.len() {
        return Err(Error::Contract("vocabulary sizes differ from model dimensions".into()));
    }
    let mut meta: IndexMap<String, String> = IndexMap::new();
    let mut set = |k: &str, v: String| {
        meta.insert(k.to_string(), v);
    };
    set("strategy", model.strategy().name().into());
    set("k", model.config.k.to_string());
    set("src_vocab", d.src_vocab.to_string());
    set("tgt_vocab", d.tgt_vocab.to_string());
    set("emb_dim", d.emb_dim.to_string());
    set("enc_hidden", d.enc_hidden.to_string());
    set("dec_hidden", d.dec_hidden.to_string());
    set("ctx_dim", d.ctx_dim.to_string());
    set("attn_dim", d.attn_dim.to_string());
    set("readout_dim", d.readout_dim.to_string());
    set("seed", model.store.rng_seed.to_string());
    set("src_vocab_sha256", src_vocab.sha256());
    set("tgt_vocab_sha256", tgt_vocab.sha256());
    set("param_count", model.store.num_scalars().to_string());
    for (k, v) in extra {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Contract(format!("metadata entry {k:?} is not a single line")));
        }
        meta.entry(k.to_string()).or_insert_with(|| v.clone());
    }
    let text: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();

    let mut buf = Vec::with_capacity(model.store.num_scalars() * 4 + 4096);
    buf.extend_from_slice(MAGIC);
    put_bytes(&mut buf, text.as_bytes());
    put_bytes(&mut buf, src_vocab.to_text().as_bytes());
    put_bytes(&mut buf, tgt_vocab.to_text().as_bytes());
    put(&mut buf, model.store.len() as u64);
    for (name, p) in model.store.iter() {
        put_bytes(&mut buf, name.as_bytes());
        put(&mut buf, p.value.shape().len() as u64);
        for &e in p.value.shape() {
            put(&mut buf, e as u64);
        }
        for x in p.value.data() {
            buf.extend_from_slice(&(x.f64() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save<T: Real>(
    path: &Path,
    model: &Model<T>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    extra: &[(&str, String)],
) -> Result<()> {
    fs::write(path, to_bytes(model, src_vocab, tgt_vocab, extra)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?, path)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Integrity {
            offset: self.pos as u64,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!("truncated while reading {what}"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)?;
        if n > (self.buf.len() - self.pos) as u64 {
            self.pos = at;
            return self.fail(format!("{what} length {n} exceeds file size"));
        }
        Ok(n as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.len(what)?;
        let at = self.pos;
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| Error::Integrity {
            offset: at as u64,
            msg: format!("{what} is not valid UTF-8"),
        })
    }
}

pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("not a model file (bad magic)");
    }
    if buf.len() < 8 + 32 {
        return r.fail("truncated file");
    }
    let body = buf.len() - 32;
    if Sha256::digest(&buf[..body]).as_slice() != &buf[body..] {
        r.pos = body;
        return r.fail("checksum mismatch");
    }
    r.buf = &buf[..body];

    let meta_at = r.pos + 8;
    let text = r.text("metadata")?;
    let mut meta = IndexMap::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once(" = ") else {
            r.pos = meta_at;
            return r.fail(format!("malformed metadata line {line:?}"));
        };
        meta.insert(k.to_string(), v.to_string());
    }
    let src_text = r.text("source vocabulary")?;
    let tgt_text = r.text("target vocabulary")?;
    let src_vocab = Vocabulary::from_text(src_text, path)?;
    let tgt_vocab = Vocabulary::from_text(tgt_text, path)?;

    let get = |k: &str| -> Result<&String> {
        meta.get(k).ok_or_else(|| Error::Integrity {
            offset: meta_at as u64,
            msg: format!("metadata lacks {k}"),
        })
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::Integrity {
            offset: meta_at as u64,
            msg: format!("metadata {k} is not a number"),
        })
    };
    let dims = ModelDims {
        src_vocab: num("src_vocab")?,
        tgt_vocab: num("tgt_vocab")?,
        emb_dim: num("emb_dim")?,
        enc_hidden: num("enc_hidden")?,
        dec_hidden: num("dec_hidden")?,
        ctx_dim: num("ctx_dim")?,
        attn_dim: num("attn_dim")?,
        readout_dim: num("readout_dim")?,
    };
    let config = StrategyConfig {
        strategy: get("strategy")?.parse::<Strategy>()?,
        k: num("k")?,
        dims,
    };
    if src_vocab.sha256() != *get("src_vocab_sha256")? || tgt_vocab.sha256() != *get("tgt_vocab_sha256")? {
        r.pos = meta_at;
        return r.fail("embedded vocabulary does not match its recorded hash");
    }
    if src_vocab.len() != dims.src_vocab || tgt_vocab.len() != dims.tgt_vocab {
        r.pos = meta_at;
        return r.fail("vocabulary sizes differ from recorded dimensions");
    }

    let count = r.u64("parameter count")?;
    let mut store = ParameterStore::new(num("seed").unwrap_or(0) as u64);
    for _ in 0..count {
        let at = r.pos;
        let name = r.text("parameter name")?.to_string();
        let rank = r.u64("rank")?;
        if rank == 0 || rank > 4 {
            return r.fail(format!("parameter {name} has rank {rank}"));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let Some(n) = n.filter(|&n| n > 0 && n <= (r.buf.len() - r.pos) / 4) else {
            return r.fail(format!("parameter {name} has impossible shape {shape:?}"));
        };
        let raw = r.take(n * 4, "parameter values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            r.pos = at;
            return r.fail(format!("parameter {name} holds non-finite values"));
        }
        let t = Tensor::new(&shape, data)?;
        if store.insert(&name, t).is_err() {
            r.pos = at;
            return r.fail(format!("duplicate parameter {name}"));
        }
    }
    if r.pos != r.buf.len() {
        return r.fail("trailing bytes after parameters");
    }
    if store.num_scalars() != num("param_count")? {
        return r.fail("parameter count differs from metadata");
    }
    let model = Model::from_store(config, store).map_err(|e| Error::Integrity {
        offset: 0,
        msg: e.to_string(),
    })?;
    Ok(Checkpoint {
        model,
        src_vocab,
        tgt_vocab,
        metadata: meta,
    })
}
