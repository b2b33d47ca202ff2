//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PIPCKPT1"
//! u32 config length, config text (key=value lines)
//! u32 tensor count
//! per tensor: u32 name length, name, u32 rank, u64 dims…, f64 values…
//! ```
//!
//! Tensor names carry a group prefix: `model/`, `prefix/` or `instructor/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pip_core::data::Vocab;
use pip_core::model::{Mode, ModelConfig, ModelWeights};
use pip_core::prefix::{ParseInstructor, PrefixBank};
use pip_core::tensor::{ParamStore, Tensor};
use pip_core::trainer::TrainState;

use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"PIPCKPT1";

/// A trained state together with the vocabulary its ids refer to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: TrainState,
    pub vocab: Vocab,
}

const GROUPS: [&str; 3] = ["model", "prefix", "instructor"];

fn config_text(ck: &Checkpoint) -> String {
    let st = &ck.state;
    let c = st.model_config();
    let reparam = st
        .bank
        .as_ref()
        .and_then(PrefixBank::reparam_width)
        .map_or("none".to_string(), |w| w.to_string());
    let pel = st.instructor.as_ref().map_or(0.0, ParseInstructor::pel_weight);
    let mut s = String::new();
    for (k, v) in [
        ("mode", st.mode.name().to_string()),
        ("l_enc", c.l_enc.to_string()),
        ("l_dec", c.l_dec.to_string()),
        ("dim_h", c.dim_h.to_string()),
        ("n_heads", c.n_heads.to_string()),
        ("dim_ff", c.dim_ff.to_string()),
        ("vocab_size", c.vocab_size.to_string()),
        ("max_len", c.max_len.to_string()),
        ("prefix_len", c.prefix_len.to_string()),
        ("reparam", reparam),
        ("pel_weight", pel.to_string()),
        ("vocab", ck.vocab.tokens().join(" ")),
    ] {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let st = &ck.state;
    if ck.vocab.len() != st.model_config().vocab_size {
        return Err(LabError::Checkpoint(format!(
            "vocabulary has {} tokens but the model expects {}",
            ck.vocab.len(),
            st.model_config().vocab_size
        )));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let text = config_text(ck);
    out.extend_from_slice(&len_u32(text.len())?.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let stores: Vec<(&str, &ParamStore)> = [
        Some((GROUPS[0], st.weights.store())),
        st.bank.as_ref().map(|b| (GROUPS[1], b.store())),
        st.instructor
            .as_ref()
            .filter(|i| !i.store().is_empty())
            .map(|i| (GROUPS[2], i.store())),
    ]
    .into_iter()
    .flatten()
    .collect();
    let count: usize = stores.iter().map(|(_, s)| s.len()).sum();
    out.extend_from_slice(&len_u32(count)?.to_le_bytes());
    for (group, store) in stores {
        for (name, t) in store.iter() {
            let full = format!("{group}/{name}");
            out.extend_from_slice(&len_u32(full.len())?.to_le_bytes());
            out.extend_from_slice(full.as_bytes());
            out.extend_from_slice(&len_u32(t.shape().len())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| LabError::Checkpoint(format!("length {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| LabError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        usize::try_from(u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .map_err(|_| LabError::Checkpoint(format!("{what} does not fit in memory")))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| LabError::Checkpoint(format!("{what} is not UTF-8")))
    }
}

fn parse_config(text: &str) -> Result<BTreeMap<&str, &str>> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LabError::Checkpoint(format!("config line without '=': {line:?}")))?;
        if map.insert(k, v).is_some() {
            return Err(LabError::Checkpoint(format!("duplicate config key {k}")));
        }
    }
    Ok(map)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(LabError::Checkpoint("bad magic bytes".into()));
    }
    let n = r.u32("config length")?;
    let cfg = parse_config(r.utf8(n, "config")?)?;
    let get = |k: &str| -> Result<&str> {
        cfg.get(k)
            .copied()
            .ok_or_else(|| LabError::Checkpoint(format!("config lacks {k}")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| LabError::Checkpoint(format!("config {k} is not an integer")))
    };
    let mode: Mode = get("mode")?
        .parse()
        .map_err(|_| LabError::Checkpoint(format!("unknown mode {:?}", cfg["mode"])))?;
    let model = ModelConfig {
        l_enc: num("l_enc")?,
        l_dec: num("l_dec")?,
        dim_h: num("dim_h")?,
        n_heads: num("n_heads")?,
        dim_ff: num("dim_ff")?,
        vocab_size: num("vocab_size")?,
        max_len: num("max_len")?,
        prefix_len: num("prefix_len")?,
    };
    model.validate().map_err(|e| LabError::Checkpoint(e.to_string()))?;
    let reparam = match get("reparam")? {
        "none" => None,
        s => Some(
            s.parse()
                .map_err(|_| LabError::Checkpoint(format!("bad reparam width {s:?}")))?,
        ),
    };
    let pel_weight: f64 = get("pel_weight")?
        .parse()
        .map_err(|_| LabError::Checkpoint("bad pel_weight".into()))?;
    let vocab = Vocab::from_tokens(get("vocab")?.split(' ').map(str::to_string).collect())
        .map_err(|e| LabError::Checkpoint(e.to_string()))?;
    if vocab.len() != model.vocab_size {
        return Err(LabError::Checkpoint("vocabulary size disagrees with the model".into()));
    }

    let mut stores: BTreeMap<&str, ParamStore> = GROUPS.iter().map(|g| (*g, ParamStore::new())).collect();
    let count = r.u32("tensor count")?;
    for _ in 0..count {
        let n = r.u32("name length")?;
        let full = r.utf8(n, "tensor name")?;
        let (group, name) = full
            .split_once('/')
            .filter(|(g, _)| GROUPS.contains(g))
            .ok_or_else(|| LabError::Checkpoint(format!("tensor {full:?} has no known group prefix")))?;
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| LabError::Checkpoint(format!("{full}: shape overflows")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| LabError::Checkpoint(format!("{full}: shape overflows")))?,
            full,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| LabError::Checkpoint(format!("{full}: {e}")))?;
        let store = stores.get_mut(group).expect("known group");
        if store.find(name).is_some() {
            return Err(LabError::Checkpoint(format!("duplicate tensor {full}")));
        }
        store.add(name, t);
    }
    if r.pos != bytes.len() {
        return Err(LabError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let ck = |e: pip_core::Error| LabError::Checkpoint(e.to_string());
    let weights = ModelWeights::from_store(&model, stores.remove("model").expect("group")).map_err(ck)?;
    let prefix = stores.remove("prefix").expect("group");
    let bank = if mode.uses_prefix() {
        Some(PrefixBank::from_store(&model, reparam, prefix).map_err(ck)?)
    } else if !prefix.is_empty() {
        return Err(LabError::Checkpoint(format!("{mode} checkpoint carries prefix tensors")));
    } else {
        None
    };
    let instr = stores.remove("instructor").expect("group");
    let instructor = match mode {
        Mode::PipIndirect => Some(ParseInstructor::from_store(&model, pel_weight, instr).map_err(ck)?),
        _ if !instr.is_empty() => {
            return Err(LabError::Checkpoint(format!("{mode} checkpoint carries instructor tensors")))
        }
        Mode::PipDirect => Some(ParseInstructor::direct()),
        _ => None,
    };
    let state = TrainState::from_parts(mode, weights, bank, instructor).map_err(ck)?;
    Ok(Checkpoint { state, vocab })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, encode(ck)?).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(|e| LabError::io(path, e))?)
}
