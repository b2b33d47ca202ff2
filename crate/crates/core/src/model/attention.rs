use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

impl SiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SiteKind::EncoderSelf => "enc_self",
            SiteKind::DecoderSelf => "dec_self",
            SiteKind::DecoderCross => "dec_cross",
        }
    }
}

/// One place where a prefix pair attaches; `layer` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttentionSite {
    pub kind: SiteKind,
    pub layer: usize,
}

impl AttentionSite {
    pub fn new(kind: SiteKind, layer: usize) -> Self {
        AttentionSite { kind, layer }
    }
}

impl fmt::Display for AttentionSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.kind.name(), self.layer)
    }
}

/// Which sequence keys each query may see. Prefix keys are always visible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

const MASKED: f64 = -1e9;

impl Mask {
    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|x| x % n <= x / n).collect();
        Mask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    /// Every query sees exactly the keys flagged valid (e.g. non-PAD).
    pub fn keys(rows: usize, valid: &[bool]) -> Self {
        let cols = valid.len();
        let allowed = (0..rows * cols).map(|x| valid[x % cols]).collect();
        Mask {
            rows,
            cols,
            allowed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.cols + k]
    }

    /// Additive score offsets over `prefix_len` prefix keys then the sequence.
    fn additive(&self, prefix_len: usize) -> Tensor {
        let width = prefix_len + self.cols;
        let mut data = vec![0.0; self.rows * width];
        for q in 0..self.rows {
            for k in 0..self.cols {
                if !self.allows(q, k) {
                    data[q * width + prefix_len + k] = MASKED;
                }
            }
        }
        Tensor::new(vec![self.rows, width], data).expect("mask dims are positive")
    }
}

fn dims(tape: &Tape<'_>, v: Var, what: &'static str) -> Result<(usize, usize)> {
    match tape.shape(v) {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} must be a matrix, got {s:?}"))),
    }
}

/// Multi-head scaled dot-product attention over `concat(k_prefix, k)` and
/// `concat(v_prefix, v)`. Inputs are already projected; the output is the
/// concatenation of head outputs, before any output projection.
pub fn attention_with_prefix(
    tape: &mut Tape<'_>,
    q: Var,
    k: Var,
    v: Var,
    k_prefix: Option<Var>,
    v_prefix: Option<Var>,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<Var> {
    attention_with_weights(tape, q, k, v, k_prefix, v_prefix, n_heads, mask).map(|(o, _)| o)
}

/// [`attention_with_prefix`] that also returns each head's weight matrix.
#[allow(clippy::too_many_arguments)]
pub fn attention_with_weights(
    tape: &mut Tape<'_>,
    q: Var,
    k: Var,
    v: Var,
    k_prefix: Option<Var>,
    v_prefix: Option<Var>,
    n_heads: usize,
    mask: Option<&Mask>,
) -> Result<(Var, Vec<Var>)> {
    let (n_q, d) = dims(tape, q, "queries")?;
    let (n_k, dk) = dims(tape, k, "keys")?;
    let (n_v, dv) = dims(tape, v, "values")?;
    if dk != d || dv != d || n_v != n_k {
        return Err(Error::dim("attention", tape.shape(k), tape.shape(v)));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Contract(format!("{d} columns do not split into {n_heads} heads")));
    }
    let (keys, values, p) = match (k_prefix, v_prefix) {
        (None, None) => (k, v, 0),
        (Some(kp), Some(vp)) => {
            if tape.shape(kp) != tape.shape(vp) {
                return Err(Error::dim("prefix", tape.shape(kp), tape.shape(vp)));
            }
            let (p, pd) = dims(tape, kp, "key prefix")?;
            if pd != d {
                return Err(Error::dim("prefix", tape.shape(kp), tape.shape(k)));
            }
            (tape.concat_rows(&[kp, k])?, tape.concat_rows(&[vp, v])?, p)
        }
        _ => {
            return Err(Error::Contract(
                "key and value prefixes must be given together".into(),
            ))
        }
    };
    let offsets = match mask {
        Some(m) => {
            if m.shape() != (n_q, n_k) {
                return Err(Error::Dimension {
                    op: "mask",
                    lhs: vec![n_q, n_k],
                    rhs: vec![m.rows, m.cols],
                });
            }
            Some(tape.constant(m.additive(p)))
        }
        None => None,
    };
    let dh = d / n_heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, keys, values)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(keys, h * dh, dh)?,
                tape.slice_cols(values, h * dh, dh)?,
            )
        };
        let raw = tape.matmul_bt(qh, kh)?;
        let mut scores = tape.scale(raw, scale);
        if let Some(o) = offsets {
            scores = tape.add(scores, o)?;
        }
        let a = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let out = if n_heads == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    Ok((out, weights))
}
