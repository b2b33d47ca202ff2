use alloc::format;
use alloc::vec::Vec;

use super::attention::{attention_with_prefix, AttentionSite, Mask, SiteKind};
use super::{AttnIds, Bound, FfIds, LnIds, ModelWeights, LN_EPS};
use crate::data::{shift_right, EncodedExample, PAD};
use crate::error::{Error, Result};
use crate::prefix::{PrefixSpec, PrefixView};
use crate::tensor::{ParamId, Tape, Tensor, Var};

pub(crate) fn linear(tape: &mut Tape<'_>, b: &Bound<'_>, x: Var, w: ParamId, bias: ParamId) -> Result<Var> {
    let y = tape.matmul(x, b.var(w))?;
    tape.add_row(y, b.var(bias))
}

fn norm(tape: &mut Tape<'_>, b: &Bound<'_>, x: Var, ids: LnIds) -> Result<Var> {
    tape.layer_norm(x, b.var(ids.g), b.var(ids.b), LN_EPS)
}

#[allow(clippy::too_many_arguments)]
fn attend(
    tape: &mut Tape<'_>,
    b: &Bound<'_>,
    ids: &AttnIds,
    xq: Var,
    xkv: Var,
    prefix: Option<(Var, Var)>,
    mask: Option<&Mask>,
) -> Result<Var> {
    let q = linear(tape, b, xq, ids.wq, ids.bq)?;
    let k = tape.matmul(xkv, b.var(ids.wk))?;
    let v = linear(tape, b, xkv, ids.wv, ids.bv)?;
    let (kp, vp) = prefix.map_or((None, None), |(k, v)| (Some(k), Some(v)));
    let a = attention_with_prefix(tape, q, k, v, kp, vp, b.config().n_heads, mask)?;
    linear(tape, b, a, ids.wo, ids.bo)
}

fn feed_forward(tape: &mut Tape<'_>, b: &Bound<'_>, x: Var, ids: &FfIds) -> Result<Var> {
    let h = linear(tape, b, x, ids.w1, ids.b1)?;
    let h = tape.gelu(h);
    linear(tape, b, h, ids.w2, ids.b2)
}

fn embed(tape: &mut Tape<'_>, b: &Bound<'_>, ids: &[usize]) -> Result<Var> {
    let cfg = b.config();
    if ids.is_empty() {
        return Err(Error::EmptyBatch("empty token sequence"));
    }
    if ids.len() > cfg.max_len {
        return Err(Error::Length {
            len: ids.len(),
            max: cfg.max_len,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(Error::Contract(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let layout = b.layout();
    let tok = tape.gather_rows(b.var(layout.tok), ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = tape.gather_rows(b.var(layout.pos), &positions)?;
    tape.add(tok, pos)
}

fn site_prefix(prefix: Option<&PrefixView>, kind: SiteKind, layer: usize) -> Option<(Var, Var)> {
    prefix.and_then(|p| p.get(AttentionSite::new(kind, layer)))
}

fn padding_mask(rows: usize, keys: &[usize]) -> Option<Mask> {
    keys.contains(&PAD).then(|| {
        let valid: Vec<bool> = keys.iter().map(|&t| t != PAD).collect();
        Mask::keys(rows, &valid)
    })
}

/// Final-normalized encoder states, one row per input token.
pub fn encode(tape: &mut Tape<'_>, b: &Bound<'_>, ids: &[usize], prefix: Option<&PrefixView>) -> Result<Var> {
    let layout = b.layout();
    let mut x = embed(tape, b, ids)?;
    let mask = padding_mask(ids.len(), ids);
    for (i, layer) in layout.enc.iter().enumerate() {
        let h = norm(tape, b, x, layer.ln1)?;
        let pre = site_prefix(prefix, SiteKind::EncoderSelf, i + 1);
        let a = attend(tape, b, &layer.attn, h, h, pre, mask.as_ref())?;
        x = tape.add(x, a)?;
        let h = norm(tape, b, x, layer.ln2)?;
        let f = feed_forward(tape, b, h, &layer.ff)?;
        x = tape.add(x, f)?;
    }
    norm(tape, b, x, layout.enc_ln)
}

/// Final-normalized decoder states for a BOS-prefixed decoder input.
pub fn decode(
    tape: &mut Tape<'_>,
    b: &Bound<'_>,
    memory: Var,
    memory_ids: Option<&[usize]>,
    dec_in: &[usize],
    prefix: Option<&PrefixView>,
) -> Result<Var> {
    let layout = b.layout();
    let n = dec_in.len();
    let mut x = embed(tape, b, dec_in)?;
    let causal = Mask::causal(n);
    let cross_mask = memory_ids.and_then(|ids| padding_mask(n, ids));
    for (i, layer) in layout.dec.iter().enumerate() {
        let l = i + 1;
        let h = norm(tape, b, x, layer.ln1)?;
        let pre = site_prefix(prefix, SiteKind::DecoderSelf, l);
        let a = attend(tape, b, &layer.self_attn, h, h, pre, Some(&causal))?;
        x = tape.add(x, a)?;
        let h = norm(tape, b, x, layer.ln2)?;
        let pre = site_prefix(prefix, SiteKind::DecoderCross, l);
        let c = attend(tape, b, &layer.cross, h, memory, pre, cross_mask.as_ref())?;
        x = tape.add(x, c)?;
        let h = norm(tape, b, x, layer.ln3)?;
        let f = feed_forward(tape, b, h, &layer.ff)?;
        x = tape.add(x, f)?;
    }
    norm(tape, b, x, layout.dec_ln)
}

/// Vocabulary scores through the tied embedding.
pub fn logits(tape: &mut Tape<'_>, b: &Bound<'_>, hidden: Var) -> Result<Var> {
    tape.matmul_bt(hidden, b.var(b.layout().tok))
}

/// Teacher-forced summed token NLL and the number of scored tokens.
pub fn forward_loss(
    tape: &mut Tape<'_>,
    b: &Bound<'_>,
    ex: &EncodedExample,
    prefix: Option<&PrefixView>,
) -> Result<(Var, usize)> {
    if ex.target.is_empty() {
        return Err(Error::EmptyBatch("empty target sequence"));
    }
    let memory = encode(tape, b, &ex.input, prefix)?;
    let dec_in = shift_right(&ex.target);
    let h = decode(tape, b, memory, Some(&ex.input), &dec_in, prefix)?;
    let z = logits(tape, b, h)?;
    tape.cross_entropy_sum(z, &ex.target, PAD)
}

/// Mean token NLL of a single example.
pub fn forward_loss_mean(
    tape: &mut Tape<'_>,
    b: &Bound<'_>,
    ex: &EncodedExample,
    prefix: Option<&PrefixView>,
) -> Result<Var> {
    let (sum, count) = forward_loss(tape, b, ex, prefix)?;
    Ok(tape.scale(sum, 1.0 / count as f64))
}

/// Encoder output as a plain tensor, with an optional prefix configuration.
pub fn encode_tensor(weights: &ModelWeights, ids: &[usize], prefix: Option<&PrefixSpec<'_>>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = weights.bind(&mut tape);
    let view = match prefix {
        Some(p) => Some(p.view(&mut tape, weights.config())?),
        None => None,
    };
    let out = encode(&mut tape, &b, ids, view.as_ref())?;
    Ok(tape.to_tensor(out))
}
