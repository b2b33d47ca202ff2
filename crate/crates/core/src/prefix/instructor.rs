use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{attention_with_prefix, ModelConfig};
use crate::rng::{self, Stream};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstructorKind {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ids {
    /// `wq bq wk bk wv bv wo bo` of the prefix self-attention layer.
    attn: [ParamId; 8],
    head_w: ParamId,
    head_b: ParamId,
}

/// Parse-instruction state: nothing for direct substitution; an attention
/// layer, a projection head and the loss weight for the indirect variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseInstructor {
    kind: InstructorKind,
    store: ParamStore,
    ids: Option<Ids>,
    n_heads: usize,
    pel_weight: f64,
}

impl ParseInstructor {
    pub fn direct() -> Self {
        ParseInstructor {
            kind: InstructorKind::Direct,
            store: ParamStore::new(),
            ids: None,
            n_heads: 1,
            pel_weight: 0.0,
        }
    }

    pub fn indirect(config: &ModelConfig, seed: u64, pel_weight: f64) -> Result<Self> {
        config.validate()?;
        if !(pel_weight >= 0.0) || !pel_weight.is_finite() {
            return Err(Error::Contract(format!("pel weight must be non-negative, got {pel_weight}")));
        }
        let d = config.dim_h;
        let mut rng = rng::stream(seed, Stream::InstructorInit);
        let mut store = ParamStore::new();
        let std = 1.0 / libm::sqrt(d as f64);
        let mut attn = Vec::with_capacity(8);
        for n in ["q", "k", "v", "o"] {
            attn.push(store.add(format!("attn.w{n}"), Tensor::randn(&[d, d], std, &mut rng)));
            attn.push(store.add(format!("attn.b{n}"), Tensor::zeros(&[d])));
        }
        let head_w = store.add("head.w", Tensor::randn(&[d, d], std, &mut rng));
        let head_b = store.add("head.b", Tensor::zeros(&[d]));
        store.set_requires_grad(true);
        Ok(ParseInstructor {
            kind: InstructorKind::Indirect,
            store,
            ids: Some(Ids {
                attn: attn.try_into().expect("eight projections"),
                head_w,
                head_b,
            }),
            n_heads: config.n_heads,
            pel_weight,
        })
    }

    /// Rebuilds an indirect instructor from stored tensors.
    pub fn from_store(config: &ModelConfig, pel_weight: f64, store: ParamStore) -> Result<Self> {
        let mut me = ParseInstructor::indirect(config, 0, pel_weight)?;
        if store.len() != me.store.len() {
            return Err(Error::Shape(format!(
                "expected {} instructor tensors, found {}",
                me.store.len(),
                store.len()
            )));
        }
        for id in me.store.ids() {
            let name = me.store.name(id);
            let src = store
                .find(name)
                .ok_or_else(|| Error::Shape(format!("missing instructor tensor {name}")))?;
            let t = store.get(src);
            if t.shape() != me.store.get(id).shape() {
                return Err(Error::dim("load", me.store.get(id).shape(), t.shape()));
            }
            let mut t = t.clone();
            t.set_requires_grad(true);
            *me.store.get_mut(id) = t;
        }
        Ok(me)
    }

    pub fn kind(&self) -> InstructorKind {
        self.kind
    }

    pub fn pel_weight(&self) -> f64 {
        self.pel_weight
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn numel(&self) -> usize {
        self.store.numel()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<BoundInstructor> {
        let leaves = self.store.register(tape);
        self.bind_vars(leaves)
    }

    /// Wraps caller-provided variables, one per stored tensor in store order.
    pub fn bind_vars(&self, leaves: Vec<Var>) -> Result<BoundInstructor> {
        let ids = self
            .ids
            .ok_or_else(|| Error::Contract("direct instructors have no learnable layers".into()))?;
        if leaves.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} instructor tensors",
                leaves.len(),
                self.store.len()
            )));
        }
        let v = |id: ParamId| leaves[id.index()];
        Ok(BoundInstructor {
            attn: ids.attn.map(v),
            head_w: v(ids.head_w),
            head_b: v(ids.head_b),
            n_heads: self.n_heads,
            leaves,
        })
    }
}

/// Instructor tensors registered on a tape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundInstructor {
    attn: [Var; 8],
    head_w: Var,
    head_b: Var,
    n_heads: usize,
    leaves: Vec<Var>,
}

impl BoundInstructor {
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

}

fn affine(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Prefix self-attention `A(k_m, v_m, e_t)`: parse-encoding rows query keys
/// `concat(k_m, e_t·Wk)` and values `concat(v_m, e_t·Wv)`.
pub fn prefix_attend(tape: &mut Tape<'_>, a: &BoundInstructor, k_m: Var, v_m: Var, e_t: Var) -> Result<Var> {
    let [wq, bq, wk, bk, wv, bv, wo, bo] = a.attn;
    let q = affine(tape, e_t, wq, bq)?;
    let k = affine(tape, e_t, wk, bk)?;
    let v = affine(tape, e_t, wv, bv)?;
    let out = attention_with_prefix(tape, q, k, v, Some(k_m), Some(v_m), a.n_heads, None)?;
    affine(tape, out, wo, bo)
}

/// Mean row-wise cosine distance between `H(A(k_m, v_m, e_t))` and `e_t`.
pub fn pel_loss(tape: &mut Tape<'_>, a: &BoundInstructor, k_m: Var, v_m: Var, e_t: Var) -> Result<Var> {
    let attended = prefix_attend(tape, a, k_m, v_m, e_t)?;
    let phi = affine(tape, attended, a.head_w, a.head_b)?;
    let d = tape.cosine_distance_rows(phi, e_t)?;
    Ok(tape.mean(d))
}

/// `lm + λ·pel`.
pub fn combined_loss(tape: &mut Tape<'_>, lm: Var, pel: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract(format!("pel weight must be non-negative, got {lambda}")));
    }
    let weighted = tape.scale(pel, lambda);
    tape.add(lm, weighted)
}
