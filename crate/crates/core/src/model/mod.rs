//! Encoder-decoder Transformer with prefix injection at every attention site.

mod attention;
mod beam;
mod transformer;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::prefix::{ParseInstructor, PrefixBank};
use crate::rng::{self, Stream};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use attention::{attention_with_prefix, attention_with_weights, AttentionSite, Mask, SiteKind};
pub use beam::{generate_beam, BeamConfig, BeamOutput, ModelScorer, StepScorer};
pub use transformer::{decode, encode, encode_tensor, forward_loss, forward_loss_mean, logits};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub l_enc: usize,
    pub l_dec: usize,
    pub dim_h: usize,
    pub n_heads: usize,
    pub dim_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub prefix_len: usize,
}

impl ModelConfig {
    /// Two-layer toy model sized for the synthetic corpus.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            l_enc: 2,
            l_dec: 2,
            dim_h: 32,
            n_heads: 2,
            dim_ff: 64,
            vocab_size,
            max_len: 64,
            prefix_len: 8,
        }
    }

    /// Smallest configuration exercised by gradient checks.
    pub fn micro(vocab_size: usize) -> Self {
        ModelConfig {
            l_enc: 1,
            l_dec: 1,
            dim_h: 8,
            n_heads: 2,
            dim_ff: 16,
            vocab_size,
            max_len: 16,
            prefix_len: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_enc", self.l_enc),
            ("l_dec", self.l_dec),
            ("dim_h", self.dim_h),
            ("n_heads", self.n_heads),
            ("dim_ff", self.dim_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("prefix_len", self.prefix_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Contract(format!("{name} must be positive")));
            }
        }
        if self.dim_h % self.n_heads != 0 {
            return Err(Error::Contract(format!(
                "dim_h {} not divisible by n_heads {}",
                self.dim_h, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim_h / self.n_heads
    }

    /// Every attention site: encoder-self, then decoder-self, then decoder-cross.
    pub fn sites(&self) -> Vec<AttentionSite> {
        let mut out = Vec::with_capacity(self.l_enc + 2 * self.l_dec);
        out.extend((1..=self.l_enc).map(|l| AttentionSite::new(SiteKind::EncoderSelf, l)));
        out.extend((1..=self.l_dec).map(|l| AttentionSite::new(SiteKind::DecoderSelf, l)));
        out.extend((1..=self.l_dec).map(|l| AttentionSite::new(SiteKind::DecoderCross, l)));
        out
    }

    /// The last encoder layer's self-attention site.
    pub fn last_encoder_site(&self) -> AttentionSite {
        AttentionSite::new(SiteKind::EncoderSelf, self.l_enc)
    }
}

/// Which parameters a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Finetune,
    Prefix,
    PipDirect,
    PipIndirect,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Finetune, Mode::Prefix, Mode::PipDirect, Mode::PipIndirect];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Finetune => "finetune",
            Mode::Prefix => "prefix",
            Mode::PipDirect => "pip-direct",
            Mode::PipIndirect => "pip-indirect",
        }
    }

    pub fn uses_prefix(self) -> bool {
        self != Mode::Finetune
    }

    pub fn uses_parse_encoding(self) -> bool {
        matches!(self, Mode::PipDirect | Mode::PipIndirect)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Contract(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LnIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    /// No key bias: it shifts every score of a query equally, so softmax
    /// ignores it and it would never receive gradient.
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FfIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncLayer {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ff: FfIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecLayer {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross: AttnIds,
    pub ln3: LnIds,
    pub ff: FfIds,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tok: ParamId,
    pub pos: ParamId,
    pub enc: Vec<EncLayer>,
    pub enc_ln: LnIds,
    pub dec: Vec<DecLayer>,
    pub dec_ln: LnIds,
}

struct Builder<'r> {
    store: ParamStore,
    rng: &'r mut rng::StreamRng,
}

impl Builder<'_> {
    fn randn(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.store.add(name, t)
    }

    fn filled(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        self.store.add(name, Tensor::filled(shape, v))
    }

    fn ln(&mut self, p: &str, d: usize) -> LnIds {
        LnIds {
            g: self.filled(format!("{p}.g"), &[d], 1.0),
            b: self.filled(format!("{p}.b"), &[d], 0.0),
        }
    }

    /// Square projections scaled to preserve activation variance.
    fn attn(&mut self, p: &str, d: usize) -> AttnIds {
        let std = 1.0 / libm::sqrt(d as f64);
        let proj = |b: &mut Self, n: &str| {
            (
                b.randn(format!("{p}.w{n}"), &[d, d], std),
                b.filled(format!("{p}.b{n}"), &[d], 0.0),
            )
        };
        let (wq, bq) = proj(self, "q");
        let wk = self.randn(format!("{p}.wk"), &[d, d], std);
        let (wv, bv) = proj(self, "v");
        let (wo, bo) = proj(self, "o");
        AttnIds {
            wq,
            bq,
            wk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ff(&mut self, p: &str, d: usize, f: usize) -> FfIds {
        FfIds {
            w1: self.randn(format!("{p}.w1"), &[d, f], 1.0 / libm::sqrt(d as f64)),
            b1: self.filled(format!("{p}.b1"), &[f], 0.0),
            w2: self.randn(format!("{p}.w2"), &[f, d], 1.0 / libm::sqrt(f as f64)),
            b2: self.filled(format!("{p}.b2"), &[d], 0.0),
        }
    }
}

/// Embedding standard deviation; keeps initial logits near uniform while
/// leaving a frozen backbone enough output range to be steered by prefixes.
pub(crate) fn embedding_std(dim_h: usize) -> f64 {
    0.7 / libm::sqrt(dim_h as f64)
}

/// Backbone parameters. The output projection is tied to `embed.tok`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    store: ParamStore,
    layout: Layout,
    frozen: bool,
}

impl ModelWeights {
    /// Random initialization from the backbone stream of `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::BackboneInit);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let (d, f) = (config.dim_h, config.dim_ff);
        let es = embedding_std(d);
        let tok = b.randn("embed.tok".into(), &[config.vocab_size, d], es);
        let pos = b.randn("embed.pos".into(), &[config.max_len, d], es);
        let enc = (1..=config.l_enc)
            .map(|l| EncLayer {
                ln1: b.ln(&format!("enc.{l}.ln1"), d),
                attn: b.attn(&format!("enc.{l}.self"), d),
                ln2: b.ln(&format!("enc.{l}.ln2"), d),
                ff: b.ff(&format!("enc.{l}.ff"), d, f),
            })
            .collect();
        let enc_ln = b.ln("enc.ln", d);
        let dec = (1..=config.l_dec)
            .map(|l| DecLayer {
                ln1: b.ln(&format!("dec.{l}.ln1"), d),
                self_attn: b.attn(&format!("dec.{l}.self"), d),
                ln2: b.ln(&format!("dec.{l}.ln2"), d),
                cross: b.attn(&format!("dec.{l}.cross"), d),
                ln3: b.ln(&format!("dec.{l}.ln3"), d),
                ff: b.ff(&format!("dec.{l}.ff"), d, f),
            })
            .collect();
        let dec_ln = b.ln("dec.ln", d);
        let mut w = ModelWeights {
            config: config.clone(),
            store: b.store,
            layout: Layout {
                tok,
                pos,
                enc,
                enc_ln,
                dec,
                dec_ln,
            },
            frozen: false,
        };
        w.set_frozen(false);
        Ok(w)
    }

    /// Rebuilds weights from stored tensors, checking every name and shape.
    pub fn from_store(config: &ModelConfig, store: ParamStore) -> Result<Self> {
        let mut w = ModelWeights::init(config, 0)?;
        if store.len() != w.store.len() {
            return Err(Error::Shape(format!(
                "expected {} backbone tensors, found {}",
                w.store.len(),
                store.len()
            )));
        }
        for id in w.store.ids() {
            let name = w.store.name(id).to_string();
            let src = store
                .find(&name)
                .ok_or_else(|| Error::Shape(format!("missing backbone tensor {name}")))?;
            let t = store.get(src);
            if t.shape() != w.store.get(id).shape() {
                return Err(Error::dim("load", w.store.get(id).shape(), t.shape()));
            }
            let mut t = t.clone();
            t.set_requires_grad(false);
            *w.store.get_mut(id) = t;
        }
        w.set_frozen(false);
        Ok(w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen weights carry no gradient requirement.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        self.store.set_requires_grad(!frozen);
    }

    pub fn numel(&self) -> usize {
        self.store.numel()
    }

    /// Registers every tensor on `tape`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound<'a> {
        Bound {
            vars: self.store.register(tape),
            weights: self,
        }
    }

    /// Uses caller-provided tape variables, one per tensor in store order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_>> {
        if vars.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} backbone tensors",
                vars.len(),
                self.store.len()
            )));
        }
        Ok(Bound { vars, weights: self })
    }
}

/// Backbone tensors registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound<'a> {
    vars: Vec<Var>,
    weights: &'a ModelWeights,
}

impl<'a> Bound<'a> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn weights(&self) -> &'a ModelWeights {
        self.weights
    }

    pub fn config(&self) -> &'a ModelConfig {
        &self.weights.config
    }

    pub(crate) fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub(crate) fn layout(&self) -> &'a Layout {
        &self.weights.layout
    }
}

/// Learnable-parameter accounting of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub total: usize,
}

/// Counts trainable and total parameters for `mode`.
///
/// In pip-direct the stored last-layer value prefix is replaced per example,
/// so it is counted as present but not trainable.
pub fn count_params(
    weights: &ModelWeights,
    bank: Option<&PrefixBank>,
    instructor: Option<&ParseInstructor>,
    mode: Mode,
) -> ParamCount {
    let backbone = weights.numel();
    let bank_total = bank.map_or(0, |b| b.numel());
    let instr_total = instructor.map_or(0, |i| i.numel());
    let total = backbone + bank_total + instr_total;
    let trainable = match mode {
        Mode::Finetune => backbone,
        Mode::Prefix => bank_total,
        Mode::PipDirect => bank_total - bank.map_or(0, |b| b.dead_direct_numel()),
        Mode::PipIndirect => bank_total + instr_total,
    };
    ParamCount { trainable, total }
}
