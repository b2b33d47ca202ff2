//! Learnable attention prefixes and parse-instructed variants.

mod encoding;
mod instructor;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{AttentionSite, ModelConfig};
use crate::rng::{self, Stream};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use encoding::{encode_parse, pool_rows, ParseEncoding, ParseEncodingCache};
pub use instructor::{
    combined_loss, pel_loss, prefix_attend, BoundInstructor, InstructorKind, ParseInstructor,
};

/// Standard deviation of freshly drawn prefix entries.
pub const PREFIX_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// One `(k, v)` parameter pair per site.
    Direct(Vec<(AttentionSite, ParamId, ParamId)>),
    /// Shared hidden matrix mapped to each site's `(k, v)` by linear maps.
    Reparam {
        hidden: ParamId,
        dim_r: usize,
        maps: Vec<(AttentionSite, [ParamId; 4])>,
    },
}

/// Per-site key/value prefixes, each `|p| × dim_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixBank {
    prefix_len: usize,
    dim_h: usize,
    store: ParamStore,
    storage: Storage,
}

/// Draws a plain bank (no reparameterization) from the prefix stream of `seed`.
pub fn init_prefix_bank(config: &ModelConfig, seed: u64) -> Result<PrefixBank> {
    PrefixBank::init(config, seed, None)
}

impl PrefixBank {
    /// With `reparam = Some(dim_r)`, prefixes are produced from a shared
    /// `|p| × dim_r` matrix through per-site linear maps `dim_r → 2·dim_h`.
    pub fn init(config: &ModelConfig, seed: u64, reparam: Option<usize>) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::PrefixInit);
        let (p, d) = (config.prefix_len, config.dim_h);
        let mut store = ParamStore::new();
        let storage = match reparam {
            None => Storage::Direct(
                config
                    .sites()
                    .into_iter()
                    .map(|s| {
                        let k = store.add(format!("{s}.k"), Tensor::randn(&[p, d], PREFIX_INIT_STD, &mut rng));
                        let v = store.add(format!("{s}.v"), Tensor::randn(&[p, d], PREFIX_INIT_STD, &mut rng));
                        (s, k, v)
                    })
                    .collect(),
            ),
            Some(0) => return Err(Error::Contract("reparameterization width must be positive".into())),
            Some(r) => {
                let hidden = store.add("hidden", Tensor::randn(&[p, r], PREFIX_INIT_STD, &mut rng));
                let std = 1.0 / libm::sqrt(r as f64);
                let maps = config
                    .sites()
                    .into_iter()
                    .map(|s| {
                        let wk = store.add(format!("{s}.wk"), Tensor::randn(&[r, d], std, &mut rng));
                        let bk = store.add(format!("{s}.bk"), Tensor::zeros(&[d]));
                        let wv = store.add(format!("{s}.wv"), Tensor::randn(&[r, d], std, &mut rng));
                        let bv = store.add(format!("{s}.bv"), Tensor::zeros(&[d]));
                        (s, [wk, bk, wv, bv])
                    })
                    .collect();
                Storage::Reparam {
                    hidden,
                    dim_r: r,
                    maps,
                }
            }
        };
        store.set_requires_grad(true);
        Ok(PrefixBank {
            prefix_len: p,
            dim_h: d,
            store,
            storage,
        })
    }

    /// Rebuilds a bank from stored tensors, checking names and shapes.
    pub fn from_store(config: &ModelConfig, reparam: Option<usize>, store: ParamStore) -> Result<Self> {
        let mut bank = PrefixBank::init(config, 0, reparam)?;
        if store.len() != bank.store.len() {
            return Err(Error::Shape(format!(
                "expected {} prefix tensors, found {}",
                bank.store.len(),
                store.len()
            )));
        }
        for id in bank.store.ids() {
            let name = bank.store.name(id);
            let src = store
                .find(name)
                .ok_or_else(|| Error::Shape(format!("missing prefix tensor {name}")))?;
            let t = store.get(src);
            if t.shape() != bank.store.get(id).shape() {
                return Err(Error::dim("load", bank.store.get(id).shape(), t.shape()));
            }
            let mut t = t.clone();
            t.set_requires_grad(true);
            *bank.store.get_mut(id) = t;
        }
        Ok(bank)
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    /// Width of the reparameterization hidden matrix, if any.
    pub fn reparam_width(&self) -> Option<usize> {
        match &self.storage {
            Storage::Direct(_) => None,
            Storage::Reparam { dim_r, .. } => Some(*dim_r),
        }
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

    pub fn sites(&self) -> Vec<AttentionSite> {
        match &self.storage {
            Storage::Direct(pairs) => pairs.iter().map(|p| p.0).collect(),
            Storage::Reparam { maps, .. } => maps.iter().map(|m| m.0).collect(),
        }
    }

    /// Parameters that only produce the value prefix of `site`.
    pub fn value_params(&self, site: AttentionSite) -> Vec<ParamId> {
        match &self.storage {
            Storage::Direct(pairs) => pairs.iter().filter(|p| p.0 == site).map(|p| p.2).collect(),
            Storage::Reparam { maps, .. } => maps
                .iter()
                .filter(|m| m.0 == site)
                .flat_map(|m| [m.1[2], m.1[3]])
                .collect(),
        }
    }

    /// Stored parameters left unused when the last encoder layer's value
    /// prefix is substituted per example.
    pub fn dead_direct_ids(&self) -> Vec<ParamId> {
        match self.last_encoder_site() {
            Some(site) => self.value_params(site),
            None => Vec::new(),
        }
    }

    pub fn dead_direct_numel(&self) -> usize {
        self.dead_direct_ids()
            .into_iter()
            .map(|id| self.store.get(id).numel())
            .sum()
    }

    fn last_encoder_site(&self) -> Option<AttentionSite> {
        self.sites()
            .into_iter()
            .filter(|s| s.kind == crate::model::SiteKind::EncoderSelf)
            .max_by_key(|s| s.layer)
    }

    /// Registers the bank on `tape` and materializes every site's pair.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<PrefixView> {
        let leaves = self.store.register(tape);
        self.bind_vars(tape, leaves)
    }

    /// Materializes every site's pair from caller-provided variables, one per
    /// stored tensor in store order.
    pub fn bind_vars(&self, tape: &mut Tape<'_>, leaves: Vec<Var>) -> Result<PrefixView> {
        if leaves.len() != self.store.len() {
            return Err(Error::Contract(format!(
                "{} variables for {} prefix tensors",
                leaves.len(),
                self.store.len()
            )));
        }
        let var = |id: ParamId| leaves[id.index()];
        let pairs = match &self.storage {
            Storage::Direct(pairs) => pairs.iter().map(|&(s, k, v)| (s, var(k), var(v))).collect(),
            Storage::Reparam { hidden, maps, .. } => {
                let h = var(*hidden);
                let mut out = Vec::with_capacity(maps.len());
                for &(s, [wk, bk, wv, bv]) in maps {
                    let k = tape.matmul(h, var(wk))?;
                    let k = tape.add_row(k, var(bk))?;
                    let v = tape.matmul(h, var(wv))?;
                    let v = tape.add_row(v, var(bv))?;
                    out.push((s, k, v));
                }
                out
            }
        };
        Ok(PrefixView { pairs, leaves })
    }
}

/// Tape-level prefix pairs for one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixView {
    pairs: Vec<(AttentionSite, Var, Var)>,
    leaves: Vec<Var>,
}

impl PrefixView {
    pub fn get(&self, site: AttentionSite) -> Option<(Var, Var)> {
        self.pairs
            .iter()
            .find(|p| p.0 == site)
            .map(|&(_, k, v)| (k, v))
    }

    pub fn sites(&self) -> impl Iterator<Item = AttentionSite> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    /// Bank tensors as registered, in store order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }
}

/// Replaces the last encoder layer's value prefix with the constant `e_t`.
pub fn apply_direct(
    view: &PrefixView,
    tape: &mut Tape<'_>,
    e_t: &ParseEncoding,
    config: &ModelConfig,
) -> Result<PrefixView> {
    let m = config.last_encoder_site();
    let slot = view
        .pairs
        .iter()
        .position(|p| p.0 == m)
        .ok_or_else(|| Error::Contract(format!("prefix view has no site {m}")))?;
    let (_, k, _) = view.pairs[slot];
    if e_t.values.shape() != tape.shape(k) {
        return Err(Error::dim("apply_direct", tape.shape(k), e_t.values.shape()));
    }
    let mut out = view.clone();
    let mut values = e_t.values.clone();
    values.set_requires_grad(false);
    out.pairs[slot].2 = tape.constant(values);
    Ok(out)
}

/// How a forward pass obtains its prefixes.
#[derive(Debug, Clone, Copy)]
pub struct PrefixSpec<'a> {
    pub bank: &'a PrefixBank,
    /// Parse encoding substituted at the last encoder layer, if any.
    pub direct: Option<&'a ParseEncoding>,
}

impl<'a> PrefixSpec<'a> {
    pub fn plain(bank: &'a PrefixBank) -> Self {
        PrefixSpec { bank, direct: None }
    }

    pub fn view<'t>(&self, tape: &mut Tape<'t>, config: &ModelConfig) -> Result<PrefixView>
    where
        'a: 't,
    {
        let view = self.bank.bind(tape)?;
        match self.direct {
            Some(e) => apply_direct(&view, tape, e, config),
            None => Ok(view),
        }
    }
}

#[cfg(test)]
mod tests;
