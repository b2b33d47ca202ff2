//! Optimization loop over the four tuning modes, and evaluation.

mod check;
mod optim;
mod pretrain;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{EncodedExample, Grammar, ParaphraseExample, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{build_report, MetricsReport, ReportConfig};
use crate::model::{
    forward_loss, generate_beam, BeamConfig, BeamOutput, Bound, Mode, ModelConfig, ModelScorer, ModelWeights,
};
use crate::prefix::{
    apply_direct, combined_loss, encode_parse, pel_loss, BoundInstructor, ParseEncodingCache, ParseInstructor,
    PrefixBank, PrefixSpec, PrefixView,
};
use crate::rng::{self, Stream};
use crate::tensor::{ParamId, Tape, Var};

pub use check::{gradcheck_micro, gradcheck_model, gradcheck_state, GradCheckOptions, ModeGradCheck};
pub use optim::{adamw_step, clip_grad_norm, lr_at, AdamWConfig, AdamWState, Scheduler};
pub use pretrain::{corrupt, denoising_examples, pretrain_backbone, pretraining_sentences, PretrainConfig};

/// When to evaluate on the dev split during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalEvery {
    Never,
    Epoch,
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub beam_width: usize,
    pub max_decode_len: usize,
    pub template_height: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam_width: 4,
            max_decode_len: 24,
            template_height: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub pel_weight: f64,
    pub seed: u64,
    pub scheduler: Scheduler,
    pub reparameterize_prefix: bool,
    /// Hidden width of the reparameterized prefix; `None` means `dim_h`.
    pub reparam_dim: Option<usize>,
    pub eval_every: EvalEvery,
    /// Re-derive the substituted value prefix on every pip-direct batch and
    /// record the largest deviation.
    pub verify_direct: bool,
    pub optimizer: AdamWConfig,
    pub eval: EvalConfig,
}

impl TrainConfig {
    /// Defaults for `mode`: 1e-5 with linear decay for full fine-tuning,
    /// a constant 3e-4 otherwise.
    pub fn for_mode(mode: Mode) -> Self {
        TrainConfig {
            mode,
            epochs: 10,
            batch_size: 16,
            lr: if mode == Mode::Finetune { 1e-5 } else { 3e-4 },
            clip_norm: 1.0,
            pel_weight: 1.0,
            seed: 0,
            scheduler: if mode == Mode::Finetune {
                Scheduler::Linear
            } else {
                Scheduler::Constant
            },
            reparameterize_prefix: false,
            reparam_dim: None,
            eval_every: EvalEvery::Epoch,
            verify_direct: true,
            optimizer: AdamWConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.pel_weight >= 0.0) || !self.pel_weight.is_finite() {
            return bad(format!("pel_weight must be non-negative, got {}", self.pel_weight));
        }
        if self.reparameterize_prefix && self.mode == Mode::Finetune {
            return bad("reparameterize_prefix needs a prefix mode".into());
        }
        if self.reparam_dim == Some(0) {
            return bad("reparam_dim must be positive".into());
        }
        if self.eval.beam_width == 0 || self.eval.max_decode_len == 0 || self.eval.template_height == 0 {
            return bad("beam width, decode length and template height must be positive".into());
        }
        Ok(())
    }
}

/// Everything a run learns or reads.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub mode: Mode,
    pub weights: ModelWeights,
    pub bank: Option<PrefixBank>,
    pub instructor: Option<ParseInstructor>,
    pub cache: ParseEncodingCache,
}

impl TrainState {
    /// Fresh components for `config.mode`, all drawn from `config.seed`.
    pub fn init(model: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        TrainState::with_backbone(ModelWeights::init(model, config.seed)?, config)
    }

    /// Fresh prefix-side components around an existing backbone.
    pub fn with_backbone(weights: ModelWeights, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = &weights.config().clone();
        let bank = if config.mode.uses_prefix() {
            let reparam = config
                .reparameterize_prefix
                .then(|| config.reparam_dim.unwrap_or(model.dim_h));
            Some(PrefixBank::init(model, config.seed, reparam)?)
        } else {
            None
        };
        let instructor = match config.mode {
            Mode::PipIndirect => Some(ParseInstructor::indirect(model, config.seed, config.pel_weight)?),
            Mode::PipDirect => Some(ParseInstructor::direct()),
            _ => None,
        };
        TrainState::from_parts(config.mode, weights, bank, instructor)
    }

    /// Assembles a state, checking that the parts fit the mode.
    pub fn from_parts(
        mode: Mode,
        mut weights: ModelWeights,
        bank: Option<PrefixBank>,
        instructor: Option<ParseInstructor>,
    ) -> Result<Self> {
        if mode.uses_prefix() != bank.is_some() {
            return Err(Error::Contract(format!("mode {mode} and prefix bank presence disagree")));
        }
        let indirect = matches!(&instructor, Some(i) if i.kind() == crate::prefix::InstructorKind::Indirect);
        if (mode == Mode::PipIndirect) != indirect {
            return Err(Error::Contract(format!("mode {mode} and instructor disagree")));
        }
        weights.set_frozen(mode != Mode::Finetune);
        Ok(TrainState {
            mode,
            weights,
            bank,
            instructor,
            cache: ParseEncodingCache::new(),
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        self.weights.config()
    }

    /// The parameters the optimizer updates in this mode.
    pub fn trainable(&self) -> Vec<(Group, ParamId)> {
        let mut out = Vec::new();
        match self.mode {
            Mode::Finetune => out.extend(self.weights.store().ids().map(|i| (Group::Backbone, i))),
            _ => {
                let bank = self.bank.as_ref().expect("prefix modes carry a bank");
                let dead = if self.mode == Mode::PipDirect {
                    bank.dead_direct_ids()
                } else {
                    Vec::new()
                };
                out.extend(
                    bank.store()
                        .ids()
                        .filter(|i| !dead.contains(i))
                        .map(|i| (Group::Prefix, i)),
                );
                if self.mode == Mode::PipIndirect {
                    let instr = self.instructor.as_ref().expect("pip-indirect carries an instructor");
                    out.extend(instr.store().ids().map(|i| (Group::Instructor, i)));
                }
            }
        }
        out
    }

    /// Qualified names of the trainable tensors.
    pub fn trainable_names(&self) -> Vec<String> {
        self.trainable()
            .into_iter()
            .map(|(g, id)| format!("{}/{}", g.name(), self.store(g).name(id)))
            .collect()
    }

    pub fn store(&self, g: Group) -> &crate::tensor::ParamStore {
        match g {
            Group::Backbone => self.weights.store(),
            Group::Prefix => self.bank.as_ref().expect("bank").store(),
            Group::Instructor => self.instructor.as_ref().expect("instructor").store(),
        }
    }

    fn store_mut(&mut self, g: Group) -> &mut crate::tensor::ParamStore {
        match g {
            Group::Backbone => self.weights.store_mut(),
            Group::Prefix => self.bank.as_mut().expect("bank").store_mut(),
            Group::Instructor => self.instructor.as_mut().expect("instructor").store_mut(),
        }
    }

    /// Fills the parse-encoding cache for every example (pip modes only).
    pub fn warm_cache(&mut self, examples: &[EncodedExample]) -> Result<()> {
        if !self.mode.uses_parse_encoding() {
            return Ok(());
        }
        for ex in examples {
            self.cache.get_or_compute(&ex.parse_key, &ex.parse, &self.weights)?;
        }
        Ok(())
    }

    /// Beam-search generation for one encoded example.
    pub fn generate(&mut self, ex: &EncodedExample, beam: &BeamConfig) -> Result<BeamOutput> {
        self.warm_cache(core::slice::from_ref(ex))?;
        let spec = self.bank.as_ref().map(|bank| PrefixSpec {
            bank,
            direct: (self.mode == Mode::PipDirect).then(|| self.cache.get(&ex.parse_key).expect("warmed")),
        });
        let mut scorer = ModelScorer::new(&self.weights, &ex.input, spec)?;
        generate_beam(&mut scorer, beam)
    }
}

/// Owner of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Backbone,
    Prefix,
    Instructor,
}

impl Group {
    /// Name prefix used in checkpoints and reports.
    pub fn name(self) -> &'static str {
        match self {
            Group::Backbone => "model",
            Group::Prefix => "prefix",
            Group::Instructor => "instructor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub lm_loss: f64,
    pub pel_loss: f64,
    pub combined_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Per pip-direct batch: largest |substituted v − fresh e(t)|.
    pub direct_check: Vec<f64>,
}

impl TrainLog {
    /// Mean LM loss over the steps of one epoch (1-based).
    pub fn epoch_loss(&self, epoch: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.lm_loss)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Reference data for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalData<'a> {
    pub examples: &'a [ParaphraseExample],
    pub encoded: &'a [EncodedExample],
    pub vocab: &'a Vocab,
    pub grammar: &'a Grammar,
}

/// Beam-decodes every example and scores the generations.
pub fn evaluate(state: &mut TrainState, data: &EvalData<'_>, cfg: &EvalConfig) -> Result<MetricsReport> {
    if data.examples.len() != data.encoded.len() {
        return Err(Error::Contract("examples and encodings are not aligned".into()));
    }
    let beam = BeamConfig::new(cfg.beam_width, cfg.max_decode_len);
    let mut generations = Vec::with_capacity(data.encoded.len());
    for ex in data.encoded {
        let out = state.generate(ex, &beam)?;
        generations.push(data.vocab.decode(&out.tokens));
    }
    let rc = ReportConfig {
        grammar: data.grammar,
        template_height: cfg.template_height,
    };
    build_report(&generations, data.examples, &rc)
}

struct BatchResult {
    lm: f64,
    pel: f64,
    combined: f64,
    grads: Vec<Vec<f64>>,
    direct_diff: Option<f64>,
}

/// Runs `config.epochs` epochs of mini-batch training on `train`.
pub fn train(
    config: &TrainConfig,
    state: &mut TrainState,
    train: &[EncodedExample],
    dev: Option<&EvalData<'_>>,
) -> Result<TrainLog> {
    config.validate()?;
    if config.mode != state.mode {
        return Err(Error::Contract(format!(
            "config mode {} but state mode {}",
            config.mode, state.mode
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyBatch("training set"));
    }
    state.warm_cache(train)?;
    let trainable = state.trainable();
    let sizes: Vec<usize> = trainable
        .iter()
        .map(|&(g, id)| state.store(g).get(id).numel())
        .collect();
    let mut adam = AdamWState::new(&sizes);
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);
    let per_epoch = train.len().div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        rng::shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut r = batch_gradients(config, state, &trainable, &batch)
                .map_err(|e| with_step(e, step + 1))?;
            if !r.combined.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {} at step {}", r.combined, step + 1)));
            }
            if let Some(d) = r.direct_diff {
                log.direct_check.push(d);
            }
            let mut gslices: Vec<&mut [f64]> = r.grads.iter_mut().map(|g| g.as_mut_slice()).collect();
            let grad_norm = clip_grad_norm(&mut gslices, config.clip_norm)?;
            let lr = lr_at(step, total, config.lr, config.scheduler);
            apply_update(state, &trainable, &r.grads, &mut adam, lr, &config.optimizer)
                .map_err(|e| with_step(e, step + 1))?;
            step += 1;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                lm_loss: r.lm,
                pel_loss: r.pel,
                combined_loss: r.combined,
                grad_norm,
            });
            if let (EvalEvery::Steps(k), Some(d)) = (config.eval_every, dev) {
                if k > 0 && step % k == 0 {
                    let report = evaluate(state, d, &config.eval)?;
                    log.evals.push(EvalRecord { step, epoch, report });
                }
            }
        }
        if let (EvalEvery::Epoch, Some(d)) = (config.eval_every, dev) {
            let report = evaluate(state, d, &config.eval)?;
            log.evals.push(EvalRecord { step, epoch, report });
        }
    }
    Ok(log)
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
        other => other,
    }
}

fn apply_update(
    state: &mut TrainState,
    trainable: &[(Group, ParamId)],
    grads: &[Vec<f64>],
    adam: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    // Move tensors out so the optimizer can hold every slice mutably at once.
    let mut taken: Vec<crate::tensor::Tensor> = trainable
        .iter()
        .map(|&(g, id)| core::mem::replace(state.store_mut(g).get_mut(id), crate::tensor::Tensor::scalar(0.0)))
        .collect();
    let result = {
        let mut params: Vec<&mut [f64]> = taken.iter_mut().map(|t| t.data_mut()).collect();
        let gs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        adamw_step(&mut params, &gs, adam, lr, cfg)
    };
    for (&(g, id), t) in trainable.iter().zip(taken) {
        *state.store_mut(g).get_mut(id) = t;
    }
    result
}

/// Tape bindings of every component a state carries.
struct Bindings<'w> {
    backbone: Bound<'w>,
    view: Option<PrefixView>,
    instr: Option<BoundInstructor>,
}

/// Scalars of one batch objective.
struct Objective<'k> {
    lm: Var,
    pel: Option<Var>,
    loss: Var,
    substituted: BTreeMap<&'k str, Var>,
}

/// Token-mean LM loss plus (pip-indirect) λ times the example-mean PEL.
fn batch_objective<'k>(
    tape: &mut Tape<'_>,
    state: &TrainState,
    pel_weight: f64,
    b: &Bindings<'_>,
    batch: &[&'k EncodedExample],
) -> Result<Objective<'k>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("batch"));
    }
    let mode = state.mode;
    let model_cfg = state.weights.config();
    let m_site = model_cfg.last_encoder_site();
    let mut lm_sum: Option<Var> = None;
    let mut pel_sum: Option<Var> = None;
    let mut tokens = 0usize;
    let mut substituted = BTreeMap::new();
    for ex in batch {
        let encoding = if mode.uses_parse_encoding() {
            Some(
                state
                    .cache
                    .get(&ex.parse_key)
                    .ok_or_else(|| Error::Contract(format!("parse {} not cached", ex.parse_key)))?,
            )
        } else {
            None
        };
        let ex_view = match (&b.view, mode) {
            (Some(v), Mode::PipDirect) => {
                let e = encoding.expect("pip modes have an encoding");
                let out = apply_direct(v, tape, e, model_cfg)?;
                if let Some((_, vm)) = out.get(m_site) {
                    substituted.insert(ex.parse_key.as_str(), vm);
                }
                Some(out)
            }
            (Some(v), _) => Some(v.clone()),
            (None, _) => None,
        };
        let (nll, n) = forward_loss(tape, &b.backbone, ex, ex_view.as_ref())?;
        tokens += n;
        lm_sum = Some(match lm_sum {
            Some(acc) => tape.add(acc, nll)?,
            None => nll,
        });
        if let (Some(a), Some(v)) = (&b.instr, &b.view) {
            let (k_m, v_m) = v
                .get(m_site)
                .ok_or_else(|| Error::Contract(format!("no prefix at {m_site}")))?;
            let e = tape.constant(encoding.expect("pip modes have an encoding").values.clone());
            let p = pel_loss(tape, a, k_m, v_m, e)?;
            pel_sum = Some(match pel_sum {
                Some(acc) => tape.add(acc, p)?,
                None => p,
            });
        }
    }
    let lm = tape.scale(lm_sum.expect("non-empty batch"), 1.0 / tokens as f64);
    let (loss, pel) = match pel_sum {
        Some(p) => {
            let pel = tape.scale(p, 1.0 / batch.len() as f64);
            (combined_loss(tape, lm, pel, pel_weight)?, Some(pel))
        }
        None => (lm, None),
    };
    Ok(Objective {
        lm,
        pel,
        loss,
        substituted,
    })
}

fn batch_gradients(
    config: &TrainConfig,
    state: &TrainState,
    trainable: &[(Group, ParamId)],
    batch: &[&EncodedExample],
) -> Result<BatchResult> {
    let mode = state.mode;
    let mut tape = Tape::new();
    let backbone = state.weights.bind(&mut tape);
    let view = match &state.bank {
        Some(b) => Some(b.bind(&mut tape)?),
        None => None,
    };
    let instr = match &state.instructor {
        Some(i) if mode == Mode::PipIndirect => Some(i.bind(&mut tape)?),
        _ => None,
    };
    let bindings = Bindings { backbone, view, instr };
    let Objective {
        lm,
        pel,
        loss,
        substituted,
    } = batch_objective(&mut tape, state, config.pel_weight, &bindings, batch)?;
    let pel_value = pel.map_or(0.0, |p| tape.scalar(p));
    let Bindings {
        backbone: bw,
        view,
        instr,
    } = bindings;
    let direct_diff = if mode == Mode::PipDirect && config.verify_direct {
        let mut worst: f64 = 0.0;
        for ex in batch {
            let Some(&var) = substituted.get(ex.parse_key.as_str()) else {
                return Err(Error::Contract("substituted value prefix missing".into()));
            };
            let fresh = encode_parse(&ex.parse, &state.weights, &ex.parse_key)?;
            let used = tape.value(var);
            let d = used
                .iter()
                .zip(fresh.values.data())
                .map(|(a, b)| libm::fabs(a - b))
                .fold(0.0, f64::max);
            worst = worst.max(d);
        }
        Some(worst)
    } else {
        None
    };
    let grads = tape.backward(loss)?;
    let leaf = |g: Group, id: ParamId| -> Option<Var> {
        match g {
            Group::Backbone => Some(bw.vars()[id.index()]),
            Group::Prefix => view.as_ref().map(|v| v.leaves()[id.index()]),
            Group::Instructor => instr.as_ref().map(|i| i.leaves()[id.index()]),
        }
    };
    // Nothing outside the trainable set may receive gradient.
    for g in [Group::Backbone, Group::Prefix, Group::Instructor] {
        let n = match g {
            Group::Backbone => bw.vars().len(),
            Group::Prefix => view.as_ref().map_or(0, |v| v.leaves().len()),
            Group::Instructor => instr.as_ref().map_or(0, |i| i.leaves().len()),
        };
        for i in 0..n {
            let id = ParamId(i);
            if trainable.contains(&(g, id)) {
                continue;
            }
            let var = leaf(g, id).expect("bound");
            if grads.get(var).is_some_and(|gr| gr.iter().any(|x| *x != 0.0)) {
                return Err(Error::Contract(format!(
                    "gradient reached frozen tensor {}/{}",
                    g.name(),
                    state.store(g).name(id)
                )));
            }
        }
    }
    let out = trainable
        .iter()
        .map(|&(g, id)| {
            let var = leaf(g, id).expect("trainable tensors are bound");
            grads
                .get(var)
                .map(|x| x.to_vec())
                .unwrap_or_else(|| vec![0.0; state.store(g).get(id).numel()])
        })
        .collect();
    let lm_value = tape.scalar(lm);
    Ok(BatchResult {
        lm: lm_value,
        pel: pel_value,
        combined: tape.scalar(loss),
        grads: out,
        direct_diff,
    })
}

#[cfg(test)]
mod tests;
