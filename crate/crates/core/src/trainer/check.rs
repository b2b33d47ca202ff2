use alloc::vec::Vec;
use alloc::string::String;

use super::{batch_objective, Bindings, Group, TrainConfig, TrainState};
use crate::data::{encode_all, generate_corpus, EncodedExample, Grammar, Vocab};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, ModelWeights};
use crate::tensor::{grad_check, GradCheckReport, OpKind, Tape, Var};

/// Gradient-check outcome over every trainable tensor of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGradCheck {
    pub mode: Mode,
    /// Qualified tensor names, aligned with `report.per_tensor`.
    pub names: Vec<String>,
    pub report: GradCheckReport,
}

/// Optional knobs for [`gradcheck_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub pel_weight: f64,
    /// Scales the backward rule of one op kind, to prove the check can fail.
    pub corrupt: Option<(OpKind, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            pel_weight: 1.0,
            corrupt: None,
        }
    }
}

/// Checks the training objective's gradient on `batch` against central
/// differences, for exactly the tensors the optimizer would update.
pub fn gradcheck_state(
    state: &mut TrainState,
    batch: &[EncodedExample],
    opts: &GradCheckOptions,
) -> Result<ModeGradCheck> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("gradient-check batch"));
    }
    state.warm_cache(batch)?;
    let state = &*state;
    let trainable = state.trainable();
    let params: Vec<_> = trainable.iter().map(|&(g, id)| state.store(g).get(id).clone()).collect();
    let refs: Vec<&EncodedExample> = batch.iter().collect();
    let groups = [Group::Backbone, Group::Prefix, Group::Instructor];
    let report = grad_check(&params, opts.eps, |tape: &mut Tape<'_>, vars: &[Var]| {
        if let Some((kind, factor)) = opts.corrupt {
            tape.corrupt_rule(kind, factor);
        }
        // Trainable tensors take the checked leaves; the rest enter as constants.
        let mut bound: [Vec<Var>; 3] = Default::default();
        for (slot, g) in bound.iter_mut().zip(groups) {
            let present = match g {
                Group::Backbone => true,
                Group::Prefix => state.bank.is_some(),
                Group::Instructor => state.mode == Mode::PipIndirect,
            };
            if !present {
                continue;
            }
            let store = state.store(g);
            *slot = store
                .ids()
                .map(|id| match trainable.iter().position(|&t| t == (g, id)) {
                    Some(k) => vars[k],
                    None => tape.constant(store.get(id).clone()),
                })
                .collect();
        }
        let [bb, pv, iv] = bound;
        let view = match &state.bank {
            Some(bank) => Some(bank.bind_vars(tape, pv)?),
            None => None,
        };
        let instr = match &state.instructor {
            Some(i) if state.mode == Mode::PipIndirect => Some(i.bind_vars(iv)?),
            _ => None,
        };
        let b = Bindings {
            backbone: state.weights.bind_vars(bb)?,
            view,
            instr,
        };
        Ok(batch_objective(tape, state, opts.pel_weight, &b, &refs)?.loss)
    })?;
    Ok(ModeGradCheck {
        mode: state.mode,
        names: state.trainable_names(),
        report,
    })
}

/// Model configuration used by [`gradcheck_micro`].
pub fn gradcheck_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        max_len: 64,
        ..ModelConfig::micro(vocab_size)
    }
}

/// Gradient check of `mode` on a freshly initialized micro model and a
/// two-example synthetic batch.
pub fn gradcheck_micro(mode: Mode, seed: u64, opts: &GradCheckOptions) -> Result<ModeGradCheck> {
    let grammar = Grammar::default();
    let vocab = Vocab::from_grammar(&grammar);
    let cfg = gradcheck_model(vocab.len());
    let corpus = generate_corpus(seed, 2, 1, 1, &grammar)?;
    let batch = encode_all(&corpus.train, &vocab, cfg.max_len)?;
    let mut tc = TrainConfig::for_mode(mode);
    tc.seed = seed;
    tc.pel_weight = opts.pel_weight;
    let mut state = TrainState::with_backbone(ModelWeights::init(&cfg, seed)?, &tc)?;
    gradcheck_state(&mut state, &batch, opts)
}
