//! Denoising pre-training of the backbone.
//!
//! Tuning modes assume a frozen backbone that already models the language.
//! This stage produces one from raw sentences: the model learns to restore a
//! sentence from a corrupted copy in which tokens are masked and locally
//! shuffled, or fully scrambled so that word order must be rebuilt.

use alloc::string::String;
use alloc::vec::Vec;

use super::{train, TrainConfig, TrainLog, TrainState};
use crate::data::{ParaphraseExample, Vocab, EncodedExample, EOS, UNK};
use crate::error::{Error, Result};
use crate::model::{Mode, ModelConfig, ModelWeights};
use crate::rng::{self, Rng, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Probability that a token is replaced by the mask symbol.
    pub mask_prob: f64,
    /// Tokens move by less than this many positions in a local shuffle.
    pub shuffle_window: f64,
    /// Probability that a sentence is scrambled entirely instead.
    pub scramble_prob: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            lr: 1e-3,
            batch_size: 16,
            mask_prob: 0.25,
            shuffle_window: 3.0,
            scramble_prob: 0.5,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.mask_prob) || !prob(self.scramble_prob) {
            return Err(Error::Contract("corruption probabilities must lie in [0, 1]".into()));
        }
        if !(self.shuffle_window >= 0.0) {
            return Err(Error::Contract("shuffle_window must be non-negative".into()));
        }
        Ok(())
    }
}

/// Corrupted copy of `ids`; the mask symbol is `UNK`.
pub fn corrupt(ids: &[usize], cfg: &PretrainConfig, rng: &mut StreamRng) -> Vec<usize> {
    let masked: Vec<usize> = ids
        .iter()
        .map(|&t| if rng.random::<f64>() < cfg.mask_prob { UNK } else { t })
        .collect();
    let window = if rng.random::<f64>() < cfg.scramble_prob {
        ids.len() as f64
    } else {
        cfg.shuffle_window
    };
    let mut keyed: Vec<(f64, usize)> = masked
        .into_iter()
        .enumerate()
        .map(|(i, t)| (i as f64 + rng.random::<f64>() * window, t))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Source and target sentences of `examples`, encoded.
pub fn pretraining_sentences(examples: &[ParaphraseExample], vocab: &Vocab) -> Vec<Vec<usize>> {
    examples
        .iter()
        .flat_map(|ex| [vocab.encode(&ex.src), vocab.encode(&ex.tgt)])
        .collect()
}

/// One corrupted-input / clean-target pair per sentence.
pub fn denoising_examples(sentences: &[Vec<usize>], cfg: &PretrainConfig, seed: u64) -> Vec<EncodedExample> {
    let mut rng = rng::stream(seed, Stream::Pretrain);
    sentences
        .iter()
        .map(|s| {
            let mut target = s.clone();
            target.push(EOS);
            EncodedExample {
                input: corrupt(s, cfg, &mut rng),
                target,
                parse: Vec::new(),
                parse_key: String::new(),
            }
        })
        .collect()
}

/// Initializes a backbone from `seed` and trains every weight on denoising.
pub fn pretrain_backbone(
    model: &ModelConfig,
    cfg: &PretrainConfig,
    sentences: &[Vec<usize>],
    seed: u64,
) -> Result<(ModelWeights, TrainLog)> {
    cfg.validate()?;
    let mut tc = TrainConfig::for_mode(Mode::Finetune);
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.seed = seed;
    tc.eval_every = super::EvalEvery::Never;
    let data = denoising_examples(sentences, cfg, seed);
    let mut state = TrainState::init(model, &tc)?;
    let log = train(&tc, &mut state, &data, None)?;
    Ok((state.weights, log))
}
