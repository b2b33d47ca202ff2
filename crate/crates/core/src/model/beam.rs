use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::transformer::{decode, encode, logits};
use super::ModelWeights;
use crate::data::{BOS, EOS, PAD, SEP, UNK};
use crate::error::{Error, Result};
use crate::prefix::PrefixSpec;
use crate::tensor::{Tape, Tensor};

/// Next-token log-probabilities given the decoder input so far.
pub trait StepScorer {
    /// `prefix` starts with BOS; the result has one entry per vocabulary id.
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Cap on generated tokens, EOS included.
    pub max_decode_len: usize,
    /// Ids never generated.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(width: usize, max_decode_len: usize) -> Self {
        BeamConfig {
            width,
            max_decode_len,
            banned: vec![PAD, BOS, SEP, UNK],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// Generated ids without BOS or EOS.
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities divided by the number of scored tokens.
    pub score: f64,
    /// False when no hypothesis emitted EOS in time.
    pub finished: bool,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
}

impl Hyp {
    fn normalized(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logp / self.tokens.len() as f64
        }
    }
}

/// Higher score first; equal scores by lexicographically lower tokens.
fn rank(a: f64, ta: &[usize], b: f64, tb: &[usize]) -> Ordering {
    b.total_cmp(&a).then_with(|| ta.cmp(tb))
}

/// Beam search ranked by length-normalized log-probability.
pub fn generate_beam<S: StepScorer + ?Sized>(scorer: &mut S, config: &BeamConfig) -> Result<BeamOutput> {
    if config.width == 0 {
        return Err(Error::Contract("beam width must be at least 1".into()));
    }
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..config.max_decode_len {
        let mut cands: Vec<Hyp> = Vec::new();
        for h in &alive {
            let mut prefix = Vec::with_capacity(h.tokens.len() + 1);
            prefix.push(BOS);
            prefix.extend_from_slice(&h.tokens);
            let lp = scorer.log_probs(&prefix)?;
            for (tok, &l) in lp.iter().enumerate() {
                if config.banned.contains(&tok) || !l.is_finite() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                cands.push(Hyp {
                    tokens,
                    logp: h.logp + l,
                });
            }
        }
        cands.sort_by(|a, b| rank(a.logp, &a.tokens, b.logp, &b.tokens));
        cands.truncate(config.width);
        alive.clear();
        for c in cands {
            if c.tokens.last() == Some(&EOS) {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() || finished.len() >= config.width {
            break;
        }
    }
    let (pool, done) = if finished.is_empty() {
        (alive, false)
    } else {
        (finished, true)
    };
    let best = pool
        .into_iter()
        .min_by(|a, b| rank(a.normalized(), &a.tokens, b.normalized(), &b.tokens))
        .ok_or_else(|| Error::Degenerate("beam search produced no hypothesis".into()))?;
    let score = best.normalized();
    let mut tokens = best.tokens;
    if done {
        tokens.pop();
    }
    Ok(BeamOutput {
        tokens,
        score,
        finished: done,
    })
}

/// Scores decoder steps with the model, encoding the input once.
pub struct ModelScorer<'a> {
    weights: &'a ModelWeights,
    prefix: Option<PrefixSpec<'a>>,
    memory: Tensor,
    input: Vec<usize>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(weights: &'a ModelWeights, input: &[usize], prefix: Option<PrefixSpec<'a>>) -> Result<Self> {
        let mut tape = Tape::new();
        let b = weights.bind(&mut tape);
        let view = match &prefix {
            Some(p) => Some(p.view(&mut tape, weights.config())?),
            None => None,
        };
        let m = encode(&mut tape, &b, input, view.as_ref())?;
        let memory = tape.to_tensor(m);
        Ok(ModelScorer {
            weights,
            prefix,
            memory,
            input: input.to_vec(),
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.weights.bind(&mut tape);
        let view = match &self.prefix {
            Some(p) => Some(p.view(&mut tape, self.weights.config())?),
            None => None,
        };
        let memory = tape.constant(self.memory.clone());
        let h = decode(&mut tape, &b, memory, Some(&self.input), prefix, view.as_ref())?;
        let z = logits(&mut tape, &b, h)?;
        let v = self.weights.config().vocab_size;
        let row = &tape.value(z)[(prefix.len() - 1) * v..prefix.len() * v];
        Ok(log_softmax(row))
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| libm::exp(x - max)).sum();
    let lz = max + libm::log(z);
    row.iter().map(|x| x - lz).collect()
}
