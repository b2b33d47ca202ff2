//! Synthetic paraphrase corpus: grammar, vocabulary and model inputs.

pub mod grammar;
mod vocab;

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::parse::{linearize, ParseTree};
use crate::rng::{self, Rng, Stream};

pub use grammar::{Frame, Grammar, Template, Verb};
pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, SEP, UNK};

/// A source sentence, its paraphrase and the paraphrase's parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphraseExample {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub target_parse: ParseTree,
}

impl ParaphraseExample {
    pub fn new(src: Vec<String>, tgt: Vec<String>, target_parse: ParseTree) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::Contract("empty sentence".into()));
        }
        if src == tgt {
            return Err(Error::Contract("source equals target".into()));
        }
        Ok(ParaphraseExample {
            src,
            tgt,
            target_parse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub train: Vec<ParaphraseExample>,
    pub dev: Vec<ParaphraseExample>,
    pub test: Vec<ParaphraseExample>,
}

/// Samples frame-disjoint splits; each example pairs two distinct templates.
pub fn generate_corpus(
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    grammar: &Grammar,
) -> Result<Corpus> {
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::Contract("split sizes must be at least 1".into()));
    }
    if grammar.templates.len() < 2 {
        return Err(Error::Contract("grammar needs at least two templates".into()));
    }
    let requested = n_train + n_dev + n_test;
    let available = grammar.frame_capacity();
    if requested > available {
        return Err(Error::Capacity {
            requested,
            available,
        });
    }
    let mut rng = rng::stream(seed, Stream::Data);
    let mut frames: Vec<usize> = (0..available).collect();
    rng::shuffle(&mut frames, &mut rng);
    let nt = grammar.templates.len();
    let mut examples = frames[..requested].iter().map(|&fi| {
        let frame = grammar.frame(fi);
        let a = rng.random_range(0..nt);
        let mut b = rng.random_range(0..nt - 1);
        if b >= a {
            b += 1;
        }
        let (t1, t2) = (grammar.templates[a], grammar.templates[b]);
        ParaphraseExample {
            src: grammar.render(t1, frame),
            tgt: grammar.render(t2, frame),
            target_parse: t2.schema(),
        }
    });
    let train = examples.by_ref().take(n_train).collect();
    let dev = examples.by_ref().take(n_dev).collect();
    let test = examples.collect();
    Ok(Corpus { train, dev, test })
}

/// `ids(src) ++ [SEP] ++ ids(linearize(parse))`, unknown tokens as UNK.
pub fn build_model_input(ex: &ParaphraseExample, vocab: &Vocab, max_len: usize) -> Result<Vec<usize>> {
    let mut ids = vocab.encode(&ex.src);
    ids.push(SEP);
    ids.extend(vocab.encode(&linearize(&ex.target_parse)));
    if ids.len() > max_len {
        return Err(Error::Length {
            len: ids.len(),
            max: max_len,
        });
    }
    Ok(ids)
}

/// Everything the model consumes for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    /// Encoder input: source, separator, linearized parse.
    pub input: Vec<usize>,
    /// Decoder targets: target sentence then EOS (decoder input is BOS-shifted).
    pub target: Vec<usize>,
    /// Linearized parse ids alone.
    pub parse: Vec<usize>,
    /// Space-joined linearized parse; identifies equal parses.
    pub parse_key: String,
}

pub fn encode_example(ex: &ParaphraseExample, vocab: &Vocab, max_len: usize) -> Result<EncodedExample> {
    let input = build_model_input(ex, vocab, max_len)?;
    let mut target = vocab.encode(&ex.tgt);
    target.push(EOS);
    if target.len() > max_len {
        return Err(Error::Length {
            len: target.len(),
            max: max_len,
        });
    }
    let lin = linearize(&ex.target_parse);
    Ok(EncodedExample {
        input,
        target,
        parse: vocab.encode(&lin),
        parse_key: lin.join(" "),
    })
}

pub fn encode_all(examples: &[ParaphraseExample], vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|ex| encode_example(ex, vocab, max_len))
        .collect()
}

/// Decoder input for a target: BOS followed by all but the final token.
pub fn shift_right(target: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(target.len());
    v.push(BOS);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

/// Space-joined sentence.
pub fn join(words: &[String]) -> String {
    words.join(" ")
}

/// Whitespace tokenization used everywhere in the pipeline.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_string()).collect()
}
