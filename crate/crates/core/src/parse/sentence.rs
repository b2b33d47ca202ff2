use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ParseTree;
use crate::data::grammar::{
    Grammar, AGENT_MARKER, DETERMINER, EXPLETIVE, PASSIVE_AUX, RELATIVIZER,
};

/// Why a word sequence is outside the synthetic grammar.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SentenceError {
    #[error("unknown word {word:?} at position {index}")]
    UnknownWord { index: usize, word: String },
    #[error("syntax error at position {index}: expected {expected}")]
    Syntax { index: usize, expected: &'static str },
}

struct Cursor<'w, S> {
    words: &'w [S],
    pos: usize,
}

impl<S: AsRef<str>> Cursor<'_, S> {
    fn peek(&self) -> Option<&str> {
        self.words.get(self.pos).map(|w| w.as_ref())
    }

    fn fail(&self, expected: &'static str) -> SentenceError {
        SentenceError::Syntax {
            index: self.pos,
            expected,
        }
    }

    fn take_if(&mut self, pred: impl Fn(&str) -> bool, expected: &'static str) -> Result<(), SentenceError> {
        match self.peek() {
            Some(w) if pred(w) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.fail(expected)),
        }
    }

    fn word(&mut self, w: &'static str) -> Result<(), SentenceError> {
        self.take_if(|x| x == w, w)
    }
}

fn leaf(label: &str) -> ParseTree {
    ParseTree::node(label, Vec::new())
}

/// Deterministic recursive-descent parse against the synthetic grammar.
///
/// One word of lookahead decides every branch.
pub fn parse_sentence<S: AsRef<str>>(words: &[S], grammar: &Grammar) -> Result<ParseTree, SentenceError> {
    if let Some((index, w)) = words
        .iter()
        .enumerate()
        .find(|(_, w)| !grammar.knows(w.as_ref()))
    {
        return Err(SentenceError::UnknownWord {
            index,
            word: w.as_ref().into(),
        });
    }
    let mut c = Cursor { words, pos: 0 };
    let np = |c: &mut Cursor<'_, S>| -> Result<ParseTree, SentenceError> {
        c.word(DETERMINER)?;
        c.take_if(|w| grammar.is_noun(w), "noun")?;
        Ok(ParseTree::node("NP", vec![leaf("DT"), leaf("NN")]))
    };
    let advp = |c: &mut Cursor<'_, S>| -> Result<ParseTree, SentenceError> {
        c.take_if(|w| grammar.is_adverb(w), "adverb")?;
        Ok(ParseTree::node("ADVP", vec![leaf("RB")]))
    };
    let tree = match c.peek() {
        Some(DETERMINER) => {
            let subject = np(&mut c)?;
            match c.peek() {
                Some(PASSIVE_AUX) => {
                    c.pos += 1;
                    c.take_if(|w| grammar.is_participle(w), "participle")?;
                    c.word(AGENT_MARKER)?;
                    let agent = np(&mut c)?;
                    let adv = advp(&mut c)?;
                    ParseTree::node(
                        "S",
                        vec![
                            subject,
                            ParseTree::node(
                                "VP",
                                vec![
                                    leaf("VBD"),
                                    ParseTree::node(
                                        "VP",
                                        vec![leaf("VBN"), ParseTree::node("PP", vec![leaf("IN"), agent])],
                                    ),
                                ],
                            ),
                            adv,
                        ],
                    )
                }
                Some(w) if grammar.is_past(w) => {
                    c.pos += 1;
                    let object = np(&mut c)?;
                    let adv = advp(&mut c)?;
                    ParseTree::node(
                        "S",
                        vec![subject, ParseTree::node("VP", vec![leaf("VBD"), object, adv])],
                    )
                }
                _ => return Err(c.fail("past-tense verb or 'was'")),
            }
        }
        Some(EXPLETIVE) => {
            c.pos += 1;
            c.word(PASSIVE_AUX)?;
            let focus = np(&mut c)?;
            c.word(RELATIVIZER)?;
            c.take_if(|w| grammar.is_past(w), "past-tense verb")?;
            let object = np(&mut c)?;
            let adv = advp(&mut c)?;
            ParseTree::node(
                "S",
                vec![
                    ParseTree::node("NP", vec![leaf("PRP")]),
                    leaf("VBD"),
                    focus,
                    ParseTree::node(
                        "SBAR",
                        vec![
                            leaf("WDT"),
                            ParseTree::node("VP", vec![leaf("VBD"), object, adv]),
                        ],
                    ),
                ],
            )
        }
        Some(w) if grammar.is_adverb(w) => {
            let adv = advp(&mut c)?;
            let subject = np(&mut c)?;
            c.take_if(|w| grammar.is_past(w), "past-tense verb")?;
            let object = np(&mut c)?;
            ParseTree::node(
                "S",
                vec![adv, subject, ParseTree::node("VP", vec![leaf("VBD"), object])],
            )
        }
        _ => return Err(c.fail("'the', 'it' or an adverb")),
    };
    if c.pos != words.len() {
        return Err(c.fail("end of sentence"));
    }
    Ok(tree)
}
