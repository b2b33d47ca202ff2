//! Constituency trees: linearization, pruning, templates, tree edit distance
//! and a recursive-descent parser for the synthetic grammar.

mod sentence;
mod ted;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

pub use sentence::{parse_sentence, SentenceError};
pub use ted::{ted, ted_bruteforce, ted_with_empty, BRUTEFORCE_NODE_CAP};

/// Ordered, labeled constituency tree without terminal words.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParseTree {
    label: String,
    children: Vec<ParseTree>,
}

fn valid_label(label: &str) -> bool {
    !label.is_empty() && !label.chars().any(|c| c.is_whitespace() || c == '(' || c == ')')
}

impl ParseTree {
    pub fn new(label: impl Into<String>, children: Vec<ParseTree>) -> Result<Self> {
        let label = label.into();
        if !valid_label(&label) {
            return Err(Error::Contract(format!("invalid tree label {label:?}")));
        }
        Ok(ParseTree { label, children })
    }

    pub fn leaf(label: impl Into<String>) -> Result<Self> {
        ParseTree::new(label, Vec::new())
    }

    /// Builder for statically known labels.
    pub(crate) fn node(label: &str, children: Vec<ParseTree>) -> Self {
        debug_assert!(valid_label(label));
        ParseTree {
            label: label.to_string(),
            children,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn children(&self) -> &[ParseTree] {
        &self.children
    }

    /// A lone root has height 1.
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(|c| c.height()).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(|c| c.size()).sum::<usize>()
    }
}

/// Space-joined linearization, e.g. `( S ( NP ) ( VP ) )`.
impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "( {}", self.label)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, " )")
    }
}

/// Depth-first emission of `(`, label, children, `)`.
pub fn linearize(tree: &ParseTree) -> Vec<String> {
    let mut out = Vec::with_capacity(tree.size() * 3);
    fn go(t: &ParseTree, out: &mut Vec<String>) {
        out.push("(".to_string());
        out.push(t.label.clone());
        for c in &t.children {
            go(c, out);
        }
        out.push(")".to_string());
    }
    go(tree, &mut out);
    out
}

/// Strict inverse of [`linearize`].
pub fn parse_linearized<S: AsRef<str>>(tokens: &[S]) -> Result<ParseTree> {
    if tokens.is_empty() {
        return Err(Error::Parse {
            index: 0,
            message: "empty token sequence".into(),
        });
    }
    let mut pos = 0;
    let tree = parse_node(tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(Error::Parse {
            index: pos,
            message: format!("trailing token {:?}", tokens[pos].as_ref()),
        });
    }
    Ok(tree)
}

fn parse_node<S: AsRef<str>>(tokens: &[S], pos: &mut usize) -> Result<ParseTree> {
    let err = |index: usize, message: String| Error::Parse { index, message };
    match tokens.get(*pos).map(|t| t.as_ref()) {
        Some("(") => *pos += 1,
        Some(t) => return Err(err(*pos, format!("expected '(' but found {t:?}"))),
        None => return Err(err(*pos, "unbalanced parentheses at end of input".into())),
    }
    let label = match tokens.get(*pos).map(|t| t.as_ref()) {
        Some(l) if valid_label(l) => l.to_string(),
        Some(l) => return Err(err(*pos, format!("invalid label {l:?}"))),
        None => return Err(err(*pos, "unbalanced parentheses at end of input".into())),
    };
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match tokens.get(*pos).map(|t| t.as_ref()) {
            Some(")") => {
                *pos += 1;
                return Ok(ParseTree { label, children });
            }
            Some("(") => children.push(parse_node(tokens, pos)?),
            Some(t) => return Err(err(*pos, format!("unexpected token {t:?}"))),
            None => return Err(err(*pos, "unbalanced parentheses at end of input".into())),
        }
    }
}

/// Parses a space-joined linearized parse string.
pub fn parse_linearized_str(s: &str) -> Result<ParseTree> {
    let tokens: Vec<&str> = s.split_whitespace().collect();
    parse_linearized(&tokens)
}

/// Keeps nodes at depth `<= h` (the root has depth 1).
pub fn prune_to_height(tree: &ParseTree, h: usize) -> ParseTree {
    let h = h.max(1);
    ParseTree {
        label: tree.label.clone(),
        children: if h == 1 {
            Vec::new()
        } else {
            tree.children.iter().map(|c| prune_to_height(c, h - 1)).collect()
        },
    }
}

/// Canonical template string of the tree pruned to height `h`.
pub fn template(tree: &ParseTree, h: usize) -> String {
    prune_to_height(tree, h).to_string()
}

#[cfg(test)]
mod tests;
