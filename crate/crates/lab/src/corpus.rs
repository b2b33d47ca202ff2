//! Tab-separated corpus files and vocabulary files.
//!
//! One example per line: source sentence, target sentence and linearized
//! target parse, each space-joined, separated by TABs and terminated by LF.

use std::fs;
use std::path::{Path, PathBuf};

use pip_core::data::{Corpus, ParaphraseExample, Vocab};
use pip_core::parse::{linearize, parse_linearized};

use crate::error::{LabError, Result};

pub const TRAIN_FILE: &str = "train.tsv";
pub const DEV_FILE: &str = "dev.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn format_corpus(examples: &[ParaphraseExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.src.join(" "));
        out.push('\t');
        out.push_str(&ex.tgt.join(" "));
        out.push('\t');
        out.push_str(&linearize(&ex.target_parse).join(" "));
        out.push('\n');
    }
    out
}

/// Parses corpus text; `path` only labels errors.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<ParaphraseExample>> {
    let line_err = |line: usize, message: String| LabError::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    let field_err = |line: usize, field: usize, message: String| LabError::Field {
        path: path.to_path_buf(),
        line,
        field,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let n = i + 1;
        if line.contains('\r') {
            return Err(line_err(n, "carriage return (LF line endings required)".into()));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(line_err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let mut tokens = Vec::with_capacity(3);
        for (f, s) in fields.iter().enumerate() {
            if s.is_empty() {
                return Err(field_err(n, f + 1, "empty field".into()));
            }
            let toks: Vec<String> = s.split(' ').map(str::to_string).collect();
            if toks.iter().any(String::is_empty) {
                return Err(field_err(n, f + 1, "tokens must be separated by single spaces".into()));
            }
            tokens.push(toks);
        }
        let parse = parse_linearized(&tokens[2]).map_err(|e| field_err(n, 3, e.to_string()))?;
        let lin = tokens.pop().expect("three fields");
        if linearize(&parse) != lin {
            return Err(field_err(n, 3, "parse is not in canonical linearized form".into()));
        }
        let tgt = tokens.pop().expect("three fields");
        let src = tokens.pop().expect("three fields");
        out.push(ParaphraseExample::new(src, tgt, parse).map_err(|e| line_err(n, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, examples: &[ParaphraseExample]) -> Result<()> {
    fs::write(path, format_corpus(examples)).map_err(|e| LabError::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<ParaphraseExample>> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_corpus(&text, path)
}

pub fn format_vocab(vocab: &Vocab) -> String {
    vocab.tokens().iter().map(|t| format!("{t}\n")).collect()
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    fs::write(path, format_vocab(vocab)).map_err(|e| LabError::io(path, e))
}

/// Reads a vocabulary file: one token per line, line number − 1 = id.
pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let mut tokens = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        if line.is_empty() || line.contains(char::is_whitespace) {
            return Err(LabError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("invalid token {line:?}"),
            });
        }
        tokens.push(line.to_string());
    }
    Vocab::from_tokens(tokens).map_err(|e| LabError::Line {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// A directory holding the three splits and their vocabulary.
#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn write(&self, corpus: &Corpus, vocab: &Vocab) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| LabError::io(&self.root, e))?;
        write_corpus(&self.path(TRAIN_FILE), &corpus.train)?;
        write_corpus(&self.path(DEV_FILE), &corpus.dev)?;
        write_corpus(&self.path(TEST_FILE), &corpus.test)?;
        write_vocab(&self.path(VOCAB_FILE), vocab)
    }

    pub fn read(&self) -> Result<(Corpus, Vocab)> {
        if !self.root.is_dir() {
            return Err(LabError::io(
                &self.root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        let corpus = Corpus {
            train: read_corpus(&self.path(TRAIN_FILE))?,
            dev: read_corpus(&self.path(DEV_FILE))?,
            test: read_corpus(&self.path(TEST_FILE))?,
        };
        Ok((corpus, read_vocab(&self.path(VOCAB_FILE))?))
    }
}
