use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{encode_tensor, ModelWeights};
use crate::tensor::Tensor;

/// The frozen encoder's view of a parse, pooled to `|p|` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseEncoding {
    pub values: Tensor,
    /// Space-joined linearized parse the encoding was computed from.
    pub source_parse: String,
}

/// Adaptive mean pooling of an `n × d` matrix to `p` rows.
///
/// Row `j` averages input rows `⌊j·n/p⌋ .. ⌊(j+1)·n/p⌋`; when that range is
/// empty (`n < p`) it copies row `⌊j·n/p⌋`.
pub fn pool_rows(x: &Tensor, p: usize) -> Result<Tensor> {
    let (n, d) = match x.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::Shape(alloc::format!("pool_rows expects a matrix, got {s:?}"))),
    };
    if p == 0 {
        return Err(Error::Contract("pooling to zero rows".into()));
    }
    let mut out = Vec::with_capacity(p * d);
    for j in 0..p {
        let lo = j * n / p;
        let hi = ((j + 1) * n / p).max(lo + 1);
        let mut row = alloc::vec![0.0; d];
        for r in lo..hi {
            for (acc, v) in row.iter_mut().zip(x.row(r)) {
                *acc += v;
            }
        }
        let count = (hi - lo) as f64;
        out.extend(row.into_iter().map(|v| v / count));
    }
    Tensor::new(alloc::vec![p, d], out)
}

/// Encodes parse tokens alone (no prefixes) and pools to `prefix_len` rows.
/// The result is a plain tensor, detached from any tape.
pub fn encode_parse(parse_ids: &[usize], weights: &ModelWeights, source_parse: &str) -> Result<ParseEncoding> {
    if parse_ids.is_empty() {
        return Err(Error::Degenerate("empty parse".into()));
    }
    let states = encode_tensor(weights, parse_ids, None)?;
    let mut values = pool_rows(&states, weights.config().prefix_len)?;
    values.set_requires_grad(false);
    Ok(ParseEncoding {
        values,
        source_parse: source_parse.into(),
    })
}

/// Parse encodings keyed by linearized parse string.
///
/// Valid only while the backbone it was filled from is unchanged.
#[derive(Debug, Clone, Default)]
pub struct ParseEncodingCache {
    map: BTreeMap<String, ParseEncoding>,
    hits: usize,
    misses: usize,
}

impl ParseEncodingCache {
    pub fn new() -> Self {
        ParseEncodingCache::default()
    }

    pub fn get(&self, key: &str) -> Option<&ParseEncoding> {
        self.map.get(key)
    }

    pub fn get_or_compute(&mut self, key: &str, parse_ids: &[usize], weights: &ModelWeights) -> Result<&ParseEncoding> {
        if self.map.contains_key(key) {
            self.hits += 1;
        } else {
            self.misses += 1;
            let e = encode_parse(parse_ids, weights, key)?;
            self.map.insert(key.into(), e);
        }
        Ok(&self.map[key])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `(hits, misses)` since creation.
    pub fn stats(&self) -> (usize, usize) {
        (self.hits, self.misses)
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}
