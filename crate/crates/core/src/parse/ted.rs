//! Ordered tree edit distance with unit costs.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ParseTree;
use crate::error::{Error, Result};

/// Combined node budget of [`ted_bruteforce`].
pub const BRUTEFORCE_NODE_CAP: usize = 8;

struct Indexed<'a> {
    labels: Vec<&'a str>,
    /// Leftmost leaf descendant of each node, postorder indices.
    lmld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(root: &'a ParseTree) -> Self {
        let mut labels = Vec::new();
        let mut lmld = Vec::new();
        fn walk<'a>(t: &'a ParseTree, labels: &mut Vec<&'a str>, lmld: &mut Vec<usize>) -> usize {
            let mut first_leaf = None;
            for c in &t.children {
                let l = walk(c, labels, lmld);
                first_leaf.get_or_insert(l);
            }
            let me = labels.len();
            labels.push(&t.label);
            let l = first_leaf.unwrap_or(me);
            lmld.push(l);
            l
        }
        walk(root, &mut labels, &mut lmld);
        // A keyroot is the highest node with a given leftmost leaf.
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[lmld[i]] {
                seen[lmld[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Indexed {
            labels,
            lmld,
            keyroots,
        }
    }
}

/// Zhang-Shasha tree edit distance between two trees.
pub fn ted(a: &ParseTree, b: &ParseTree) -> usize {
    let ta = Indexed::new(a);
    let tb = Indexed::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            forest_dist(&ta, &tb, i, j, &mut td, &mut fd);
        }
    }
    td[n - 1][m - 1]
}

fn forest_dist(
    ta: &Indexed<'_>,
    tb: &Indexed<'_>,
    i: usize,
    j: usize,
    td: &mut [Vec<usize>],
    fd: &mut [Vec<usize>],
) {
    let (li, lj) = (ta.lmld[i], tb.lmld[j]);
    let (rows, cols) = (i - li + 2, j - lj + 2);
    fd[0][0] = 0;
    for x in 1..rows {
        fd[x][0] = fd[x - 1][0] + 1;
    }
    for y in 1..cols {
        fd[0][y] = fd[0][y - 1] + 1;
    }
    for x in 1..rows {
        for y in 1..cols {
            let (ni, nj) = (li + x - 1, lj + y - 1);
            let del = fd[x - 1][y] + 1;
            let ins = fd[x][y - 1] + 1;
            if ta.lmld[ni] == li && tb.lmld[nj] == lj {
                let relabel = usize::from(ta.labels[ni] != tb.labels[nj]);
                let best = del.min(ins).min(fd[x - 1][y - 1] + relabel);
                fd[x][y] = best;
                td[ni][nj] = best;
            } else {
                let px = ta.lmld[ni] - li;
                let py = tb.lmld[nj] - lj;
                fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
            }
        }
    }
}

/// Edit distance where `None` is the empty tree.
pub fn ted_with_empty(a: Option<&ParseTree>, b: Option<&ParseTree>) -> usize {
    match (a, b) {
        (None, None) => 0,
        (None, Some(t)) | (Some(t), None) => t.size(),
        (Some(a), Some(b)) => ted(a, b),
    }
}

/// Exact edit distance by memoized recursion over ordered forests.
///
/// Only meant as a reference for small inputs: the combined node count may
/// not exceed [`BRUTEFORCE_NODE_CAP`].
pub fn ted_bruteforce(a: Option<&ParseTree>, b: Option<&ParseTree>) -> Result<usize> {
    let size = a.map_or(0, |t| t.size()) + b.map_or(0, |t| t.size());
    if size > BRUTEFORCE_NODE_CAP {
        return Err(Error::Size(format!(
            "{size} nodes exceed the cap of {BRUTEFORCE_NODE_CAP}"
        )));
    }
    let fa: Vec<&ParseTree> = a.into_iter().collect();
    let fb: Vec<&ParseTree> = b.into_iter().collect();
    let mut memo = BTreeMap::new();
    Ok(forest(&fa, &fb, &mut memo))
}

fn key(f: &[&ParseTree]) -> String {
    let mut s = String::new();
    for t in f {
        s.push_str(&format!("{t} "));
    }
    s
}

fn forest_size(f: &[&ParseTree]) -> usize {
    f.iter().map(|t| t.size()).sum()
}

fn forest(
    fa: &[&ParseTree],
    fb: &[&ParseTree],
    memo: &mut BTreeMap<(String, String), usize>,
) -> usize {
    if fa.is_empty() {
        return forest_size(fb);
    }
    if fb.is_empty() {
        return forest_size(fa);
    }
    let k = (key(fa), key(fb));
    if let Some(&d) = memo.get(&k) {
        return d;
    }
    let (v, rest_a) = fa.split_last().expect("non-empty");
    let (w, rest_b) = fb.split_last().expect("non-empty");

    // Delete the rightmost root of `fa`: its children take its place.
    let mut del_a: Vec<&ParseTree> = rest_a.to_vec();
    del_a.extend(v.children.iter());
    let delete = forest(&del_a, fb, memo) + 1;

    let mut ins_b: Vec<&ParseTree> = rest_b.to_vec();
    ins_b.extend(w.children.iter());
    let insert = forest(fa, &ins_b, memo) + 1;

    let ca: Vec<&ParseTree> = v.children.iter().collect();
    let cb: Vec<&ParseTree> = w.children.iter().collect();
    let matched = forest(rest_a, rest_b, memo)
        + forest(&ca, &cb, memo)
        + usize::from(v.label != w.label);

    let d = delete.min(insert).min(matched);
    memo.insert(k, d);
    d
}
