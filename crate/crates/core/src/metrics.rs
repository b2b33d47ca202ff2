//! Alignment metrics (BLEU, ROUGE) and syntactic conformance (TMA, TED-3).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Grammar, ParaphraseExample};
use crate::error::{Error, Result};
use crate::parse::{parse_sentence, prune_to_height, ted, template, ParseTree};

/// Height at which TED-3 compares trees.
pub const TED_HEIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    /// Percentage in `[0, 100]`.
    pub tma: f64,
    pub ted3: f64,
    pub n_examples: usize,
    pub n_parse_failures: usize,
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut m = BTreeMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped multiset intersection size and candidate n-gram count.
fn overlap<S: AsRef<str>, T: AsRef<str>>(cand: &[S], refr: &[T], n: usize) -> (usize, usize) {
    let c = ngrams(cand, n);
    let r = ngrams(refr, n);
    let matches = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, c.values().sum())
}

fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: {a} candidates vs {b} references")));
    }
    Ok(())
}

/// Corpus-level BLEU-4 with add-one smoothing of zero higher-order counts.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<T>]) -> Result<f64> {
    check_aligned(candidates.len(), references.len(), "bleu")?;
    if candidates.is_empty() {
        return Err(Error::EmptyBatch("bleu"));
    }
    let mut num = [0usize; 4];
    let mut den = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let (m, t) = overlap(c, r, n);
            num[n - 1] += m;
            den[n - 1] += t;
        }
    }
    if c_len == 0 || num[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let (m, d) = if n > 0 && num[n] == 0 {
            (num[n] + 1, den[n] + 1)
        } else {
            (num[n], den[n])
        };
        log_p += libm::log(m as f64 / d as f64) / 4.0;
    }
    let bp = libm::exp(1.0 - r_len as f64 / c_len as f64).min(1.0);
    Ok((bp * libm::exp(log_p)).clamp(0.0, 1.0))
}

fn f1(matches: usize, cand: usize, refr: usize) -> f64 {
    if matches == 0 || cand == 0 || refr == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand as f64;
    let r = matches as f64 / refr as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 over clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let (m, c) = overlap(candidate, reference, n);
    let r = reference.len().saturating_sub(n - 1);
    f1(m, c, r)
}

fn lcs<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: F1 of longest-common-subsequence precision and recall.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> f64 {
    f1(lcs(candidate, reference), candidate.len(), reference.len())
}

/// Generated parse or a failure to parse (`None`).
pub type MaybeParse = Option<ParseTree>;

/// Percentage of examples whose height-`h` templates agree.
pub fn tma(generated: &[MaybeParse], targets: &[ParseTree], h: usize) -> Result<f64> {
    check_aligned(generated.len(), targets.len(), "tma")?;
    if targets.is_empty() {
        return Err(Error::EmptyBatch("tma"));
    }
    let hits = generated
        .iter()
        .zip(targets)
        .filter(|(g, t)| g.as_ref().is_some_and(|g| template(g, h) == template(t, h)))
        .count();
    Ok(100.0 * hits as f64 / targets.len() as f64)
}

/// Distance of one generation to its target after pruning both to height 3.
pub fn ted3_single(generated: Option<&ParseTree>, target: &ParseTree) -> usize {
    let t = prune_to_height(target, TED_HEIGHT);
    match generated {
        Some(g) => ted(&prune_to_height(g, TED_HEIGHT), &t),
        None => t.size(),
    }
}

/// Mean [`ted3_single`] over the corpus.
pub fn ted3(generated: &[MaybeParse], targets: &[ParseTree]) -> Result<f64> {
    check_aligned(generated.len(), targets.len(), "ted3")?;
    if targets.is_empty() {
        return Err(Error::EmptyBatch("ted3"));
    }
    let total: usize = generated
        .iter()
        .zip(targets)
        .map(|(g, t)| ted3_single(g.as_ref(), t))
        .sum();
    Ok(total as f64 / targets.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ReportConfig<'g> {
    pub grammar: &'g Grammar,
    pub template_height: usize,
}

impl<'g> ReportConfig<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        ReportConfig {
            grammar,
            template_height: 2,
        }
    }
}

/// Scores word-level generations against the examples' targets.
pub fn build_report(
    generations: &[Vec<String>],
    examples: &[ParaphraseExample],
    config: &ReportConfig<'_>,
) -> Result<MetricsReport> {
    check_aligned(generations.len(), examples.len(), "report")?;
    if generations.is_empty() {
        return Err(Error::EmptyBatch("report"));
    }
    let refs: Vec<&Vec<String>> = examples.iter().map(|e| &e.tgt).collect();
    let refs_owned: Vec<Vec<&str>> = refs
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    let n = generations.len() as f64;
    let mean = |f: &dyn Fn(&Vec<String>, &Vec<String>) -> f64| -> f64 {
        generations.iter().zip(&refs).map(|(c, r)| f(c, r)).sum::<f64>() / n
    };
    let parses: Vec<MaybeParse> = generations
        .iter()
        .map(|g| parse_sentence(g, config.grammar).ok())
        .collect();
    let targets: Vec<ParseTree> = examples.iter().map(|e| e.target_parse.clone()).collect();
    Ok(MetricsReport {
        bleu: bleu(generations, &refs_owned)?,
        rouge1: mean(&|c, r| rouge_n(c, r, 1)),
        rouge2: mean(&|c, r| rouge_n(c, r, 2)),
        rouge_l: mean(&|c, r| rouge_l(c, r)),
        tma: tma(&parses, &targets, config.template_height)?,
        ted3: ted3(&parses, &targets)?,
        n_examples: generations.len(),
        n_parse_failures: parses.iter().filter(|p| p.is_none()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, tokenize};
    use crate::parse::parse_linearized_str;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn bleu_examples() {
        let c = vec![w("the cat sat")];
        let r = vec![w("the cat sat down")];
        let expected = libm::exp(-1.0 / 3.0);
        assert!((bleu(&c, &r).unwrap() - expected).abs() < 1e-12);
        let same = vec![w("a b c d e"), w("f g h i")];
        assert!((bleu(&same, &same).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bleu(&[w("x y z")], &[w("a b c")]).unwrap(), 0.0);
        assert!(matches!(
            bleu::<String, String>(&[], &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_n(&w("a b c"), &w("a b d"), 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_n(&w("a b"), &w("c d"), 1), 0.0);
        assert_eq!(rouge_n(&w("a b c"), &w("a b c"), 2), 1.0);
        assert!((rouge_l(&w("a c b"), &w("a b c")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&Vec::<String>::new(), &w("a b")), 0.0);
        assert_eq!(rouge_l(&w("a b"), &w("a b")), 1.0);
    }

    #[test]
    fn syntactic_examples() {
        let a = parse_linearized_str("( S ( NP ) ( VP ) )").unwrap();
        let b = parse_linearized_str("( S ( NP ) ( VB ) )").unwrap();
        let four = vec![a.clone(); 4];
        let gen = vec![Some(a.clone()), Some(a.clone()), Some(a.clone()), Some(b.clone())];
        assert_eq!(tma(&gen, &four, 2).unwrap(), 75.0);
        assert_eq!(tma(&vec![None; 4], &four, 2).unwrap(), 0.0);
        assert_eq!(ted3(&[Some(a.clone())], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(ted3(&[Some(b)], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(ted3(&[None], &[a.clone()]).unwrap(), 3.0);
        assert!(matches!(tma(&[None], &four, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn perfect_copy_report() {
        let g = Grammar::default();
        let c = generate_corpus(2, 20, 5, 5, &g).unwrap();
        let gens: Vec<Vec<String>> = c.test.iter().map(|e| e.tgt.clone()).collect();
        let r = build_report(&gens, &c.test, &ReportConfig::new(&g)).unwrap();
        assert_eq!((r.bleu, r.rouge1, r.rouge2, r.rouge_l), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((r.tma, r.ted3, r.n_parse_failures), (100.0, 0.0, 0));
        assert!(matches!(
            build_report(&[], &[], &ReportConfig::new(&g)),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn report_matches_individual_metrics() {
        let g = Grammar::default();
        let c = generate_corpus(4, 20, 6, 6, &g).unwrap();
        // Sources are in-grammar sentences with (usually) the wrong template.
        let mut gens: Vec<Vec<String>> = c.test.iter().map(|e| e.src.clone()).collect();
        gens[0] = w("the dog dog");
        let r = build_report(&gens, &c.test, &ReportConfig::new(&g)).unwrap();
        let refs: Vec<Vec<String>> = c.test.iter().map(|e| e.tgt.clone()).collect();
        assert_eq!(r.bleu, bleu(&gens, &refs).unwrap());
        let m1: f64 = gens.iter().zip(&refs).map(|(a, b)| rouge_n(a, b, 1)).sum::<f64>() / 6.0;
        assert!((r.rouge1 - m1).abs() < 1e-15);
        let parses: Vec<MaybeParse> = gens.iter().map(|x| parse_sentence(x, &g).ok()).collect();
        let targets: Vec<ParseTree> = c.test.iter().map(|e| e.target_parse.clone()).collect();
        assert_eq!(r.tma, tma(&parses, &targets, 2).unwrap());
        assert_eq!(r.ted3, ted3(&parses, &targets).unwrap());
        assert_eq!(r.n_parse_failures, 1);
        assert!(r.tma < 100.0);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..8)
            .prop_map(|v| v.into_iter().map(|s| s.to_string()).collect())
    }

    proptest! {
        #[test]
        fn rouge_is_symmetric_and_bounded(a in sentence(), b in sentence()) {
            for n in 1..=2 {
                let x = rouge_n(&a, &b, n);
                prop_assert_eq!(x, rouge_n(&b, &a, n));
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert_eq!(rouge_l(&a, &b), rouge_l(&b, &a));
        }

        #[test]
        fn bleu_is_permutation_invariant(
            pairs in prop::collection::vec((sentence(), sentence()), 1..6),
            rot in 0usize..6,
        ) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let mut rotated = pairs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let (c2, r2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
            let x = bleu(&c, &r).unwrap();
            prop_assert_eq!(x, bleu(&c2, &r2).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
