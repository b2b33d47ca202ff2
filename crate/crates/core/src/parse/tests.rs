use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::*;
use crate::data::grammar::{Grammar, Template};
use crate::error::Error;
use crate::rng::{stream, Stream};

fn t(s: &str) -> ParseTree {
    parse_linearized_str(s).unwrap()
}

fn random_tree(rng: &mut impl Rng, depth: usize, max_depth: usize, max_arity: usize, labels: &[&str]) -> ParseTree {
    let label = labels[rng.random_range(0..labels.len())];
    let arity = if depth >= max_depth { 0 } else { rng.random_range(0..=max_arity) };
    let children = (0..arity)
        .map(|_| random_tree(rng, depth + 1, max_depth, max_arity, labels))
        .collect();
    ParseTree::node(label, children)
}

/// All ordered trees with exactly `n` nodes over `labels`.
fn trees_of_size(n: usize, labels: &[&str]) -> Vec<ParseTree> {
    let mut out = Vec::new();
    for l in labels {
        for kids in forests_of_size(n - 1, labels) {
            out.push(ParseTree::node(l, kids));
        }
    }
    out
}

fn forests_of_size(n: usize, labels: &[&str]) -> Vec<Vec<ParseTree>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for head in trees_of_size(first, labels) {
            for rest in forests_of_size(n - first, labels) {
                let mut f = vec![head.clone()];
                f.extend(rest);
                out.push(f);
            }
        }
    }
    out
}

#[test]
fn linearize_examples() {
    let s = ParseTree::leaf("S").unwrap();
    assert_eq!(linearize(&s), ["(", "S", ")"]);
    let svp = t("( S ( NP ) ( VP ) )");
    assert_eq!(linearize(&svp), ["(", "S", "(", "NP", ")", "(", "VP", ")", ")"]);
}

#[test]
fn linearize_round_trips_random_trees() {
    let mut rng = stream(7, Stream::Test);
    for _ in 0..1000 {
        let tree = random_tree(&mut rng, 1, 5, 3, &["S", "NP", "VP", "PP", "DT"]);
        assert_eq!(parse_linearized(&linearize(&tree)).unwrap(), tree);
        assert_eq!(parse_linearized_str(&tree.to_string()).unwrap(), tree);
    }
}

#[test]
fn parse_linearized_errors() {
    match parse_linearized(&["(", "S", "(", "NP", ")"]) {
        Err(Error::Parse { index, message }) => {
            assert_eq!(index, 5);
            assert!(message.contains("unbalanced"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_linearized(&["(", "S", ")", ")"]),
        Err(Error::Parse { index: 3, .. })
    ));
    assert!(matches!(
        parse_linearized(&["(", ")"]),
        Err(Error::Parse { index: 1, .. })
    ));
    assert!(parse_linearized::<&str>(&[]).is_err());
    assert!(ParseTree::leaf("A B").is_err());
    assert!(ParseTree::leaf("").is_err());
}

#[test]
fn prune_examples() {
    let tree = t("( S ( NP ( DT ( X ) ) ( NN ) ) ( VP ( VBD ) ) )");
    assert_eq!(tree.height(), 4);
    assert_eq!(prune_to_height(&tree, 4), tree);
    assert_eq!(prune_to_height(&tree, 9), tree);
    assert_eq!(prune_to_height(&tree, 1), t("( S )"));
    assert_eq!(
        prune_to_height(&tree, 3),
        t("( S ( NP ( DT ) ( NN ) ) ( VP ( VBD ) ) )")
    );
}

#[test]
fn prune_is_idempotent() {
    let mut rng = stream(11, Stream::Test);
    for _ in 0..300 {
        let tree = random_tree(&mut rng, 1, 5, 3, &["A", "B", "C"]);
        for h in 1..6 {
            let once = prune_to_height(&tree, h);
            assert_eq!(prune_to_height(&once, h), once);
            assert!(once.height() <= h);
        }
    }
}

#[test]
fn template_examples() {
    let tree = t("( S ( NP ( DT ) ( NN ) ) ( VP ( VBD ) ( NP ( DT ) ( NN ) ) ) )");
    assert_eq!(template(&tree, 2), "( S ( NP ) ( VP ) )");
    assert_eq!(template(&tree, 1), "( S )");
    assert_eq!(template(&tree.clone(), 3), template(&tree, 3));
}

#[test]
fn ted_examples() {
    let a = t("( S ( NP ) ( VP ) )");
    let b = t("( S ( NP ) ( VB ) )");
    assert_eq!(ted(&a, &a), 0);
    assert_eq!(ted(&a, &b), 1);
    assert_eq!(ted_bruteforce(Some(&a), Some(&b)).unwrap(), 1);
    assert_eq!(ted_with_empty(None, Some(&a)), 3);
    assert_eq!(ted_with_empty(Some(&a), None), 3);
    assert_eq!(ted_bruteforce(None, Some(&a)).unwrap(), 3);
    // Deleting an inner node re-parents its children.
    assert_eq!(ted(&t("( A ( B ( C ) ( D ) ) )"), &t("( A ( C ) ( D ) )")), 1);
}

#[test]
fn ted_matches_bruteforce_exhaustively() {
    let labels = ["a", "b"];
    let all: Vec<ParseTree> = (1..=4).flat_map(|n| trees_of_size(n, &labels)).collect();
    assert_eq!(all.len(), 102);
    for x in &all {
        for y in &all {
            let fast = ted(x, y);
            let slow = ted_bruteforce(Some(x), Some(y)).unwrap();
            assert_eq!(fast, slow, "{x} vs {y}");
        }
        assert_eq!(ted_bruteforce(Some(x), None).unwrap(), x.size());
    }
}

#[test]
fn ted_is_a_metric_on_random_triples() {
    let mut rng = stream(3, Stream::Test);
    for _ in 0..200 {
        let [a, b, c] = [0, 1, 2].map(|_| random_tree(&mut rng, 1, 3, 3, &["A", "B", "C"]));
        let (ab, ba, bc, ac) = (ted(&a, &b), ted(&b, &a), ted(&b, &c), ted(&a, &c));
        assert_eq!(ab, ba);
        assert_eq!(ab == 0, a == b);
        assert!(ac <= ab + bc);
    }
}

#[test]
fn bruteforce_rejects_large_inputs() {
    let a = t("( A ( B ) ( C ) ( D ) ( E ) )");
    assert!(matches!(ted_bruteforce(Some(&a), Some(&a)), Err(Error::Size(_))));
    let small = t("( A ( B ) )");
    assert_eq!(ted_bruteforce(Some(&small), Some(&small)).unwrap(), 0);
}

#[test]
fn sentence_parser_round_trips_every_template() {
    let g = Grammar::default();
    for idx in [0, 17, 999, g.frame_capacity() - 1] {
        let frame = g.frame(idx);
        for tpl in Template::ALL {
            let words = g.render(tpl, frame);
            assert_eq!(parse_sentence(&words, &g).unwrap(), tpl.schema(), "{words:?}");
        }
    }
}

#[test]
fn sentence_parser_failures() {
    let g = Grammar::default();
    assert!(matches!(
        parse_sentence(&["the", "the", "the"], &g),
        Err(SentenceError::Syntax { index: 1, .. })
    ));
    assert!(matches!(
        parse_sentence::<&str>(&[], &g),
        Err(SentenceError::Syntax { index: 0, .. })
    ));
    assert!(matches!(
        parse_sentence(&["the", "zebra", "chased"], &g),
        Err(SentenceError::UnknownWord { index: 1, .. })
    ));
    // Trailing material after a complete sentence.
    let mut words: Vec<String> = g.render(Template::Active, g.frame(0));
    words.push("quickly".to_string());
    assert!(matches!(parse_sentence(&words, &g), Err(SentenceError::Syntax { .. })));
}

#[test]
fn templates_are_pairwise_distinct_at_height_two() {
    let g = Grammar::default();
    let tpls: Vec<String> = g.templates.iter().map(|x| template(&x.schema(), 2)).collect();
    for i in 0..tpls.len() {
        for j in i + 1..tpls.len() {
            assert_ne!(tpls[i], tpls[j]);
        }
    }
}
