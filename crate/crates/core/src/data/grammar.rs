use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::parse::ParseTree;

pub const DETERMINER: &str = "the";
pub const PASSIVE_AUX: &str = "was";
pub const AGENT_MARKER: &str = "by";
pub const EXPLETIVE: &str = "it";
pub const RELATIVIZER: &str = "that";

/// A transitive verb with its simple-past and past-participle forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verb {
    pub past: String,
    pub participle: String,
}

/// One semantic frame: indices into the grammar's lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frame {
    pub agent: usize,
    pub action: usize,
    pub patient: usize,
    pub manner: usize,
}

/// Syntactic realization of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    /// `the dog chased the cat quickly`
    Active,
    /// `the cat was chased by the dog quickly`
    Passive,
    /// `quickly the dog chased the cat`
    AdverbFronted,
    /// `it was the dog that chased the cat quickly`
    Cleft,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::Active,
        Template::Passive,
        Template::AdverbFronted,
        Template::Cleft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Active => "active",
            Template::Passive => "passive",
            Template::AdverbFronted => "adverb-fronted",
            Template::Cleft => "cleft",
        }
    }

    /// Terminal-free parse tree shared by every sentence of this template.
    pub fn schema(self) -> ParseTree {
        let n = ParseTree::node;
        let np = || n("NP", vec![n("DT", vec![]), n("NN", vec![])]);
        let advp = || n("ADVP", vec![n("RB", vec![])]);
        match self {
            Template::Active => n(
                "S",
                vec![np(), n("VP", vec![n("VBD", vec![]), np(), advp()])],
            ),
            Template::Passive => n(
                "S",
                vec![
                    np(),
                    n(
                        "VP",
                        vec![
                            n("VBD", vec![]),
                            n(
                                "VP",
                                vec![n("VBN", vec![]), n("PP", vec![n("IN", vec![]), np()])],
                            ),
                        ],
                    ),
                    advp(),
                ],
            ),
            Template::AdverbFronted => n(
                "S",
                vec![advp(), np(), n("VP", vec![n("VBD", vec![]), np()])],
            ),
            Template::Cleft => n(
                "S",
                vec![
                    n("NP", vec![n("PRP", vec![])]),
                    n("VBD", vec![]),
                    np(),
                    n(
                        "SBAR",
                        vec![
                            n("WDT", vec![]),
                            n("VP", vec![n("VBD", vec![]), np(), advp()]),
                        ],
                    ),
                ],
            ),
        }
    }
}

/// Lexicon plus templates of the synthetic paraphrase language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    pub nouns: Vec<String>,
    pub verbs: Vec<Verb>,
    pub adverbs: Vec<String>,
    pub templates: Vec<Template>,
}

impl Default for Grammar {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let verbs = [
            ("chased", "chased"),
            ("followed", "followed"),
            ("watched", "watched"),
            ("helped", "helped"),
            ("pushed", "pushed"),
            ("called", "called"),
            ("pulled", "pulled"),
            ("greeted", "greeted"),
        ];
        Grammar {
            nouns: s(&[
                "dog", "cat", "bird", "horse", "fox", "child", "teacher", "farmer", "doctor",
                "student", "king", "queen",
            ]),
            verbs: verbs
                .iter()
                .map(|(p, pp)| Verb {
                    past: p.to_string(),
                    participle: pp.to_string(),
                })
                .collect(),
            adverbs: s(&["quickly", "slowly", "quietly", "gladly", "calmly"]),
            templates: Template::ALL.to_vec(),
        }
    }
}

impl Grammar {
    /// Number of frames with distinct agent and patient.
    pub fn frame_capacity(&self) -> usize {
        let n = self.nouns.len();
        n * n.saturating_sub(1) * self.verbs.len() * self.adverbs.len()
    }

    /// Frame with the given index in `0..frame_capacity()`.
    pub fn frame(&self, index: usize) -> Frame {
        let n = self.nouns.len();
        let mut i = index;
        let manner = i % self.adverbs.len();
        i /= self.adverbs.len();
        let action = i % self.verbs.len();
        i /= self.verbs.len();
        let patient_slot = i % (n - 1);
        let agent = i / (n - 1);
        let patient = if patient_slot >= agent {
            patient_slot + 1
        } else {
            patient_slot
        };
        Frame {
            agent,
            action,
            patient,
            manner,
        }
    }

    pub fn render(&self, template: Template, f: Frame) -> Vec<String> {
        let det = DETERMINER.to_string();
        let agent = self.nouns[f.agent].clone();
        let patient = self.nouns[f.patient].clone();
        let verb = &self.verbs[f.action];
        let adv = self.adverbs[f.manner].clone();
        match template {
            Template::Active => vec![
                det.clone(),
                agent,
                verb.past.clone(),
                det,
                patient,
                adv,
            ],
            Template::Passive => vec![
                det.clone(),
                patient,
                PASSIVE_AUX.to_string(),
                verb.participle.clone(),
                AGENT_MARKER.to_string(),
                det,
                agent,
                adv,
            ],
            Template::AdverbFronted => vec![
                adv,
                det.clone(),
                agent,
                verb.past.clone(),
                det,
                patient,
            ],
            Template::Cleft => vec![
                EXPLETIVE.to_string(),
                PASSIVE_AUX.to_string(),
                det.clone(),
                agent,
                RELATIVIZER.to_string(),
                verb.past.clone(),
                det,
                patient,
                adv,
            ],
        }
    }

    /// Words of a sentence that are not function words, sorted.
    pub fn content_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<String> {
        let mut out: Vec<String> = words
            .iter()
            .map(|w| w.as_ref())
            .filter(|w| !self.is_function_word(w))
            .map(|w| w.to_string())
            .collect();
        out.sort();
        out
    }

    pub fn is_noun(&self, w: &str) -> bool {
        self.nouns.iter().any(|n| n == w)
    }

    pub fn is_adverb(&self, w: &str) -> bool {
        self.adverbs.iter().any(|a| a == w)
    }

    pub fn is_past(&self, w: &str) -> bool {
        self.verbs.iter().any(|v| v.past == w)
    }

    pub fn is_participle(&self, w: &str) -> bool {
        self.verbs.iter().any(|v| v.participle == w)
    }

    pub fn is_function_word(&self, w: &str) -> bool {
        [DETERMINER, PASSIVE_AUX, AGENT_MARKER, EXPLETIVE, RELATIVIZER].contains(&w)
    }

    pub fn knows(&self, w: &str) -> bool {
        self.is_function_word(w)
            || self.is_noun(w)
            || self.is_adverb(w)
            || self.is_past(w)
            || self.is_participle(w)
    }

    /// Every surface word, in a fixed order.
    pub fn words(&self) -> Vec<String> {
        let mut out: Vec<String> = [DETERMINER, PASSIVE_AUX, AGENT_MARKER, EXPLETIVE, RELATIVIZER]
            .iter()
            .map(|w| w.to_string())
            .collect();
        out.extend(self.nouns.iter().cloned());
        for v in &self.verbs {
            out.push(v.past.clone());
            if v.participle != v.past {
                out.push(v.participle.clone());
            }
        }
        out.extend(self.adverbs.iter().cloned());
        out
    }

    /// Every nonterminal and part-of-speech label used by the schemas.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        fn go(t: &ParseTree, out: &mut Vec<String>) {
            if !out.iter().any(|l| l == t.label()) {
                out.push(t.label().to_string());
            }
            for c in t.children() {
                go(c, out);
            }
        }
        for t in &self.templates {
            go(&t.schema(), &mut out);
        }
        out
    }
}
