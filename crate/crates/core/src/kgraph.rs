//! Medical knowledge triples, dictionary entity matching over questions, and
//! the `[BOS] Q [SEP] I [SEP]` supplemented input.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Reject;
use crate::error::{Error, Result};
use crate::tokenizer::{normalize, BOS, SEP};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl KnowledgeTriple {
    /// `head relation tail。`
    pub fn serialize(&self) -> String {
        format!("{} {} {}。", self.head, self.relation, self.tail)
    }
}

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<char, usize>,
    terminal: bool,
}

/// Triples in load order plus a character trie over their heads.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    triples: Vec<KnowledgeTriple>,
    by_head: BTreeMap<String, Vec<usize>>,
    trie: Vec<TrieNode>,
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        KnowledgeGraph {
            triples: Vec::new(),
            by_head: BTreeMap::new(),
            trie: vec![TrieNode::default()],
        }
    }
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph, dropping exact duplicates (after trimming and NFC).
    pub fn from_triples(triples: impl IntoIterator<Item = KnowledgeTriple>) -> Result<Self> {
        let mut g = Self::new();
        for t in triples {
            g.insert(t)?;
        }
        Ok(g)
    }

    /// Adds a triple; returns false when it was already present.
    pub fn insert(&mut self, t: KnowledgeTriple) -> Result<bool> {
        let t = KnowledgeTriple {
            head: normalize(t.head.trim()),
            relation: normalize(t.relation.trim()),
            tail: normalize(t.tail.trim()),
        };
        if t.head.is_empty() || t.relation.is_empty() || t.tail.is_empty() {
            return Err(Error::invalid("triple fields must be non-empty"));
        }
        if let Some(ids) = self.by_head.get(&t.head) {
            if ids.iter().any(|&i| self.triples[i] == t) {
                return Ok(false);
            }
        }
        let mut node = 0;
        for c in t.head.chars() {
            node = match self.trie[node].children.get(&c) {
                Some(&n) => n,
                None => {
                    self.trie.push(TrieNode::default());
                    let n = self.trie.len() - 1;
                    self.trie[node].children.insert(c, n);
                    n
                }
            };
        }
        self.trie[node].terminal = true;
        self.by_head.entry(t.head.clone()).or_default().push(self.triples.len());
        self.triples.push(t);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    /// All triples with this head, in load order.
    pub fn lookup(&self, head: &str) -> Vec<&KnowledgeTriple> {
        self.by_head
            .get(head)
            .map(|ids| ids.iter().map(|&i| &self.triples[i]).collect())
            .unwrap_or_default()
    }

    /// Char length of the longest indexed head starting at `chars[start]`.
    fn longest_at(&self, chars: &[char], start: usize) -> Option<usize> {
        let mut node = 0;
        let mut best = None;
        for (k, c) in chars[start..].iter().enumerate() {
            match self.trie[node].children.get(c) {
                Some(&n) => node = n,
                None => break,
            }
            if self.trie[node].terminal {
                best = Some(k + 1);
            }
        }
        best
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub rejects: Vec<Reject>,
    pub duplicates: usize,
}

/// Parses `{head, relation, tail}` JSONL; malformed lines are reported.
pub fn parse_triples(text: &str, origin: &Path) -> LoadedGraph {
    let mut out = LoadedGraph::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| Reject { line: i + 1, reason };
        match serde_json::from_str::<KnowledgeTriple>(line) {
            Ok(t) => match out.graph.insert(t) {
                Ok(true) => {}
                Ok(false) => out.duplicates += 1,
                Err(e) => out.rejects.push(reject(e.to_string())),
            },
            Err(e) => out.rejects.push(reject(e.to_string())),
        }
    }
    if out.graph.is_empty() {
        log::warn!("{}: knowledge graph is empty", origin.display());
    }
    if !out.rejects.is_empty() {
        log::warn!("{}: {} malformed triple lines", origin.display(), out.rejects.len());
    }
    out
}

pub fn load_triples(path: &Path) -> Result<LoadedGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_triples(&text, path))
}

/// Greedy longest-match scan: at each position take the longest head that
/// starts there and jump past it. Entities are returned once, in order of
/// first occurrence.
pub fn match_entities(question: &str, graph: &KnowledgeGraph) -> Vec<String> {
    let chars: Vec<char> = normalize(question).chars().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match graph.longest_at(&chars, i) {
            Some(len) => {
                let e: String = chars[i..i + len].iter().collect();
                if seen.insert(e.clone()) {
                    out.push(e);
                }
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

/// Serialized triples of the matched entities, cut at the last whole triple
/// that fits in `max_chars` characters.
pub fn retrieve(question: &str, graph: &KnowledgeGraph, max_chars: usize) -> String {
    let mut out = String::new();
    let mut used = 0;
    for e in match_entities(question, graph) {
        for t in graph.lookup(&e) {
            let s = t.serialize();
            let n = s.chars().count();
            if used + n > max_chars {
                return out;
            }
            out.push_str(&s);
            used += n;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Supplemented {
    pub ids: Vec<u32>,
    pub question: Range<usize>,
    pub supplement: Range<usize>,
}

/// `[BOS] Q [SEP] I [SEP]` within `max_len`, cutting the tail of `I` first
/// and then the tail of `Q`.
pub fn supplement(question: &[u32], info: &[u32], max_len: usize) -> Result<Supplemented> {
    if max_len < 3 {
        return Err(Error::invalid(format!("max_len {max_len} cannot hold [BOS] [SEP] [SEP]")));
    }
    let room = max_len - 3;
    let q = question.len().min(room);
    let i = info.len().min(room - q);
    if q < question.len() || i < info.len() {
        log::debug!("supplemented input truncated: question {q}/{}, supplement {i}/{}", question.len(), info.len());
    }
    let mut ids = Vec::with_capacity(3 + q + i);
    ids.push(BOS);
    ids.extend_from_slice(&question[..q]);
    ids.push(SEP);
    ids.extend_from_slice(&info[..i]);
    ids.push(SEP);
    Ok(Supplemented {
        ids,
        question: 1..1 + q,
        supplement: 2 + q..2 + q + i,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: &str, r: &str, tl: &str) -> KnowledgeTriple {
        KnowledgeTriple {
            head: h.into(),
            relation: r.into(),
            tail: tl.into(),
        }
    }

    #[test]
    fn parse_dedups_and_reports() {
        let text = r#"{"head":"头痛","relation":"症状","tail":"恶心"}
{"head":"头痛","relation":"症状","tail":"恶心"}
not json
{"head":"","relation":"x","tail":"y"}

{"head":"感冒","relation":"科室","tail":"内科"}"#;
        let g = parse_triples(text, Path::new("kg.jsonl"));
        assert_eq!(g.graph.len(), 2);
        assert_eq!(g.duplicates, 1);
        assert_eq!(g.rejects.iter().map(|r| r.line).collect::<Vec<_>>(), vec![3, 4]);
        assert!(parse_triples("", Path::new("e")).graph.is_empty());
    }

    #[test]
    fn lookup_returns_all_and_only_the_head() {
        let g = KnowledgeGraph::from_triples([t("头痛", "症状", "恶心"), t("头", "部位", "上"), t("头痛", "科室", "神经内科")]).unwrap();
        assert_eq!(g.lookup("头痛").len(), 2);
        assert_eq!(g.lookup("头").len(), 1);
        assert!(g.lookup("痛").is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let g = KnowledgeGraph::from_triples([t("头痛", "症状", "恶心")]).unwrap();
        assert_eq!(match_entities("头痛怎么办", &g), vec!["头痛"]);
        let g = KnowledgeGraph::from_triples([t("头", "部位", "上"), t("头痛", "症状", "恶心")]).unwrap();
        assert_eq!(match_entities("头痛怎么办", &g), vec!["头痛"]);
        assert_eq!(match_entities("头晕头痛头", &g), vec!["头", "头痛"]);
        assert!(match_entities("头痛", &KnowledgeGraph::new()).is_empty());
    }

    #[test]
    fn retrieve_keeps_whole_triples() {
        let g = KnowledgeGraph::from_triples([t("头痛", "症状", "恶心"), t("头痛", "科室", "神经内科"), t("发热", "症状", "畏寒")]).unwrap();
        assert_eq!(retrieve("头痛怎么办", &g, 100), "头痛 症状 恶心。头痛 科室 神经内科。");
        assert_eq!(retrieve("头痛怎么办", &g, 9), "头痛 症状 恶心。");
        assert_eq!(retrieve("头痛怎么办", &g, 19), "头痛 症状 恶心。");
        assert_eq!(retrieve("头痛怎么办", &g, 8), "");
        assert_eq!(retrieve("胃痛", &g, 100), "");
    }

    #[test]
    fn supplement_layout() {
        let q = [10, 11, 12, 13, 14];
        let i = [20, 21, 22, 23];
        let s = supplement(&q, &i, 12).unwrap();
        assert_eq!(s.ids, vec![BOS, 10, 11, 12, 13, 14, SEP, 20, 21, 22, 23, SEP]);
        assert_eq!((s.question.clone(), s.supplement.clone()), (1..6, 7..11));
        let s = supplement(&q, &i, 10).unwrap();
        assert_eq!(s.ids, vec![BOS, 10, 11, 12, 13, 14, SEP, 20, 21, SEP]);
        let s = supplement(&q, &i, 6).unwrap();
        assert_eq!(s.ids, vec![BOS, 10, 11, 12, SEP, SEP]);
        assert!(s.supplement.is_empty());
        assert_eq!(supplement(&q, &[], 64).unwrap().ids, vec![BOS, 10, 11, 12, 13, 14, SEP, SEP]);
        assert!(supplement(&q, &i, 2).is_err());
    }
}
