use std::collections::BTreeMap;

/// Multiset of the order-`n` n-grams of a token sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramCounts<'a> {
    pub n: usize,
    pub counts: BTreeMap<Vec<&'a str>, usize>,
}

impl<'a> NgramCounts<'a> {
    pub fn new<S: AsRef<str>>(tokens: &'a [S], n: usize) -> Self {
        let mut counts = BTreeMap::new();
        if n > 0 && tokens.len() >= n {
            for w in tokens.windows(n) {
                *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
            }
        }
        NgramCounts { n, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &[&str]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// `Σ min(self, other)` over shared n-grams.
    pub fn overlap(&self, other: &NgramCounts<'_>) -> usize {
        self.counts.iter().map(|(g, &c)| c.min(other.get(g))).sum()
    }

    /// `Σ min(count, max count in any reference)`.
    pub fn clipped(&self, refs: &[NgramCounts<'_>]) -> usize {
        self.counts
            .iter()
            .map(|(g, &c)| c.min(refs.iter().map(|r| r.get(g)).max().unwrap_or(0)))
            .sum()
    }
}
