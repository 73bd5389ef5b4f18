//! Contiguous n-gram counting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 5;

pub type NGram = Vec<String>;

/// Occurrence counts of every contiguous subsequence of length `1..=max_len`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramTable {
    pub max_len: usize,
    pub counts: BTreeMap<NGram, u64>,
    /// `totals[L - 1]` is the number of L-grams enumerated.
    pub totals: Vec<u64>,
}

impl NGramTable {
    pub fn count(&self, ngram: &[String]) -> u64 {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    pub fn total(&self, len: usize) -> u64 {
        if len == 0 {
            return 0;
        }
        self.totals.get(len - 1).copied().unwrap_or(0)
    }

    /// Count normalized by the number of n-grams of the same length.
    pub fn proportion(&self, ngram: &[String]) -> f64 {
        let total = self.total(ngram.len());
        if total == 0 {
            0.0
        } else {
            self.count(ngram) as f64 / total as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn mine_ngrams<S: AsRef<[String]>>(sequences: &[S], max_len: usize) -> Result<NGramTable> {
    if max_len == 0 {
        return Err(Error::param("max_len must be at least 1"));
    }
    let mut table = NGramTable {
        max_len,
        counts: BTreeMap::new(),
        totals: vec![0; max_len],
    };
    for seq in sequences {
        let seq = seq.as_ref();
        for len in 1..=max_len.min(seq.len()) {
            for window in seq.windows(len) {
                *table.counts.entry(window.to_vec()).or_insert(0) += 1;
                table.totals[len - 1] += 1;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn enumerates_aba() {
        let t = mine_ngrams(&[s(&["A", "B", "A"])], 2).unwrap();
        assert_eq!(t.count(&s(&["A"])), 2);
        assert_eq!(t.count(&s(&["B"])), 1);
        assert_eq!(t.count(&s(&["A", "B"])), 1);
        assert_eq!(t.count(&s(&["B", "A"])), 1);
        assert_eq!(t.total(2), 2);
        assert_eq!(t.counts.len(), 4);
    }

    #[test]
    fn additive_over_sequences() {
        let t = mine_ngrams(&[s(&["A"]), s(&["A"])], 5).unwrap();
        assert_eq!(t.count(&s(&["A"])), 2);
    }

    #[test]
    fn length_six_gives_two_five_grams() {
        let t = mine_ngrams(&[s(&["a", "b", "c", "d", "e", "f"])], 5).unwrap();
        assert_eq!(t.total(5), 2);
    }

    #[test]
    fn empty_input_and_bad_len() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(mine_ngrams(&empty, 3).unwrap().is_empty());
        assert!(mine_ngrams(&empty, 0).is_err());
    }

    proptest! {
        #[test]
        fn totals_match_window_counts(
            seqs in proptest::collection::vec(proptest::collection::vec(0u8..4, 0..12), 0..8),
            max_len in 1usize..6,
        ) {
            let seqs: Vec<Vec<String>> = seqs.into_iter().map(|q| q.into_iter().map(|c| c.to_string()).collect()).collect();
            let t = mine_ngrams(&seqs, max_len).unwrap();
            for len in 1..=max_len {
                let expected: u64 = seqs.iter().map(|q| (q.len() + 1).saturating_sub(len) as u64).sum();
                prop_assert_eq!(t.total(len), expected);
                let summed: u64 = t.counts.iter().filter(|(k, _)| k.len() == len).map(|(_, v)| *v).sum();
                prop_assert_eq!(summed, expected);
            }
            prop_assert!(t.counts.values().all(|c| *c >= 1));
        }
    }
}
