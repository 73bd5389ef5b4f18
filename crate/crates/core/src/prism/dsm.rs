//! Frequentist differential sequence mining baseline: i-ratio of normalized
//! n-gram frequencies plus a Welch t-test on per-sequence occurrence rates.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::prism::ngram::{mine_ngrams, NGram};

#[derive(Debug, Clone, PartialEq)]
pub struct DsmResult {
    pub ngram: NGram,
    pub in_support: u64,
    pub out_support: u64,
    pub in_proportion: f64,
    pub out_proportion: f64,
    /// `in_proportion / out_proportion`; `f64::INFINITY` when the n-gram never
    /// occurs in the out-group.
    pub i_ratio: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (n, mean, var)
    };
    let (n1, m1, v1) = stats(a);
    let (n2, m2, v2) = stats(b);
    let (s1, s2) = (v1 / n1, v2 / n2);
    let se2 = s1 + s2;
    if se2 <= 0.0 {
        return if m1 == m2 { (0.0, 1.0) } else { ((m1 - m2).signum() * f64::INFINITY, 0.0) };
    }
    let t = (m1 - m2) / se2.sqrt();
    let term = |s: f64, n: f64| if n > 1.0 { s * s / (n - 1.0) } else { 0.0 };
    let mut df = se2 * se2 / (term(s1, n1) + term(s2, n2));
    if !df.is_finite() || df <= 0.0 {
        df = (n1 + n2 - 2.0).max(1.0);
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    (t, p)
}

fn per_sequence_counts(seq: &[String], max_len: usize) -> HashMap<&[String], u64> {
    let mut out = HashMap::new();
    for len in 1..=max_len.min(seq.len()) {
        for w in seq.windows(len) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn rank(a: &DsmResult, b: &DsmResult) -> Ordering {
    b.i_ratio
        .total_cmp(&a.i_ratio)
        .then(a.p_value.total_cmp(&b.p_value))
        .then_with(|| a.ngram.cmp(&b.ngram))
}

/// Scores every n-gram seen in either group. Results are ranked by i-ratio
/// (infinite first), then p-value, then n-gram.
pub fn dsm_baseline<S: AsRef<[String]>>(in_sequences: &[S], out_sequences: &[S], max_len: usize) -> Result<Vec<DsmResult>> {
    if in_sequences.is_empty() || out_sequences.is_empty() {
        return Err(Error::EmptyGroup("DSM needs non-empty in- and out-groups".into()));
    }
    let in_table = mine_ngrams(in_sequences, max_len)?;
    let out_table = mine_ngrams(out_sequences, max_len)?;
    let in_counts: Vec<_> = in_sequences.iter().map(|s| (s.as_ref().len(), per_sequence_counts(s.as_ref(), max_len))).collect();
    let out_counts: Vec<_> = out_sequences.iter().map(|s| (s.as_ref().len(), per_sequence_counts(s.as_ref(), max_len))).collect();

    let rates = |group: &[(usize, HashMap<&[String], u64>)], ngram: &[String]| -> Vec<f64> {
        let l = ngram.len();
        group
            .iter()
            .filter(|(len, _)| *len >= l)
            .map(|(len, counts)| counts.get(ngram).copied().unwrap_or(0) as f64 / (len - l + 1) as f64)
            .collect()
    };

    let all: BTreeSet<&NGram> = in_table.counts.keys().chain(out_table.counts.keys()).collect();
    let mut results = Vec::with_capacity(all.len());
    for ngram in all {
        let in_support = in_table.count(ngram);
        let out_support = out_table.count(ngram);
        let in_proportion = in_table.proportion(ngram);
        let out_proportion = out_table.proportion(ngram);
        let i_ratio = if out_proportion > 0.0 {
            in_proportion / out_proportion
        } else if in_proportion > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        let a = rates(&in_counts, ngram);
        let b = rates(&out_counts, ngram);
        let (t_statistic, p_value) = if a.is_empty() || b.is_empty() { (0.0, 1.0) } else { welch_t_test(&a, &b) };
        results.push(DsmResult {
            ngram: ngram.clone(),
            in_support,
            out_support,
            in_proportion,
            out_proportion,
            i_ratio,
            t_statistic,
            p_value,
        });
    }
    results.sort_by(rank);
    Ok(results)
}

/// CSV with one row per n-gram; infinite i-ratios are written as `inf`.
pub fn write_dsm_csv(rows: &[(usize, DsmResult)], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "factor",
        "ngram",
        "in_support",
        "out_support",
        "in_proportion",
        "out_proportion",
        "i_ratio",
        "t_statistic",
        "p_value",
    ])?;
    let fmt = |v: f64| {
        if v.is_infinite() {
            if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
        } else {
            v.to_string()
        }
    };
    for (factor, r) in rows {
        w.write_record([
            factor.to_string(),
            r.ngram.join(" "),
            r.in_support.to_string(),
            r.out_support.to_string(),
            fmt(r.in_proportion),
            fmt(r.out_proportion),
            fmt(r.i_ratio),
            fmt(r.t_statistic),
            fmt(r.p_value),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter().map(|s| s.chars().map(|c| c.to_string()).collect()).collect()
    }

    #[test]
    fn identical_groups() {
        let g = seqs(&["ABCAB", "BCA", "AACB"]);
        let res = dsm_baseline(&g, &g, 3).unwrap();
        assert!(!res.is_empty());
        for r in res {
            assert_eq!(r.i_ratio, 1.0);
            assert!((r.p_value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ratio_definition() {
        // in: 3 of 50 unigrams are X; out: 1 of 50
        let mut inn = vec!["X".to_string(); 3];
        inn.extend(vec!["Y".to_string(); 47]);
        let mut out = vec!["X".to_string(); 1];
        out.extend(vec!["Y".to_string(); 49]);
        let res = dsm_baseline(&[inn], &[out], 1).unwrap();
        let x = res.iter().find(|r| r.ngram == vec!["X".to_string()]).unwrap();
        assert!((x.in_proportion - 0.06).abs() < 1e-15);
        assert!((x.out_proportion - 0.02).abs() < 1e-15);
        assert!((x.i_ratio - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exclusive_ngram_ranks_first() {
        let inn = seqs(&["ABZ", "ZAB", "AB"]);
        let out = seqs(&["ABAB", "BA", "AAB"]);
        let res = dsm_baseline(&inn, &out, 2).unwrap();
        assert!(res[0].i_ratio.is_infinite());
        assert!(res[0].ngram.contains(&"Z".to_string()));
        assert!(res.iter().skip_while(|r| r.i_ratio.is_infinite()).all(|r| r.i_ratio.is_finite()));
    }

    #[test]
    fn welch_matches_reference() {
        // scipy.stats.ttest_ind([1,2,3,4,5],[2,4,6,8,10], equal_var=False)
        let (t, p) = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 6.0, 8.0, 10.0]);
        assert!((t - (-1.8973665961010275)).abs() < 1e-12);
        assert!((p - 0.10753119493062718).abs() < 1e-6, "p {p}");
    }

    #[test]
    fn empty_group_is_error() {
        let g = seqs(&["AB"]);
        let empty: Vec<Vec<String>> = vec![];
        assert!(dsm_baseline(&g, &empty, 2).is_err());
    }
}
