//! Next-job prediction baselines scored by perplexity.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceVariant {
    /// Ignores context; predicts the training frequency of each item.
    FrequencyMatched { alpha: f64 },
    /// Order-`order` Markov chain with additive smoothing, backing off to
    /// shorter contexts when a context was never seen.
    Markov { order: usize, alpha: f64 },
    /// Equal probability for every vocabulary item.
    Uniform,
}

impl SequenceVariant {
    fn alpha(&self) -> f64 {
        match *self {
            SequenceVariant::FrequencyMatched { alpha } | SequenceVariant::Markov { alpha, .. } => alpha,
            SequenceVariant::Uniform => 0.0,
        }
    }

    fn order(&self) -> usize {
        match *self {
            SequenceVariant::Markov { order, .. } => order,
            _ => 0,
        }
    }
}

/// Context of item ids; [`BOS`] pads positions before the sequence start and
/// [`OOV`] marks history items outside the vocabulary, which never match a
/// stored context.
type Context = Vec<usize>;
const BOS: usize = usize::MAX;
const OOV: usize = usize::MAX - 1;

#[derive(Debug, Clone)]
pub struct SequenceModel {
    pub variant: SequenceVariant,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    unigram: Vec<f64>,
    unigram_total: f64,
    /// `tables[m - 1]` maps order-`m` contexts to next-item counts.
    tables: Vec<HashMap<Context, (Vec<f64>, f64)>>,
}

impl SequenceModel {
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    fn smoothed(&self, counts: &[f64], total: f64) -> Vec<f64> {
        let alpha = self.variant.alpha();
        let v = self.vocabulary.len() as f64;
        let denom = total + alpha * v;
        counts.iter().map(|c| (c + alpha) / denom).collect()
    }

    /// Next-item distribution over [`Self::vocabulary`] after `history`.
    /// Items outside the vocabulary in `history` act as unseen context.
    pub fn distribution(&self, history: &[String]) -> Vec<f64> {
        let v = self.vocabulary.len();
        if let SequenceVariant::Uniform = self.variant {
            return vec![1.0 / v as f64; v];
        }
        let ids: Vec<usize> = history.iter().map(|s| self.index.get(s).copied().unwrap_or(OOV)).collect();
        for m in (1..=self.variant.order()).rev() {
            let ctx = context(&ids, ids.len(), m);
            if let Some((counts, total)) = self.tables[m - 1].get(&ctx) {
                if *total > 0.0 {
                    return self.smoothed(counts, *total);
                }
            }
        }
        self.smoothed(&self.unigram, self.unigram_total)
    }

    pub fn probability(&self, history: &[String], next: &str) -> f64 {
        match self.index.get(next) {
            Some(&i) => self.distribution(history)[i],
            None => 0.0,
        }
    }
}

fn context(ids: &[usize], t: usize, m: usize) -> Context {
    (0..m)
        .map(|k| {
            let pos = t as isize - m as isize + k as isize;
            if pos < 0 { BOS } else { ids[pos as usize] }
        })
        .collect()
}

/// Fits `variant` to `train`. The vocabulary is the training items plus
/// `extra_vocabulary`; items seen only at test time get zero probability.
pub fn fit_sequence_model(train: &[Vec<String>], variant: SequenceVariant, extra_vocabulary: &[String]) -> Result<SequenceModel> {
    let alpha = variant.alpha();
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("smoothing alpha must be finite and >= 0, got {alpha}")));
    }
    if let SequenceVariant::Markov { order: 0, .. } = variant {
        return Err(Error::param("Markov order must be at least 1"));
    }
    let vocab: BTreeSet<&String> = train.iter().flatten().chain(extra_vocabulary).collect();
    if vocab.is_empty() {
        return Err(Error::InvalidInput("empty vocabulary: no training items".into()));
    }
    let vocabulary: Vec<String> = vocab.into_iter().cloned().collect();
    let index: HashMap<String, usize> = vocabulary.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let v = vocabulary.len();

    let mut unigram = vec![0.0; v];
    let mut tables: Vec<HashMap<Context, (Vec<f64>, f64)>> = vec![HashMap::new(); variant.order()];
    for seq in train {
        let ids: Vec<usize> = seq.iter().map(|s| index[s]).collect();
        for (t, &id) in ids.iter().enumerate() {
            unigram[id] += 1.0;
            for (m, table) in tables.iter_mut().enumerate() {
                let entry = table.entry(context(&ids, t, m + 1)).or_insert_with(|| (vec![0.0; v], 0.0));
                entry.0[id] += 1.0;
                entry.1 += 1.0;
            }
        }
    }
    let unigram_total: f64 = unigram.iter().sum();
    if unigram_total == 0.0 && alpha == 0.0 && !matches!(variant, SequenceVariant::Uniform) {
        return Err(Error::InvalidInput("no training items and no smoothing".into()));
    }
    Ok(SequenceModel {
        variant,
        vocabulary,
        index,
        unigram,
        unigram_total,
        tables,
    })
}

/// `exp` of the mean negative log probability over every test item.
pub fn perplexity(model: &SequenceModel, test: &[Vec<String>]) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seq in test {
        for t in 0..seq.len() {
            let p = model.probability(&seq[..t], &seq[t]);
            if !(p > 0.0) {
                return Err(Error::ZeroProbability { item: seq[t].clone() });
            }
            nll -= p.ln();
            lo = lo.min(p);
            hi = hi.max(p);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("test set has no items".into()));
    }
    // exp(mean(-ln p)) picks up rounding even when every p is identical.
    if lo == hi {
        return Ok(1.0 / lo);
    }
    Ok((nll / n as f64).exp())
}
