//! Caption metrics: BLEU-4, plain CIDEr and ROUGE-L.
//!
//! All n-gram maps are ordered so that every floating point reduction runs in
//! a fixed order and scores are bit-reproducible.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Highest n-gram order used by BLEU and CIDEr.
pub const MAX_ORDER: usize = 4;

/// A tokenized caption without BOS/EOS/PAD markers.
pub type TokenSeq = Vec<String>;

fn ngram_key<S: AsRef<str>>(window: &[S]) -> String {
    let mut key = String::new();
    for (i, w) in window.iter().enumerate() {
        if i > 0 {
            key.push(' ');
        }
        key.push_str(w.as_ref());
    }
    key
}

/// Counts of every n-gram of order `1..=MAX_ORDER` in one sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NGramTable {
    orders: [BTreeMap<String, usize>; MAX_ORDER],
}

impl NGramTable {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut t = Self::default();
        for n in 1..=MAX_ORDER {
            for w in tokens.windows(n) {
                *t.orders[n - 1].entry(ngram_key(w)).or_insert(0) += 1;
            }
        }
        t
    }

    /// Counts of order `n` (1-based).
    pub fn order(&self, n: usize) -> &BTreeMap<String, usize> {
        &self.orders[n - 1]
    }

    /// Total n-gram mass of order `n`, i.e. `max(0, len - n + 1)`.
    pub fn total(&self, n: usize) -> usize {
        self.orders[n - 1].values().sum()
    }
}

/// How BLEU treats an order with no matching n-grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    /// Any zero precision makes the score zero (evaluation).
    Exact,
    /// Zero precisions are replaced by `1e-9` (sentence-level rewards).
    Epsilon,
}

const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU-4 with clipped precisions and the closest-reference-length
/// brevity penalty.
pub fn bleu4<S: AsRef<str>, R: AsRef<[S]>>(
    candidate: &[S],
    refs: &[R],
    smoothing: BleuSmoothing,
) -> Result<f64> {
    if refs.is_empty() {
        return contract("bleu4 needs at least one reference");
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let cand = NGramTable::from_tokens(candidate);
    let ref_tables: Vec<NGramTable> = refs.iter().map(|r| NGramTable::from_tokens(r.as_ref())).collect();

    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let total = c.saturating_sub(n - 1);
        let mut clipped = 0usize;
        for (gram, &count) in cand.order(n) {
            let max_ref = ref_tables
                .iter()
                .map(|t| t.order(n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += count.min(max_ref);
        }
        let p = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
        let p = match smoothing {
            BleuSmoothing::Exact if p == 0.0 => return Ok(0.0),
            BleuSmoothing::Epsilon if p == 0.0 => BLEU_EPSILON,
            _ => p,
        };
        log_sum += p.ln();
    }

    // Closest reference length, ties resolved toward the shorter reference.
    let r = refs
        .iter()
        .map(|x| x.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("refs is non-empty");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / MAX_ORDER as f64).exp())
}

/// Reference-set document frequencies for CIDEr's IDF weights.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFreq {
    #[serde(rename = "M")]
    pub m: usize,
    pub df: BTreeMap<String, usize>,
}

impl DocFreq {
    /// Counts, for every n-gram, the number of reference sets containing it.
    pub fn from_reference_sets<S: AsRef<str>, R: AsRef<[S]>>(sets: &[Vec<R>]) -> Self {
        let mut df = BTreeMap::new();
        for set in sets {
            let mut seen = BTreeSet::new();
            for r in set {
                let t = NGramTable::from_tokens(r.as_ref());
                for n in 1..=MAX_ORDER {
                    seen.extend(t.order(n).keys().cloned());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self { m: sets.len(), df }
    }

    /// `ln(M / max(1, df))`; n-grams absent from the corpus get `ln(M)`.
    pub fn idf(&self, gram: &str) -> f64 {
        let d = self.df.get(gram).copied().unwrap_or(0).max(1);
        (self.m as f64 / d as f64).ln()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        if d.m == 0 {
            return contract("document frequencies with M = 0");
        }
        if let Some((g, _)) = d.df.iter().find(|(_, &v)| v == 0 || v > d.m) {
            return contract(format!("df of {g:?} outside 1..=M"));
        }
        Ok(d)
    }
}

fn tfidf<'a>(counts: &'a BTreeMap<String, usize>, df: &DocFreq) -> (BTreeMap<&'a str, f64>, f64) {
    let vec: BTreeMap<&str, f64> = counts
        .iter()
        .map(|(g, &c)| (g.as_str(), c as f64 * df.idf(g)))
        .collect();
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    (vec, norm)
}

/// Plain CIDEr: `10 x` the mean over orders 1..4 of the TF-IDF cosine
/// between candidate and each reference, averaged over references.
///
/// When a TF-IDF vector vanishes (every n-gram has zero IDF) the cosine is
/// taken as 1 if candidate and reference have identical non-empty n-gram
/// counts of that order, and 0 otherwise.
pub fn cider<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], refs: &[R], df: &DocFreq) -> Result<f64> {
    if refs.is_empty() {
        return contract("cider needs at least one reference");
    }
    if df.m == 0 {
        return contract("cider document frequencies have M = 0");
    }
    let cand = NGramTable::from_tokens(candidate);
    let ref_tables: Vec<NGramTable> = refs.iter().map(|r| NGramTable::from_tokens(r.as_ref())).collect();
    let mut total = 0.0;
    for n in 1..=MAX_ORDER {
        let (cv, cn) = tfidf(cand.order(n), df);
        let mut order_sum = 0.0;
        for rt in &ref_tables {
            let (rv, rn) = tfidf(rt.order(n), df);
            let sim = if cn > 0.0 && rn > 0.0 {
                let dot: f64 = cv
                    .iter()
                    .filter_map(|(g, a)| rv.get(g).map(|b| a * b))
                    .sum();
                dot / (cn * rn)
            } else if !cand.order(n).is_empty() && cand.order(n) == rt.order(n) {
                1.0
            } else {
                0.0
            };
            order_sum += sim;
        }
        total += order_sum / refs.len() as f64;
    }
    Ok(10.0 * total / MAX_ORDER as f64)
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// ROUGE-L F-measure (beta = 1.2), maximised over references.
pub fn rouge_l<S: AsRef<str>, R: AsRef<[S]>>(candidate: &[S], refs: &[R]) -> Result<f64> {
    if refs.is_empty() {
        return contract("rouge_l needs at least one reference");
    }
    let mut best: f64 = 0.0;
    for r in refs {
        let r = r.as_ref();
        if candidate.is_empty() || r.is_empty() {
            continue;
        }
        let l = lcs_len(candidate, r) as f64;
        if l == 0.0 {
            continue;
        }
        let prec = l / candidate.len() as f64;
        let rec = l / r.len() as f64;
        let b2 = ROUGE_BETA * ROUGE_BETA;
        let f = (1.0 + b2) * prec * rec / (rec + b2 * prec);
        best = best.max(f);
    }
    Ok(best)
}

/// Which metric drives REINFORCE rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMetric {
    Cider,
    Bleu4,
    RougeL,
}

impl RewardMetric {
    /// Sentence-level reward; BLEU uses epsilon smoothing here.
    pub fn score<S: AsRef<str>, R: AsRef<[S]>>(self, candidate: &[S], refs: &[R], df: &DocFreq) -> Result<f64> {
        match self {
            RewardMetric::Cider => cider(candidate, refs, df),
            RewardMetric::Bleu4 => bleu4(candidate, refs, BleuSmoothing::Epsilon),
            RewardMetric::RougeL => rouge_l(candidate, refs),
        }
    }
}

impl std::str::FromStr for RewardMetric {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cider" => Ok(Self::Cider),
            "bleu4" => Ok(Self::Bleu4),
            "rouge_l" => Ok(Self::RougeL),
            other => contract(format!("unknown reward metric {other:?}")),
        }
    }
}

/// Mean BLEU-4 (exact mode), ROUGE-L and CIDEr over a set of captions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Averages each metric over `(candidate, references)` pairs.
pub fn evaluate_captions(pairs: &[(TokenSeq, Vec<TokenSeq>)], df: &DocFreq) -> Result<MetricSummary> {
    if pairs.is_empty() {
        return contract("no captions to evaluate");
    }
    let mut s = MetricSummary::default();
    for (cand, refs) in pairs {
        s.bleu4 += bleu4(cand, refs, BleuSmoothing::Exact)?;
        s.rouge_l += rouge_l(cand, refs)?;
        s.cider += cider(cand, refs, df)?;
    }
    let n = pairs.len() as f64;
    s.bleu4 /= n;
    s.rouge_l /= n;
    s.cider /= n;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> TokenSeq {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_identity_and_empty() {
        let r = toks("a large red cube is next to a blue ball");
        assert_eq!(bleu4(&r, &[r.clone()], BleuSmoothing::Exact).unwrap(), 1.0);
        let empty: TokenSeq = vec![];
        assert_eq!(bleu4(&empty, &[r.clone()], BleuSmoothing::Exact).unwrap(), 0.0);
        assert_eq!(bleu4(&empty, &[r], BleuSmoothing::Epsilon).unwrap(), 0.0);
        let no_refs: Vec<TokenSeq> = vec![];
        assert!(bleu4(&empty, &no_refs, BleuSmoothing::Exact).is_err());
    }

    #[test]
    fn bleu_one_substitution() {
        let s = bleu4(&toks("a b c d e"), &[toks("a b c d f")], BleuSmoothing::Exact).unwrap();
        let expect = (4.0 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0f64).powf(0.25);
        assert!((s - expect).abs() <= 1e-12);
    }

    #[test]
    fn bleu_smoothing_modes_differ_on_short_candidates() {
        let r = [toks("a b c d e")];
        assert_eq!(bleu4(&toks("a b"), &r, BleuSmoothing::Exact).unwrap(), 0.0);
        assert!(bleu4(&toks("a b"), &r, BleuSmoothing::Epsilon).unwrap() > 0.0);
    }

    #[test]
    fn rouge_examples() {
        let a = toks("a b c");
        assert_eq!(rouge_l(&a, &[a.clone()]).unwrap(), 1.0);
        assert_eq!(rouge_l(&a, &[toks("x y z")]).unwrap(), 0.0);
        let f = rouge_l(&a, &[toks("a x c")]).unwrap();
        let (p, r, b2) = (2.0 / 3.0, 2.0 / 3.0, 1.44);
        assert!((f - (1.0 + b2) * p * r / (r + b2 * p)).abs() <= 1e-12);
    }

    #[test]
    fn cider_zero_overlap_and_self_consensus() {
        let refs = vec![vec![toks("a b c")], vec![toks("d e f g")]];
        let df = DocFreq::from_reference_sets(&refs);
        assert_eq!(cider(&toks("x y"), &refs[0], &df).unwrap(), 0.0);

        let single = vec![vec![toks("a b c")]];
        let df1 = DocFreq::from_reference_sets(&single);
        let s = cider(&toks("a b c"), &single[0], &df1).unwrap();
        assert!((s - 10.0 * 3.0 / 4.0).abs() <= 1e-12, "{s}");
    }

    #[test]
    fn cider_contract_errors() {
        let df = DocFreq::default();
        assert!(cider(&toks("a"), &[toks("a")], &df).is_err());
        let df = DocFreq::from_reference_sets(&[vec![toks("a")]]);
        let no_refs: Vec<TokenSeq> = vec![];
        assert!(cider(&toks("a"), &no_refs, &df).is_err());
        assert!(DocFreq::from_json(r#"{"M": 0, "df": {}}"#).is_err());
    }

    #[test]
    fn docfreq_json_shape() {
        let df = DocFreq::from_reference_sets(&[vec![toks("a b")], vec![toks("a")]]);
        let j = df.to_json().unwrap();
        assert_eq!(j, r#"{"M":2,"df":{"a":2,"a b":1,"b":1}}"#);
        assert_eq!(DocFreq::from_json(&j).unwrap(), df);
    }

    #[test]
    fn ngram_mass_matches_length() {
        let t = NGramTable::from_tokens(&toks("a b a b a"));
        for n in 1..=MAX_ORDER {
            assert_eq!(t.total(n), 5usize.saturating_sub(n - 1));
        }
        assert_eq!(t.order(2).get("a b"), Some(&2));
    }
}
