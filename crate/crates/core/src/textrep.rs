//! Vocabularies, bag-of-words and TF-IDF vectors, normalization schemes and
//! vector metrics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::compensated_sum;

/// Distinct tokens in order of first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.words.len();
        self.words.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }
}

impl<S: AsRef<str>> FromIterator<S> for Vocabulary {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut v = Vocabulary::default();
        for t in iter {
            v.insert(t.as_ref());
        }
        v
    }
}

/// Builds the vocabulary of a corpus, ordered by first occurrence.
pub fn build_vocabulary<D, T>(documents: &[D]) -> Result<Vocabulary>
where
    D: AsRef<[T]>,
    T: AsRef<str>,
{
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(documents.iter().flat_map(|d| d.as_ref().iter()).collect())
}

/// Sparse vector with strictly positive entries and strictly increasing ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    dim: usize,
    ids: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from `(id, value)` pairs in any order. Duplicate ids
    /// are summed; zero values are dropped.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(usize, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|&(id, _)| id);
        let mut ids = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            if id >= dim {
                return Err(Error::DimMismatch { expected: dim, found: id + 1 });
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("sparse entry {v} must be finite and nonnegative")));
            }
            if ids.last() == Some(&id) {
                *values.last_mut().unwrap() += v;
            } else {
                ids.push(id);
                values.push(v);
            }
        }
        let mut out = SparseVector { dim, ids, values };
        out.retain_positive();
        Ok(out)
    }

    pub fn from_dense(values: &[f64]) -> Result<Self> {
        SparseVector::new(values.len(), values.iter().copied().enumerate())
    }

    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    fn retain_positive(&mut self) {
        let mut k = 0;
        for r in 0..self.ids.len() {
            if self.values[r] > 0.0 {
                self.ids[k] = self.ids[r];
                self.values[k] = self.values[r];
                k += 1;
            }
        }
        self.ids.truncate(k);
        self.values.truncate(k);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.ids.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, id: usize) -> f64 {
        self.ids.binary_search(&id).map_or(0.0, |k| self.values[k])
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    fn scaled(&self, factor: f64) -> SparseVector {
        let mut out = SparseVector {
            dim: self.dim,
            ids: self.ids.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        };
        out.retain_positive();
        out
    }
}

/// Calls `f(a_i, b_i)` for every id present in either vector.
fn merge(a: &SparseVector, b: &SparseVector, mut f: impl FnMut(f64, f64)) {
    let (mut p, mut q) = (0, 0);
    while p < a.ids.len() || q < b.ids.len() {
        let ia = a.ids.get(p).copied().unwrap_or(usize::MAX);
        let ib = b.ids.get(q).copied().unwrap_or(usize::MAX);
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => {
                f(a.values[p], 0.0);
                p += 1;
            }
            std::cmp::Ordering::Greater => {
                f(0.0, b.values[q]);
                q += 1;
            }
            std::cmp::Ordering::Equal => {
                f(a.values[p], b.values[q]);
                p += 1;
                q += 1;
            }
        }
    }
}

pub(crate) fn l1_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    let mut terms = Vec::with_capacity(a.nnz() + b.nnz());
    merge(a, b, |x, y| terms.push((x - y).abs()));
    compensated_sum(terms)
}

fn l2_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    let mut terms = Vec::with_capacity(a.nnz() + b.nnz());
    merge(a, b, |x, y| terms.push((x - y) * (x - y)));
    compensated_sum(terms).sqrt()
}

/// Bag-of-words count vector. Tokens missing from the vocabulary are skipped
/// and counted in the second return value.
pub fn bow_vector<T: AsRef<str>>(doc: &[T], vocab: &Vocabulary) -> (SparseVector, usize) {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    let mut dropped = 0;
    for t in doc {
        match vocab.lookup(t.as_ref()) {
            Some(id) => *counts.entry(id).or_insert(0.0) += 1.0,
            None => dropped += 1,
        }
    }
    let v = SparseVector::new(vocab.len(), counts).expect("ids come from the vocabulary");
    (v, dropped)
}

/// Number of documents containing each vocabulary word.
pub fn document_frequencies<D, T>(documents: &[D], vocab: &Vocabulary) -> Vec<usize>
where
    D: AsRef<[T]>,
    T: AsRef<str>,
{
    let mut df = vec![0usize; vocab.len()];
    let mut seen = vec![usize::MAX; vocab.len()];
    for (d, doc) in documents.iter().enumerate() {
        for t in doc.as_ref() {
            if let Some(id) = vocab.lookup(t.as_ref()) {
                if seen[id] != d {
                    seen[id] = d;
                    df[id] += 1;
                }
            }
        }
    }
    df
}

/// TF-IDF vector with weight `count * log2(n_docs / df)`. Words occurring in
/// every document get weight zero and are left out.
pub fn tfidf_vector<T: AsRef<str>>(
    doc: &[T],
    vocab: &Vocabulary,
    doc_freq: &[usize],
    n_docs: usize,
) -> Result<SparseVector> {
    if n_docs == 0 {
        return Err(Error::InvalidInput("n_docs must be at least 1".into()));
    }
    if doc_freq.len() != vocab.len() {
        return Err(Error::DimMismatch {
            expected: vocab.len(),
            found: doc_freq.len(),
        });
    }
    let (bow, _) = bow_vector(doc, vocab);
    let mut entries = Vec::with_capacity(bow.nnz());
    for (id, count) in bow.iter() {
        let df = doc_freq[id];
        if df == 0 {
            return Err(Error::InconsistentStats { word: id });
        }
        entries.push((id, count * (n_docs as f64 / df as f64).log2()));
    }
    SparseVector::new(vocab.len(), entries)
}

/// Normalization applied to a vector before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    None,
    L1,
    L2,
}

/// Metric used to compare two vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorMetric {
    L1,
    L2,
}

impl fmt::Display for NormScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormScheme::None => "none",
            NormScheme::L1 => "l1",
            NormScheme::L2 => "l2",
        })
    }
}

impl fmt::Display for VectorMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VectorMetric::L1 => "l1",
            VectorMetric::L2 => "l2",
        })
    }
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NormScheme::None),
            "l1" => Ok(NormScheme::L1),
            "l2" => Ok(NormScheme::L2),
            _ => Err(Error::InvalidInput(format!("unknown normalization {s:?}"))),
        }
    }
}

impl FromStr for VectorMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(VectorMetric::L1),
            "l2" => Ok(VectorMetric::L2),
            _ => Err(Error::InvalidInput(format!("unknown metric {s:?}"))),
        }
    }
}

pub fn normalize(v: &SparseVector, scheme: NormScheme) -> Result<SparseVector> {
    let norm = match scheme {
        NormScheme::None => return Ok(v.clone()),
        NormScheme::L1 => v.sum(),
        NormScheme::L2 => v.l2_norm(),
    };
    if v.is_empty() || norm == 0.0 {
        return Err(Error::ZeroVector { token: None });
    }
    Ok(v.scaled(1.0 / norm))
}

pub fn vector_distance(a: &SparseVector, b: &SparseVector, metric: VectorMetric) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    Ok(match metric {
        VectorMetric::L1 => l1_distance(a, b),
        VectorMetric::L2 => l2_distance(a, b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn vocabulary_first_occurrence() {
        let v = build_vocabulary(&[toks("a b a")]).unwrap();
        assert_eq!(v.words(), &["a", "b"]);
        assert_eq!(v.lookup("b"), Some(1));
        let empty: [Vec<String>; 0] = [];
        assert!(matches!(build_vocabulary(&empty), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn bow_counts_and_drops() {
        let vocab: Vocabulary = ["a", "b", "c"].into_iter().collect();
        let (v, dropped) = bow_vector(&toks("a a b"), &vocab);
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(dropped, 0);
        let (v, _) = bow_vector::<String>(&[], &vocab);
        assert!(v.is_empty());
        let ab: Vocabulary = ["a", "b"].into_iter().collect();
        let (v, dropped) = bow_vector(&toks("z"), &ab);
        assert!(v.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn tfidf_weights() {
        let docs = [toks("a a b"), toks("a c")];
        let vocab = build_vocabulary(&docs).unwrap();
        let df = document_frequencies(&docs, &vocab);
        assert_eq!(df, vec![2, 1, 1]);
        let v = tfidf_vector(&docs[0], &vocab, &df, 2).unwrap();
        assert_eq!(v.iter().collect::<Vec<_>>(), vec![(1, 1.0)]);

        let single = [toks("x y x")];
        let vocab = build_vocabulary(&single).unwrap();
        let df = document_frequencies(&single, &vocab);
        assert!(tfidf_vector(&single[0], &vocab, &df, 1).unwrap().is_empty());
    }

    #[test]
    fn tfidf_inconsistent_stats() {
        let vocab: Vocabulary = ["a"].into_iter().collect();
        assert!(matches!(
            tfidf_vector(&toks("a"), &vocab, &[0], 3),
            Err(Error::InconsistentStats { word: 0 })
        ));
    }

    #[test]
    fn normalization_schemes() {
        let v = SparseVector::from_dense(&[2.0, 0.0, 2.0]).unwrap();
        assert_eq!(normalize(&v, NormScheme::L1).unwrap().to_dense(), vec![0.5, 0.0, 0.5]);
        assert_eq!(normalize(&v, NormScheme::None).unwrap(), v);
        let w = SparseVector::from_dense(&[3.0, 4.0]).unwrap();
        let n = normalize(&w, NormScheme::L2).unwrap().to_dense();
        assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
        assert!(matches!(
            normalize(&SparseVector::empty(3), NormScheme::L1),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn metrics() {
        let a = SparseVector::from_dense(&[0.5, 0.5, 0.0]).unwrap();
        let b = SparseVector::from_dense(&[0.0, 0.5, 0.5]).unwrap();
        assert_eq!(vector_distance(&a, &a, VectorMetric::L1).unwrap(), 0.0);
        assert_eq!(vector_distance(&a, &b, VectorMetric::L1).unwrap(), 1.0);
        let e0 = SparseVector::from_dense(&[1.0, 0.0]).unwrap();
        let e1 = SparseVector::from_dense(&[0.0, 1.0]).unwrap();
        assert_eq!(vector_distance(&e0, &e1, VectorMetric::L2).unwrap(), 2f64.sqrt());
        assert!(matches!(
            vector_distance(&a, &e0, VectorMetric::L1),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn sparse_vector_canonical() {
        let v = SparseVector::new(5, [(3, 1.0), (1, 2.0), (3, 0.5), (4, 0.0)]).unwrap();
        assert_eq!(v.ids(), &[1, 3]);
        assert_eq!(v.values(), &[2.0, 1.5]);
        assert!(SparseVector::new(2, [(2, 1.0)]).is_err());
    }
}
