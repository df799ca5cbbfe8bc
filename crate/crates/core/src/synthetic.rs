//! Seeded synthetic fixtures: random unit embeddings and labelled corpora.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Corpus, CorpusMeta, Document, SplitType};
use crate::embeddings::EmbeddingStore;
use crate::error::Result;

/// `w0`, `w1`, ... `w{n-1}`.
pub fn word_list(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Independent uniformly distributed unit vectors for `words`.
pub fn random_unit_embeddings(words: &[String], dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = EmbeddingStore::new(dim);
    for w in words {
        let v: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        store.insert(w.clone(), &v).expect("dimensions agree");
    }
    crate::embeddings::l2_normalize(&store).expect("vectors are nonzero")
}

fn meta(name: &str) -> CorpusMeta {
    CorpusMeta {
        name: name.into(),
        split: SplitType::OneFold,
    }
}

/// Documents of `len_range` tokens drawn uniformly from `words`, with labels
/// `c0`..`c{n_classes-1}` assigned uniformly at random.
pub fn random_documents(
    words: &[String],
    n_docs: usize,
    len_range: std::ops::RangeInclusive<usize>,
    n_classes: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|id| {
            let len = rng.gen_range(len_range.clone());
            Document {
                id,
                label: format!("c{}", rng.gen_range(0..n_classes.max(1))),
                tokens: (0..len).map(|_| words.choose(&mut rng).expect("non-empty word list").clone()).collect(),
            }
        })
        .collect();
    Corpus::new(docs, vec![], meta("random"))
}

/// Class-structured corpus: each class draws per-word mean counts once
/// (uniform in `[0, max_mean)`), and each document's count of a word is a
/// rounded, clipped Gaussian around the class mean with standard deviation
/// `sigma`. Documents that come out empty get one token of the class's
/// highest-mean word. Ids interleave classes.
pub fn gaussian_count_corpus(
    words: &[String],
    n_classes: usize,
    docs_per_class: usize,
    max_mean: f64,
    sigma: f64,
    seed: u64,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..words.len()).map(|_| rng.gen_range(0.0..max_mean)).collect())
        .collect();
    let noise = Normal::new(0.0, sigma).map_err(|e| crate::Error::InvalidInput(e.to_string()))?;
    let mut docs = Vec::with_capacity(n_classes * docs_per_class);
    for i in 0..docs_per_class {
        for (c, mu) in means.iter().enumerate() {
            let mut tokens = Vec::new();
            for (w, m) in words.iter().zip(mu) {
                let count = (m + noise.sample(&mut rng)).round().max(0.0) as usize;
                tokens.extend(std::iter::repeat_n(w.clone(), count));
            }
            if tokens.is_empty() {
                let top = mu
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                tokens.push(words[top].clone());
            }
            tokens.shuffle(&mut rng);
            docs.push(Document {
                id: i * n_classes + c,
                label: format!("c{c}"),
                tokens,
            });
        }
    }
    Corpus::new(docs, vec![], meta("gaussian-counts"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_unit_and_seeded() {
        let words = word_list(20);
        let s = random_unit_embeddings(&words, 7, 1);
        assert!(s.is_normalized());
        for w in &words {
            let n: f64 = s.get(w).unwrap().iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.get("w3"), random_unit_embeddings(&words, 7, 1).get("w3"));
    }

    #[test]
    fn corpora_shapes() {
        let words = word_list(30);
        let c = gaussian_count_corpus(&words, 3, 10, 2.0, 0.5, 4).unwrap();
        assert_eq!(c.len(), 30);
        assert_eq!(c.classes().len(), 3);
        assert!(c.documents().iter().all(|d| !d.tokens.is_empty()));
        let r = random_documents(&words, 12, 3..=5, 2, 4).unwrap();
        assert!(r.documents().iter().all(|d| (3..=5).contains(&d.tokens.len())));
        assert_eq!(r, random_documents(&words, 12, 3..=5, 2, 4).unwrap());
    }
}
