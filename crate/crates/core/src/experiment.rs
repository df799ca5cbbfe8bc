//! Dataset-level pipeline: prepare a corpus, compute the distances every fold
//! needs, and tune/evaluate each fold.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{deduplicate_logged, filter_vocabulary, find_duplicates, Corpus, DuplicateReport, Removal};
use crate::embeddings::{l2_normalize, load_embeddings, EmbeddingFormat, EmbeddingStore};
use crate::error::{Error, Result};
use crate::knn::{evaluate_fold, mean_std, Classifier, FoldResult, TuningGrid};
use crate::wmd::{pairwise_distances, DocumentTable, Method, PairwiseDistances};

/// Loads embeddings for the tokens of `corpus` only and L2-normalizes them.
pub fn load_corpus_embeddings(corpus: &Corpus, path: &Path, format: EmbeddingFormat) -> Result<EmbeddingStore> {
    let keep: HashSet<String> = corpus.documents().iter().flat_map(|d| d.tokens.iter().cloned()).collect();
    let store = load_embeddings(path, format, Some(&keep))?;
    info!("loaded {} of {} corpus words from {}", store.len(), keep.len(), path.display());
    l2_normalize(&store)
}

/// A corpus after filtering and optional cleaning.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub corpus: Corpus,
    pub duplicates: DuplicateReport,
    pub removals: Vec<Removal>,
}

/// Filters the vocabulary, reports duplicates and, when `clean`, removes
/// them. Without a store, out-of-vocabulary words cannot be identified and
/// are kept.
pub fn prepare_corpus(
    corpus: &Corpus,
    store: Option<&EmbeddingStore>,
    stopwords: Option<&HashSet<String>>,
    keep_oov: bool,
    clean: bool,
) -> PreparedCorpus {
    let filtered = match store {
        Some(s) => filter_vocabulary(corpus, s, stopwords, keep_oov),
        None => {
            if !keep_oov {
                warn!("no embeddings given; out-of-vocabulary words are kept");
            }
            filter_vocabulary(corpus, &EmbeddingStore::new(1), stopwords, true)
        }
    };
    let duplicates = find_duplicates(&filtered);
    if clean {
        let (corpus, removals) = deduplicate_logged(&filtered, &duplicates);
        PreparedCorpus {
            corpus,
            duplicates,
            removals,
        }
    } else {
        PreparedCorpus {
            corpus: filtered,
            duplicates,
            removals: Vec::new(),
        }
    }
}

/// Rows: every document in some fold. Columns: every training document of
/// some fold. Sorted ascending.
pub fn fold_rows_and_cols(corpus: &Corpus) -> (Vec<usize>, Vec<usize>) {
    let rows: BTreeSet<usize> = corpus.folds.iter().flat_map(|f| f.train.iter().chain(&f.test)).copied().collect();
    let cols: BTreeSet<usize> = corpus.folds.iter().flat_map(|f| f.train.iter()).copied().collect();
    (rows.into_iter().collect(), cols.into_iter().collect())
}

/// Distances covering every fold of the corpus under `method`. Term
/// statistics are taken over all documents of the corpus.
pub fn dataset_distances(corpus: &Corpus, method: Method, store: Option<&EmbeddingStore>) -> Result<PairwiseDistances> {
    if corpus.folds.is_empty() {
        return Err(Error::InvalidInput(format!("dataset {} has no folds", corpus.meta.name)));
    }
    let table = DocumentTable::new(corpus.documents().iter().map(|d| (d.id, d.tokens.clone())))?;
    let (rows, cols) = fold_rows_and_cols(corpus);
    pairwise_distances(&rows, &cols, method, &table, store)
}

/// Tunes and evaluates every fold.
pub fn evaluate_dataset(
    corpus: &Corpus,
    dist: &crate::wmd::DistanceMatrix,
    classifier: Classifier,
    grid: &TuningGrid,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    let labels = corpus.labels();
    corpus
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| evaluate_fold(dist, &labels, &fold.train, &fold.test, classifier, grid, seed, f))
        .collect()
}

/// Mean and sample standard deviation of the fold errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

pub fn summarize(results: &[FoldResult]) -> ErrorSummary {
    let errors: Vec<f64> = results.iter().map(|r| r.evaluation.error_percent).collect();
    let (mean, std) = mean_std(&errors);
    ErrorSummary {
        mean,
        std,
        folds: errors.len(),
    }
}
