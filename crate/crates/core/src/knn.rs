//! k-nearest-neighbour and exponentially weighted k-nearest-neighbour
//! classification over precomputed distance rows, validation-based tuning and
//! error summaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wmd::DistanceMatrix;

/// Relative slack under which two vote totals count as tied.
const VOTE_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Knn,
    Wknn,
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classifier::Knn => "knn",
            Classifier::Wknn => "wknn",
        })
    }
}

impl FromStr for Classifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(Classifier::Knn),
            "wknn" => Ok(Classifier::Wknn),
            _ => Err(Error::InvalidInput(format!("unknown classifier {s:?}"))),
        }
    }
}

/// Hyperparameter candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub k_candidates: Vec<usize>,
    pub gamma_candidates: Vec<f64>,
    /// Neighbourhood size used by the weighted classifier.
    pub wknn_k: usize,
}

impl Default for TuningGrid {
    /// k in 1..=19; gamma in 0.005, 0.010, ..., 0.100; weighted k fixed at 19.
    fn default() -> Self {
        TuningGrid {
            k_candidates: (1..=19).collect(),
            gamma_candidates: (1..=20).map(|i| i as f64 * 0.005).collect(),
            wknn_k: 19,
        }
    }
}

/// Chosen hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub k: usize,
    pub gamma: Option<f64>,
}

/// Train/test ids with labels and the validation subset of the training ids.
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub validation: Vec<usize>,
    pub labels: HashMap<usize, String>,
}

impl LabeledSplit {
    /// Draws a uniformly random validation subset holding `fraction` of the
    /// training ids (at least one when there are two or more).
    pub fn new(
        train: Vec<usize>,
        test: Vec<usize>,
        labels: HashMap<usize, String>,
        fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let test_set: std::collections::HashSet<usize> = test.iter().copied().collect();
        if let Some(id) = train.iter().find(|id| test_set.contains(id)) {
            return Err(Error::InvalidInput(format!("document {id} is in both train and test")));
        }
        if let Some(id) = train.iter().chain(&test).find(|id| !labels.contains_key(id)) {
            return Err(Error::InvalidInput(format!("document {id} has no label")));
        }
        let mut shuffled = train.clone();
        shuffled.sort_unstable();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut size = (train.len() as f64 * fraction).round() as usize;
        if train.len() >= 2 {
            size = size.clamp(1, train.len() - 1);
        } else {
            size = 0;
        }
        let mut validation = shuffled[..size].to_vec();
        validation.sort_unstable();
        Ok(LabeledSplit {
            train,
            test,
            validation,
            labels,
        })
    }

    /// Training ids not held out for validation.
    pub fn fit_ids(&self) -> Vec<usize> {
        self.train.iter().copied().filter(|id| self.validation.binary_search(id).is_err()).collect()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[&id]
    }
}

struct Neighbor<'a> {
    dist: f64,
    id: usize,
    label: &'a str,
}

/// The `k` nearest finite entries, ties on distance broken by lower id.
fn nearest<'a>(dist_row: &[f64], ids: &[usize], labels: &[&'a str], k: usize) -> Result<Vec<Neighbor<'a>>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut finite: Vec<Neighbor<'a>> = dist_row
        .iter()
        .zip(ids)
        .zip(labels)
        .filter(|((d, _), _)| d.is_finite())
        .map(|((&dist, &id), &label)| Neighbor { dist, id, label })
        .collect();
    if finite.len() < k {
        return Err(Error::NotEnoughNeighbors {
            needed: k,
            available: finite.len(),
        });
    }
    finite.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
    finite.truncate(k);
    Ok(finite)
}

/// Picks the label with the largest vote; near-equal votes fall back to the
/// smaller summed neighbour distance, then to the lexicographically smallest
/// label.
fn elect(neighbors: &[Neighbor<'_>], vote: impl Fn(&Neighbor<'_>) -> f64) -> String {
    let mut tally: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for n in neighbors {
        let e = tally.entry(n.label).or_insert((0.0, 0.0));
        e.0 += vote(n);
        e.1 += n.dist;
    }
    let mut best: Option<(&str, f64, f64)> = None;
    for (label, (votes, dsum)) in tally {
        best = match best {
            None => Some((label, votes, dsum)),
            Some((bl, bv, bd)) => {
                let scale = votes.abs().max(bv.abs()).max(f64::MIN_POSITIVE);
                let better = if (votes - bv).abs() <= VOTE_TIE_TOLERANCE * scale {
                    dsum < bd
                } else {
                    votes > bv
                };
                if better {
                    Some((label, votes, dsum))
                } else {
                    Some((bl, bv, bd))
                }
            }
        };
    }
    best.map(|(l, _, _)| l.to_owned()).unwrap_or_default()
}

/// Majority vote among the `k` nearest training samples.
///
/// `dist_row[j]` is the distance to training sample `train_ids[j]` with label
/// `train_labels[j]`; non-finite distances are ignored.
pub fn knn_predict(dist_row: &[f64], train_ids: &[usize], train_labels: &[&str], k: usize) -> Result<String> {
    let nn = nearest(dist_row, train_ids, train_labels, k)?;
    Ok(elect(&nn, |_| 1.0))
}

/// Vote among the `k` nearest with weight `exp(-d / gamma)`.
///
/// Weights are computed relative to the nearest distance, which leaves the
/// argmax unchanged and keeps small `gamma` from underflowing every weight to
/// zero.
pub fn wknn_predict(
    dist_row: &[f64],
    train_ids: &[usize],
    train_labels: &[&str],
    k: usize,
    gamma: f64,
) -> Result<String> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let nn = nearest(dist_row, train_ids, train_labels, k)?;
    let d0 = nn[0].dist;
    Ok(elect(&nn, |n| (-(n.dist - d0) / gamma).exp()))
}

/// Outcome of evaluating a classifier on a set of query rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error_percent: f64,
    pub evaluated: usize,
    pub misclassified: usize,
    /// Queries without any finite distance (unusable documents).
    pub excluded: usize,
}

/// Classifies each row of `dist` (rows: queries, columns: references) and
/// compares with the labels. `k` is clamped to the number of finite
/// references of a row.
pub fn evaluate_rows(
    dist: &DistanceMatrix,
    labels: &HashMap<usize, String>,
    classifier: Classifier,
    params: Hyperparams,
) -> Result<Evaluation> {
    let col_labels: Vec<&str> = dist
        .col_ids()
        .iter()
        .map(|id| labels.get(id).map(String::as_str).ok_or(Error::InvalidInput(format!("document {id} has no label"))))
        .collect::<Result<_>>()?;
    let mut evaluated = 0;
    let mut misclassified = 0;
    let mut excluded = 0;
    let mut clamped = false;
    for (i, &qid) in dist.row_ids().iter().enumerate() {
        let row = dist.row(i);
        let available = row.iter().filter(|d| d.is_finite()).count();
        if available == 0 {
            excluded += 1;
            continue;
        }
        let k = if params.k > available {
            clamped = true;
            available
        } else {
            params.k
        };
        let predicted = match (classifier, params.gamma) {
            (Classifier::Wknn, Some(g)) => wknn_predict(row, dist.col_ids(), &col_labels, k, g)?,
            (Classifier::Wknn, None) => return Err(Error::InvalidInput("wknn needs gamma".into())),
            (Classifier::Knn, _) => knn_predict(row, dist.col_ids(), &col_labels, k)?,
        };
        let truth = labels
            .get(&qid)
            .ok_or_else(|| Error::InvalidInput(format!("document {qid} has no label")))?;
        evaluated += 1;
        if &predicted != truth {
            misclassified += 1;
        }
    }
    if clamped {
        warn!("k = {} exceeds the available neighbours for some rows; clamped", params.k);
    }
    let error_percent = if evaluated == 0 {
        0.0
    } else {
        100.0 * misclassified as f64 / evaluated as f64
    };
    Ok(Evaluation {
        error_percent,
        evaluated,
        misclassified,
        excluded,
    })
}

/// Test error of the split's test rows against its full training set.
/// `dist` must contain every test id as a row and every train id as a column.
pub fn evaluate(
    dist: &DistanceMatrix,
    split: &LabeledSplit,
    classifier: Classifier,
    params: Hyperparams,
) -> Result<Evaluation> {
    let sub = dist.select(&split.test, &split.train)?;
    evaluate_rows(&sub, &split.labels, classifier, params)
}

/// Selects hyperparameters by validation error (validation rows against the
/// remaining training columns). Ties go to the smaller k or gamma.
pub fn tune(
    dist: &DistanceMatrix,
    split: &LabeledSplit,
    classifier: Classifier,
    grid: &TuningGrid,
) -> Result<Hyperparams> {
    if split.validation.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let sub = dist.select(&split.validation, &split.fit_ids())?;
    let candidates: Vec<Hyperparams> = match classifier {
        Classifier::Knn => {
            let mut ks = grid.k_candidates.clone();
            ks.sort_unstable();
            ks.dedup();
            ks.into_iter().map(|k| Hyperparams { k, gamma: None }).collect()
        }
        Classifier::Wknn => {
            let mut gs = grid.gamma_candidates.clone();
            gs.sort_by(f64::total_cmp);
            gs.dedup();
            gs.into_iter()
                .map(|g| Hyperparams {
                    k: grid.wknn_k,
                    gamma: Some(g),
                })
                .collect()
        }
    };
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty tuning grid".into()));
    }
    let mut best: Option<(f64, Hyperparams)> = None;
    for c in candidates {
        let e = evaluate_rows(&sub, &split.labels, classifier, c)?.error_percent;
        if best.is_none_or(|(be, _)| e < be) {
            best = Some((e, c));
        }
    }
    Ok(best.expect("candidates are non-empty").1)
}

/// Seed of fold `fold` derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64 + 1);
    rng.next_u64()
}

/// Tuned hyperparameters and test error of one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub params: Hyperparams,
    pub evaluation: Evaluation,
}

/// Tunes on an 80/20 split of `train` and evaluates on `test`. `dist` must
/// cover every test and train id as rows and every train id as a column.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_fold(
    dist: &DistanceMatrix,
    labels: &HashMap<usize, String>,
    train: &[usize],
    test: &[usize],
    classifier: Classifier,
    grid: &TuningGrid,
    seed: u64,
    fold: usize,
) -> Result<FoldResult> {
    let split = LabeledSplit::new(train.to_vec(), test.to_vec(), labels.clone(), 0.2, fold_seed(seed, fold))?;
    let params = tune(dist, &split, classifier, grid)?;
    let evaluation = evaluate(dist, &split, classifier, params)?;
    Ok(FoldResult {
        fold,
        params,
        evaluation,
    })
}

/// Mean over datasets of `error(method) / error(base)`.
///
/// `errors[method][dataset]` holds mean error rates. Datasets where the base
/// error is zero are reported in [`Error::DivisionByZero`].
pub fn relative_performance(
    errors: &BTreeMap<String, BTreeMap<String, f64>>,
    method: &str,
    base: &str,
) -> Result<f64> {
    let m = errors
        .get(method)
        .ok_or_else(|| Error::InvalidInput(format!("no errors recorded for {method}")))?;
    let b = errors
        .get(base)
        .ok_or_else(|| Error::InvalidInput(format!("no errors recorded for {base}")))?;
    let zero: Vec<String> = m
        .keys()
        .filter(|d| b.get(*d).is_some_and(|&e| e == 0.0))
        .cloned()
        .collect();
    if !zero.is_empty() {
        return Err(Error::DivisionByZero(zero));
    }
    let ratios: Vec<f64> = m
        .iter()
        .map(|(d, e)| {
            b.get(d)
                .map(|be| e / be)
                .ok_or_else(|| Error::InvalidInput(format!("base {base} has no error for dataset {d}")))
        })
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        return Err(Error::InvalidInput(format!("no datasets recorded for {method}")));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
