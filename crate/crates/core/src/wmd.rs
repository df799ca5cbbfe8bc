//! Word Mover's Distance and batch distance matrices for every method of the
//! evaluation grid.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cost_submatrix, EmbeddingStore};
use crate::error::{Error, Result};
use crate::ot::{compensated_sum, solve_transport, CostMatrix, TransportPlan, TransportProblem};
use crate::textrep::{
    bow_vector, document_frequencies, normalize, tfidf_vector, vector_distance, NormScheme, SparseVector,
    VectorMetric, Vocabulary,
};

/// How document words are weighted in the transport marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    UniformCount,
    Tfidf,
}

/// Vocabulary-level statistics shared by all documents of a dataset.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub vocab: Vocabulary,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl CorpusStats {
    pub fn from_documents<D: AsRef<[String]>>(documents: &[D]) -> Result<Self> {
        let vocab = crate::textrep::build_vocabulary(documents)?;
        let doc_freq = document_frequencies(documents, &vocab);
        Ok(CorpusStats {
            vocab,
            doc_freq,
            n_docs: documents.len(),
        })
    }
}

/// A document as a probability distribution over its distinct words.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentMeasure {
    pub words: Vec<String>,
    pub weights: Vec<f64>,
}

impl DocumentMeasure {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    fn from_vector(v: &SparseVector, vocab: &Vocabulary) -> Result<Self> {
        let v = normalize(v, NormScheme::L1).map_err(|_| Error::EmptySupport { doc: None })?;
        Ok(DocumentMeasure {
            words: v.ids().iter().map(|&i| vocab.word(i).to_owned()).collect(),
            weights: v.values().to_vec(),
        })
    }
}

/// L1-normalized word weights of a document, restricted to words with
/// positive weight.
pub fn make_measure<T: AsRef<str>>(doc: &[T], weighting: Weighting, stats: &CorpusStats) -> Result<DocumentMeasure> {
    let v = match weighting {
        Weighting::UniformCount => bow_vector(doc, &stats.vocab).0,
        Weighting::Tfidf => tfidf_vector(doc, &stats.vocab, &stats.doc_freq, stats.n_docs)?,
    };
    DocumentMeasure::from_vector(&v, &stats.vocab)
}

/// Optimal transport problem between two measures under Euclidean
/// embedding costs.
pub fn wmd_problem(m1: &DocumentMeasure, m2: &DocumentMeasure, store: &EmbeddingStore) -> Result<TransportProblem> {
    let cost = cost_submatrix(store, &m1.words, &m2.words)?;
    TransportProblem::new(m1.weights.clone(), m2.weights.clone(), cost)
}

/// Optimal coupling between two measures and the cost matrix it was solved on.
pub fn wmd_plan(
    m1: &DocumentMeasure,
    m2: &DocumentMeasure,
    store: &EmbeddingStore,
) -> Result<(TransportPlan, CostMatrix)> {
    let problem = wmd_problem(m1, m2, store)?;
    let plan = solve_transport(&problem)?;
    Ok((plan, problem.cost().clone()))
}

pub fn wmd_distance(m1: &DocumentMeasure, m2: &DocumentMeasure, store: &EmbeddingStore) -> Result<f64> {
    if m1 == m2 {
        return Ok(0.0);
    }
    Ok(solve_transport(&wmd_problem(m1, m2, store)?)?.objective)
}

/// A distance of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Wmd,
    WmdTfidf,
    Bow { norm: NormScheme, metric: VectorMetric },
    Tfidf { norm: NormScheme, metric: VectorMetric },
}

impl Method {
    /// L1-normalized bag of words compared with the L1 metric.
    pub const BOW_L1_L1: Method = Method::Bow {
        norm: NormScheme::L1,
        metric: VectorMetric::L1,
    };

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, Method::Wmd | Method::WmdTfidf)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Method::Wmd => "wmd",
            Method::WmdTfidf => "wmd-tfidf",
            Method::Bow { .. } => "bow",
            Method::Tfidf { .. } => "tfidf",
        }
    }

    pub fn norm(&self) -> Option<NormScheme> {
        match self {
            Method::Bow { norm, .. } | Method::Tfidf { norm, .. } => Some(*norm),
            _ => None,
        }
    }

    pub fn metric(&self) -> Option<VectorMetric> {
        match self {
            Method::Bow { metric, .. } | Method::Tfidf { metric, .. } => Some(*metric),
            _ => None,
        }
    }

    /// File-name friendly label, e.g. `bow-l1-l2`.
    pub fn slug(&self) -> String {
        self.to_string().replace('/', "-")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Wmd | Method::WmdTfidf => f.write_str(self.family()),
            Method::Bow { norm, metric } | Method::Tfidf { norm, metric } => {
                write!(f, "{}/{norm}/{metric}", self.family())
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `wmd`, `wmd-tfidf`, `bow/<norm>/<metric>` and
    /// `tfidf/<norm>/<metric>`; `-` also works as the separator.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "wmd" => return Ok(Method::Wmd),
            "wmd-tfidf" | "wmd_tfidf" => return Ok(Method::WmdTfidf),
            _ => {}
        }
        let parts: Vec<&str> = lower.split(['/', '-', ':']).collect();
        match parts.as_slice() {
            [family @ ("bow" | "tfidf"), norm, metric] => {
                let norm = norm.parse()?;
                let metric = metric.parse()?;
                Ok(if *family == "bow" {
                    Method::Bow { norm, metric }
                } else {
                    Method::Tfidf { norm, metric }
                })
            }
            _ => Err(Error::InvalidInput(format!("unknown method {s:?}"))),
        }
    }
}

/// Documents keyed by id, with the statistics every method needs.
#[derive(Debug, Clone)]
pub struct DocumentTable {
    docs: BTreeMap<usize, Vec<String>>,
    stats: CorpusStats,
}

impl DocumentTable {
    pub fn new(docs: impl IntoIterator<Item = (usize, Vec<String>)>) -> Result<Self> {
        let docs: BTreeMap<usize, Vec<String>> = docs.into_iter().collect();
        let lists: Vec<&[String]> = docs.values().map(Vec::as_slice).collect();
        let stats = CorpusStats::from_documents(&lists)?;
        Ok(DocumentTable { docs, stats })
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn tokens(&self, id: usize) -> Option<&[String]> {
        self.docs.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.docs.keys().copied()
    }

    fn tokens_or_err(&self, id: usize) -> Result<&[String]> {
        self.tokens(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown document id {id}")))
    }

    /// Marginal measure of a document under `weighting`.
    pub fn measure(&self, id: usize, weighting: Weighting) -> Result<DocumentMeasure> {
        make_measure(self.tokens_or_err(id)?, weighting, &self.stats).map_err(|e| match e {
            Error::EmptySupport { .. } => Error::EmptySupport { doc: Some(id) },
            e => e,
        })
    }

    /// Vector representation of a document for the BOW/TF-IDF methods.
    pub fn vector(&self, id: usize, tfidf: bool, norm: NormScheme) -> Result<SparseVector> {
        let tokens = self.tokens_or_err(id)?;
        let raw = if tfidf {
            tfidf_vector(tokens, &self.stats.vocab, &self.stats.doc_freq, self.stats.n_docs)?
        } else {
            bow_vector(tokens, &self.stats.vocab).0
        };
        if raw.is_empty() {
            return Err(Error::EmptySupport { doc: Some(id) });
        }
        normalize(&raw, norm)
    }
}

enum Prepared {
    Measure(DocumentMeasure),
    Vector(SparseVector),
}

fn prepare(table: &DocumentTable, id: usize, method: Method) -> Result<Prepared> {
    match method {
        Method::Wmd => table.measure(id, Weighting::UniformCount).map(Prepared::Measure),
        Method::WmdTfidf => table.measure(id, Weighting::Tfidf).map(Prepared::Measure),
        Method::Bow { norm, .. } => table.vector(id, false, norm).map(Prepared::Vector),
        Method::Tfidf { norm, .. } => table.vector(id, true, norm).map(Prepared::Vector),
    }
}

fn cell(a: &Prepared, b: &Prepared, method: Method, store: Option<&EmbeddingStore>) -> Result<f64> {
    match (a, b) {
        (Prepared::Measure(x), Prepared::Measure(y)) => {
            let store = store.ok_or_else(|| Error::InvalidInput(format!("{method} needs word embeddings")))?;
            wmd_distance(x, y, store)
        }
        (Prepared::Vector(x), Prepared::Vector(y)) => vector_distance(x, y, method.metric().unwrap_or(VectorMetric::L1)),
        _ => unreachable!("both documents are prepared for the same method"),
    }
}

/// Rectangular matrix of distances between query and reference documents.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    row_ids: Vec<usize>,
    col_ids: Vec<usize>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(row_ids: Vec<usize>, col_ids: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.len() != row_ids.len() * col_ids.len() {
            return Err(Error::DimMismatch {
                expected: row_ids.len() * col_ids.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("distance {v} is negative or NaN")));
        }
        Ok(DistanceMatrix {
            row_ids,
            col_ids,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[usize] {
        &self.col_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.col_ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.col_ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Distance between two document ids, if both are present.
    pub fn get_by_id(&self, row_id: usize, col_id: usize) -> Option<f64> {
        let i = self.row_ids.iter().position(|&r| r == row_id)?;
        let j = self.col_ids.iter().position(|&c| c == col_id)?;
        Some(self.get(i, j))
    }

    /// Sub-matrix over the given ids, in the given order.
    pub fn select(&self, row_ids: &[usize], col_ids: &[usize]) -> Result<DistanceMatrix> {
        let rpos: HashMap<usize, usize> = self.row_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let cpos: HashMap<usize, usize> = self.col_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let find = |map: &HashMap<usize, usize>, id: usize| {
            map.get(&id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("document {id} is not in the distance matrix")))
        };
        let rows: Vec<usize> = row_ids.iter().map(|&id| find(&rpos, id)).collect::<Result<_>>()?;
        let cols: Vec<usize> = col_ids.iter().map(|&id| find(&cpos, id)).collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            values.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        Ok(DistanceMatrix {
            row_ids: row_ids.to_vec(),
            col_ids: col_ids.to_vec(),
            values,
        })
    }

    /// Writes the cache format: a `rows cols` line, the row ids, the column
    /// ids, then one line per row of 17-significant-digit values (`inf` for
    /// unusable cells).
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n_rows(), self.n_cols())?;
        write_ids(w, &self.row_ids)?;
        write_ids(w, &self.col_ids)?;
        for i in 0..self.n_rows() {
            let line: Vec<String> = self.row(i).iter().map(|&v| format_value(v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((k, Ok(line))) => Ok((k + 1, line)),
                Some((k, Err(e))) => Err(Error::parse(format!("line {}", k + 1), e.to_string())),
                None => Err(Error::parse("end of file", format!("missing {what}"))),
            }
        };
        let (ln, header) = next("header")?;
        let dims: Vec<usize> = parse_fields(&header, ln)?;
        let [n_rows, n_cols] = dims[..] else {
            return Err(Error::parse(format!("line {ln}"), "header must be `rows cols`"));
        };
        let (ln, rows) = next("row ids")?;
        let row_ids: Vec<usize> = parse_fields(&rows, ln)?;
        let (ln, cols) = next("column ids")?;
        let col_ids: Vec<usize> = parse_fields(&cols, ln)?;
        if row_ids.len() != n_rows || col_ids.len() != n_cols {
            return Err(Error::parse("ids", "id counts disagree with the header"));
        }
        let mut values = Vec::with_capacity(n_rows * n_cols);
        for _ in 0..n_rows {
            let (ln, line) = next("matrix row")?;
            let row: Vec<f64> = parse_fields(&line, ln)?;
            if row.len() != n_cols {
                return Err(Error::parse(format!("line {ln}"), format!("expected {n_cols} values, found {}", row.len())));
            }
            values.extend(row);
        }
        DistanceMatrix::new(row_ids, col_ids, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        DistanceMatrix::read(&mut BufReader::new(file))
    }
}

fn write_ids<W: Write>(w: &mut W, ids: &[usize]) -> std::io::Result<()> {
    let s: Vec<String> = ids.iter().map(usize::to_string).collect();
    writeln!(w, "{}", s.join(" "))
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_fields<T: FromStr>(line: &str, ln: usize) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    line.split_whitespace()
        .map(|f| f.parse::<T>().map_err(|e| Error::parse(format!("line {ln}"), format!("{f:?}: {e}"))))
        .collect()
}

/// Result of a batch distance computation.
#[derive(Debug, Clone)]
pub struct PairwiseDistances {
    pub matrix: DistanceMatrix,
    /// Documents without usable words; their rows and columns hold `inf`.
    pub empty_support: Vec<usize>,
}

/// Distances from every query to every reference under `method`.
///
/// Work is spread over the rayon pool; the output does not depend on the
/// number of workers. When the same id appears as query and reference the
/// cell is zero without solving. When `queries == refs` only the upper
/// triangle is solved and mirrored.
pub fn pairwise_distances(
    queries: &[usize],
    refs: &[usize],
    method: Method,
    table: &DocumentTable,
    store: Option<&EmbeddingStore>,
) -> Result<PairwiseDistances> {
    if method.needs_embeddings() && store.is_none() {
        return Err(Error::InvalidInput(format!("{method} needs word embeddings")));
    }
    let mut ids: Vec<usize> = queries.iter().chain(refs).copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let prepared: Vec<(usize, Result<Prepared>)> = ids.par_iter().map(|&id| (id, prepare(table, id, method))).collect();
    let mut reps: HashMap<usize, Prepared> = HashMap::with_capacity(prepared.len());
    let mut empty_support = Vec::new();
    for (id, p) in prepared {
        match p {
            Ok(p) => {
                reps.insert(id, p);
            }
            Err(Error::EmptySupport { .. }) => {
                warn!("document {id} has no usable words under {method}; excluded");
                empty_support.push(id);
            }
            Err(e) => return Err(e),
        }
    }

    let symmetric = queries == refs;
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, &q)| {
            refs.iter()
                .enumerate()
                .map(|(j, &r)| {
                    let (Some(a), Some(b)) = (reps.get(&q), reps.get(&r)) else {
                        return Ok(f64::INFINITY);
                    };
                    if q == r || (symmetric && j < i) {
                        return Ok(0.0);
                    }
                    cell(a, b, method, store)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let n = refs.len();
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
    }
    Ok(PairwiseDistances {
        matrix: DistanceMatrix::new(queries.to_vec(), refs.to_vec(), values)?,
        empty_support,
    })
}

/// Σ_ij C_ij P_ij recomputed from a plan, for cross-checks.
pub fn plan_cost(plan: &TransportPlan, cost: &CostMatrix) -> f64 {
    compensated_sum(plan.entries.iter().map(|e| e.mass * cost.get(e.row, e.col)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn uniform_measure() {
        let stats = CorpusStats::from_documents(&[toks("a a b")]).unwrap();
        let m = make_measure(&toks("a a b"), Weighting::UniformCount, &stats).unwrap();
        assert_eq!(m.words, vec!["a", "b"]);
        assert!((m.weights[0] - 2.0 / 3.0).abs() < 1e-15 && (m.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        let m = make_measure(&toks("a"), Weighting::UniformCount, &stats).unwrap();
        assert_eq!((m.words.as_slice(), m.weights.as_slice()), (&["a".to_owned()][..], &[1.0][..]));
    }

    #[test]
    fn tfidf_measure_drops_zero_idf() {
        // idf(a) = log2(2/2) = 0, idf(b) = log2(2/1) = 1
        let docs = [toks("a a b"), toks("a c")];
        let stats = CorpusStats::from_documents(&docs).unwrap();
        let m = make_measure(&docs[0], Weighting::Tfidf, &stats).unwrap();
        assert_eq!(m.words, vec!["b"]);
        assert_eq!(m.weights, vec![1.0]);
        let err = make_measure(&toks("a"), Weighting::Tfidf, &stats).unwrap_err();
        assert!(matches!(err, Error::EmptySupport { .. }));
    }

    #[test]
    fn method_round_trip() {
        for s in ["wmd", "wmd-tfidf", "bow/l1/l1", "tfidf/none/l2", "bow/l2/l2"] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("bow-l1-l2".parse::<Method>().unwrap().slug(), "bow-l1-l2");
        assert!("cosine".parse::<Method>().is_err());
    }

    #[test]
    fn cache_format() {
        let m = DistanceMatrix::new(vec![3, 1], vec![0, 2], vec![0.1, 1.0 / 3.0, f64::INFINITY, 2.0]).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 2\n3 1\n0 2\n"));
        assert!(text.contains("inf"));
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(DistanceMatrix::read(&mut buf.as_slice()).unwrap(), m);
        assert!(DistanceMatrix::read(&mut "2 2\n3 1\n0 2\n0.1 0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn select_by_id() {
        let m = DistanceMatrix::new(vec![5, 6], vec![7, 8, 9], (0..6).map(f64::from).collect()).unwrap();
        let s = m.select(&[6], &[9, 7]).unwrap();
        assert_eq!(s.values(), &[5.0, 3.0]);
        assert_eq!(m.get_by_id(5, 8), Some(1.0));
        assert!(m.select(&[1], &[7]).is_err());
    }
}
