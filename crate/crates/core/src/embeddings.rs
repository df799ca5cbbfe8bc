//! Word embedding storage, file formats, cost matrices and PCA projection.
//!
//! Two on-disk formats are supported:
//!
//! * text: UTF-8 lines `token v1 ... vd`, with an optional `count dim`
//!   header line;
//! * word2vec binary: a `count dim\n` header followed by records of the token
//!   bytes, a single space, `dim` little-endian `f32` values and an optional
//!   trailing newline.
//!
//! Vectors are held in `f64`. Loading can be restricted to a set of tokens so
//! that large pretrained files only materialize the words a corpus uses.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::CostMatrix;

/// Tolerance on unit norms after normalization.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    Word2vecBinary,
    Text,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word2vec-binary" | "bin" | "binary" => Ok(EmbeddingFormat::Word2vecBinary),
            "text" | "txt" => Ok(EmbeddingFormat::Text),
            _ => Err(Error::InvalidInput(format!("unknown embedding format {s:?}"))),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingFormat::Word2vecBinary => "word2vec-binary",
            EmbeddingFormat::Text => "text",
        })
    }
}

/// Token to dense vector map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            normalized: false,
        }
    }

    /// Builds a store from `(token, vector)` pairs; the first occurrence of a
    /// token wins.
    pub fn from_pairs<S: Into<String>>(dim: usize, pairs: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let mut store = EmbeddingStore::new(dim);
        for (w, v) in pairs {
            store.insert(w.into(), &v)?;
        }
        Ok(store)
    }

    /// Inserts a vector unless the token is already present. Returns whether
    /// it was inserted.
    pub fn insert(&mut self, token: String, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Ok(false);
        }
        self.index.insert(token.clone(), self.words.len());
        self.words.push(token);
        self.data.extend_from_slice(vector);
        self.normalized = false;
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&k| self.row(k))
    }

    fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    fn lookup(&self, token: &str) -> Result<&[f64]> {
        self.get(token).ok_or_else(|| Error::MissingWord(token.to_owned()))
    }

    /// Multiplies every vector by `factor`; clears the normalized flag.
    pub fn scaled(&self, factor: f64) -> EmbeddingStore {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out.normalized = false;
        out
    }
}

/// Loads an embedding file. With `keep`, only the listed tokens are stored.
pub fn load_embeddings(path: &Path, format: EmbeddingFormat, keep: Option<&HashSet<String>>) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        EmbeddingFormat::Text => read_text(&mut reader, keep),
        EmbeddingFormat::Word2vecBinary => read_word2vec_binary(&mut reader, keep),
    }
}

pub fn read_text<R: BufRead>(reader: &mut R, keep: Option<&HashSet<String>>) -> Result<EmbeddingStore> {
    let mut store: Option<EmbeddingStore> = None;
    let mut offset = 0usize;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::parse(format!("byte {offset}"), e.to_string()))?;
        if n == 0 {
            break;
        }
        let line_start = offset;
        offset += n;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if first {
            first = false;
            if fields.len() == 2 {
                if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    store = Some(EmbeddingStore::new(dim));
                    continue;
                }
            }
        }
        let dim = fields.len() - 1;
        let store = store.get_or_insert_with(|| EmbeddingStore::new(dim));
        if dim != store.dim {
            return Err(Error::DimMismatch {
                expected: store.dim,
                found: dim,
            });
        }
        if keep.is_some_and(|k| !k.contains(fields[0])) {
            continue;
        }
        let vector = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(format!("byte {line_start}"), format!("bad component: {e}")))?;
        store.insert(fields[0].to_owned(), &vector)?;
    }
    store.ok_or_else(|| Error::parse("byte 0", "no embeddings found"))
}

pub fn read_word2vec_binary<R: BufRead>(reader: &mut R, keep: Option<&HashSet<String>>) -> Result<EmbeddingStore> {
    let mut header = String::new();
    let mut offset = reader
        .read_line(&mut header)
        .map_err(|e| Error::parse("byte 0", e.to_string()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match parts.as_slice() {
        [c, d] => (
            c.parse::<usize>().map_err(|e| Error::parse("byte 0", format!("bad count: {e}")))?,
            d.parse::<usize>().map_err(|e| Error::parse("byte 0", format!("bad dim: {e}")))?,
        ),
        _ => return Err(Error::parse("byte 0", "header must be `count dim`")),
    };

    let mut store = EmbeddingStore::new(dim);
    let mut token = Vec::new();
    let mut raw = vec![0u8; 4 * dim];
    let mut vector = vec![0f64; dim];
    for _ in 0..count {
        token.clear();
        let n = reader
            .read_until(b' ', &mut token)
            .map_err(|e| Error::parse(format!("byte {offset}"), e.to_string()))?;
        if n == 0 || token.last() != Some(&b' ') {
            return Err(Error::parse(format!("byte {offset}"), "truncated record: missing token"));
        }
        offset += n;
        token.pop();
        // Skip the optional newline that ends the previous record.
        let start = token.iter().position(|&b| b != b'\n').unwrap_or(token.len());
        let word = std::str::from_utf8(&token[start..])
            .map_err(|e| Error::parse(format!("byte {offset}"), format!("token is not UTF-8: {e}")))?
            .to_owned();
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::parse(format!("byte {offset}"), "truncated record: missing vector components"))?;
        offset += raw.len();
        if keep.is_some_and(|k| !k.contains(&word)) {
            continue;
        }
        for (v, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
        }
        store.insert(word, &vector)?;
    }
    Ok(store)
}

/// Writes the store in the text format, with a `count dim` header.
pub fn write_text<W: Write>(store: &EmbeddingStore, writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "{} {}", store.len(), store.dim)?;
    for (k, w) in store.words.iter().enumerate() {
        write!(writer, "{w}")?;
        for v in store.row(k) {
            write!(writer, " {v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Writes the store in word2vec binary format (components rounded to `f32`).
pub fn write_word2vec_binary<W: Write>(store: &EmbeddingStore, writer: &mut W) -> std::io::Result<()> {
    writeln!(writer, "{} {}", store.len(), store.dim)?;
    for (k, w) in store.words.iter().enumerate() {
        writer.write_all(w.as_bytes())?;
        writer.write_all(b" ")?;
        for v in store.row(k) {
            writer.write_all(&(*v as f32).to_le_bytes())?;
        }
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_embeddings(store: &EmbeddingStore, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        EmbeddingFormat::Text => write_text(store, &mut w),
        EmbeddingFormat::Word2vecBinary => write_word2vec_binary(store, &mut w),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Scales every vector to unit Euclidean norm.
pub fn l2_normalize(store: &EmbeddingStore) -> Result<EmbeddingStore> {
    let mut out = store.clone();
    for (k, w) in store.words.iter().enumerate() {
        let row = &mut out.data[k * store.dim..(k + 1) * store.dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector { token: Some(w.clone()) });
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    out.normalized = true;
    Ok(out)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distances between the embeddings of two word lists.
pub fn cost_submatrix<S: AsRef<str>, T: AsRef<str>>(
    store: &EmbeddingStore,
    src_words: &[S],
    dst_words: &[T],
) -> Result<CostMatrix> {
    let src: Vec<&[f64]> = src_words.iter().map(|w| store.lookup(w.as_ref())).collect::<Result<_>>()?;
    let dst: Vec<&[f64]> = dst_words.iter().map(|w| store.lookup(w.as_ref())).collect::<Result<_>>()?;
    Ok(CostMatrix::from_fn(src.len(), dst.len(), |i, j| {
        if std::ptr::eq(src[i], dst[j]) {
            0.0
        } else {
            euclidean(src[i], dst[j])
        }
    }))
}

/// Principal axes fitted on a set of embeddings.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `components[k]` is the k-th principal direction (unit length).
    pub components: Vec<Vec<f64>>,
    /// Variance along each retained direction, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(v.iter().zip(&self.mean)).map(|(ck, (x, m))| ck * (x - m)).sum())
            .collect()
    }
}

/// Fits a `target_dim`-component PCA on the vectors of `fit_vocab`.
///
/// The covariance is the population covariance of the mean-centered fit
/// vectors. Each direction is signed so that its largest-magnitude entry is
/// positive.
pub fn fit_pca<S: AsRef<str>>(store: &EmbeddingStore, target_dim: usize, fit_vocab: &[S]) -> Result<PcaModel> {
    let d = store.dim;
    if target_dim == 0 || target_dim > d {
        return Err(Error::InvalidInput(format!("target dimension {target_dim} must be in 1..={d}")));
    }
    if fit_vocab.len() < target_dim {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least {target_dim} fit vectors, got {}",
            fit_vocab.len()
        )));
    }
    let rows: Vec<&[f64]> = fit_vocab.iter().map(|w| store.lookup(w.as_ref())).collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let centered = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let threshold = top * d as f64 * f64::EPSILON * 16.0;
    let available = order.iter().filter(|&&k| eig.eigenvalues[k] > threshold).count();
    if available < target_dim {
        return Err(Error::RankDeficient {
            requested: target_dim,
            available,
        });
    }

    let mut components = Vec::with_capacity(target_dim);
    let mut explained_variance = Vec::with_capacity(target_dim);
    for &k in &order[..target_dim] {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = c
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, *v) } else { best })
            .1;
        if pivot < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained_variance.push(eig.eigenvalues[k]);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Projects every stored vector onto the top `target_dim` principal
/// directions of `fit_vocab`. The result is not renormalized.
pub fn project_pca<S: AsRef<str>>(store: &EmbeddingStore, target_dim: usize, fit_vocab: &[S]) -> Result<EmbeddingStore> {
    let model = fit_pca(store, target_dim, fit_vocab)?;
    let mut out = EmbeddingStore::new(target_dim);
    for (k, w) in store.words.iter().enumerate() {
        out.insert(w.clone(), &model.project(store.row(k)))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(pairs: &[(&str, &[f64])]) -> EmbeddingStore {
        EmbeddingStore::from_pairs(pairs[0].1.len(), pairs.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    #[test]
    fn parse_text() {
        let s = read_text(&mut "a 1.0 0.0\nb 0.0 1.0".as_bytes(), None).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("b"), Some(&[0.0, 1.0][..]));

        let s = read_text(&mut "2 3\nx 1 2 3\nx 4 5 6\n".as_bytes(), None).unwrap();
        assert_eq!((s.dim(), s.len()), (3, 1));
        assert_eq!(s.get("x"), Some(&[1.0, 2.0, 3.0][..]));
    }

    #[test]
    fn text_dim_mismatch() {
        let err = read_text(&mut "a 1 2\nb 1 2 3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn parse_binary() {
        let mut bytes = b"2 3\n".to_vec();
        for (w, v) in [("ab", [1.0f32, 2.0, 3.0]), ("c", [-1.0, 0.5, 0.0])] {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(b' ');
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            bytes.push(b'\n');
        }
        let s = read_word2vec_binary(&mut bytes.as_slice(), None).unwrap();
        assert_eq!((s.dim(), s.len()), (3, 2));
        assert_eq!(s.get("c"), Some(&[-1.0, 0.5, 0.0][..]));

        let truncated = &bytes[..bytes.len() - 6];
        let err = read_word2vec_binary(&mut &truncated[..], None).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn binary_without_trailing_newlines() {
        let mut bytes = b"2 1\n".to_vec();
        for (w, x) in [("a", 1.5f32), ("b", 2.5)] {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(b' ');
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let s = read_word2vec_binary(&mut bytes.as_slice(), None).unwrap();
        assert_eq!(s.words(), &["a", "b"]);
    }

    #[test]
    fn keep_filter() {
        let keep: HashSet<String> = ["b".to_owned()].into();
        let s = read_text(&mut "a 1\nb 2\n".as_bytes(), Some(&keep)).unwrap();
        assert_eq!(s.words(), &["b"]);
    }

    #[test]
    fn normalization() {
        let s = l2_normalize(&store(&[("a", &[3.0, 4.0]), ("b", &[1.0, 0.0])])).unwrap();
        let a = s.get("a").unwrap();
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        assert_eq!(s.get("b").unwrap(), &[1.0, 0.0]);
        assert!(s.is_normalized());
        let err = l2_normalize(&store(&[("z", &[0.0, 0.0])])).unwrap_err();
        assert!(matches!(err, Error::ZeroVector { token: Some(ref t) } if t == "z"));
    }

    #[test]
    fn cost_entries() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[-1.0, 0.0])]);
        assert_eq!(cost_submatrix(&s, &["a"], &["a"]).unwrap().get(0, 0), 0.0);
        assert_eq!(cost_submatrix(&s, &["a"], &["b"]).unwrap().get(0, 0), 2f64.sqrt());
        assert_eq!(cost_submatrix(&s, &["a"], &["c"]).unwrap().get(0, 0), 2.0);
        assert!(matches!(cost_submatrix(&s, &["a"], &["q"]), Err(Error::MissingWord(w)) if w == "q"));
    }

    #[test]
    fn pca_rejects_bad_dims() {
        let s = store(&[("a", &[1.0, 0.0]), ("b", &[2.0, 0.0]), ("c", &[3.0, 0.0])]);
        assert!(fit_pca(&s, 3, &["a", "b", "c"]).is_err());
        assert!(matches!(
            fit_pca(&s, 2, &["a", "b", "c"]),
            Err(Error::RankDeficient { requested: 2, available: 1 })
        ));
        let p = project_pca(&s, 1, &["a", "b", "c"]).unwrap();
        assert_eq!(p.dim(), 1);
        assert!((p.get("c").unwrap()[0] - 1.0).abs() < 1e-12);
        assert!(!p.is_normalized());
    }
}
