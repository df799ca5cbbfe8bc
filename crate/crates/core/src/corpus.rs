//! Labelled corpora: the plain-text file format, vocabulary filtering,
//! duplicate detection and removal, and train/test folds.
//!
//! Corpus file: one document per line, `label TAB token SP token ...`.
//! Document ids are 0-based line numbers. Optional sidecar files next to the
//! corpus: `<path>.meta` with `name = ...` and `split = one-fold|five-fold`
//! lines, and `<path>.fold<i>` with a `train: ids` and a `test: ids` line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};

/// Number of folds a five-fold dataset must declare.
pub const FIVE_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitType {
    OneFold,
    FiveFold,
}

impl fmt::Display for SplitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitType::OneFold => "one-fold",
            SplitType::FiveFold => "five-fold",
        })
    }
}

impl FromStr for SplitType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "one-fold" => Ok(SplitType::OneFold),
            "five-fold" => Ok(SplitType::FiveFold),
            _ => Err(Error::InvalidInput(format!("unknown split type {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: usize,
    pub label: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    fn side(&self, id: usize) -> Option<bool> {
        if self.train.binary_search(&id).is_ok() {
            Some(true)
        } else if self.test.binary_search(&id).is_ok() {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub name: String,
    pub split: SplitType,
}

/// Documents in id order, with folds and dataset metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    pub folds: Vec<Fold>,
    pub meta: CorpusMeta,
}

impl Corpus {
    /// Builds a corpus, checking that ids are unique, labels non-empty and
    /// every fold references known ids with disjoint sides.
    pub fn new(mut documents: Vec<Document>, mut folds: Vec<Fold>, meta: CorpusMeta) -> Result<Self> {
        documents.sort_by_key(|d| d.id);
        if let Some(w) = documents.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput(format!("duplicate document id {}", w[0].id)));
        }
        if let Some(d) = documents.iter().find(|d| d.label.is_empty()) {
            return Err(Error::InvalidInput(format!("document {} has an empty label", d.id)));
        }
        let corpus_ids: BTreeSet<usize> = documents.iter().map(|d| d.id).collect();
        for (f, fold) in folds.iter_mut().enumerate() {
            fold.train.sort_unstable();
            fold.test.sort_unstable();
            fold.train.dedup();
            fold.test.dedup();
            if let Some(id) = fold.train.iter().chain(&fold.test).find(|id| !corpus_ids.contains(id)) {
                return Err(Error::InvalidInput(format!("fold {f} references unknown document {id}")));
            }
            if let Some(id) = fold.train.iter().find(|id| fold.test.binary_search(id).is_ok()) {
                return Err(Error::InvalidInput(format!("fold {f}: document {id} is in train and test")));
            }
        }
        Ok(Corpus { documents, folds, meta })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.id).collect()
    }

    pub fn get(&self, id: usize) -> Option<&Document> {
        self.documents
            .binary_search_by_key(&id, |d| d.id)
            .ok()
            .map(|i| &self.documents[i])
    }

    pub fn labels(&self) -> HashMap<usize, String> {
        self.documents.iter().map(|d| (d.id, d.label.clone())).collect()
    }

    pub fn classes(&self) -> BTreeSet<&str> {
        self.documents.iter().map(|d| d.label.as_str()).collect()
    }

    /// Number of distinct tokens over all documents.
    pub fn vocabulary_size(&self) -> usize {
        self.documents
            .iter()
            .flat_map(|d| &d.tokens)
            .collect::<HashSet<_>>()
            .len()
    }

    /// Documents with no tokens left.
    pub fn empty_documents(&self) -> Vec<usize> {
        self.documents.iter().filter(|d| d.tokens.is_empty()).map(|d| d.id).collect()
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn meta_path(path: &Path) -> PathBuf {
    sidecar(path, ".meta")
}

pub fn fold_path(path: &Path, fold: usize) -> PathBuf {
    sidecar(path, &format!(".fold{fold}"))
}

/// Parses corpus lines. Line numbers in errors are 1-based.
pub fn parse_documents<R: BufRead>(reader: R, source: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(format!("{source}:{}", i + 1), e.to_string()))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let Some((label, rest)) = line.split_once('\t') else {
            return Err(Error::parse(format!("{source}:{}", i + 1), "missing TAB between label and tokens"));
        };
        if label.is_empty() {
            return Err(Error::parse(format!("{source}:{}", i + 1), "empty label"));
        }
        docs.push(Document {
            id: i,
            label: label.to_owned(),
            tokens: rest.split_whitespace().map(str::to_owned).collect(),
        });
    }
    Ok(docs)
}

fn parse_id_list(line: &str, key: &str, location: &str) -> Result<Vec<usize>> {
    let rest = line
        .trim()
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(':'))
        .ok_or_else(|| Error::parse(location, format!("expected a line starting with {key:?}")))?;
    rest.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(location, format!("bad document id {t:?}"))))
        .collect()
}

pub fn parse_fold(text: &str, source: &str) -> Result<Fold> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != 2 {
        return Err(Error::parse(source, format!("expected 2 lines, found {}", lines.len())));
    }
    Ok(Fold {
        train: parse_id_list(lines[0], "train", &format!("{source}:1"))?,
        test: parse_id_list(lines[1], "test", &format!("{source}:2"))?,
    })
}

fn parse_meta(text: &str, source: &str) -> Result<(Option<String>, Option<SplitType>)> {
    let mut name = None;
    let mut split = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let location = format!("{source}:{}", i + 1);
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&location, "expected key = value"))?;
        match k.trim() {
            "name" => name = Some(v.trim().to_owned()),
            "split" => split = Some(v.parse().map_err(|e: Error| Error::parse(&location, e.to_string()))?),
            other => warn!("{location}: ignoring unknown key {other:?}"),
        }
    }
    Ok((name, split))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a corpus file with its optional meta and fold sidecars.
///
/// Fold files are read from `.fold0` upwards until one is missing. A dataset
/// declared five-fold must provide all five. Without a meta file the name is
/// the file stem and the split type follows from the number of folds.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let documents = parse_documents(BufReader::new(file), &path.display().to_string())?;

    let meta_file = meta_path(path);
    let (name, declared) = if meta_file.exists() {
        parse_meta(&read_to_string(&meta_file)?, &meta_file.display().to_string())?
    } else {
        (None, None)
    };

    let mut folds = Vec::new();
    loop {
        let fp = fold_path(path, folds.len());
        if !fp.exists() {
            if declared == Some(SplitType::FiveFold) && folds.len() < FIVE_FOLDS {
                return Err(Error::MissingFoldFile(fp));
            }
            break;
        }
        folds.push(parse_fold(&read_to_string(&fp)?, &fp.display().to_string())?);
    }

    let split = declared.unwrap_or(if folds.len() > 1 {
        SplitType::FiveFold
    } else {
        SplitType::OneFold
    });
    let name = name.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    Corpus::new(documents, folds, CorpusMeta { name, split })
}

/// Writes the corpus, its meta file and one fold file per fold. Documents are
/// renumbered to their line position; the returned vector maps each new id
/// to the original one.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<Vec<usize>> {
    let renumber: HashMap<usize, usize> = corpus.documents.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
    let write = |p: &Path, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<()> {
        let file = fs::File::create(p).map_err(|e| Error::io(p, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
    };
    write(path, &|w| {
        for d in &corpus.documents {
            writeln!(w, "{}\t{}", d.label, d.tokens.join(" "))?;
        }
        Ok(())
    })?;
    write(&meta_path(path), &|w| {
        writeln!(w, "name = {}", corpus.meta.name)?;
        writeln!(w, "split = {}", corpus.meta.split)
    })?;
    for (f, fold) in corpus.folds.iter().enumerate() {
        let ids = |v: &[usize]| v.iter().map(|id| renumber[id].to_string()).collect::<Vec<_>>().join(" ");
        write(&fold_path(path, f), &|w| {
            writeln!(w, "train: {}", ids(&fold.train))?;
            writeln!(w, "test: {}", ids(&fold.test))
        })?;
    }
    // Remove fold files beyond the current fold count left by earlier writes.
    let mut f = corpus.folds.len();
    while fold_path(path, f).exists() {
        fs::remove_file(fold_path(path, f)).map_err(|e| Error::io(fold_path(path, f), e))?;
        f += 1;
    }
    Ok(corpus.documents.iter().map(|d| d.id).collect())
}

/// Reads a stopword file, one token per line; blank lines are skipped.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Drops tokens missing from the embedding store (unless `keep_oov`) and
/// stopwords. Documents left without tokens are kept and reported.
pub fn filter_vocabulary(
    corpus: &Corpus,
    store: &EmbeddingStore,
    stopwords: Option<&HashSet<String>>,
    keep_oov: bool,
) -> Corpus {
    let keep = |t: &String| (keep_oov || store.contains(t)) && !stopwords.is_some_and(|s| s.contains(t));
    let documents: Vec<Document> = corpus
        .documents
        .iter()
        .map(|d| Document {
            id: d.id,
            label: d.label.clone(),
            tokens: d.tokens.iter().filter(|t| keep(t)).cloned().collect(),
        })
        .collect();
    let out = Corpus {
        documents,
        folds: corpus.folds.clone(),
        meta: corpus.meta.clone(),
    };
    let empty = out.empty_documents();
    if !empty.is_empty() {
        warn!("{} document(s) have no tokens after filtering: {:?}", empty.len(), empty);
    }
    out
}

/// Documents with identical token multisets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DuplicateReport {
    /// Every pair `(i, j)`, `i < j`, of identical documents.
    pub pairs: Vec<(usize, usize)>,
    /// Ids with at least one duplicate.
    pub samples: Vec<usize>,
    /// Pairs with one document in train and the other in test in some fold.
    pub cross_split: Vec<(usize, usize)>,
    /// Pairs whose labels differ.
    pub conflicting: Vec<(usize, usize)>,
}

impl DuplicateReport {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Equivalence classes implied by the pairs, each sorted, ordered by
    /// smallest member.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut parent: BTreeMap<usize, usize> = self.samples.iter().map(|&s| (s, s)).collect();
        fn root(parent: &mut BTreeMap<usize, usize>, mut x: usize) -> usize {
            while parent[&x] != x {
                let up = parent[&parent[&x]];
                parent.insert(x, up);
                x = up;
            }
            x
        }
        for &(a, b) in &self.pairs {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra != rb {
                parent.insert(ra.max(rb), ra.min(rb));
            }
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in self.samples.clone() {
            let r = root(&mut parent, s);
            classes.entry(r).or_default().push(s);
        }
        classes.into_values().collect()
    }
}

/// Reports every pair of documents with the same token multiset.
pub fn find_duplicates(corpus: &Corpus) -> DuplicateReport {
    let mut groups: HashMap<Vec<&str>, Vec<usize>> = HashMap::new();
    for d in &corpus.documents {
        let mut key: Vec<&str> = d.tokens.iter().map(String::as_str).collect();
        key.sort_unstable();
        groups.entry(key).or_default().push(d.id);
    }
    let mut report = DuplicateReport::default();
    for ids in groups.values().filter(|g| g.len() > 1) {
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                report.pairs.push((i, j));
            }
        }
        report.samples.extend(ids);
    }
    report.pairs.sort_unstable();
    report.samples.sort_unstable();
    for &(i, j) in &report.pairs {
        let crosses = corpus
            .folds
            .iter()
            .any(|f| matches!((f.side(i), f.side(j)), (Some(a), Some(b)) if a != b));
        if crosses {
            report.cross_split.push((i, j));
        }
        let label = |id| corpus.get(id).map(|d: &Document| d.label.as_str());
        if label(i) != label(j) {
            report.conflicting.push((i, j));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum RemovalReason {
    /// Identical to the retained document `kept`.
    Duplicate { kept: usize },
    /// Member of a duplicate class whose labels disagree.
    ConflictingLabels,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub id: usize,
    #[serde(flatten)]
    pub reason: RemovalReason,
}

/// Removes duplicates, keeping one representative per class; see
/// [`deduplicate_logged`].
pub fn deduplicate(corpus: &Corpus, report: &DuplicateReport) -> Corpus {
    deduplicate_logged(corpus, report).0
}

/// Removes duplicates and returns the removals with their reasons.
///
/// Classes with conflicting labels are removed entirely. Otherwise the
/// representative is the member that is a training document in the most
/// folds, so a class spanning train and test keeps its train copy; remaining
/// ties go to the smallest id.
pub fn deduplicate_logged(corpus: &Corpus, report: &DuplicateReport) -> (Corpus, Vec<Removal>) {
    let mut removals = Vec::new();
    for class in report.classes() {
        let labels: BTreeSet<&str> = class
            .iter()
            .filter_map(|&id| corpus.get(id).map(|d| d.label.as_str()))
            .collect();
        if labels.len() > 1 {
            for &id in &class {
                removals.push(Removal {
                    id,
                    reason: RemovalReason::ConflictingLabels,
                });
            }
            continue;
        }
        let train_count = |id: usize| corpus.folds.iter().filter(|f| f.side(id) == Some(true)).count();
        let kept = *class
            .iter()
            .max_by(|&&a, &&b| train_count(a).cmp(&train_count(b)).then(b.cmp(&a)))
            .expect("classes are non-empty");
        for &id in class.iter().filter(|&&id| id != kept) {
            removals.push(Removal {
                id,
                reason: RemovalReason::Duplicate { kept },
            });
        }
    }
    removals.sort_by_key(|r| r.id);
    for r in &removals {
        match r.reason {
            RemovalReason::Duplicate { kept } => info!("removing document {} (duplicate of {kept})", r.id),
            RemovalReason::ConflictingLabels => info!("removing document {} (duplicate with conflicting labels)", r.id),
        }
    }
    let removed: HashSet<usize> = removals.iter().map(|r| r.id).collect();
    let documents = corpus.documents.iter().filter(|d| !removed.contains(&d.id)).cloned().collect();
    let folds = corpus
        .folds
        .iter()
        .map(|f| Fold {
            train: f.train.iter().copied().filter(|id| !removed.contains(id)).collect(),
            test: f.test.iter().copied().filter(|id| !removed.contains(id)).collect(),
        })
        .collect();
    let out = Corpus {
        documents,
        folds,
        meta: corpus.meta.clone(),
    };
    (out, removals)
}

/// Replaces the folds with `n_folds` seeded random train/test splits holding
/// `round(n * train_fraction)` training documents each. Fold `f` shuffles
/// with its own stream of the seeded generator.
pub fn make_folds(corpus: &Corpus, n_folds: usize, train_fraction: f64, seed: u64) -> Result<Corpus> {
    if n_folds == 0 {
        return Err(Error::InvalidInput("n_folds must be at least 1".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("train fraction {train_fraction} is outside (0, 1)")));
    }
    let ids = corpus.ids();
    let n_train = (ids.len() as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == ids.len() {
        return Err(Error::TooSmall(format!(
            "{} documents at train fraction {train_fraction} leave an empty side",
            ids.len()
        )));
    }
    let folds = (0..n_folds)
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            let mut train = shuffled[..n_train].to_vec();
            let mut test = shuffled[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Fold { train, test }
        })
        .collect();
    let split = if n_folds == 1 {
        SplitType::OneFold
    } else {
        SplitType::FiveFold
    };
    Ok(Corpus {
        documents: corpus.documents.clone(),
        folds,
        meta: CorpusMeta {
            name: corpus.meta.name.clone(),
            split,
        },
    })
}
