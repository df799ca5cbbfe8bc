//! The subcommands.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use wmdlab::analysis::{
    dim_comparison, nearest_neighbor_pairs, pearson, sample_pairs, transport_histogram, wmd_bow_scatter,
    write_scatter_csv, Geometry, NeighborMode,
};
use wmdlab::corpus::{load_corpus, load_stopwords, make_folds, write_corpus, Corpus, DuplicateReport, Removal};
use wmdlab::embeddings::{l2_normalize, load_embeddings, project_pca, save_embeddings, EmbeddingFormat, EmbeddingStore};
use wmdlab::experiment::{dataset_distances, load_corpus_embeddings, prepare_corpus};
use wmdlab::knn::{evaluate_fold, fold_seed, mean_std, relative_performance, Classifier, FoldResult};
use wmdlab::wmd::{DistanceMatrix, DocumentMeasure, DocumentTable, Method, Weighting};

use crate::config::RunConfig;
use crate::inputs::{sha256_hex, Hashes, Manifest};

/// State shared by one invocation.
pub struct Run {
    pub config: RunConfig,
    pub hashes: Hashes,
    pub outputs: Vec<PathBuf>,
    pub fold_seeds: BTreeMap<String, Vec<u64>>,
}

/// A corpus ready for distance computation.
struct Dataset {
    name: String,
    corpus: Corpus,
    store: Option<EmbeddingStore>,
    duplicates: DuplicateReport,
    removals: Vec<Removal>,
    /// Hash of everything the distances depend on except the method and fold.
    key: String,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

impl Run {
    pub fn new(config: RunConfig) -> Self {
        Run {
            config,
            hashes: Hashes::default(),
            outputs: Vec::new(),
            fold_seeds: BTreeMap::new(),
        }
    }

    pub fn finish(mut self, command: &str) -> Result<()> {
        create_dir(&self.config.out)?;
        self.outputs.sort();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.config,
            seed: self.config.seed,
            fold_seeds: self.fold_seeds.clone(),
            inputs: self.hashes.all(),
            outputs: self.outputs.clone(),
        };
        let path = manifest.write(&self.config.out)?;
        info!("wrote {}", path.display());
        Ok(())
    }

    fn record(&mut self, path: PathBuf) {
        info!("wrote {}", path.display());
        self.outputs.push(path);
    }

    fn load_dataset(&mut self, path: &Path, need_embeddings: bool, clean: bool) -> Result<Dataset> {
        let cfg = self.config.clone();
        let raw = load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))?;
        let use_store = need_embeddings || (!cfg.keep_oov && cfg.embeddings.is_some());
        let store = if use_store {
            let emb = cfg.require_embeddings("word embeddings are needed for WMD")?;
            Some(load_corpus_embeddings(&raw, emb, cfg.format).with_context(|| format!("loading {}", emb.display()))?)
        } else {
            None
        };
        let stopwords = cfg.stopwords.as_deref().map(load_stopwords).transpose()?;
        let prepared = prepare_corpus(&raw, store.as_ref(), stopwords.as_ref(), cfg.keep_oov, clean);
        let mut corpus = prepared.corpus;
        if corpus.folds.is_empty() {
            info!(
                "{}: no fold files; generating {} fold(s) at train fraction {}",
                corpus.meta.name, cfg.folds, cfg.train_fraction
            );
            corpus = make_folds(&corpus, cfg.folds, cfg.train_fraction, cfg.seed)?;
        }
        let name = corpus.meta.name.clone();
        self.fold_seeds
            .insert(name.clone(), (0..corpus.folds.len()).map(|f| fold_seed(cfg.seed, f)).collect());

        let mut parts = vec![format!("corpus={}", self.hashes.of(path)?)];
        for (f, _) in corpus.folds.iter().enumerate() {
            let fp = wmdlab::corpus::fold_path(path, f);
            if fp.exists() {
                self.hashes.of(&fp)?;
            }
        }
        if store.is_some() {
            let emb = cfg.embeddings.as_deref().expect("store implies a path");
            parts.push(format!("embeddings={} format={}", self.hashes.of(emb)?, cfg.format));
        }
        if let Some(s) = &cfg.stopwords {
            parts.push(format!("stopwords={}", self.hashes.of(s)?));
        }
        parts.push(format!("keep_oov={} clean={}", cfg.keep_oov, clean));
        Ok(Dataset {
            name,
            key: parts.join("\n"),
            corpus,
            store,
            duplicates: prepared.duplicates,
            removals: prepared.removals,
        })
    }

    fn cache_paths(&self, ds: &Dataset, method: Method, fold: usize) -> (PathBuf, PathBuf) {
        let dir = self.config.cache_dir.join(&ds.name);
        let stem = format!("{}.fold{fold}", method.slug());
        (dir.join(format!("{stem}.dist")), dir.join(format!("{stem}.key")))
    }

    /// Rows: the fold's train and test documents; columns: its training
    /// documents. Reuses valid caches and computes the rest in one pass.
    fn fold_matrices(&mut self, ds: &Dataset, method: Method) -> Result<Vec<DistanceMatrix>> {
        let mut out: Vec<Option<DistanceMatrix>> = vec![None; ds.corpus.folds.len()];
        let mut keys = Vec::new();
        for (f, fold) in ds.corpus.folds.iter().enumerate() {
            let (dist_path, key_path) = self.cache_paths(ds, method, f);
            let key = sha256_hex(
                format!(
                    "{}\nmethod={method}\ntrain={:?}\ntest={:?}\nversion={}",
                    ds.key,
                    fold.train,
                    fold.test,
                    env!("CARGO_PKG_VERSION")
                )
                .as_bytes(),
            );
            let (rows, cols) = fold_ids(&ds.corpus, f);
            if fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == key) && dist_path.exists() {
                match DistanceMatrix::load(&dist_path) {
                    Ok(m) if m.row_ids() == rows && m.col_ids() == cols => {
                        info!("cache hit: {}", dist_path.display());
                        out[f] = Some(m);
                    }
                    Ok(_) => warn!("cache {} does not match fold {f}; recomputing", dist_path.display()),
                    Err(e) => warn!("corrupt cache {}: {e}; recomputing", dist_path.display()),
                }
            }
            keys.push(key);
        }
        let missing: Vec<usize> = (0..out.len()).filter(|&f| out[f].is_none()).collect();
        if !missing.is_empty() {
            if self.config.no_compute {
                let (p, _) = self.cache_paths(ds, method, missing[0]);
                bail!("missing distance cache {} (--no-compute is set)", p.display());
            }
            info!("{}: computing {method} distances", ds.name);
            let all = dataset_distances(&ds.corpus, method, ds.store.as_ref())?;
            if !all.empty_support.is_empty() {
                warn!(
                    "{}: {} document(s) without usable words under {method}",
                    ds.name,
                    all.empty_support.len()
                );
            }
            for f in missing {
                let (rows, cols) = fold_ids(&ds.corpus, f);
                let m = all.matrix.select(&rows, &cols)?;
                let (dist_path, key_path) = self.cache_paths(ds, method, f);
                create_dir(dist_path.parent().expect("cache files live in a directory"))?;
                m.save(&dist_path)?;
                fs::write(&key_path, format!("{}\n", keys[f])).with_context(|| format!("writing {}", key_path.display()))?;
                info!("wrote {}", dist_path.display());
                out[f] = Some(m);
            }
        }
        Ok(out.into_iter().map(|m| m.expect("every fold is filled")).collect())
    }

    pub fn dists(&mut self) -> Result<()> {
        self.config.require_datasets()?;
        for path in self.config.datasets.clone() {
            let need = self.config.methods.iter().any(Method::needs_embeddings);
            let ds = self.load_dataset(&path, need, self.config.clean)?;
            for method in self.config.methods.clone() {
                self.fold_matrices(&ds, method)?;
                for f in 0..ds.corpus.folds.len() {
                    let p = self.cache_paths(&ds, method, f).0;
                    self.outputs.push(p);
                }
            }
        }
        Ok(())
    }

    pub fn eval(&mut self) -> Result<()> {
        self.config.require_datasets()?;
        create_dir(&self.config.out)?;
        let cfg = self.config.clone();
        let mut rows: Vec<String> = Vec::new();
        let mut errors: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut summary: BTreeMap<String, BTreeMap<String, serde_json::Value>> = BTreeMap::new();
        for path in &cfg.datasets {
            let need = cfg.methods.iter().any(Method::needs_embeddings);
            let ds = self.load_dataset(path, need, cfg.clean)?;
            let labels = ds.corpus.labels();
            for &method in &cfg.methods {
                let matrices = self.fold_matrices(&ds, method)?;
                let results: Vec<FoldResult> = ds
                    .corpus
                    .folds
                    .iter()
                    .zip(&matrices)
                    .enumerate()
                    .map(|(f, (fold, m))| {
                        evaluate_fold(m, &labels, &fold.train, &fold.test, cfg.classifier, &cfg.grid, cfg.seed, f)
                    })
                    .collect::<wmdlab::Result<_>>()?;
                for r in &results {
                    rows.push(csv_row(&ds.name, method, cfg.classifier, r));
                }
                let errs: Vec<f64> = results.iter().map(|r| r.evaluation.error_percent).collect();
                let (mean, std) = mean_std(&errs);
                info!("{} {method}: {mean:.2} +- {std:.2} % error over {} fold(s)", ds.name, errs.len());
                errors.entry(method.to_string()).or_default().insert(ds.name.clone(), mean);
                summary.entry(ds.name.clone()).or_default().insert(
                    method.to_string(),
                    json!({
                        "mean": mean,
                        "std": std,
                        "folds": errs.len(),
                        "excluded_docs": results.iter().map(|r| r.evaluation.excluded).sum::<usize>(),
                    }),
                );
            }
        }

        let csv = cfg.out.join("eval.csv");
        write_file(&csv, |w| {
            writeln!(w, "dataset,method,norm,metric,classifier,k,gamma,fold,error_percent,excluded_docs")?;
            rows.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?;
        self.record(csv);

        let base = cfg.base.to_string();
        let rel: BTreeMap<String, serde_json::Value> = if errors.contains_key(&base) {
            errors
                .keys()
                .map(|m| {
                    let v = match relative_performance(&errors, m, &base) {
                        Ok(r) => json!(r),
                        Err(e) => json!({ "error": e.to_string() }),
                    };
                    (m.clone(), v)
                })
                .collect()
        } else {
            warn!("base method {base} is not in the method grid; no relative scores");
            BTreeMap::new()
        };
        let json_path = cfg.out.join("eval_summary.json");
        let body = json!({
            "classifier": cfg.classifier,
            "base": base,
            "datasets": summary,
            "rel": rel,
        });
        fs::write(&json_path, serde_json::to_string_pretty(&body)? + "\n")?;
        self.record(json_path);

        // One row per (dataset, method); `rel` is the method's ratio to the
        // base averaged over datasets, blank when undefined.
        let table_path = cfg.out.join("eval_summary.csv");
        write_file(&table_path, |w| {
            writeln!(w, "dataset,method,mean_error,std_error,folds,rel")?;
            for (dataset, methods) in &summary {
                for (method, s) in methods {
                    let rel = rel.get(method).and_then(|v| v.as_f64()).map(|r| format!("{r:.3}"));
                    writeln!(
                        w,
                        "{dataset},{method},{:.2},{:.2},{},{}",
                        s["mean"].as_f64().unwrap_or(f64::NAN),
                        s["std"].as_f64().unwrap_or(f64::NAN),
                        s["folds"],
                        rel.unwrap_or_default()
                    )?;
                }
            }
            Ok(())
        })?;
        self.record(table_path);
        Ok(())
    }

    pub fn dedup(&mut self) -> Result<()> {
        self.config.require_datasets()?;
        create_dir(&self.config.out)?;
        for path in self.config.datasets.clone() {
            let ds = self.load_dataset(&path, false, true)?;
            let report = DedupReport {
                dataset: &ds.name,
                n_pairs: ds.duplicates.pairs.len(),
                n_samples: ds.duplicates.samples.len(),
                n_cross_split: ds.duplicates.cross_split.len(),
                n_conflicting: ds.duplicates.conflicting.len(),
                report: &ds.duplicates,
                removals: &ds.removals,
            };
            info!("{}: {} duplicate pairs, {} duplicate samples", ds.name, report.n_pairs, report.n_samples);
            let json_path = self.config.out.join(format!("{}.duplicates.json", ds.name));
            fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
            self.record(json_path);
            let clean_path = self.config.out.join(format!("{}.clean.txt", ds.name));
            write_corpus(&ds.corpus, &clean_path)?;
            self.record(clean_path);
        }
        Ok(())
    }

    pub fn analyze(&mut self) -> Result<()> {
        self.config.require_datasets()?;
        self.config.require_embeddings("analyze compares WMD with L1/L1 BOW")?;
        create_dir(&self.config.out)?;
        let cfg = self.config.clone();
        for path in &cfg.datasets {
            let ds = self.load_dataset(path, true, cfg.clean)?;
            let store = ds.store.as_ref().expect("analyze loads embeddings");
            let table = DocumentTable::new(ds.corpus.documents().iter().map(|d| (d.id, d.tokens.clone())))?;
            let measures: HashMap<usize, DocumentMeasure> = ds
                .corpus
                .ids()
                .into_iter()
                .filter_map(|id| table.measure(id, Weighting::UniformCount).ok().map(|m| (id, m)))
                .collect();

            // Nearest training document of every test document of fold 0.
            let fold0 = &ds.corpus.folds[0];
            let wmd = self.fold_matrices(&ds, Method::Wmd)?.swap_remove(0);
            let usable_test: Vec<usize> = fold0.test.iter().copied().filter(|id| measures.contains_key(id)).collect();
            let nn = nearest_neighbor_pairs(&wmd.select(&usable_test, &fold0.train)?, NeighborMode::CrossSplit)?;
            let hist = transport_histogram(&nn, &measures, store, cfg.bin_width)?;
            let hist_path = cfg.out.join(format!("{}.histogram.csv", ds.name));
            write_file(&hist_path, |w| hist.write_csv(w))?;
            self.record(hist_path);

            let ids: Vec<usize> = {
                let mut v: Vec<usize> = measures.keys().copied().collect();
                v.sort_unstable();
                v
            };
            let pairs = sample_pairs(&ids, cfg.pairs, cfg.seed)?;
            let points = wmd_bow_scatter(&table, &pairs, Geometry::Embeddings(store))?;
            let scatter_path = cfg.out.join(format!("{}.scatter.csv", ds.name));
            write_file(&scatter_path, |w| write_scatter_csv(&points, w))?;
            self.record(scatter_path);
            let (bow, wmd_d): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.bow_l1l1, p.wmd)).unzip();
            let r = match pearson(&bow, &wmd_d) {
                Ok(r) => json!(r),
                Err(e) => {
                    warn!("{}: {e}", ds.name);
                    json!(null)
                }
            };
            let side = cfg.out.join(format!("{}.scatter.json", ds.name));
            fs::write(&side, serde_json::to_string_pretty(&json!({ "pearson": r, "pairs": points.len() }))? + "\n")?;
            self.record(side);

            if !cfg.dims.is_empty() {
                let table = dim_comparison(&ds.corpus, store, &cfg.dims, cfg.pairs, cfg.seed)?;
                let dims_path = cfg.out.join(format!("{}.dims.csv", ds.name));
                write_file(&dims_path, |w| {
                    writeln!(w, "dim,pearson,pairs")?;
                    table.iter().try_for_each(|t| writeln!(w, "{},{},{}", t.dim, t.pearson, t.pairs))
                })?;
                self.record(dims_path);
            }
        }
        Ok(())
    }

    pub fn project(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let emb = cfg.require_embeddings("project reads an embedding file")?.to_path_buf();
        if cfg.dims.is_empty() {
            bail!("missing --dims (target dimension of the projection)");
        }
        create_dir(&cfg.out)?;
        self.hashes.of(&emb)?;
        // With datasets, only their words are loaded and used for fitting.
        let keep: Option<HashSet<String>> = if cfg.datasets.is_empty() {
            None
        } else {
            let mut words = HashSet::new();
            for d in &cfg.datasets {
                self.hashes.of(d)?;
                words.extend(load_corpus(d)?.documents().iter().flat_map(|doc| doc.tokens.iter().cloned()));
            }
            Some(words)
        };
        let store = load_embeddings(&emb, cfg.format, keep.as_ref())?;
        let words = store.words().to_vec();
        let stem = emb.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = match cfg.format {
            EmbeddingFormat::Text => "txt",
            EmbeddingFormat::Word2vecBinary => "bin",
        };
        for &d in &cfg.dims {
            let mut projected = project_pca(&store, d, &words)?;
            if cfg.renormalize {
                projected = l2_normalize(&projected)?;
            }
            let path = cfg.out.join(format!("{stem}.pca{d}.{ext}"));
            save_embeddings(&projected, &path, cfg.format)?;
            self.record(path);
        }
        Ok(())
    }
}

fn fold_ids(corpus: &Corpus, f: usize) -> (Vec<usize>, Vec<usize>) {
    let fold = &corpus.folds[f];
    let mut rows: Vec<usize> = fold.train.iter().chain(&fold.test).copied().collect();
    rows.sort_unstable();
    (rows, fold.train.clone())
}

fn csv_row(dataset: &str, method: Method, classifier: Classifier, r: &FoldResult) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    format!(
        "{dataset},{},{},{},{classifier},{},{},{},{},{}",
        method.family(),
        opt(method.norm().map(|n| n.to_string())),
        opt(method.metric().map(|m| m.to_string())),
        r.params.k,
        opt(r.params.gamma.map(|g| g.to_string())),
        r.fold,
        r.evaluation.error_percent,
        r.evaluation.excluded
    )
}

#[derive(Serialize)]
struct DedupReport<'a> {
    dataset: &'a str,
    n_pairs: usize,
    n_samples: usize,
    n_cross_split: usize,
    n_conflicting: usize,
    #[serde(flatten)]
    report: &'a DuplicateReport,
    removals: &'a [Removal],
}
