//! Run configuration: a `key = value` file overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use wmdlab::analysis::DEFAULT_BIN_WIDTH;
use wmdlab::embeddings::EmbeddingFormat;
use wmdlab::knn::{Classifier, TuningGrid};
use wmdlab::textrep::{NormScheme, VectorMetric};
use wmdlab::wmd::Method;

/// Flags shared by every subcommand. Every flag except `--config` can also
/// be set in the config file under the same name (`-` or `_` separators).
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Config file with `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus file; repeat or comma-separate for several datasets.
    #[arg(long, global = true, value_delimiter = ',')]
    pub dataset: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// word2vec-binary or text.
    #[arg(long, global = true)]
    pub format: Option<EmbeddingFormat>,
    /// Comma-separated methods: wmd, wmd-tfidf, bow, tfidf or bow/<norm>/<metric>.
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Normalization for bare `bow`/`tfidf` methods: none, l1 or l2.
    #[arg(long, global = true)]
    pub norm: Option<NormScheme>,
    /// Metric for bare `bow`/`tfidf` methods: l1 or l2.
    #[arg(long, global = true)]
    pub metric: Option<VectorMetric>,
    /// knn or wknn.
    #[arg(long, global = true)]
    pub classifier: Option<Classifier>,
    /// Remove duplicate documents before computing distances.
    #[arg(long, global = true)]
    pub clean: bool,
    /// Keep words without an embedding.
    #[arg(long, global = true)]
    pub keep_oov: bool,
    #[arg(long, global = true)]
    pub stopwords: Option<PathBuf>,
    /// Comma-separated embedding dimensions.
    #[arg(long, global = true)]
    pub dims: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fail instead of computing missing distance caches.
    #[arg(long, global = true)]
    pub no_compute: bool,
    /// Folds generated for corpora without fold files.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Training share of generated folds.
    #[arg(long, global = true)]
    pub train_fraction: Option<f64>,
    /// Base method of the relative score.
    #[arg(long, global = true)]
    pub base: Option<String>,
    /// Document pairs sampled for scatter and dimension comparisons.
    #[arg(long, global = true)]
    pub pairs: Option<usize>,
    #[arg(long, global = true)]
    pub bin_width: Option<f64>,
    /// Rescale projected embeddings to unit length.
    #[arg(long, global = true)]
    pub renormalize: bool,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub datasets: Vec<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub format: EmbeddingFormat,
    pub methods: Vec<Method>,
    pub classifier: Classifier,
    pub grid: TuningGrid,
    pub clean: bool,
    pub keep_oov: bool,
    pub stopwords: Option<PathBuf>,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub cache_dir: PathBuf,
    pub no_compute: bool,
    pub folds: usize,
    pub train_fraction: f64,
    pub base: Method,
    pub pairs: usize,
    pub bin_width: f64,
    pub renormalize: bool,
}

pub const CACHE_ENV: &str = "WMDLAB_CACHE_DIR";

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        let v = v.trim().trim_matches('"');
        map.insert(k.trim().replace('-', "_"), v.to_owned());
    }
    Ok(map)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} {p:?}: {e}")))
        .collect()
}

fn parse_bool(s: &str, key: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("config key {key}: expected true or false, got {s:?}"),
    }
}

/// Expands a method list; bare `bow`/`tfidf` take `norm`/`metric`.
pub fn parse_methods(list: &str, norm: NormScheme, metric: VectorMetric) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m = match item.to_ascii_lowercase().as_str() {
            "bow" => Method::Bow { norm, metric },
            "tfidf" => Method::Tfidf { norm, metric },
            _ => item.parse()?,
        };
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("the method list is empty");
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => parse_file(p)?,
            None => BTreeMap::new(),
        };
        let base_dir = flags
            .config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let get = |k: &str| file.get(k).map(String::as_str);
        let path_of = |k: &str| get(k).map(|v| base_dir.join(v));
        let known = [
            "dataset",
            "embeddings",
            "format",
            "method",
            "norm",
            "metric",
            "classifier",
            "clean",
            "keep_oov",
            "stopwords",
            "dims",
            "seed",
            "workers",
            "out",
            "no_compute",
            "folds",
            "train_fraction",
            "base",
            "pairs",
            "bin_width",
            "renormalize",
            "k_grid",
            "gamma_grid",
            "wknn_k",
        ];
        if let Some(k) = file.keys().find(|k| !known.contains(&k.as_str())) {
            bail!("unknown config key {k:?}");
        }

        let datasets = if !flags.dataset.is_empty() {
            flags.dataset.clone()
        } else {
            get("dataset")
                .map(|v| v.split(',').map(|p| base_dir.join(p.trim())).collect())
                .unwrap_or_default()
        };
        let norm = match flags.norm {
            Some(n) => n,
            None => get("norm").map(str::parse).transpose()?.unwrap_or(NormScheme::L1),
        };
        let metric = match flags.metric {
            Some(m) => m,
            None => get("metric").map(str::parse).transpose()?.unwrap_or(VectorMetric::L1),
        };
        let method_list = flags.method.clone().or_else(|| get("method").map(str::to_owned));
        let methods = parse_methods(method_list.as_deref().unwrap_or("bow"), norm, metric)?;
        let base = match flags.base.clone().or_else(|| get("base").map(str::to_owned)) {
            Some(b) => parse_methods(&b, norm, metric)?[0],
            None => Method::BOW_L1_L1,
        };

        let mut grid = TuningGrid::default();
        if let Some(v) = get("k_grid") {
            grid.k_candidates = parse_list(v, "k")?;
        }
        if let Some(v) = get("gamma_grid") {
            grid.gamma_candidates = parse_list(v, "gamma")?;
        }
        if let Some(v) = get("wknn_k") {
            grid.wknn_k = v.parse().context("wknn_k")?;
        }
        if grid.k_candidates.is_empty() || grid.gamma_candidates.is_empty() {
            bail!("tuning grids must be non-empty");
        }

        let dims = match flags.dims.clone().or_else(|| get("dims").map(str::to_owned)) {
            Some(v) => parse_list(&v, "dimension")?,
            None => Vec::new(),
        };
        let out = flags
            .out
            .clone()
            .or_else(|| path_of("out"))
            .unwrap_or_else(|| PathBuf::from("wmdlab-out"));
        let cache_dir = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| out.join("cache"));
        let flag_or = |flag: bool, key: &str| -> Result<bool> {
            Ok(flag || get(key).map(|v| parse_bool(v, key)).transpose()?.unwrap_or(false))
        };
        let train_fraction = match flags.train_fraction {
            Some(f) => f,
            None => get("train_fraction").map(str::parse).transpose()?.unwrap_or(0.7),
        };
        let bin_width = match flags.bin_width {
            Some(w) => w,
            None => get("bin_width").map(str::parse).transpose()?.unwrap_or(DEFAULT_BIN_WIDTH),
        };

        let config = RunConfig {
            datasets,
            embeddings: flags.embeddings.clone().or_else(|| path_of("embeddings")),
            format: match flags.format {
                Some(f) => f,
                None => get("format")
                    .map(str::parse)
                    .transpose()?
                    .unwrap_or(EmbeddingFormat::Word2vecBinary),
            },
            methods,
            classifier: match flags.classifier {
                Some(c) => c,
                None => get("classifier").map(str::parse).transpose()?.unwrap_or(Classifier::Knn),
            },
            grid,
            clean: flag_or(flags.clean, "clean")?,
            keep_oov: flag_or(flags.keep_oov, "keep_oov")?,
            stopwords: flags.stopwords.clone().or_else(|| path_of("stopwords")),
            dims,
            seed: match flags.seed {
                Some(s) => s,
                None => get("seed").map(str::parse).transpose()?.unwrap_or(0),
            },
            workers: match flags.workers {
                Some(w) => w,
                None => get("workers")
                    .map(str::parse)
                    .transpose()?
                    .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
            },
            out,
            cache_dir,
            no_compute: flag_or(flags.no_compute, "no_compute")?,
            folds: match flags.folds {
                Some(f) => f,
                None => get("folds").map(str::parse).transpose()?.unwrap_or(5),
            },
            train_fraction,
            base,
            pairs: match flags.pairs {
                Some(p) => p,
                None => get("pairs").map(str::parse).transpose()?.unwrap_or(1000),
            },
            bin_width,
            renormalize: flag_or(flags.renormalize, "renormalize")?,
        };
        config.check_files()?;
        Ok(config)
    }

    fn check_files(&self) -> Result<()> {
        for d in &self.datasets {
            if !d.is_file() {
                bail!("--dataset: {} does not exist", d.display());
            }
        }
        if let Some(e) = &self.embeddings {
            if !e.is_file() {
                bail!("--embeddings: {} does not exist", e.display());
            }
        }
        if let Some(s) = &self.stopwords {
            if !s.is_file() {
                bail!("--stopwords: {} does not exist", s.display());
            }
        }
        Ok(())
    }

    pub fn require_datasets(&self) -> Result<()> {
        if self.datasets.is_empty() {
            bail!("missing --dataset");
        }
        Ok(())
    }

    pub fn require_embeddings(&self, why: &str) -> Result<&Path> {
        self.embeddings
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("missing --embeddings ({why})"))
    }
}
