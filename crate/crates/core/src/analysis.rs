//! Diagnostics of the transport geometry: where optimal plans move mass, how
//! closely WMD tracks L1/L1 BOW, and how that changes with embedding
//! dimension.

use std::collections::HashMap;
use std::io::Write;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::{project_pca, EmbeddingStore};
use crate::error::{Error, Result};
use crate::ot::{compensated_sum, solve_transport, uniform_cost, TransportProblem};
use crate::textrep::{vector_distance, NormScheme, VectorMetric};
use crate::wmd::{wmd_plan, DistanceMatrix, DocumentMeasure, DocumentTable, Weighting};

/// Default histogram bin width: 100 bins over [0, 2].
pub const DEFAULT_BIN_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// Rows and columns are different document sets.
    CrossSplit,
    /// Rows and columns are the same set; a document is not its own neighbour.
    LeaveOneOut,
}

/// For each row, the column id at minimum distance (ties to the lower id).
pub fn nearest_neighbor_pairs(dist: &DistanceMatrix, mode: NeighborMode) -> Result<Vec<(usize, usize)>> {
    dist.row_ids()
        .iter()
        .enumerate()
        .map(|(i, &src)| {
            let mut best: Option<(f64, usize)> = None;
            for (&dst, &d) in dist.col_ids().iter().zip(dist.row(i)) {
                if !d.is_finite() || (mode == NeighborMode::LeaveOneOut && dst == src) {
                    continue;
                }
                if best.is_none_or(|(bd, bid)| d < bd || (d == bd && dst < bid)) {
                    best = Some((d, dst));
                }
            }
            best.map(|(_, dst)| (src, dst)).ok_or(Error::NoFiniteNeighbor(src))
        })
        .collect()
}

/// Transported mass binned by the ground distance it travels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportHistogram {
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub total_mass: f64,
}

impl TransportHistogram {
    pub fn n_bins(&self) -> usize {
        self.masses.len()
    }

    /// Index of the bin containing `c`; bins are `[lo, hi)` except the last,
    /// which also contains its upper edge and anything beyond it.
    pub fn bin_of(&self, c: f64) -> usize {
        let width = self.bin_edges[1] - self.bin_edges[0];
        ((c / width).floor().max(0.0) as usize).min(self.n_bins() - 1)
    }

    /// CSV with header `bin_lo,bin_hi,mass`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,mass")?;
        for (k, m) in self.masses.iter().enumerate() {
            writeln!(w, "{},{},{}", self.bin_edges[k], self.bin_edges[k + 1], m)?;
        }
        Ok(())
    }
}

/// Solves the transport problem of every pair and deposits each plan entry's
/// mass at its cost. Bins of width `bin_width` cover `[0, max C]` over all
/// deposited entries.
pub fn transport_histogram(
    pairs: &[(usize, usize)],
    measures: &HashMap<usize, DocumentMeasure>,
    store: &EmbeddingStore,
    bin_width: f64,
) -> Result<TransportHistogram> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no document pairs".into()));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidInput(format!("bin width must be positive, got {bin_width}")));
    }
    let measure = |id: usize| {
        measures
            .get(&id)
            .ok_or_else(|| Error::InvalidInput(format!("no measure for document {id}")))
    };
    let deposits: Vec<Vec<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (plan, cost) = wmd_plan(measure(a)?, measure(b)?, store)?;
            Ok(plan.entries.iter().map(|e| (cost.get(e.row, e.col), e.mass)).collect())
        })
        .collect::<Result<_>>()?;

    let max_c = deposits.iter().flatten().map(|&(c, _)| c).fold(0.0, f64::max);
    let n_bins = ((max_c / bin_width).ceil() as usize).max(1);
    let mut hist = TransportHistogram {
        bin_edges: (0..=n_bins).map(|k| k as f64 * bin_width).collect(),
        masses: vec![0.0; n_bins],
        total_mass: 0.0,
    };
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for &(c, m) in deposits.iter().flatten() {
        per_bin[hist.bin_of(c)].push(m);
    }
    hist.masses = per_bin.into_iter().map(compensated_sum).collect();
    hist.total_mass = compensated_sum(deposits.iter().flatten().map(|&(_, m)| m));
    Ok(hist)
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(format!("{} sample(s); need at least 2", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ground metric used for the WMD side of a comparison.
#[derive(Debug, Clone, Copy)]
pub enum Geometry<'a> {
    Embeddings(&'a EmbeddingStore),
    /// 0 between equal words, 2 between distinct ones.
    Uniform,
}

/// `count` document pairs drawn uniformly with replacement among pairs of
/// distinct ids.
pub fn sample_pairs(ids: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if ids.len() < 2 {
        return Err(Error::TooSmall(format!("{} document(s); need 2 to form a pair", ids.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| loop {
            let a = rng.gen_range(0..ids.len());
            let b = rng.gen_range(0..ids.len());
            if a != b {
                break (ids[a], ids[b]);
            }
        })
        .collect())
}

/// One point of the WMD versus L1/L1 BOW scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub source: usize,
    pub target: usize,
    pub bow_l1l1: f64,
    pub wmd: f64,
}

/// L1/L1 BOW distance and WMD of every pair.
pub fn wmd_bow_scatter(table: &DocumentTable, pairs: &[(usize, usize)], geometry: Geometry<'_>) -> Result<Vec<ScatterPoint>> {
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let va = table.vector(a, false, NormScheme::L1)?;
            let vb = table.vector(b, false, NormScheme::L1)?;
            let bow = vector_distance(&va, &vb, VectorMetric::L1)?;
            let wmd = match geometry {
                Geometry::Embeddings(store) => {
                    let ma = table.measure(a, Weighting::UniformCount)?;
                    let mb = table.measure(b, Weighting::UniformCount)?;
                    crate::wmd::wmd_distance(&ma, &mb, store)?
                }
                Geometry::Uniform => {
                    let p = TransportProblem::new(
                        va.values().to_vec(),
                        vb.values().to_vec(),
                        uniform_cost(va.ids(), vb.ids()),
                    )?;
                    solve_transport(&p)?.objective
                }
            };
            Ok(ScatterPoint {
                source: a,
                target: b,
                bow_l1l1: bow,
                wmd,
            })
        })
        .collect()
}

pub fn write_scatter_csv<W: Write>(points: &[ScatterPoint], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "source,target,bow_l1l1,wmd")?;
    for p in points {
        writeln!(w, "{},{},{},{}", p.source, p.target, p.bow_l1l1, p.wmd)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimCorrelation {
    pub dim: usize,
    pub pearson: f64,
    pub pairs: usize,
}

/// Pearson correlation of WMD and L1/L1 BOW on the same seeded random pairs,
/// after projecting the embeddings to each requested dimension.
///
/// Projection uses PCA fitted on the corpus words. At `store.dim()` the
/// embeddings are used unprojected.
pub fn dim_comparison(
    corpus: &Corpus,
    store: &EmbeddingStore,
    dims: &[usize],
    sample_count: usize,
    seed: u64,
) -> Result<Vec<DimCorrelation>> {
    if let Some(&d) = dims.iter().find(|&&d| d == 0 || d > store.dim()) {
        return Err(Error::InvalidInput(format!("dimension {d} is outside 1..={}", store.dim())));
    }
    let table = DocumentTable::new(corpus.documents().iter().map(|d| (d.id, d.tokens.clone())))?;
    let usable: Vec<usize> = corpus
        .documents()
        .iter()
        .filter(|d| !d.tokens.is_empty())
        .map(|d| d.id)
        .collect();
    if usable.len() < corpus.len() {
        warn!("{} empty document(s) left out of pair sampling", corpus.len() - usable.len());
    }
    let pairs = sample_pairs(&usable, sample_count, seed)?;
    let fit_vocab: Vec<&String> = table.stats().vocab.words().iter().collect();
    dims.iter()
        .map(|&d| {
            let projected;
            let s = if d == store.dim() {
                store
            } else {
                projected = project_pca(store, d, &fit_vocab)?;
                &projected
            };
            let points = wmd_bow_scatter(&table, &pairs, Geometry::Embeddings(s))?;
            let (bow, wmd): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.bow_l1l1, p.wmd)).unzip();
            Ok(DimCorrelation {
                dim: d,
                pearson: pearson(&bow, &wmd)?,
                pairs: pairs.len(),
            })
        })
        .collect()
}
