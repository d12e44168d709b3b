//! Synthetic item embeddings with planted dimensional structure, and the Monte Carlo
//! harness that runs the landscape search and the cross-sectional baseline over a grid
//! of item counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::EmbeddingMatrix;
use crate::landscape::{self, LandscapeError, LandscapeTrace, SweepConfig};
use crate::pipeline::{self, DepthResult};
use crate::walktrap::Partition;

/// Coordinate interval `[start, end)` carrying block structure with its own loading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub end: usize,
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_dimensions: usize,
    pub items_per_dimension: usize,
    pub total_depth: usize,
    /// Primary signal band `[start, end)`.
    pub signal_band: (usize, usize),
    pub within_load: f64,
    pub noise_sd: f64,
    /// Extra bands, usually deeper and weaker than the primary one.
    pub secondary_bands: Vec<Band>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Five dimensions, 1536 coordinates, strong signal in the first 60 and a weak
    /// echo around coordinate 700.
    pub fn shallow_signal(items_per_dimension: usize, seed: u64) -> Self {
        Self {
            n_dimensions: 5,
            items_per_dimension,
            total_depth: 1536,
            signal_band: (0, 60),
            within_load: 0.6,
            noise_sd: 1.0,
            secondary_bands: vec![Band {
                start: 700,
                end: 740,
                load: 0.3,
            }],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_dimensions < 2 {
            return Err("need at least 2 dimensions".into());
        }
        if self.items_per_dimension < 1 {
            return Err("need at least 1 item per dimension".into());
        }
        if self.total_depth < 3 {
            return Err("total_depth must be at least 3".into());
        }
        let (s, e) = self.signal_band;
        if s > e || e > self.total_depth {
            return Err(format!("signal band [{s}, {e}) outside [0, {})", self.total_depth));
        }
        if !(0.0..1.0).contains(&self.within_load) {
            return Err("within_load must lie in [0, 1)".into());
        }
        if !(self.noise_sd > 0.0) {
            return Err("noise_sd must be positive".into());
        }
        for b in &self.secondary_bands {
            if b.start > b.end || b.end > self.total_depth || !(0.0..1.0).contains(&b.load) {
                return Err(format!("invalid secondary band {b:?}"));
            }
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_dimensions * self.items_per_dimension
    }
}

/// Item `g * k + j` belongs to dimension `g`.
///
/// Inside a band a coordinate is `load * centroid[g] + (1 - load) * e` with standard
/// normal centroid and idiosyncratic term. Elsewhere it is `N(0, noise_sd^2)`.
pub fn generate_synthetic_pool(spec: &SyntheticSpec) -> (EmbeddingMatrix, Partition) {
    spec.validate().expect("invalid synthetic spec");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.n_items();
    let d = spec.total_depth;
    let mut load = vec![None; d];
    for c in spec.signal_band.0..spec.signal_band.1 {
        load[c] = Some(spec.within_load);
    }
    for b in &spec.secondary_bands {
        for c in b.start..b.end {
            load[c] = Some(b.load);
        }
    }
    let noise = Normal::new(0.0, spec.noise_sd).expect("positive sd");
    let mut coords = DMatrix::zeros(p, d);
    for c in 0..d {
        match load[c] {
            Some(w) => {
                let centroids: Vec<f64> = (0..spec.n_dimensions)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                for i in 0..p {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    coords[(i, c)] = w * centroids[i / spec.items_per_dimension] + (1.0 - w) * e;
                }
            }
            None => {
                for i in 0..p {
                    coords[(i, c)] = noise.sample(&mut rng);
                }
            }
        }
    }
    let ids = (0..p)
        .map(|i| {
            format!(
                "d{}_i{:02}",
                i / spec.items_per_dimension,
                i % spec.items_per_dimension
            )
        })
        .collect();
    let labels = (0..p).map(|i| i / spec.items_per_dimension).collect();
    (
        EmbeddingMatrix::new(ids, coords).expect("finite by construction"),
        Partition::from_labels(labels),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub k_grid: Vec<usize>,
    pub iterations: usize,
    pub sweep: SweepConfig,
    pub base_seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            k_grid: (3..=40).collect(),
            iterations: 500,
            sweep: SweepConfig::default(),
            base_seed: 0,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 1 {
            return Err("iterations must be at least 1".into());
        }
        if self.k_grid.is_empty() {
            return Err("k grid is empty".into());
        }
        Ok(())
    }
}

/// Seed for one `(k, iteration)` cell, independent of execution order.
pub fn cell_seed(base_seed: u64, k: usize, iteration: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update((k as u64).to_le_bytes());
    h.update((iteration as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub k: usize,
    pub iteration: usize,
    pub seed: u64,
    pub trace: Option<LandscapeTrace>,
    pub baseline: DepthResult,
    /// Set when the sweep produced no usable trace.
    pub failure: Option<String>,
}

impl CellRecord {
    pub fn file_name(k: usize, iteration: usize) -> String {
        format!("k{k:03}_i{iteration:05}.csv")
    }

    /// Cell CSV: trace rows tagged `trace`, then the baseline row tagged `baseline`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,depth,status,n_communities,nmi,tefi,composite\n");
        if let Some(t) = &self.trace {
            for (p, c) in t.points.iter().zip(&t.composite) {
                out.push_str("trace,");
                landscape::write_trace_row(&mut out, p, *c);
            }
        }
        out.push_str("baseline,");
        landscape::write_trace_row(&mut out, &self.baseline, None);
        if let Some(f) = &self.failure {
            out.push_str(&format!("# failure: {}\n", f.replace('\n', " ")));
        }
        out
    }

    pub fn from_csv(
        text: &str,
        k: usize,
        iteration: usize,
        seed: u64,
        sweep: &SweepConfig,
    ) -> Result<Self, LandscapeError> {
        let mut trace_rows = Vec::new();
        let mut baseline_rows = Vec::new();
        let mut failure = None;
        for (i, line) in text.lines().enumerate().skip(1) {
            if let Some(f) = line.strip_prefix("# failure: ") {
                failure = Some(f.to_string());
            } else if let Some(rest) = line.strip_prefix("trace,") {
                trace_rows.push((i + 1, rest));
            } else if let Some(rest) = line.strip_prefix("baseline,") {
                baseline_rows.push((i + 1, rest));
            } else if !line.trim().is_empty() {
                return Err(LandscapeError::Parse {
                    line: i + 1,
                    message: "unknown record type".into(),
                });
            }
        }
        let points = landscape::parse_trace_rows(trace_rows.into_iter())?;
        let baseline = landscape::parse_trace_rows(baseline_rows.into_iter())?
            .pop()
            .ok_or(LandscapeError::Parse {
                line: 0,
                message: "missing baseline row".into(),
            })?;
        let trace = if points.is_empty() {
            None
        } else {
            Some(LandscapeTrace::from_points(
                points,
                sweep.weights,
                sweep.normalize_nmi,
            )?)
        };
        Ok(Self {
            k,
            iteration,
            seed,
            trace,
            baseline,
            failure,
        })
    }
}

/// Per-k summary of the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAggregate {
    pub k: usize,
    pub cells: usize,
    pub failed_cells: usize,
    pub mean_depth_nmi_opt: Option<f64>,
    pub mean_depth_tefi_opt: Option<f64>,
    pub mean_depth_composite_opt: Option<f64>,
    pub mean_baseline_nmi: Option<f64>,
    pub mean_optimized_nmi: Option<f64>,
    pub mean_optimized_tefi: Option<f64>,
    pub mean_baseline_tefi: Option<f64>,
    /// Share of cells where the NMI optimum is shallower than the TEFI optimum.
    pub share_nmi_shallower: Option<f64>,
}

impl KAggregate {
    pub fn delta_nmi(&self) -> Option<f64> {
        Some(self.mean_optimized_nmi? - self.mean_baseline_nmi?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResults {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<KAggregate>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-k aggregates; a pure function of the cell records.
pub fn aggregate(cells: &[CellRecord]) -> Vec<KAggregate> {
    let mut by_k: BTreeMap<usize, Vec<&CellRecord>> = BTreeMap::new();
    for c in cells {
        by_k.entry(c.k).or_default().push(c);
    }
    by_k.into_iter()
        .map(|(k, mut cs)| {
            cs.sort_by_key(|c| c.iteration);
            let traces: Vec<&LandscapeTrace> = cs.iter().filter_map(|c| c.trace.as_ref()).collect();
            let with_nmi: Vec<&LandscapeTrace> = traces
                .iter()
                .copied()
                .filter(|t| t.argmax_nmi.is_some())
                .collect();
            KAggregate {
                k,
                cells: cs.len(),
                failed_cells: cs.len() - traces.len(),
                mean_depth_nmi_opt: mean(
                    with_nmi.iter().map(|t| t.argmax_nmi.unwrap().depth as f64),
                ),
                mean_depth_tefi_opt: mean(traces.iter().map(|t| t.argmin_tefi.depth as f64)),
                mean_depth_composite_opt: mean(
                    traces.iter().map(|t| t.composite_opt.depth as f64),
                ),
                mean_baseline_nmi: mean(cs.iter().filter_map(|c| c.baseline.nmi)),
                mean_optimized_nmi: mean(traces.iter().filter_map(|t| t.composite_opt.nmi)),
                mean_optimized_tefi: mean(traces.iter().map(|t| t.composite_opt.tefi)),
                mean_baseline_tefi: mean(cs.iter().filter_map(|c| c.baseline.tefi)),
                share_nmi_shallower: mean(with_nmi.iter().map(|t| {
                    if t.argmax_nmi.unwrap().depth < t.argmin_tefi.depth {
                        1.0
                    } else {
                        0.0
                    }
                })),
            }
        })
        .collect()
}

/// Runs one cell: generate, sweep, and the cross-sectional baseline.
pub fn run_cell(
    cfg: &MonteCarloConfig,
    template: &SyntheticSpec,
    k: usize,
    iteration: usize,
) -> CellRecord {
    let seed = cell_seed(cfg.base_seed, k, iteration);
    let spec = SyntheticSpec {
        items_per_dimension: k,
        seed,
        ..template.clone()
    };
    let (embeddings, truth) = generate_synthetic_pool(&spec);
    let (trace, failure) = match landscape::sweep(&embeddings, Some(&truth), &cfg.sweep) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let baseline = pipeline::ega_cross_sectional(&embeddings, Some(&truth), &cfg.sweep.estimator)
        .unwrap_or_else(|e| DepthResult::skipped(embeddings.depth(), e.into()));
    CellRecord {
        k,
        iteration,
        seed,
        trace,
        baseline,
        failure,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MonteCarloError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Cell {
        path: PathBuf,
        #[source]
        source: LandscapeError,
    },
}

pub const CELLS_DIR: &str = "cells";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Runs the Monte Carlo grid. With `out_dir`, each cell is persisted as it finishes and
/// cells whose file already exists are loaded instead of recomputed.
pub fn monte_carlo(
    cfg: &MonteCarloConfig,
    template: &SyntheticSpec,
    out_dir: Option<&Path>,
) -> Result<McResults, MonteCarloError> {
    cfg.validate().map_err(MonteCarloError::Config)?;
    template.validate().map_err(MonteCarloError::Config)?;
    let cells_dir = out_dir.map(|d| d.join(CELLS_DIR));
    if let Some(dir) = &cells_dir {
        fs::create_dir_all(dir).map_err(|source| MonteCarloError::Io {
            path: dir.clone(),
            source,
        })?;
    }
    let jobs: Vec<(usize, usize)> = cfg
        .k_grid
        .iter()
        .flat_map(|&k| (0..cfg.iterations).map(move |it| (k, it)))
        .collect();
    let cells: Vec<CellRecord> = jobs
        .par_iter()
        .map(|&(k, it)| -> Result<CellRecord, MonteCarloError> {
            let Some(dir) = &cells_dir else {
                return Ok(run_cell(cfg, template, k, it));
            };
            let path = dir.join(CellRecord::file_name(k, it));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|source| MonteCarloError::Io {
                    path: path.clone(),
                    source,
                })?;
                let seed = cell_seed(cfg.base_seed, k, it);
                return CellRecord::from_csv(&text, k, it, seed, &cfg.sweep)
                    .map_err(|source| MonteCarloError::Cell { path, source });
            }
            let cell = run_cell(cfg, template, k, it);
            let tmp = path.with_extension("csv.tmp");
            fs::write(&tmp, cell.to_csv())
                .and_then(|_| fs::rename(&tmp, &path))
                .map_err(|source| MonteCarloError::Io {
                    path: path.clone(),
                    source,
                })?;
            Ok(cell)
        })
        .collect::<Result<_, _>>()?;
    let aggregates = aggregate(&cells);
    if let Some(dir) = out_dir {
        let path = dir.join(AGGREGATE_FILE);
        let json = serde_json::to_string_pretty(&aggregates).expect("serializable");
        fs::write(&path, json + "\n").map_err(|source| MonteCarloError::Io { path, source })?;
    }
    Ok(McResults { cells, aggregates })
}

/// Loads every cell file of a results directory.
pub fn load_results(dir: &Path, sweep: &SweepConfig) -> Result<McResults, MonteCarloError> {
    let cells_dir = dir.join(CELLS_DIR);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MonteCarloError::Io { path, source }
    };
    let mut names: Vec<String> = fs::read_dir(&cells_dir)
        .map_err(io(&cells_dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut cells = Vec::with_capacity(names.len());
    for name in names {
        let Some((k, it)) = parse_cell_name(&name) else {
            continue;
        };
        let path = cells_dir.join(&name);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let cell = CellRecord::from_csv(&text, k, it, 0, sweep)
            .map_err(|source| MonteCarloError::Cell { path, source })?;
        cells.push(cell);
    }
    let aggregates = aggregate(&cells);
    Ok(McResults { cells, aggregates })
}

fn parse_cell_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.strip_suffix(".csv")?;
    let (k, it) = stem.strip_prefix('k')?.split_once("_i")?;
    Some((k.parse().ok()?, it.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfilter::correlation_matrix;

    fn spec(within_load: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_dimensions: 5,
            items_per_dimension: 10,
            total_depth: 1000,
            signal_band: (0, 1000),
            within_load,
            noise_sd: 1.0,
            secondary_bands: vec![],
            seed,
        }
    }

    fn within_between(r: &DMatrix<f64>, truth: &Partition) -> (f64, f64) {
        let (mut w, mut nw, mut b, mut nb) = (0.0, 0, 0.0, 0);
        for i in 0..r.nrows() {
            for j in 0..i {
                if truth.labels()[i] == truth.labels()[j] {
                    w += r[(i, j)];
                    nw += 1;
                } else {
                    b += r[(i, j)];
                    nb += 1;
                }
            }
        }
        (w / nw as f64, b / nb as f64)
    }

    #[test]
    fn same_seed_same_matrix() {
        let s = SyntheticSpec::shallow_signal(4, 77);
        assert_eq!(generate_synthetic_pool(&s), generate_synthetic_pool(&s));
        let other = SyntheticSpec { seed: 78, ..s.clone() };
        assert_ne!(generate_synthetic_pool(&s).0, generate_synthetic_pool(&other).0);
    }

    #[test]
    fn zero_load_has_no_block_structure() {
        let (m, truth) = generate_synthetic_pool(&spec(0.0, 3));
        let r = correlation_matrix(&m.coords().transpose()).unwrap();
        let (w, b) = within_between(r.matrix(), &truth);
        assert!((w - b).abs() < 0.05, "{w} vs {b}");
    }

    #[test]
    fn block_margin_grows_with_load() {
        let mut prev = f64::NEG_INFINITY;
        for load in [0.0, 0.2, 0.4, 0.6, 0.8] {
            let (m, truth) = generate_synthetic_pool(&spec(load, 11));
            let r = correlation_matrix(&m.coords().transpose()).unwrap();
            let (w, b) = within_between(r.matrix(), &truth);
            assert!(w - b > prev, "load {load}");
            prev = w - b;
        }
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        assert_eq!(cell_seed(42, 4, 0), cell_seed(42, 4, 0));
        assert_ne!(cell_seed(42, 4, 0), cell_seed(42, 4, 1));
        assert_ne!(cell_seed(42, 4, 0), cell_seed(42, 5, 0));
        assert_ne!(cell_seed(42, 4, 0), cell_seed(43, 4, 0));
    }

    #[test]
    fn cell_name_parsing() {
        assert_eq!(parse_cell_name(&CellRecord::file_name(4, 12)), Some((4, 12)));
        assert_eq!(parse_cell_name("aggregate.json"), None);
    }

    fn smoke_cfg() -> MonteCarloConfig {
        MonteCarloConfig {
            k_grid: vec![4],
            iterations: 2,
            sweep: SweepConfig {
                depth_min: 13,
                depth_max: Some(113),
                depth_step: 20,
                ..Default::default()
            },
            base_seed: 9,
        }
    }

    #[test]
    fn smoke_grid() {
        let res = monte_carlo(&smoke_cfg(), &SyntheticSpec::shallow_signal(4, 0), None).unwrap();
        assert_eq!(res.cells.len(), 2);
        for c in &res.cells {
            assert_eq!(c.trace.as_ref().unwrap().points.len(), 6);
            assert!(c.baseline.is_ok());
        }
        assert_eq!(res.aggregates.len(), 1);
        assert_eq!(res.aggregates[0].cells, 2);
    }

    #[test]
    fn persisted_cells_reload_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_cfg();
        let tpl = SyntheticSpec::shallow_signal(4, 0);
        let first = monte_carlo(&cfg, &tpl, Some(dir.path())).unwrap();
        let agg1 = fs::read(dir.path().join(AGGREGATE_FILE)).unwrap();
        // drop one cell and resume
        fs::remove_file(dir.path().join(CELLS_DIR).join(CellRecord::file_name(4, 1))).unwrap();
        let second = monte_carlo(&cfg, &tpl, Some(dir.path())).unwrap();
        assert_eq!(first.aggregates, second.aggregates);
        assert_eq!(agg1, fs::read(dir.path().join(AGGREGATE_FILE)).unwrap());
        let loaded = load_results(dir.path(), &cfg.sweep).unwrap();
        assert_eq!(loaded.aggregates, first.aggregates);
    }
}
