//! Depth sweep, weighted NMI/TEFI composite selection, and GLLA vector fields over
//! the resulting trajectories.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::glla::{self, GllaConfig, GllaError};
use crate::ingest::EmbeddingMatrix;
use crate::pipeline::{self, DepthResult, DepthStatus, EstimatorOptions, SkipReason};
use crate::walktrap::Partition;

/// Deepest depth the default grid visits.
pub const DEFAULT_DEPTH_CAP: usize = 1298;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LandscapeError {
    #[error("depth grid is empty")]
    EmptyGrid,
    #[error("every depth in the grid was skipped")]
    AllDepthsSkipped,
    #[error("no valid points to optimize over")]
    NoValidPoints,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("trace for k={k} has {points} usable points, need {needed}")]
    TraceTooShort { k: usize, points: usize, needed: usize },
    #[error("trace for k={0} has no NMI values")]
    MissingNmi(usize),
    #[error(transparent)]
    Glla(#[from] GllaError),
    #[error("malformed trace CSV at line {line}: {message}")]
    Parse { line: usize, message: String },
}

type Result<T> = std::result::Result<T, LandscapeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeWeights {
    pub w_nmi: f64,
    pub w_tefi: f64,
}

impl Default for CompositeWeights {
    fn default() -> Self {
        Self {
            w_nmi: 0.7,
            w_tefi: 0.3,
        }
    }
}

impl CompositeWeights {
    pub fn new(w_nmi: f64, w_tefi: f64) -> Result<Self> {
        let ok_range = |w: f64| (0.0..=1.0).contains(&w);
        if !ok_range(w_nmi) || !ok_range(w_tefi) {
            return Err(LandscapeError::InvalidWeights(
                "each weight must lie in [0, 1]".into(),
            ));
        }
        if (w_nmi + w_tefi - 1.0).abs() > 1e-12 {
            return Err(LandscapeError::InvalidWeights(format!(
                "weights must sum to 1, got {}",
                w_nmi + w_tefi
            )));
        }
        Ok(Self { w_nmi, w_tefi })
    }

    /// Parses `"0.7,0.3"`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [a, b] = parts.as_slice() else {
            return Err(LandscapeError::InvalidWeights(format!(
                "expected two comma-separated numbers, got {s:?}"
            )));
        };
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| LandscapeError::InvalidWeights(format!("not a number: {v:?}")))
        };
        Self::new(num(a)?, num(b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub depth_min: usize,
    /// `None` means `min(D, 1298)`.
    pub depth_max: Option<usize>,
    pub depth_step: usize,
    pub glla: GllaConfig,
    pub weights: CompositeWeights,
    pub estimator: EstimatorOptions,
    /// Min-max normalize NMI before weighting (TEFI is always normalized).
    pub normalize_nmi: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depth_min: 3,
            depth_max: None,
            depth_step: 5,
            glla: GllaConfig::default(),
            weights: CompositeWeights::default(),
            estimator: EstimatorOptions::default(),
            normalize_nmi: true,
        }
    }
}

impl SweepConfig {
    /// Depths visited for an embedding of width `available`.
    pub fn grid(&self, available: usize) -> Result<Vec<usize>> {
        if self.depth_min < 3 {
            return Err(LandscapeError::InvalidConfig("depth_min must be at least 3".into()));
        }
        if self.depth_step < 1 {
            return Err(LandscapeError::InvalidConfig("depth_step must be at least 1".into()));
        }
        let max = match self.depth_max {
            Some(m) if m > available => {
                return Err(LandscapeError::InvalidConfig(format!(
                    "depth_max {m} exceeds embedding width {available}"
                )))
            }
            Some(m) => m,
            None => available.min(DEFAULT_DEPTH_CAP),
        };
        let grid: Vec<usize> = (self.depth_min..=max).step_by(self.depth_step).collect();
        if grid.is_empty() {
            return Err(LandscapeError::EmptyGrid);
        }
        Ok(grid)
    }
}

/// One selected depth with its metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub depth: usize,
    pub nmi: Option<f64>,
    pub tefi: f64,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeTrace {
    pub points: Vec<DepthResult>,
    /// Composite score per point (`None` for skipped points).
    pub composite: Vec<Option<f64>>,
    pub weights: CompositeWeights,
    pub normalize_nmi: bool,
    pub argmax_nmi: Option<Optimum>,
    pub argmin_tefi: Optimum,
    pub composite_opt: Optimum,
}

impl LandscapeTrace {
    /// Assembles a trace from evaluated points, sorted by depth.
    pub fn from_points(
        mut points: Vec<DepthResult>,
        weights: CompositeWeights,
        normalize_nmi: bool,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(LandscapeError::EmptyGrid);
        }
        points.sort_by_key(|p| p.depth);
        if !points.iter().any(DepthResult::is_ok) {
            return Err(LandscapeError::AllDepthsSkipped);
        }
        let composite = composite_scores(&points, weights, normalize_nmi)?;
        let optimum = |i: usize| Optimum {
            depth: points[i].depth,
            nmi: points[i].nmi,
            tefi: points[i].tefi.expect("ok point"),
            composite: composite[i].expect("ok point"),
        };
        let ok: Vec<usize> = (0..points.len()).filter(|&i| points[i].is_ok()).collect();
        // first index wins ties, i.e. the smallest depth
        let pick = |better: &dyn Fn(usize, usize) -> bool| {
            ok.iter()
                .copied()
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if !better(i, b) => Some(b),
                    _ => Some(i),
                })
                .expect("non-empty")
        };
        let has_nmi = ok.iter().all(|&i| points[i].nmi.is_some());
        let argmax_nmi = has_nmi.then(|| optimum(pick(&|i, b| points[i].nmi > points[b].nmi)));
        let argmin_tefi = optimum(pick(&|i, b| points[i].tefi < points[b].tefi));
        let composite_opt = optimum(pick(&|i, b| composite[i] > composite[b]));
        Ok(Self {
            points,
            composite,
            weights,
            normalize_nmi,
            argmax_nmi,
            argmin_tefi,
            composite_opt,
        })
    }

    pub fn ok_points(&self) -> impl Iterator<Item = &DepthResult> {
        self.points.iter().filter(|p| p.is_ok())
    }

    /// CSV `depth,status,n_communities,nmi,tefi,composite`; empty cells for missing values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,status,n_communities,nmi,tefi,composite\n");
        for (p, c) in self.points.iter().zip(&self.composite) {
            write_trace_row(&mut out, p, *c);
        }
        out
    }

    /// Reads a trace written by [`LandscapeTrace::to_csv`]. Partitions are not stored
    /// and come back as `None`.
    pub fn from_csv(text: &str, weights: CompositeWeights, normalize_nmi: bool) -> Result<Self> {
        let points = parse_trace_rows(text.lines().skip(1).enumerate().map(|(i, l)| (i + 2, l)))?;
        Self::from_points(points, weights, normalize_nmi)
    }

    pub fn optima_json(&self) -> serde_json::Value {
        serde_json::json!({
            "weights": { "w_nmi": self.weights.w_nmi, "w_tefi": self.weights.w_tefi },
            "normalize_nmi": self.normalize_nmi,
            "grid_points": self.points.len(),
            "ok_points": self.ok_points().count(),
            "nmi_only": self.argmax_nmi,
            "tefi_only": self.argmin_tefi,
            "composite": self.composite_opt,
        })
    }
}

fn fmt_opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

pub(crate) fn write_trace_row(out: &mut String, p: &DepthResult, composite: Option<f64>) {
    let _ = writeln!(
        out,
        "{},{},{},{},{},{}",
        p.depth,
        p.status_label(),
        fmt_opt(p.n_communities),
        fmt_opt(p.nmi),
        fmt_opt(p.tefi),
        fmt_opt(composite),
    );
}

/// Parses `depth,status,n_communities,nmi,tefi[,...]` rows.
pub(crate) fn parse_trace_rows<'a>(
    rows: impl Iterator<Item = (usize, &'a str)>,
) -> Result<Vec<DepthResult>> {
    let mut points = Vec::new();
    for (line, row) in rows {
        if row.trim().is_empty() {
            continue;
        }
        let err = |message: &str| LandscapeError::Parse {
            line,
            message: message.to_string(),
        };
        let f: Vec<&str> = row.split(',').collect();
        if f.len() < 5 {
            return Err(err("expected at least 5 fields"));
        }
        let depth = f[0].parse().map_err(|_| err("bad depth"))?;
        let opt_f64 = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err("bad number"))
            }
        };
        let status = if f[1] == "ok" {
            DepthStatus::Ok
        } else if let Some(reason) = f[1].strip_prefix("skipped:") {
            DepthStatus::Skipped {
                reason: SkipReason::parse(reason),
            }
        } else {
            return Err(err("bad status"));
        };
        let n_communities = if f[2].is_empty() {
            None
        } else {
            Some(f[2].parse().map_err(|_| err("bad n_communities"))?)
        };
        let point = DepthResult {
            depth,
            status,
            partition: None,
            n_communities,
            nmi: opt_f64(f[3])?,
            tefi: opt_f64(f[4])?,
        };
        if point.is_ok() && point.tefi.is_none() {
            return Err(err("ok row without tefi"));
        }
        points.push(point);
    }
    Ok(points)
}

fn min_max(values: &[f64]) -> impl Fn(f64) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    move |v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
}

/// `w_nmi * NMI_norm - w_tefi * TEFI_norm` for every ok point, min-max normalized over
/// the ok points of this trace. A metric that is constant (or absent) contributes 0.
pub fn composite_scores(
    points: &[DepthResult],
    w: CompositeWeights,
    normalize_nmi: bool,
) -> Result<Vec<Option<f64>>> {
    let ok: Vec<&DepthResult> = points.iter().filter(|p| p.is_ok()).collect();
    if ok.is_empty() {
        return Err(LandscapeError::NoValidPoints);
    }
    let tefis: Vec<f64> = ok.iter().map(|p| p.tefi.expect("ok point")).collect();
    let norm_tefi = min_max(&tefis);
    let nmis: Option<Vec<f64>> = ok.iter().map(|p| p.nmi).collect();
    let norm_nmi = nmis.as_deref().map(min_max);
    Ok(points
        .iter()
        .map(|p| {
            if !p.is_ok() {
                return None;
            }
            let nmi_term = match (&norm_nmi, p.nmi) {
                (Some(f), Some(v)) if normalize_nmi => f(v),
                (Some(_), Some(v)) => v,
                _ => 0.0,
            };
            Some(w.w_nmi * nmi_term - w.w_tefi * norm_tefi(p.tefi.expect("ok point")))
        })
        .collect())
}

/// Depth with the highest composite score; ties go to the smallest depth.
pub fn composite_optimize(trace: &LandscapeTrace, w: CompositeWeights) -> Result<(usize, f64)> {
    let scores = composite_scores(&trace.points, w, trace.normalize_nmi)?;
    let mut best: Option<(usize, f64)> = None;
    let mut order: Vec<usize> = (0..trace.points.len()).collect();
    order.sort_by_key(|&i| trace.points[i].depth);
    for i in order {
        if let Some(c) = scores[i] {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((trace.points[i].depth, c));
            }
        }
    }
    best.ok_or(LandscapeError::NoValidPoints)
}

/// DynEGA at every grid depth. Depths run in parallel; the trace is assembled in grid order.
pub fn sweep(
    embeddings: &EmbeddingMatrix,
    truth: Option<&Partition>,
    cfg: &SweepConfig,
) -> Result<LandscapeTrace> {
    cfg.glla.validate()?;
    let grid = cfg.grid(embeddings.depth())?;
    let points: Vec<DepthResult> = grid
        .par_iter()
        .map(|&d| pipeline::dynega_at_depth(embeddings, d, &cfg.glla, truth, &cfg.estimator))
        .collect();
    LandscapeTrace::from_points(points, cfg.weights, cfg.normalize_nmi)
}

/// One GLLA arrow in (TEFI, NMI) space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub k: usize,
    pub tefi: f64,
    pub nmi: f64,
    pub d_tefi: f64,
    pub d_nmi: f64,
    /// Mean depth of the window the arrow summarizes.
    pub depth_position: f64,
}

/// Number of arrows a trace with `ok_points` usable points yields.
pub fn window_count(ok_points: usize, glla: &GllaConfig) -> usize {
    ok_points.saturating_sub((glla.n - 1) * glla.tau)
}

/// First-derivative arrows along each trace's (TEFI, NMI) trajectory ordered by depth.
pub fn vector_field(traces: &[(usize, &LandscapeTrace)], glla: &GllaConfig) -> Result<Vec<Arrow>> {
    let weights = glla::glla_weights(glla.n, glla.delta_t, glla.max_order.max(1))?;
    let mut arrows = Vec::new();
    for &(k, trace) in traces {
        let ok: Vec<&DepthResult> = trace.ok_points().collect();
        let needed = (glla.n - 1) * glla.tau + 1;
        if ok.len() < needed {
            return Err(LandscapeError::TraceTooShort {
                k,
                points: ok.len(),
                needed,
            });
        }
        let tefi: Vec<f64> = ok.iter().map(|p| p.tefi.expect("ok point")).collect();
        let nmi: Vec<f64> = ok
            .iter()
            .map(|p| p.nmi.ok_or(LandscapeError::MissingNmi(k)))
            .collect::<Result<_>>()?;
        let depths: Vec<f64> = ok.iter().map(|p| p.depth as f64).collect();
        let yt = glla::glla_derivatives(&glla::time_delay_embed(&tefi, glla.n, glla.tau)?, &weights)?;
        let yn = glla::glla_derivatives(&glla::time_delay_embed(&nmi, glla.n, glla.tau)?, &weights)?;
        let yd = glla::time_delay_embed(&depths, glla.n, glla.tau)?;
        for i in 0..yt.nrows() {
            arrows.push(Arrow {
                k,
                tefi: yt[(i, 0)],
                nmi: yn[(i, 0)],
                d_tefi: yt[(i, 1)],
                d_nmi: yn[(i, 1)],
                depth_position: yd.matrix().row(i).mean(),
            });
        }
    }
    Ok(arrows)
}

pub fn arrows_csv(arrows: &[Arrow]) -> String {
    let mut out = String::from("tefi,nmi,d_tefi,d_nmi,k,depth_position\n");
    for a in arrows {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{},{:?}",
            a.tefi, a.nmi, a.d_tefi, a.d_nmi, a.k, a.depth_position
        );
    }
    out
}
