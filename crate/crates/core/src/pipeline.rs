//! Single-shot estimators: cross-sectional EGA over full embedding vectors and
//! DynEGA at one embedding depth.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fitmetrics::{self, FitError};
use crate::glla::{self, GllaConfig, GllaError};
use crate::ingest::EmbeddingMatrix;
use crate::netfilter::{self, NetError};
use crate::walktrap::{self, Partition, WalktrapError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Glla(#[from] GllaError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Walktrap(#[from] WalktrapError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("need at least 4 items, got {0}")]
    TooFewItems(usize),
    #[error("truth partition covers {truth} items, embeddings have {items}")]
    TruthMismatch { truth: usize, items: usize },
}

/// Matrix TEFI is evaluated on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TefiSource {
    /// Absolute correlations of the design.
    #[default]
    Correlation,
    /// Absolute TMFG edge weights with a unit diagonal.
    Network,
}

impl std::str::FromStr for TefiSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correlation" => Ok(Self::Correlation),
            "network" => Ok(Self::Network),
            other => Err(format!("unknown TEFI source {other:?} (correlation|network)")),
        }
    }
}

impl fmt::Display for TefiSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Correlation => "correlation",
            Self::Network => "network",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub walktrap_steps: usize,
    pub tefi_source: TefiSource,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            walktrap_steps: walktrap::DEFAULT_STEPS,
            tefi_source: TefiSource::Correlation,
        }
    }
}

/// Why a depth produced no estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    DepthTooShallow,
    ZeroVarianceColumn(usize),
    Failed(String),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DepthTooShallow => write!(f, "depth_too_shallow"),
            Self::ZeroVarianceColumn(i) => write!(f, "zero_variance_column_{i}"),
            Self::Failed(msg) => write!(f, "failed:{}", msg.replace([',', '\n'], " ")),
        }
    }
}

impl SkipReason {
    pub fn parse(s: &str) -> Self {
        if s == "depth_too_shallow" {
            Self::DepthTooShallow
        } else if let Some(i) = s
            .strip_prefix("zero_variance_column_")
            .and_then(|i| i.parse().ok())
        {
            Self::ZeroVarianceColumn(i)
        } else {
            Self::Failed(s.strip_prefix("failed:").unwrap_or(s).to_string())
        }
    }
}

impl From<PipelineError> for SkipReason {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Glla(GllaError::DepthTooShallow { .. }) => Self::DepthTooShallow,
            PipelineError::Net(NetError::ZeroVarianceColumn { index }) => {
                Self::ZeroVarianceColumn(index)
            }
            other => Self::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DepthStatus {
    Ok,
    Skipped { reason: SkipReason },
}

/// Outcome of one estimation. Metric fields are `Some` exactly when the status is ok,
/// except `nmi`, which also needs a ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResult {
    pub depth: usize,
    pub status: DepthStatus,
    pub partition: Option<Partition>,
    pub n_communities: Option<usize>,
    pub tefi: Option<f64>,
    pub nmi: Option<f64>,
}

impl DepthResult {
    pub fn skipped(depth: usize, reason: SkipReason) -> Self {
        Self {
            depth,
            status: DepthStatus::Skipped { reason },
            partition: None,
            n_communities: None,
            tefi: None,
            nmi: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == DepthStatus::Ok
    }

    pub fn status_label(&self) -> String {
        match &self.status {
            DepthStatus::Ok => "ok".into(),
            DepthStatus::Skipped { reason } => format!("skipped:{reason}"),
        }
    }
}

/// Correlate the columns of `design`, filter with TMFG, detect communities, and score.
pub fn estimate_structure(
    design: &DMatrix<f64>,
    depth: usize,
    truth: Option<&Partition>,
    opts: &EstimatorOptions,
) -> Result<DepthResult, PipelineError> {
    let p = design.ncols();
    if let Some(t) = truth {
        if t.len() != p {
            return Err(PipelineError::TruthMismatch {
                truth: t.len(),
                items: p,
            });
        }
    }
    let corr = netfilter::correlation_matrix(design)?;
    let filtered = netfilter::tmfg(&corr)?;
    let partition = walktrap::walktrap(&filtered.network, opts.walktrap_steps)?;
    let tefi = match opts.tefi_source {
        TefiSource::Correlation => fitmetrics::tefi(corr.matrix(), &partition)?,
        TefiSource::Network => {
            let mut w = filtered.network.weights().clone();
            w.fill_diagonal(1.0);
            fitmetrics::tefi(&w, &partition)?
        }
    };
    let nmi = truth
        .map(|t| fitmetrics::nmi(&partition, t).map(|s| s.value()))
        .transpose()?;
    Ok(DepthResult {
        depth,
        status: DepthStatus::Ok,
        n_communities: Some(partition.n_communities()),
        partition: Some(partition),
        tefi: Some(tefi),
        nmi,
    })
}

/// EGA over full embedding vectors: items are variables, coordinates are observations.
pub fn ega_cross_sectional(
    embeddings: &EmbeddingMatrix,
    truth: Option<&Partition>,
    opts: &EstimatorOptions,
) -> Result<DepthResult, PipelineError> {
    if embeddings.n_items() < 4 {
        return Err(PipelineError::TooFewItems(embeddings.n_items()));
    }
    let design = embeddings.coords().transpose();
    estimate_structure(&design, embeddings.depth(), truth, opts)
}

/// DynEGA on the first `depth` coordinates. Failures become a skipped result.
pub fn dynega_at_depth(
    embeddings: &EmbeddingMatrix,
    depth: usize,
    glla_cfg: &GllaConfig,
    truth: Option<&Partition>,
    opts: &EstimatorOptions,
) -> DepthResult {
    let run = || -> Result<DepthResult, PipelineError> {
        let design = glla::build_derivative_design(embeddings, depth, glla_cfg)?;
        estimate_structure(&design.matrix, depth, truth, opts)
    };
    run().unwrap_or_else(|e| DepthResult::skipped(depth, e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate_synthetic_pool, SyntheticSpec};

    fn planted(seed: u64) -> (EmbeddingMatrix, Partition) {
        generate_synthetic_pool(&SyntheticSpec {
            n_dimensions: 5,
            items_per_dimension: 6,
            total_depth: 200,
            signal_band: (0, 60),
            within_load: 0.9,
            noise_sd: 0.3,
            secondary_bands: vec![],
            seed,
        })
    }

    #[test]
    fn too_shallow_is_skipped() {
        let (m, truth) = planted(1);
        let r = dynega_at_depth(&m, 3, &GllaConfig::default(), Some(&truth), &Default::default());
        assert_eq!(
            r.status,
            DepthStatus::Skipped {
                reason: SkipReason::DepthTooShallow
            }
        );
        assert_eq!(r.status_label(), "skipped:depth_too_shallow");
        assert!(r.tefi.is_none() && r.partition.is_none());
    }

    #[test]
    fn full_depth_is_finite() {
        let (m, truth) = planted(2);
        let r = dynega_at_depth(&m, 200, &GllaConfig::default(), Some(&truth), &Default::default());
        assert!(r.is_ok());
        assert!(r.tefi.unwrap().is_finite());
        assert!((0.0..=1.0).contains(&r.nmi.unwrap()));
        assert_eq!(r.n_communities, r.partition.as_ref().map(|p| p.n_communities()));
    }

    #[test]
    fn nmi_absent_without_truth() {
        let (m, _) = planted(3);
        let r = ega_cross_sectional(&m, None, &Default::default()).unwrap();
        assert!(r.nmi.is_none());
        assert_eq!(r.depth, 200);
    }

    #[test]
    fn four_random_items() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let m = EmbeddingMatrix::new(
            (0..4).map(|i| i.to_string()).collect(),
            DMatrix::from_fn(4, 50, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let r = ega_cross_sectional(&m, None, &Default::default()).unwrap();
        assert!(r.is_ok());
        assert!((1..=4).contains(&r.n_communities.unwrap()));
    }

    #[test]
    fn duplicate_items_share_a_community() {
        for seed in 0..10 {
            let (m, _) = planted(seed);
            let mut coords = m.coords().clone();
            let row = coords.row(7).clone_owned();
            coords.row_mut(20).copy_from(&row);
            let dup = EmbeddingMatrix::new(m.item_ids().to_vec(), coords).unwrap();
            let r = ega_cross_sectional(&dup, None, &Default::default()).unwrap();
            let labels = r.partition.unwrap();
            assert_eq!(labels.labels()[7], labels.labels()[20]);
        }
    }

    #[test]
    fn identity_derivative_matches_cross_sectional() {
        for seed in 0..10 {
            let (m, truth) = planted(100 + seed);
            let base = ega_cross_sectional(&m, Some(&truth), &Default::default()).unwrap();
            // window of one, order zero: the "derivative" is the raw coordinate
            let l = glla::glla_weights(1, 1.0, 0).unwrap();
            let mut design = DMatrix::zeros(m.depth(), m.n_items());
            for item in 0..m.n_items() {
                let x = glla::time_delay_embed(&m.row(item), 1, 1).unwrap();
                let y = glla::glla_derivatives(&x, &l).unwrap();
                design.column_mut(item).copy_from(&y.column(0));
            }
            let via = estimate_structure(&design, m.depth(), Some(&truth), &Default::default())
                .unwrap();
            assert_eq!(base.partition, via.partition);
        }
    }

    #[test]
    fn deterministic() {
        let (m, truth) = planted(9);
        let a = dynega_at_depth(&m, 73, &GllaConfig::default(), Some(&truth), &Default::default());
        let b = dynega_at_depth(&m, 73, &GllaConfig::default(), Some(&truth), &Default::default());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn network_tefi_source() {
        let (m, truth) = planted(5);
        let opts = EstimatorOptions {
            tefi_source: TefiSource::Network,
            ..Default::default()
        };
        let r = dynega_at_depth(&m, 100, &GllaConfig::default(), Some(&truth), &opts);
        assert!(r.tefi.unwrap().is_finite());
    }

    #[test]
    fn skip_reason_round_trip() {
        for r in [
            SkipReason::DepthTooShallow,
            SkipReason::ZeroVarianceColumn(4),
            SkipReason::Failed("network is disconnected".into()),
        ] {
            assert_eq!(SkipReason::parse(&r.to_string()), r);
        }
    }
}
