//! Time-delay reconstruction and Generalized Local Linear Approximation (GLLA).
//!
//! A series is embedded into overlapping windows of `n` samples spaced `tau` apart.
//! Each window is fitted by least squares against a polynomial basis centred on the
//! window, and the fitted coefficients are the derivative estimates at the centre.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ingest::EmbeddingMatrix;

/// Minimum number of embedded observations a derivative design must keep.
pub const MIN_DESIGN_ROWS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GllaError {
    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("window of {n} points cannot resolve derivatives up to order {max_order}")]
    RankDeficient { n: usize, max_order: usize },
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("window width {window} does not match weight matrix with {rows} rows")]
    ShapeMismatch { window: usize, rows: usize },
    #[error("depth {depth} is too shallow; smallest supported depth is {min_supported}")]
    DepthTooShallow { depth: usize, min_supported: usize },
    #[error("depth {depth} exceeds embedding width {available}")]
    DepthTooDeep { depth: usize, available: usize },
    #[error("invalid GLLA configuration: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, GllaError>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GllaConfig {
    /// Window size of the reconstruction.
    pub n: usize,
    pub tau: usize,
    pub delta_t: f64,
    pub max_order: usize,
    /// Derivative column that feeds the network.
    pub use_order: usize,
}

impl Default for GllaConfig {
    fn default() -> Self {
        Self {
            n: 5,
            tau: 1,
            delta_t: 1.0,
            max_order: 2,
            use_order: 1,
        }
    }
}

impl GllaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau < 1 {
            return Err(GllaError::InvalidConfig("tau must be at least 1".into()));
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(GllaError::InvalidConfig("delta_t must be positive".into()));
        }
        if self.max_order < 1 {
            return Err(GllaError::InvalidConfig("max_order must be at least 1".into()));
        }
        if self.use_order < 1 || self.use_order > self.max_order {
            return Err(GllaError::InvalidConfig(format!(
                "use_order must lie in 1..={}",
                self.max_order
            )));
        }
        if self.n < self.max_order + 1 {
            return Err(GllaError::RankDeficient {
                n: self.n,
                max_order: self.max_order,
            });
        }
        Ok(())
    }

    /// Window size actually used at `depth`, shrunk for shallow depths.
    ///
    /// Starts from `min(n, depth - 2)` and shrinks until at least
    /// [`MIN_DESIGN_ROWS`] windows fit. `None` when no window with
    /// `max_order + 1` points fits.
    pub fn effective_window(&self, depth: usize) -> Option<usize> {
        let mut n_eff = self.n.min(depth.saturating_sub(2));
        while n_eff > self.max_order {
            let span = (n_eff - 1) * self.tau;
            if depth > span && depth - span >= MIN_DESIGN_ROWS {
                return Some(n_eff);
            }
            n_eff -= 1;
        }
        None
    }

    /// Smallest depth [`GllaConfig::effective_window`] accepts.
    pub fn min_supported_depth(&self) -> usize {
        self.max_order * self.tau + MIN_DESIGN_ROWS
    }
}

/// `M x n` delay matrix; entry `(i, j)` is `series[i + j * tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDelayMatrix(DMatrix<f64>);

impl TimeDelayMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn window(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn time_delay_embed(series: &[f64], n: usize, tau: usize) -> Result<TimeDelayMatrix> {
    if n == 0 || tau == 0 {
        return Err(GllaError::InvalidConfig("n and tau must be positive".into()));
    }
    let needed = (n - 1) * tau + 1;
    if series.len() < needed {
        return Err(GllaError::SeriesTooShort {
            needed,
            got: series.len(),
        });
    }
    let m = series.len() - (n - 1) * tau;
    Ok(TimeDelayMatrix(DMatrix::from_fn(m, n, |i, j| {
        series[i + j * tau]
    })))
}

/// `n x (max_order + 1)` basis; column `a` is `(delta_t * (v - mean(v)))^a / a!`, `v = 1..=n`.
pub fn glla_weights(n: usize, delta_t: f64, max_order: usize) -> Result<DMatrix<f64>> {
    if n < max_order + 1 {
        return Err(GllaError::RankDeficient { n, max_order });
    }
    let centre = (n as f64 + 1.0) / 2.0;
    let mut factorial = 1.0;
    let mut l = DMatrix::zeros(n, max_order + 1);
    for order in 0..=max_order {
        if order > 0 {
            factorial *= order as f64;
        }
        for row in 0..n {
            let offset = delta_t * ((row + 1) as f64 - centre);
            l[(row, order)] = offset.powi(order as i32) / factorial;
        }
    }
    Ok(l)
}

/// Projection `L (L'L)^-1`, computed through a QR factorisation of `L`.
fn projection(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = l.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r.diagonal().iter().any(|d| d.abs() <= scale * 1e-13) || scale == 0.0 {
        return Err(GllaError::SingularNormalEquations);
    }
    // L (L'L)^-1 = Q R^-T = (R^-1 Q')'
    let sol = r
        .solve_upper_triangular(&qr.q().transpose())
        .ok_or(GllaError::SingularNormalEquations)?;
    Ok(sol.transpose())
}

/// `Y = X L (L'L)^-1`; column `a` estimates the `a`-th derivative at each window centre.
pub fn glla_derivatives(x: &TimeDelayMatrix, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.window() != l.nrows() {
        return Err(GllaError::ShapeMismatch {
            window: x.window(),
            rows: l.nrows(),
        });
    }
    Ok(x.matrix() * projection(l)?)
}

/// Column-bound derivative matrix for one depth, one column per item.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeDesign {
    pub matrix: DMatrix<f64>,
    pub depth_used: usize,
    pub effective_window: usize,
}

pub fn build_derivative_design(
    embeddings: &EmbeddingMatrix,
    depth: usize,
    cfg: &GllaConfig,
) -> Result<DerivativeDesign> {
    cfg.validate()?;
    if depth > embeddings.depth() {
        return Err(GllaError::DepthTooDeep {
            depth,
            available: embeddings.depth(),
        });
    }
    let n_eff = cfg
        .effective_window(depth)
        .ok_or(GllaError::DepthTooShallow {
            depth,
            min_supported: cfg.min_supported_depth(),
        })?;
    let l = glla_weights(n_eff, cfg.delta_t, cfg.max_order)?;
    let proj = projection(&l)?;
    let weights = proj.column(cfg.use_order).clone_owned();
    let m = depth - (n_eff - 1) * cfg.tau;
    let coords = embeddings.coords();

    let columns: Vec<Vec<f64>> = (0..embeddings.n_items())
        .into_par_iter()
        .map(|item| {
            (0..m)
                .map(|i| {
                    (0..n_eff)
                        .map(|j| coords[(item, i + j * cfg.tau)] * weights[j])
                        .sum()
                })
                .collect()
        })
        .collect();
    let matrix = DMatrix::from_fn(m, columns.len(), |i, j| columns[j][i]);
    Ok(DerivativeDesign {
        matrix,
        depth_used: depth,
        effective_window: n_eff,
    })
}
