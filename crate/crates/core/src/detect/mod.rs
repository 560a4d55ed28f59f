//! Per-frame Mahalanobis test on vision/encoder residuals, the i.i.d.
//! baseline residual model, and detection metrics.

mod chi2;
mod online;

pub use chi2::{chi2_cdf, chi2_quantile};
pub use online::{
    load_iid_model, save_iid_model, summarize_delays, write_report_csv, DelaySummary, DetectionReport,
    FrameScore, OnlineDetector, ResidualPredictor,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Diagonal floor added to the baseline covariance estimate.
pub const IID_COV_FLOOR: f64 = 1e-10;
/// Predictive scale floor, relative to `sigma_s^2`.
pub const SCALE_FLOOR: f64 = 1e-12;
pub const DEFAULT_ALPHA: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    #[default]
    Mvgp,
    Iid,
}

impl ResidualKind {
    pub fn label(self) -> &'static str {
        match self {
            ResidualKind::Mvgp => "ViSTR-GP",
            ResidualKind::Iid => "TR+IID",
        }
    }
}

impl std::str::FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mvgp" => Ok(Self::Mvgp),
            "iid" => Ok(Self::Iid),
            _ => Err(Error::Config(format!("unknown residual model {s:?}, expected mvgp or iid"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub dof: usize,
    pub threshold: f64,
    pub residual_model: ResidualKind,
}

impl DetectorConfig {
    /// Threshold is the `1 - alpha` quantile of `chi^2_dof`.
    pub fn new(alpha: f64, dof: usize, residual_model: ResidualKind) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let threshold = chi2_quantile(dof, 1.0 - alpha)?;
        Ok(Self { alpha, dof, threshold, residual_model })
    }
}

pub(crate) fn factor(cov: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !cov.is_square() || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what.to_string()));
    }
    Cholesky::new(cov.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `(1 / scale) (r - mean)^T cov^-1 (r - mean)`.
pub fn mahalanobis(r: &DVector<f64>, mean: &DVector<f64>, scale: f64, cov: &DMatrix<f64>) -> Result<f64> {
    if r.len() != mean.len() || cov.shape() != (r.len(), r.len()) {
        return Err(shape_err(format!(
            "residual {}, mean {}, covariance {:?}",
            r.len(),
            mean.len(),
            cov.shape()
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("predictive scale must be positive, got {scale}")));
    }
    let chol = factor(cov, "residual covariance")?;
    Ok(quad_form(&chol, &(r - mean)) / scale)
}

pub(crate) fn quad_form(chol: &Cholesky<f64, Dyn>, d: &DVector<f64>) -> f64 {
    let z = chol.l_dirty().solve_lower_triangular(d).expect("cholesky factor is invertible");
    z.norm_squared()
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Negative log density and half log-determinant of one residual under
/// `N(mean, cov)`.
pub fn frame_scores(r: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let g = mahalanobis(r, mean, 1.0, cov)?;
    let ld = log_det(&factor(cov, "predictive covariance")?);
    let j = r.len() as f64;
    let nll = 0.5 * (j * (2.0 * std::f64::consts::PI).ln() + ld) + 0.5 * g;
    Ok((nll, 0.5 * ld))
}

/// Baseline residual model: every frame is an independent draw from
/// `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IidModel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl IidModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) || mean.is_empty() {
            return Err(shape_err(format!("mean {} with covariance {:?}", mean.len(), cov.shape())));
        }
        factor(&cov, "i.i.d. residual covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn joints(&self) -> usize {
        self.mean.len()
    }
}

/// Pooled mean and maximum-likelihood covariance over every frame of every
/// cycle (`T x J` each).
pub fn fit_iid(cycles: &[DMatrix<f64>]) -> Result<IidModel> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::InvalidArgument("no residual cycles".into()))?;
    let j = first.ncols();
    let rows: usize = cycles.iter().map(|c| c.nrows()).sum();
    if cycles.iter().any(|c| c.ncols() != j) {
        return Err(shape_err("residual cycles disagree on the joint count"));
    }
    if rows < 2 || j == 0 {
        return Err(Error::InvalidArgument(format!("{rows} residual samples are too few")));
    }
    if rows < j + 1 {
        log::warn!("{rows} samples for {j} joints; covariance is rank deficient before flooring");
    }
    // Canonical sample order makes the estimate exactly permutation invariant.
    let mut samples: Vec<DVector<f64>> = cycles.iter().flat_map(|c| c.row_iter().map(|r| r.transpose())).collect();
    samples.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut mean = DVector::zeros(j);
    for s in &samples {
        mean += s;
    }
    mean /= rows as f64;
    let mut cov = DMatrix::zeros(j, j);
    for s in &samples {
        let d = s - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= rows as f64;
    for i in 0..j {
        cov[(i, i)] += IID_COV_FLOOR;
    }
    IidModel::new(mean, cov)
}
