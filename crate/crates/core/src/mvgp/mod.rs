//! Matrix-variate Gaussian-process model of nominal residual cycles.
//!
//! A residual cycle `R` (`T x J`) is modelled as `MN(M, K', Sigma)`: the mean
//! curve `M` is the per-frame average over nominal replications, the row
//! covariance `K' = K_theta + sigma^2 I` comes from a squared-exponential
//! kernel over frame index, and `Sigma` couples the joints.

mod fit;
mod io;
mod likelihood;

pub use fit::{MvgpFitTrace, MvgpOptions};
pub use io::{load_mvgp_model, save_mvgp_model, MvgpManifest};
pub use likelihood::{
    grad_log_likelihood, kernel_matrix, log_likelihood, MvgpParams, KERNEL_JITTER, OUTPUT_COV_FLOOR,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use likelihood::cholesky;

/// `k(t, t') = sigma_s^2 exp(-(t - t')^2 / (2 ell^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    #[serde(rename = "sigma_s")]
    pub signal_std: f64,
    #[serde(rename = "ell")]
    pub length_scale: f64,
}

impl SeKernel {
    pub fn new(signal_std: f64, length_scale: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(signal_std) || !ok(length_scale) {
            return Err(Error::InvalidArgument(format!(
                "SE kernel needs positive finite parameters, got sigma_s={signal_std}, ell={length_scale}"
            )));
        }
        Ok(Self { signal_std, length_scale })
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        let d = t - u;
        self.signal_std * self.signal_std * (-0.5 * d * d / (self.length_scale * self.length_scale)).exp()
    }
}

pub fn se_kernel(k: &SeKernel, t: f64, u: f64) -> f64 {
    k.eval(t, u)
}

/// Per-frame average of the residual cycles.
pub fn empirical_mean(cycles: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = cycles
        .first()
        .ok_or_else(|| Error::InvalidArgument("no residual cycles".into()))?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for (i, c) in cycles.iter().enumerate() {
        if c.shape() != first.shape() {
            return Err(shape_err(format!("cycle {i} is {:?}, expected {:?}", c.shape(), first.shape())));
        }
        acc += c;
    }
    Ok(acc / cycles.len() as f64)
}

/// Which residual matrix the one-step-ahead predictor conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// Condition on the mean curve itself; the predictive mean is the mean curve.
    #[default]
    NominalPrior,
    /// Condition on the average of the `N` nominal cycles, with noise `sigma^2 / N`.
    ReplicationAveraged,
}

/// One-step-ahead predictive distribution `N(mean, scale * output_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDist {
    pub mean: DVector<f64>,
    pub scale: f64,
    pub output_cov: DMatrix<f64>,
}

impl PredictiveDist {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.output_cov * self.scale
    }
}

#[derive(Debug, Clone)]
pub struct MvgpModel {
    mean_curve: DMatrix<f64>,
    kernel: SeKernel,
    noise_var: f64,
    output_cov: DMatrix<f64>,
    conditioning: DMatrix<f64>,
    replication_count: usize,
    mode: ConditioningMode,
    degenerate: bool,
    grid: Vec<f64>,
    cond_chol: Cholesky<f64, Dyn>,
    /// `K_c^-1 (R_bar - M)`.
    weights: DMatrix<f64>,
}

/// Training grid `0, 1, ..., T-1`.
pub fn frame_grid(frames: usize) -> Vec<f64> {
    (0..frames).map(|t| t as f64).collect()
}

impl MvgpModel {
    /// Assembles a model from explicit parameters and factorizes the
    /// conditioning kernel matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mean_curve: DMatrix<f64>,
        kernel: SeKernel,
        noise_var: f64,
        output_cov: DMatrix<f64>,
        conditioning: DMatrix<f64>,
        replication_count: usize,
        mode: ConditioningMode,
    ) -> Result<Self> {
        let (t, j) = mean_curve.shape();
        if t == 0 || j == 0 {
            return Err(shape_err("empty mean curve"));
        }
        if conditioning.shape() != (t, j) {
            return Err(shape_err(format!(
                "conditioning matrix is {:?}, expected {t}x{j}",
                conditioning.shape()
            )));
        }
        if output_cov.shape() != (j, j) {
            return Err(shape_err(format!("output covariance is {:?}, expected {j}x{j}", output_cov.shape())));
        }
        if !(noise_var.is_finite() && noise_var >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance {noise_var}")));
        }
        if replication_count == 0 {
            return Err(Error::InvalidArgument("replication count must be positive".into()));
        }
        cholesky(output_cov.clone(), "output covariance")?;
        let grid = frame_grid(t);
        let cond_noise = match mode {
            ConditioningMode::NominalPrior => noise_var,
            ConditioningMode::ReplicationAveraged => noise_var / replication_count as f64,
        };
        let cond_chol = cholesky(kernel_matrix(&kernel, cond_noise, &grid), "conditioning kernel matrix")?;
        let weights = cond_chol.solve(&(&conditioning - &mean_curve));
        Ok(Self {
            mean_curve,
            kernel,
            noise_var,
            output_cov,
            conditioning,
            replication_count,
            mode,
            degenerate: false,
            grid,
            cond_chol,
            weights,
        })
    }

    pub fn frames(&self) -> usize {
        self.mean_curve.nrows()
    }

    pub fn joints(&self) -> usize {
        self.mean_curve.ncols()
    }

    pub fn mean_curve(&self) -> &DMatrix<f64> {
        &self.mean_curve
    }

    pub fn kernel(&self) -> SeKernel {
        self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn params(&self) -> MvgpParams {
        MvgpParams { kernel: self.kernel, noise_var: self.noise_var }
    }

    pub fn output_cov(&self) -> &DMatrix<f64> {
        &self.output_cov
    }

    pub fn conditioning(&self) -> &DMatrix<f64> {
        &self.conditioning
    }

    pub fn replication_count(&self) -> usize {
        self.replication_count
    }

    pub fn mode(&self) -> ConditioningMode {
        self.mode
    }

    /// Set when the nominal residuals had no spread and the noise was floored.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Prior variance of a fresh observation, `k(t, t) + jitter + sigma^2`.
    pub fn prior_scale(&self) -> f64 {
        let s2 = self.kernel.signal_std * self.kernel.signal_std;
        s2 * (1.0 + KERNEL_JITTER) + self.noise_var
    }

    /// Nearest training-grid row for a (possibly off-grid) time.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let last = self.frames() - 1;
        if !(t > 0.0) {
            0
        } else if t >= last as f64 {
            last
        } else {
            t.round() as usize
        }
    }

    /// Predictive distribution of a fresh residual at time `t`.
    ///
    /// The cross-covariance to the training rows carries no noise term: the
    /// new frame is a distinct observation even when it shares a grid index.
    /// The mean curve is read at the nearest grid row.
    pub fn predict_at(&self, t: f64) -> Result<PredictiveDist> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("prediction time {t}")));
        }
        let k_star = DVector::from_iterator(self.frames(), self.grid.iter().map(|&g| self.kernel.eval(g, t)));
        let m_star = self.mean_curve.row(self.nearest_frame(t)).transpose();
        let mean = m_star + self.weights.transpose() * &k_star;
        let explained = k_star.dot(&self.cond_chol.solve(&k_star));
        let prior = self.prior_scale();
        let scale = (prior - explained).clamp(0.0, prior);
        Ok(PredictiveDist { mean, scale, output_cov: self.output_cov.clone() })
    }

    /// Predictive distribution at frame index `frame` of the training grid.
    pub fn predict(&self, frame: usize) -> Result<PredictiveDist> {
        self.predict_at(frame as f64)
    }
}
