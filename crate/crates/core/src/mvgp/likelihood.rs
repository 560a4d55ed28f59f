//! Matrix-variate Gaussian log-likelihood of replicated residual cycles and
//! its gradient in log-hyperparameter coordinates.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::SeKernel;
use crate::error::{shape_err, Error, Result};

/// Relative diagonal jitter added to the kernel matrix, as a multiple of `sigma_s^2`.
pub const KERNEL_JITTER: f64 = 1e-8;
/// Diagonal floor added to the closed-form output covariance.
pub const OUTPUT_COV_FLOOR: f64 = 1e-10;

/// Time-kernel hyperparameters plus the white-noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvgpParams {
    pub kernel: SeKernel,
    pub noise_var: f64,
}

impl MvgpParams {
    /// `(log ell, log sigma_s, log sigma)`.
    pub fn to_log(&self) -> [f64; 3] {
        [
            self.kernel.length_scale.ln(),
            self.kernel.signal_std.ln(),
            0.5 * self.noise_var.ln(),
        ]
    }

    pub fn from_log(x: [f64; 3]) -> Result<Self> {
        Ok(Self {
            kernel: SeKernel::new(x[1].exp(), x[0].exp())?,
            noise_var: (2.0 * x[2]).exp(),
        })
    }
}

/// `K_theta + jitter * sigma_s^2 I + noise_var I` on the grid.
pub fn kernel_matrix(kernel: &SeKernel, noise_var: f64, grid: &[f64]) -> DMatrix<f64> {
    let s2 = kernel.signal_std * kernel.signal_std;
    let n = grid.len();
    let mut k = DMatrix::from_fn(n, n, |a, b| kernel.eval(grid[a], grid[b]));
    for i in 0..n {
        k[(i, i)] += KERNEL_JITTER * s2 + noise_var;
    }
    k
}

pub(crate) fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Residual cycles centred on the mean curve, checked for consistent shape.
pub(crate) fn deviations(mean: &DMatrix<f64>, cycles: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if cycles.is_empty() {
        return Err(Error::InvalidArgument("no residual cycles".into()));
    }
    cycles
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.shape() != mean.shape() {
                Err(shape_err(format!(
                    "cycle {i} is {:?}, mean curve is {:?}",
                    r.shape(),
                    mean.shape()
                )))
            } else {
                Ok(r - mean)
            }
        })
        .collect()
}

/// Pieces shared by the likelihood, its gradient and the closed-form output
/// covariance update.
pub(crate) struct Workspace {
    pub n: usize,
    pub t: usize,
    pub j: usize,
    pub k_chol: Cholesky<f64, Dyn>,
    /// `sum_i D_i^T K'^-1 D_i`, `J x J`.
    pub scatter: DMatrix<f64>,
}

impl Workspace {
    pub fn new(params: &MvgpParams, grid: &[f64], devs: &[DMatrix<f64>]) -> Result<Self> {
        let (t, j) = devs[0].shape();
        if grid.len() != t {
            return Err(shape_err(format!("grid has {} points, cycles have {t} frames", grid.len())));
        }
        let k_chol = cholesky(kernel_matrix(&params.kernel, params.noise_var, grid), "kernel matrix K'")?;
        let mut scatter = DMatrix::zeros(j, j);
        for d in devs {
            let z = k_chol.l_dirty().solve_lower_triangular(d).expect("cholesky factor is invertible");
            scatter.gemm_tr(1.0, &z, &z, 1.0);
        }
        scatter = (&scatter + scatter.transpose()) * 0.5;
        Ok(Self { n: devs.len(), t, j, k_chol, scatter })
    }

    /// Closed-form maximiser of the likelihood over the output covariance.
    pub fn output_cov_mle(&self) -> DMatrix<f64> {
        let mut s = &self.scatter / (self.n * self.t) as f64;
        for i in 0..self.j {
            s[(i, i)] += OUTPUT_COV_FLOOR;
        }
        s
    }

    pub fn log_likelihood(&self, sigma_chol: &Cholesky<f64, Dyn>) -> f64 {
        let (n, t, j) = (self.n as f64, self.t as f64, self.j as f64);
        let trace = sigma_chol.solve(&self.scatter).trace();
        -0.5 * n * t * j * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * n * t * log_det(sigma_chol)
            - 0.5 * n * j * log_det(&self.k_chol)
            - 0.5 * trace
    }
}

fn check_output_cov(output_cov: &DMatrix<f64>, j: usize) -> Result<Cholesky<f64, Dyn>> {
    if output_cov.shape() != (j, j) {
        return Err(shape_err(format!("output covariance is {:?}, expected {j}x{j}", output_cov.shape())));
    }
    cholesky(output_cov.clone(), "output covariance")
}

/// Log-likelihood of `cycles` under `MN(mean, K', output_cov)` for every cycle.
pub fn log_likelihood(
    params: &MvgpParams,
    output_cov: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    grid: &[f64],
    cycles: &[DMatrix<f64>],
) -> Result<f64> {
    let devs = deviations(mean, cycles)?;
    let ws = Workspace::new(params, grid, &devs)?;
    let sigma_chol = check_output_cov(output_cov, ws.j)?;
    Ok(ws.log_likelihood(&sigma_chol))
}

/// Gradient of [`log_likelihood`] with respect to `(log ell, log sigma_s, log sigma)`
/// at fixed output covariance.
///
/// With `A = sum_i K'^-1 D_i Sigma^-1 D_i^T K'^-1`, each component is
/// `1/2 tr((A - N J K'^-1) dK'/dtheta)`.
pub fn grad_log_likelihood(
    params: &MvgpParams,
    output_cov: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    grid: &[f64],
    cycles: &[DMatrix<f64>],
) -> Result<[f64; 3]> {
    let devs = deviations(mean, cycles)?;
    let ws = Workspace::new(params, grid, &devs)?;
    let sigma_chol = check_output_cov(output_cov, ws.j)?;
    Ok(gradient(&ws, params, &sigma_chol, grid, &devs))
}

pub(crate) fn gradient(
    ws: &Workspace,
    params: &MvgpParams,
    sigma_chol: &Cholesky<f64, Dyn>,
    grid: &[f64],
    devs: &[DMatrix<f64>],
) -> [f64; 3] {
    let t = ws.t;
    let k_inv = ws.k_chol.inverse();
    let mut a = DMatrix::zeros(t, t);
    for d in devs {
        let alpha = ws.k_chol.solve(d);
        // alpha Sigma^-1 alpha^T = E E^T with E = alpha L^-T
        let et = sigma_chol
            .l_dirty()
            .solve_lower_triangular(&alpha.transpose())
            .expect("cholesky factor is invertible");
        a.gemm_tr(1.0, &et, &et, 1.0);
    }
    let nj = (ws.n * ws.j) as f64;
    let weight = a - k_inv * nj;

    let SeKernel { signal_std, length_scale } = params.kernel;
    let s2 = signal_std * signal_std;
    let l2 = length_scale * length_scale;
    let mut g = [0.0; 3];
    for p in 0..t {
        for q in 0..t {
            let w = weight[(p, q)];
            let d2 = (grid[p] - grid[q]).powi(2);
            let base = (-0.5 * d2 / l2).exp();
            g[0] += w * s2 * base * d2 / l2;
            let jitter = if p == q { KERNEL_JITTER } else { 0.0 };
            g[1] += w * 2.0 * s2 * (base + jitter);
        }
        g[2] += weight[(p, p)] * 2.0 * params.noise_var;
    }
    g.map(|v| 0.5 * v)
}
