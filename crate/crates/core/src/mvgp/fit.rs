//! Maximum-likelihood fitting of the residual model.
//!
//! The output covariance is profiled out through its closed-form update, so
//! the optimiser works on the three log-hyperparameters only. Steps follow a
//! quasi-Newton ascent direction with Armijo backtracking.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::likelihood::{cholesky, deviations, gradient, MvgpParams, Workspace, OUTPUT_COV_FLOOR};
use super::{empirical_mean, frame_grid, ConditioningMode, MvgpModel, SeKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvgpOptions {
    pub mode: ConditioningMode,
    pub max_iterations: usize,
    /// Stop once an accepted step improves the log-likelihood by less than this.
    pub tolerance: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for MvgpOptions {
    fn default() -> Self {
        Self {
            mode: ConditioningMode::NominalPrior,
            max_iterations: 500,
            tolerance: 1e-8,
            starts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MvgpFitTrace {
    /// Accepted log-likelihood values, one sequence per start.
    pub log_likelihood: Vec<Vec<f64>>,
    pub best_start: usize,
    pub iterations: Vec<usize>,
    /// Final gradient of the best start, `(log ell, log sigma_s, log sigma)`.
    pub gradient: [f64; 3],
    pub degenerate: bool,
    pub single_replication: bool,
}

struct Eval {
    value: f64,
    grad: Vector3<f64>,
}

struct Problem<'a> {
    grid: Vec<f64>,
    devs: &'a [DMatrix<f64>],
    lower: Vector3<f64>,
    upper: Vector3<f64>,
}

impl Problem<'_> {
    fn clamp(&self, x: Vector3<f64>) -> Vector3<f64> {
        x.zip_zip_map(&self.lower, &self.upper, |v, lo, hi| v.clamp(lo, hi))
    }

    /// Profile log-likelihood and its gradient at log-parameters `x`.
    fn eval(&self, x: &Vector3<f64>) -> Result<Eval> {
        let params = MvgpParams::from_log([x[0], x[1], x[2]])?;
        let ws = Workspace::new(&params, &self.grid, self.devs)?;
        let sigma_chol = cholesky(ws.output_cov_mle(), "output covariance")?;
        let value = ws.log_likelihood(&sigma_chol);
        let g = gradient(&ws, &params, &sigma_chol, &self.grid, self.devs);
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence("non-finite log-likelihood".into()));
        }
        Ok(Eval { value, grad: Vector3::from(g) })
    }

    /// Quasi-Newton ascent from `x0`; returns the final point, its evaluation
    /// and the accepted log-likelihood sequence.
    fn ascend(&self, x0: Vector3<f64>, opts: &MvgpOptions) -> Result<(Vector3<f64>, Eval, Vec<f64>)> {
        const ARMIJO: f64 = 1e-4;
        const MAX_STEP: f64 = 2.0;
        let mut x = self.clamp(x0);
        let mut cur = self.eval(&x)?;
        let mut history = vec![cur.value];
        // Inverse-Hessian approximation of the negated objective.
        let mut h = Matrix3::identity();
        for _ in 0..opts.max_iterations {
            let mut dir = h * cur.grad;
            if dir.dot(&cur.grad) <= 0.0 {
                h = Matrix3::identity();
                dir = cur.grad;
            }
            let longest = dir.amax();
            if longest > MAX_STEP {
                dir *= MAX_STEP / longest;
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let cand = self.clamp(x + dir * step);
                if let Ok(e) = self.eval(&cand) {
                    let predicted = cur.grad.dot(&(cand - x));
                    if e.value >= cur.value + ARMIJO * predicted && e.value >= cur.value {
                        accepted = Some((cand, e));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((next, e)) = accepted else { break };
            let s = next - x;
            let y = cur.grad - e.grad;
            let sy = s.dot(&y);
            if sy > 1e-12 {
                let rho = 1.0 / sy;
                let i = Matrix3::identity();
                h = (i - s * y.transpose() * rho) * h * (i - y * s.transpose() * rho) + s * s.transpose() * rho;
            }
            let improvement = e.value - cur.value;
            x = next;
            cur = e;
            history.push(cur.value);
            if improvement < opts.tolerance {
                break;
            }
        }
        Ok((x, cur, history))
    }
}

fn pooled_std(devs: &[DMatrix<f64>]) -> f64 {
    let (sum, count) = devs
        .iter()
        .flat_map(|d| d.iter())
        .fold((0.0, 0usize), |(s, c), v| (s + v * v, c + 1));
    (sum / count as f64).sqrt()
}

impl MvgpModel {
    /// Fits the mean curve, kernel hyperparameters, noise variance and output
    /// covariance to `N` nominal residual cycles (`T x J` each).
    pub fn fit(cycles: &[DMatrix<f64>], opts: &MvgpOptions) -> Result<(Self, MvgpFitTrace)> {
        if opts.starts == 0 || opts.max_iterations == 0 || !(opts.tolerance > 0.0) {
            return Err(Error::Config(format!("invalid MVGP options {opts:?}")));
        }
        let mean = empirical_mean(cycles)?;
        let (t, j) = mean.shape();
        if t < 2 || j == 0 {
            return Err(Error::InvalidArgument(format!("need at least 2 frames and 1 joint, got {t}x{j}")));
        }
        let n = cycles.len();
        let devs = deviations(&mean, cycles)?;
        let spread = pooled_std(&devs);
        let mut trace = MvgpFitTrace { single_replication: n == 1, ..Default::default() };
        if n == 1 {
            log::warn!("fitting the residual model on a single replication");
        }

        let conditioning = match opts.mode {
            ConditioningMode::NominalPrior => mean.clone(),
            ConditioningMode::ReplicationAveraged => empirical_mean(cycles)?,
        };

        if !(spread > 0.0) {
            // No spread at all: floor every scale and flag the model.
            let floor = 1e-6;
            let kernel = SeKernel::new(floor, (t as f64 / 10.0).max(1.0))?;
            let output_cov = DMatrix::identity(j, j) * OUTPUT_COV_FLOOR;
            let mut model = Self::from_parts(mean, kernel, floor * floor, output_cov, conditioning, n, opts.mode)?;
            model.degenerate = true;
            trace.degenerate = true;
            log::warn!("nominal residuals have zero spread; residual model is degenerate");
            return Ok((model, trace));
        }

        let grid = frame_grid(t);
        let ln_spread = spread.ln();
        let problem = Problem {
            grid,
            devs: &devs,
            lower: Vector3::new((0.05f64).ln(), ln_spread - 14.0, ln_spread - 14.0),
            upper: Vector3::new((10.0 * t as f64).ln(), ln_spread + 7.0, ln_spread + 7.0),
        };

        let base = Vector3::new((t as f64 / 10.0).max(0.5).ln(), ln_spread, ln_spread - 3f64.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut best: Option<(Vector3<f64>, Eval)> = None;
        for start in 0..opts.starts {
            let x0 = if start == 0 {
                base
            } else {
                let mut jitter = || -> f64 { StandardNormal.sample(&mut rng) };
                base + Vector3::new(jitter(), 0.5 * jitter(), jitter())
            };
            match problem.ascend(x0, opts) {
                Ok((x, e, history)) => {
                    trace.iterations.push(history.len() - 1);
                    trace.log_likelihood.push(history);
                    if best.as_ref().is_none_or(|(_, b)| e.value > b.value) {
                        trace.best_start = start;
                        best = Some((x, e));
                    }
                }
                Err(err) => {
                    log::warn!("MVGP start {start} failed: {err}");
                    trace.iterations.push(0);
                    trace.log_likelihood.push(Vec::new());
                }
            }
        }
        let (x, e) = best.ok_or_else(|| Error::NonConvergence("every MVGP start failed".into()))?;
        trace.gradient = [e.grad[0], e.grad[1], e.grad[2]];

        let params = MvgpParams::from_log([x[0], x[1], x[2]])?;
        let ws = Workspace::new(&params, &problem.grid, &devs)?;
        let output_cov = ws.output_cov_mle();
        let model = Self::from_parts(mean, params.kernel, params.noise_var, output_cov, conditioning, n, opts.mode)?;
        Ok((model, trace))
    }
}
