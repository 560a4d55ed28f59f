//! Bilinear mask-to-joint-angle regression.
//!
//! The estimator maps an `H x W` mask `X` to joint angles `b_h * X * b_w`
//! with `b_h: J x H` and `b_w: W`. Fitting compresses the stacked masks with a
//! truncated HOSVD on the height and width modes and then alternates the two
//! closed-form least-squares updates in the compressed coordinates.

mod io;

pub use io::{load_tr_model, save_tr_model, TrManifest};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{factor_from_gram, DenseTensor, RankSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrModel<T> {
    b_h: DMatrix<T>,
    b_w: DVector<T>,
}

impl<T: Scalar> TrModel<T> {
    pub fn new(b_h: DMatrix<T>, b_w: DVector<T>) -> Result<Self> {
        if b_h.ncols() == 0 || b_h.nrows() == 0 || b_w.is_empty() {
            return Err(shape_err("empty basis"));
        }
        if b_h.iter().chain(b_w.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite basis entry".into()));
        }
        Ok(Self { b_h, b_w })
    }

    /// Height basis, `J x H`.
    pub fn b_h(&self) -> &DMatrix<T> {
        &self.b_h
    }

    /// Width basis, length `W`.
    pub fn b_w(&self) -> &DVector<T> {
        &self.b_w
    }

    pub fn joints(&self) -> usize {
        self.b_h.nrows()
    }

    pub fn height(&self) -> usize {
        self.b_h.ncols()
    }

    pub fn width(&self) -> usize {
        self.b_w.len()
    }

    fn check_mask(&self, rows: usize, cols: usize) -> Result<()> {
        if (rows, cols) != (self.height(), self.width()) {
            return Err(shape_err(format!(
                "mask is {rows}x{cols}, model expects {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }

    /// `b_h * mask * b_w`.
    pub fn predict(&self, mask: &DMatrix<T>) -> Result<DVector<T>> {
        self.check_mask(mask.nrows(), mask.ncols())?;
        Ok(&self.b_h * (mask * &self.b_w))
    }

    /// Prediction for a row-major `H x W` mask slice.
    pub fn predict_slice(&self, mask: &[T]) -> Result<DVector<T>> {
        if mask.len() != self.height() * self.width() {
            return Err(shape_err(format!(
                "mask has {} pixels, model expects {}",
                mask.len(),
                self.height() * self.width()
            )));
        }
        let w = self.width();
        let projected = DVector::from_iterator(
            self.height(),
            mask.chunks_exact(w).map(|row| {
                row.iter()
                    .zip(self.b_w.iter())
                    .fold(T::zero(), |acc, (&x, &b)| acc + x * b)
            }),
        );
        Ok(&self.b_h * projected)
    }

    /// Reported angles minus the vision estimate.
    pub fn residual(&self, reported: &DVector<T>, mask: &DMatrix<T>) -> Result<DVector<T>> {
        if reported.len() != self.joints() {
            return Err(shape_err(format!(
                "{} reported angles for a {}-joint model",
                reported.len(),
                self.joints()
            )));
        }
        Ok(reported - self.predict(mask)?)
    }

    /// Per-frame residuals of a whole cycle (`T x J`).
    pub fn cycle_residuals(&self, masks: &DenseTensor<T>, reported: &DMatrix<T>) -> Result<DMatrix<T>> {
        let (frames, h, w) = cycle_dims(masks)?;
        self.check_mask(h, w)?;
        if reported.shape() != (frames, self.joints()) {
            return Err(shape_err(format!(
                "angles are {:?}, expected {}x{}",
                reported.shape(),
                frames,
                self.joints()
            )));
        }
        let mut out = DMatrix::zeros(frames, self.joints());
        for (t, mask) in masks.data().chunks_exact(h * w).enumerate() {
            let pred = self.predict_slice(mask)?;
            for j in 0..self.joints() {
                out[(t, j)] = reported[(t, j)] - pred[j];
            }
        }
        Ok(out)
    }
}

fn cycle_dims<T: Scalar>(masks: &DenseTensor<T>) -> Result<(usize, usize, usize)> {
    match *masks.dims() {
        [t, h, w] => Ok((t, h, w)),
        ref d => Err(shape_err(format!("mask stack must be T x H x W, got {d:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Explicit `(P, Q)`; when absent ranks come from `energy`.
    pub ranks: Option<(usize, usize)>,
    pub energy: f64,
    pub als_tolerance: f64,
    pub max_iterations: usize,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ranks: None,
            energy: 0.95,
            als_tolerance: 1e-6,
            max_iterations: 200,
            ridge: 1e-10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.als_tolerance > 0.0) {
            return Err(Error::Config(format!("als_tolerance must be > 0, got {}", self.als_tolerance)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.energy > 0.0 && self.energy <= 1.0) {
            return Err(Error::Config(format!("energy must be in (0, 1], got {}", self.energy)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if let Some((p, q)) = self.ranks {
            if p == 0 || q == 0 {
                return Err(Error::Config("ranks must be positive".into()));
            }
        }
        Ok(())
    }

    fn rank_specs(&self) -> (RankSpec, RankSpec) {
        match self.ranks {
            Some((p, q)) => (RankSpec::Rank(p), RankSpec::Rank(q)),
            None => (RankSpec::Energy(self.energy), RankSpec::Energy(self.energy)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Half squared residual norm, before the first sweep and after each sweep.
    pub objective: Vec<f64>,
    pub delta_h: Vec<f64>,
    pub delta_w: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ranks: (usize, usize),
    /// Retained squared-singular-value fractions on the height and width modes.
    pub energy: (f64, f64),
}

impl FitTrace {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Compressed training problem: one `P x Q` matrix per (replication, frame).
struct Compressed<T> {
    frames: Vec<DMatrix<T>>,
    targets: DMatrix<T>,
}

impl<T: Scalar> Compressed<T> {
    fn objective(&self, c_h: &DMatrix<T>, c_w: &DVector<T>) -> f64 {
        let mut acc = 0.0;
        for (k, v) in self.frames.iter().enumerate() {
            let pred = c_h * (v * c_w);
            for j in 0..pred.len() {
                let e = (self.targets[(k, j)] - pred[j]).to_f64_lossy();
                acc += e * e;
            }
        }
        0.5 * acc
    }

    /// Least-squares `C_h` for fixed `c_w`.
    fn update_h(&self, c_w: &DVector<T>, ridge: T) -> Result<DMatrix<T>> {
        let p = self.frames[0].nrows();
        let mut gram = DMatrix::<T>::zeros(p, p);
        let mut rhs = DMatrix::<T>::zeros(p, self.targets.ncols());
        for (k, v) in self.frames.iter().enumerate() {
            let z = v * c_w;
            gram.ger(T::one(), &z, &z, T::one());
            let a = self.targets.row(k);
            rhs.ger(T::one(), &z, &a.transpose(), T::one());
        }
        Ok(solve_normal(gram, rhs, ridge, "C_h")?.transpose())
    }

    /// Least-squares `c_w` for fixed `C_h`.
    fn update_w(&self, c_h: &DMatrix<T>, ridge: T) -> Result<DVector<T>> {
        let q = self.frames[0].ncols();
        let mut gram = DMatrix::<T>::zeros(q, q);
        let mut rhs = DMatrix::<T>::zeros(q, 1);
        for (k, v) in self.frames.iter().enumerate() {
            let m = c_h * v;
            gram.gemm_tr(T::one(), &m, &m, T::one());
            let a = self.targets.row(k).transpose();
            rhs.gemm_tr(T::one(), &m, &a, T::one());
        }
        Ok(solve_normal(gram, rhs, ridge, "C_w")?.column(0).into_owned())
    }
}

fn solve_normal<T: Scalar>(
    mut gram: DMatrix<T>,
    rhs: DMatrix<T>,
    ridge: T,
    step: &'static str,
) -> Result<DMatrix<T>> {
    let max_diag = gram.diagonal().iter().fold(T::zero(), |m, &v| m.max(v));
    if max_diag <= T::zero() {
        return Err(Error::ZeroRegressor { step });
    }
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    let chol = Cholesky::new(gram).ok_or(Error::SingularSystem { step })?;
    if ridge == T::zero() {
        let l = chol.l_dirty();
        let min_pivot = l.diagonal().iter().fold(T::max_value().unwrap_or(T::one()), |m, &v| m.min(v));
        if min_pivot * min_pivot <= max_diag * T::default_epsilon() * T::lit(64.0) {
            return Err(Error::SingularSystem { step });
        }
    }
    Ok(chol.solve(&rhs))
}

fn relative_change<'a, T: Scalar>(
    new: impl Iterator<Item = &'a T> + Clone,
    old: impl Iterator<Item = &'a T>,
) -> f64 {
    let num = new
        .clone()
        .zip(old)
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs().to_f64_lossy()));
    let den = new.fold(0.0f64, |m, &a| m.max(a.abs().to_f64_lossy()));
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn assert_orthonormal<T: Scalar>(u: &DMatrix<T>) {
    let gram = u.transpose() * u;
    let err = (gram - DMatrix::identity(u.ncols(), u.ncols())).norm().to_f64_lossy();
    let tol = T::default_epsilon().sqrt().to_f64_lossy() * 100.0;
    assert!(err <= tol, "HOSVD factor lost orthonormality ({err:e})");
}

/// Fits the bilinear estimator on `N` replications of `T x H x W` mask stacks
/// and matching `T x J` angle matrices.
///
/// Modes N and T are kept at full rank, so their HOSVD projections are the
/// identity and the compressed frames are `U_h^T X U_w`.
pub fn fit<T: Scalar>(
    mask_cycles: &[DenseTensor<T>],
    angle_cycles: &[DMatrix<T>],
    cfg: &TrainConfig,
) -> Result<(TrModel<T>, FitTrace)> {
    fit_inner(mask_cycles, angle_cycles, cfg, None)
}

/// [`fit`] warm-started from a pixel-space width basis `b_w0` (length `W`),
/// projected onto the retained width subspace. The height block is always
/// solved first, so only the width start matters.
pub fn fit_from<T: Scalar>(
    mask_cycles: &[DenseTensor<T>],
    angle_cycles: &[DMatrix<T>],
    cfg: &TrainConfig,
    b_w0: &DVector<T>,
) -> Result<(TrModel<T>, FitTrace)> {
    fit_inner(mask_cycles, angle_cycles, cfg, Some(b_w0))
}

fn fit_inner<T: Scalar>(
    mask_cycles: &[DenseTensor<T>],
    angle_cycles: &[DMatrix<T>],
    cfg: &TrainConfig,
    b_w0: Option<&DVector<T>>,
) -> Result<(TrModel<T>, FitTrace)> {
    cfg.validate()?;
    let first = mask_cycles
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training cycles".into()))?;
    let (frames, h, w) = cycle_dims(first)?;
    if angle_cycles.len() != mask_cycles.len() {
        return Err(shape_err(format!(
            "{} mask cycles but {} angle cycles",
            mask_cycles.len(),
            angle_cycles.len()
        )));
    }
    let joints = angle_cycles[0].ncols();
    for (i, (m, a)) in mask_cycles.iter().zip(angle_cycles).enumerate() {
        if m.dims() != first.dims() {
            return Err(shape_err(format!("cycle {i}: masks {:?}, expected {:?}", m.dims(), first.dims())));
        }
        if a.shape() != (frames, joints) {
            return Err(shape_err(format!("cycle {i}: angles {:?}, expected {frames}x{joints}", a.shape())));
        }
        if m.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("cycle {i}: non-finite mask entry")));
        }
    }
    if joints == 0 {
        return Err(shape_err("zero joints"));
    }
    let (spec_h, spec_w) = cfg.rank_specs();
    if let (RankSpec::Rank(p), RankSpec::Rank(q)) = (spec_h, spec_w) {
        if p > h || q > w {
            return Err(Error::Config(format!("ranks ({p}, {q}) exceed mask size {h}x{w}")));
        }
    }

    // Height/width Gram matrices of the stacked tensor are sums over cycles.
    let mut gram_h = DMatrix::<T>::zeros(h, h);
    let mut gram_w = DMatrix::<T>::zeros(w, w);
    for m in mask_cycles {
        gram_h += m.mode_gram(1)?;
        gram_w += m.mode_gram(2)?;
    }
    if gram_h.trace() <= T::zero() {
        return Err(Error::ZeroRegressor { step: "C_h" });
    }
    let fh = factor_from_gram(gram_h, 1, spec_h)?;
    let fw = factor_from_gram(gram_w, 2, spec_w)?;
    let (u_h, u_w) = (fh.factor, fw.factor);
    assert_orthonormal(&u_h);
    assert_orthonormal(&u_w);
    let (p, q) = (u_h.ncols(), u_w.ncols());

    let u_ht = u_h.transpose();
    let mut compressed = Compressed {
        frames: Vec::with_capacity(mask_cycles.len() * frames),
        targets: DMatrix::zeros(mask_cycles.len() * frames, joints),
    };
    for (i, (m, a)) in mask_cycles.iter().zip(angle_cycles).enumerate() {
        let v = m.mode_mul(&u_ht, 1)?.mode_mul(&u_w.transpose(), 2)?;
        for (t, block) in v.data().chunks_exact(p * q).enumerate() {
            compressed.frames.push(DMatrix::from_row_slice(p, q, block));
            compressed
                .targets
                .row_mut(i * frames + t)
                .copy_from(&a.row(t));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal = || T::lit(StandardNormal.sample(&mut rng));
    let mut c_h = DMatrix::from_fn(joints, p, |_, _| normal());
    let mut c_w = DVector::from_fn(q, |_, _| normal());
    if let Some(b) = b_w0 {
        if b.len() != w {
            return Err(shape_err(format!("initial width basis has length {}, expected {w}", b.len())));
        }
        c_w = u_w.transpose() * b;
    }
    let ridge = T::lit(cfg.ridge);

    let mut trace = FitTrace {
        ranks: (p, q),
        energy: (fh.energy, fw.energy),
        ..FitTrace::default()
    };
    trace.objective.push(compressed.objective(&c_h, &c_w));
    for _ in 0..cfg.max_iterations {
        let next_h = compressed.update_h(&c_w, ridge)?;
        let next_w = compressed.update_w(&next_h, ridge)?;
        let dh = relative_change(next_h.iter(), c_h.iter());
        let dw = relative_change(next_w.iter(), c_w.iter());
        c_h = next_h;
        c_w = next_w;
        trace.iterations += 1;
        trace.delta_h.push(dh);
        trace.delta_w.push(dw);
        trace.objective.push(compressed.objective(&c_h, &c_w));
        if dh.max(dw) < cfg.als_tolerance {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!(
            "ALS stopped at the iteration cap ({}) without reaching tolerance {}",
            cfg.max_iterations,
            cfg.als_tolerance
        );
    }

    // U^+ = U^T for column-orthonormal factors.
    let b_h = &c_h * &u_ht;
    let b_w = &u_w * &c_w;
    Ok((TrModel::new(b_h, b_w)?, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
}

/// Frame-wise per-joint RMSE and MAE over all supplied cycles.
pub fn accuracy<T: Scalar>(
    model: &TrModel<T>,
    mask_cycles: &[DenseTensor<T>],
    angle_cycles: &[DMatrix<T>],
) -> Result<Accuracy> {
    if mask_cycles.is_empty() || mask_cycles.len() != angle_cycles.len() {
        return Err(shape_err(format!(
            "{} mask cycles vs {} angle cycles",
            mask_cycles.len(),
            angle_cycles.len()
        )));
    }
    let j = model.joints();
    let mut sq = vec![0.0; j];
    let mut abs = vec![0.0; j];
    let mut count = 0usize;
    for (m, a) in mask_cycles.iter().zip(angle_cycles) {
        let r = model.cycle_residuals(m, a)?;
        for row in r.row_iter() {
            for (k, v) in row.iter().enumerate() {
                let e = v.to_f64_lossy();
                sq[k] += e * e;
                abs[k] += e.abs();
            }
        }
        count += r.nrows();
    }
    let rmse: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    let mae: Vec<f64> = abs.iter().map(|s| s / count as f64).collect();
    Ok(Accuracy {
        mean_rmse: rmse.iter().sum::<f64>() / j as f64,
        mean_mae: mae.iter().sum::<f64>() / j as f64,
        rmse,
        mae,
    })
}

#[cfg(test)]
mod tests;
