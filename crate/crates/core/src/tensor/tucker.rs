//! Truncated higher-order SVD.

use nalgebra::{DMatrix, SymmetricEigen};

use super::DenseTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How many leading singular vectors to keep on a mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankSpec {
    Full,
    Rank(usize),
    /// Smallest rank whose cumulative squared singular values reach this
    /// fraction of the mode's total.
    Energy(f64),
}

/// Leading left singular vectors of one mode unfolding.
#[derive(Debug, Clone)]
pub struct ModeFactor<T> {
    pub factor: DMatrix<T>,
    /// Retained fraction of squared singular values, in `[0, 1]`.
    pub energy: f64,
    /// All squared singular values, descending.
    pub spectrum: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TuckerFactors<T> {
    pub core: DenseTensor<T>,
    pub factors: Vec<DMatrix<T>>,
    pub energy: Vec<f64>,
    /// Set when the input was identically zero and a rank-1 zero
    /// factorization was substituted.
    pub degenerate: bool,
}

fn select_rank(spec: RankSpec, spectrum: &[f64], mode: usize) -> Result<usize> {
    let extent = spectrum.len();
    match spec {
        RankSpec::Full => Ok(extent),
        RankSpec::Rank(0) => Err(Error::InvalidArgument(format!(
            "rank 0 requested on mode {mode}"
        ))),
        RankSpec::Rank(r) if r > extent => Err(Error::RankExceedsExtent { mode, rank: r, extent }),
        RankSpec::Rank(r) => Ok(r),
        RankSpec::Energy(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "energy target {tau} outside (0, 1] on mode {mode}"
                )));
            }
            let total: f64 = spectrum.iter().sum();
            if total <= 0.0 {
                return Ok(1);
            }
            let mut acc = 0.0;
            for (k, &s) in spectrum.iter().enumerate() {
                acc += s;
                if acc >= tau * total * (1.0 - 1e-12) {
                    return Ok(k + 1);
                }
            }
            Ok(extent)
        }
    }
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs<T: Scalar>(u: &mut DMatrix<T>) {
    for mut col in u.column_iter_mut() {
        let mut best = T::zero();
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < T::zero() {
            col.neg_mut();
        }
    }
}

/// Leading left singular vectors of the mode-`n` unfolding of `x`, obtained
/// from the eigendecomposition of its Gram matrix.
pub fn mode_factor<T: Scalar>(x: &DenseTensor<T>, n: usize, spec: RankSpec) -> Result<ModeFactor<T>> {
    factor_from_gram(x.mode_gram(n)?, n, spec)
}

/// Same as [`mode_factor`] but starting from a precomputed (possibly
/// accumulated) Gram matrix `X_(n) X_(n)^T`. `mode` is only used in errors.
pub fn factor_from_gram<T: Scalar>(gram: DMatrix<T>, mode: usize, spec: RankSpec) -> Result<ModeFactor<T>> {
    let n = mode;
    let extent = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..extent).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let spectrum: Vec<f64> = order
        .iter()
        .map(|&k| eig.eigenvalues[k].to_f64_lossy().max(0.0))
        .collect();
    let rank = select_rank(spec, &spectrum, n)?;
    let mut factor = DMatrix::from_fn(extent, rank, |i, j| eig.eigenvectors[(i, order[j])]);
    fix_signs(&mut factor);
    let total: f64 = spectrum.iter().sum();
    let energy = if total > 0.0 {
        (spectrum[..rank].iter().sum::<f64>() / total).min(1.0)
    } else {
        0.0
    };
    Ok(ModeFactor { factor, energy, spectrum })
}

/// Truncated HOSVD: per-mode leading singular vectors and the projected core.
pub fn hosvd<T: Scalar>(x: &DenseTensor<T>, spec: &[RankSpec]) -> Result<TuckerFactors<T>> {
    if spec.len() != x.order() {
        return Err(Error::InvalidArgument(format!(
            "{} rank specs for an order-{} tensor",
            spec.len(),
            x.order()
        )));
    }
    for (n, s) in spec.iter().enumerate() {
        if let RankSpec::Rank(r) = *s {
            if r > x.dims()[n] {
                return Err(Error::RankExceedsExtent { mode: n, rank: r, extent: x.dims()[n] });
            }
        }
    }
    if x.data().iter().all(|v| *v == T::zero()) {
        let factors = x
            .dims()
            .iter()
            .map(|&d| DMatrix::from_fn(d, 1, |i, _| if i == 0 { T::one() } else { T::zero() }))
            .collect();
        return Ok(TuckerFactors {
            core: DenseTensor::zeros(vec![1; x.order()])?,
            factors,
            energy: vec![0.0; x.order()],
            degenerate: true,
        });
    }

    let mut factors = Vec::with_capacity(x.order());
    let mut energy = Vec::with_capacity(x.order());
    for (n, s) in spec.iter().enumerate() {
        let f = mode_factor(x, n, *s)?;
        energy.push(f.energy);
        factors.push(f.factor);
    }
    let mut core = x.clone();
    for (n, u) in factors.iter().enumerate() {
        core = core.mode_mul(&u.transpose(), n)?;
    }
    Ok(TuckerFactors { core, factors, energy, degenerate: false })
}

/// `core x_1 U1 x_2 U2 ... x_N UN`.
pub fn tucker_reconstruct<T: Scalar>(f: &TuckerFactors<T>) -> Result<DenseTensor<T>> {
    if f.factors.len() != f.core.order() {
        return Err(Error::Shape(format!(
            "{} factors for an order-{} core",
            f.factors.len(),
            f.core.order()
        )));
    }
    let mut out = f.core.clone();
    for (n, u) in f.factors.iter().enumerate() {
        out = out.mode_mul(u, n)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        DenseTensor::new(dims.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn rel_err(a: &DenseTensor<f64>, b: &DenseTensor<f64>) -> f64 {
        a.sub(b).unwrap().frobenius() / b.frobenius()
    }

    #[test]
    fn full_rank_is_exact() {
        let x = random_tensor(&[4, 5, 3], 11);
        let f = hosvd(&x, &[RankSpec::Full; 3]).unwrap();
        assert!(rel_err(&tucker_reconstruct(&f).unwrap(), &x) <= 1e-10);
        for u in &f.factors {
            let gram = u.transpose() * u;
            assert!((gram - DMatrix::identity(u.ncols(), u.ncols())).norm() < 1e-10);
        }
        assert!(f.energy.iter().all(|&e| (e - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rank_one_outer_product_is_exact() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0, -1.0, 2.0];
        let c = [0.2, 0.7];
        let x = DenseTensor::from_fn(vec![3, 4, 2], |i| a[i[0]] * b[i[1]] * c[i[2]]).unwrap();
        let f = hosvd(&x, &[RankSpec::Rank(1); 3]).unwrap();
        assert_eq!(f.core.dims(), &[1, 1, 1]);
        assert!(rel_err(&tucker_reconstruct(&f).unwrap(), &x) <= 1e-10);
    }

    #[test]
    fn energy_target_retains_norm() {
        let x = random_tensor(&[8, 8, 8], 5);
        let f = hosvd(&x, &[RankSpec::Energy(0.95); 3]).unwrap();
        let rec = tucker_reconstruct(&f).unwrap();
        // Projection onto orthonormal subspaces: ||rec||^2 is the retained energy.
        let ratio = rec.frobenius().powi(2) / x.frobenius().powi(2);
        assert!(f.energy.iter().all(|&e| e >= 0.95));
        // Each mode drops at most 5% of the energy, so the total retained is at least 1 - 3 * 0.05.
        assert!(ratio >= 1.0 - 3.0 * 0.05, "ratio {ratio}");
        // Along each mode alone the projection keeps at least 95% of the squared norm.
        for (n, u) in f.factors.iter().enumerate() {
            let proj = x.mode_mul(&u.transpose(), n).unwrap();
            assert!(proj.frobenius().powi(2) >= 0.95 * x.frobenius().powi(2) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn energy_picks_smallest_sufficient_rank() {
        let spec = [6.0, 3.0, 1.0];
        assert_eq!(select_rank(RankSpec::Energy(0.6), &spec, 0).unwrap(), 1);
        assert_eq!(select_rank(RankSpec::Energy(0.61), &spec, 0).unwrap(), 2);
        assert_eq!(select_rank(RankSpec::Energy(0.9), &spec, 0).unwrap(), 2);
        assert_eq!(select_rank(RankSpec::Energy(1.0), &spec, 0).unwrap(), 3);
        assert!(select_rank(RankSpec::Energy(0.0), &spec, 0).is_err());
        assert!(select_rank(RankSpec::Energy(1.5), &spec, 0).is_err());
    }

    #[test]
    fn discarded_energy_bounds_mode_error() {
        for seed in 0..10 {
            let x = random_tensor(&[6, 6, 6], 100 + seed);
            for n in 0..3 {
                let f = mode_factor(&x, n, RankSpec::Rank(3)).unwrap();
                let discarded: f64 = f.spectrum[3..].iter().sum();
                let u = &f.factor;
                let proj = x.mode_mul(&(u * u.transpose()), n).unwrap();
                let err = x.sub(&proj).unwrap().frobenius().powi(2);
                assert!(err <= discarded * (1.0 + 1e-10) + 1e-12, "mode {n}: {err} > {discarded}");
            }
            let f = hosvd(&x, &[RankSpec::Rank(3); 3]).unwrap();
            let err = x.sub(&tucker_reconstruct(&f).unwrap()).unwrap().frobenius().powi(2);
            let bound: f64 = (0..3)
                .map(|n| mode_factor(&x, n, RankSpec::Full).unwrap().spectrum[3..].iter().sum::<f64>())
                .sum();
            assert!(err <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn sign_convention() {
        let x = random_tensor(&[5, 4, 3], 21);
        let f = hosvd(&x, &[RankSpec::Full; 3]).unwrap();
        for u in &f.factors {
            for col in u.column_iter() {
                let max = col.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                assert!(max > 0.0);
            }
        }
    }

    #[test]
    fn errors_and_degenerate() {
        let x = random_tensor(&[3, 3], 1);
        assert!(matches!(
            hosvd(&x, &[RankSpec::Rank(4), RankSpec::Full]),
            Err(Error::RankExceedsExtent { .. })
        ));
        let z = DenseTensor::<f64>::zeros(vec![3, 2, 2]).unwrap();
        let f = hosvd(&z, &[RankSpec::Full; 3]).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.core.dims(), &[1, 1, 1]);
        assert!(tucker_reconstruct(&f).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_identity_and_zero_core() {
        let x = random_tensor(&[2, 3], 3);
        let f = TuckerFactors {
            core: x.clone(),
            factors: vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
            energy: vec![1.0, 1.0],
            degenerate: false,
        };
        assert_eq!(tucker_reconstruct(&f).unwrap(), x);
        let f0 = TuckerFactors {
            core: DenseTensor::zeros(vec![1, 2]).unwrap(),
            factors: vec![DMatrix::from_element(2, 1, 1.0), DMatrix::identity(3, 3).columns(0, 2).into_owned()],
            energy: vec![1.0, 1.0],
            degenerate: false,
        };
        let r = tucker_reconstruct(&f0).unwrap();
        assert_eq!(r.dims(), &[2, 3]);
        assert!(r.data().iter().all(|&v| v == 0.0));
        let bad = TuckerFactors { factors: vec![DMatrix::identity(2, 2)], ..f };
        assert!(tucker_reconstruct(&bad).is_err());
    }
}
