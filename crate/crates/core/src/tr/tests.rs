use super::*;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

struct Problem {
    masks: Vec<DenseTensor<f64>>,
    angles: Vec<DMatrix<f64>>,
}

/// `N` cycles of random masks with angles from a ground-truth bilinear map plus noise.
fn bilinear_problem(n: usize, t: usize, h: usize, w: usize, j: usize, noise: f64, seed: u64) -> Problem {
    let mut r = rng(seed);
    let b_h = random_matrix(j, h, &mut r);
    let b_w = DVector::from_fn(w, |_, _| r.random_range(-1.0..1.0));
    let mut masks = Vec::new();
    let mut angles = Vec::new();
    for _ in 0..n {
        let data: Vec<f64> = (0..t * h * w).map(|_| r.random_range(0.0..1.0)).collect();
        let m = DenseTensor::new(vec![t, h, w], data).unwrap();
        let mut a = DMatrix::zeros(t, j);
        for (k, frame) in m.data().chunks_exact(h * w).enumerate() {
            let x = DMatrix::from_row_slice(h, w, frame);
            let y = &b_h * (&x * &b_w);
            for jj in 0..j {
                a[(k, jj)] = y[jj] + noise * r.random_range(-1.0..1.0);
            }
        }
        masks.push(m);
        angles.push(a);
    }
    Problem { masks, angles }
}

fn full_rank_cfg(h: usize, w: usize) -> TrainConfig {
    TrainConfig {
        ranks: Some((h, w)),
        als_tolerance: 1e-12,
        max_iterations: 5000,
        ridge: 0.0,
        ..TrainConfig::default()
    }
}

#[test]
fn recovers_noiseless_bilinear_map() {
    let p = bilinear_problem(3, 20, 6, 5, 3, 0.0, 1);
    let (model, trace) = fit(&p.masks, &p.angles, &full_rank_cfg(6, 5)).unwrap();
    assert!(trace.converged);
    let acc = accuracy(&model, &p.masks, &p.angles).unwrap();
    assert!(acc.rmse.iter().all(|&e| e <= 1e-6), "{acc:?}");
}

#[test]
fn zero_masks_are_rejected() {
    let masks = vec![DenseTensor::zeros(vec![2, 4, 4]).unwrap()];
    let angles = vec![DMatrix::from_element(2, 2, 1.0)];
    let err = fit(&masks, &angles, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::ZeroRegressor { .. }), "{err}");
}

#[test]
fn singular_normal_equations_reported_without_ridge() {
    // Every frame is the same rank-one mask, so the width update is rank deficient.
    let frame: Vec<f64> = (0..16).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
    let masks = vec![DenseTensor::new(vec![3, 4, 4], frame.repeat(3)).unwrap()];
    let angles = vec![DMatrix::from_fn(3, 1, |t, _| t as f64)];
    let cfg = TrainConfig { ranks: Some((4, 4)), ridge: 0.0, ..TrainConfig::default() };
    let err = fit(&masks, &angles, &cfg).unwrap_err();
    assert!(matches!(err, Error::SingularSystem { .. }), "{err}");
}

#[test]
fn inconsistent_shapes_rejected() {
    let p = bilinear_problem(2, 4, 3, 3, 2, 0.0, 2);
    let mut masks = p.masks.clone();
    masks[1] = DenseTensor::zeros(vec![4, 3, 2]).unwrap();
    assert!(matches!(fit(&masks, &p.angles, &TrainConfig::default()), Err(Error::Shape(_))));
    let mut angles = p.angles.clone();
    angles[0] = DMatrix::zeros(4, 3);
    assert!(matches!(fit(&p.masks, &angles, &TrainConfig::default()), Err(Error::Shape(_))));
    assert!(fit::<f64>(&[], &[], &TrainConfig::default()).is_err());
}

#[test]
fn config_validation() {
    assert!(TrainConfig { als_tolerance: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { ridge: -1.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { energy: 1.2, ..Default::default() }.validate().is_err());
    let p = bilinear_problem(1, 4, 3, 3, 1, 0.0, 3);
    let cfg = TrainConfig { ranks: Some((4, 2)), ..Default::default() };
    assert!(matches!(fit(&p.masks, &p.angles, &cfg), Err(Error::Config(_))));
}

#[test]
fn objective_is_monotone() {
    for seed in 0..10 {
        let p = bilinear_problem(2, 15, 6, 6, 2, 0.3, 100 + seed);
        let cfg = TrainConfig { seed, ranks: Some((4, 3)), ..TrainConfig::default() };
        let (_, trace) = fit(&p.masks, &p.angles, &cfg).unwrap();
        assert!(trace.is_monotone(1e-9), "seed {seed}: {:?}", trace.objective);
        assert_eq!(trace.delta_h.len(), trace.iterations);
    }
}

#[test]
fn iteration_cap_flags_non_convergence() {
    let p = bilinear_problem(2, 15, 6, 6, 2, 0.3, 7);
    let cfg = TrainConfig { max_iterations: 1, als_tolerance: 1e-15, ..TrainConfig::default() };
    let (model, trace) = fit(&p.masks, &p.angles, &cfg).unwrap();
    assert!(!trace.converged);
    assert_eq!(trace.iterations, 1);
    assert_eq!(model.joints(), 2);
}

#[test]
fn replication_order_does_not_matter() {
    let p = bilinear_problem(4, 10, 5, 5, 2, 0.2, 9);
    let cfg = TrainConfig { als_tolerance: 1e-12, max_iterations: 2000, ..TrainConfig::default() };
    let (a, _) = fit(&p.masks, &p.angles, &cfg).unwrap();
    let order = [2, 0, 3, 1];
    let masks: Vec<_> = order.iter().map(|&i| p.masks[i].clone()).collect();
    let angles: Vec<_> = order.iter().map(|&i| p.angles[i].clone()).collect();
    let (b, _) = fit(&masks, &angles, &cfg).unwrap();
    for m in &p.masks {
        for frame in m.data().chunks_exact(25) {
            let pa = a.predict_slice(frame).unwrap();
            let pb = b.predict_slice(frame).unwrap();
            assert!((pa - pb).amax() <= 1e-8);
        }
    }
}

#[test]
fn seed_makes_fit_reproducible() {
    let p = bilinear_problem(2, 8, 4, 4, 2, 0.1, 12);
    let cfg = TrainConfig::default();
    let (a, ta) = fit(&p.masks, &p.angles, &cfg).unwrap();
    let (b, tb) = fit(&p.masks, &p.angles, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

/// Alternating least squares directly in pixel space, each block solved by
/// SVD-based least squares on the explicitly vectorized design matrix.
fn pixel_space_oracle(p: &Problem, b_w0: &DVector<f64>, iters: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (_, h, w) = cycle_dims(&p.masks[0]).unwrap();
    let j = p.angles[0].ncols();
    let frames: Vec<(DMatrix<f64>, DVector<f64>)> = p
        .masks
        .iter()
        .zip(&p.angles)
        .flat_map(|(m, a)| {
            m.data()
                .chunks_exact(h * w)
                .enumerate()
                .map(|(t, f)| (DMatrix::from_row_slice(h, w, f), a.row(t).transpose()))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut b_w = b_w0.clone();
    let mut b_h = DMatrix::zeros(j, h);
    for _ in 0..iters {
        // rows: (X b_w)^T, one per frame; targets: a^T
        let design = DMatrix::from_fn(frames.len(), h, |k, c| (&frames[k].0 * &b_w)[c]);
        let targets = DMatrix::from_fn(frames.len(), j, |k, c| frames[k].1[c]);
        let sol = design.svd(true, true).solve(&targets, 1e-14).unwrap();
        b_h = sol.transpose();
        // rows: (b_h[j,:] X), one per (frame, joint)
        let design = DMatrix::from_fn(frames.len() * j, w, |r, c| {
            let (k, jj) = (r / j, r % j);
            (b_h.row(jj) * &frames[k].0)[c]
        });
        let targets = DVector::from_fn(frames.len() * j, |r, _| frames[r / j].1[r % j]);
        b_w = design.svd(true, true).solve(&targets, 1e-14).unwrap();
    }
    (b_h, b_w)
}

#[test]
fn matches_dense_least_squares_oracle() {
    for seed in 0..5u64 {
        let p = bilinear_problem(2, 6, 5, 4, 2, 0.5, 300 + seed);
        let mut r = rng(seed);
        let b_w0 = DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0));
        let (model, trace) = fit_from(&p.masks, &p.angles, &full_rank_cfg(5, 4), &b_w0).unwrap();
        assert!(trace.converged);
        let (b_h, b_w) = pixel_space_oracle(&p, &b_w0, 3000);
        let oracle = TrModel::new(b_h, b_w).unwrap();
        for m in &p.masks {
            for frame in m.data().chunks_exact(20) {
                let d = (model.predict_slice(frame).unwrap() - oracle.predict_slice(frame).unwrap()).amax();
                assert!(d <= 1e-6, "seed {seed}: {d}");
            }
        }
    }
}

#[test]
fn predict_is_linear_in_mask() {
    let mut r = rng(4);
    let model = TrModel::new(random_matrix(3, 5, &mut r), DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0))).unwrap();
    assert!(model.predict(&DMatrix::zeros(5, 4)).unwrap().iter().all(|&v| v == 0.0));
    let x1 = random_matrix(5, 4, &mut r);
    let x2 = random_matrix(5, 4, &mut r);
    let (a, b) = (1.7, -0.3);
    let lhs = model.predict(&(&x1 * a + &x2 * b)).unwrap();
    let rhs = model.predict(&x1).unwrap() * a + model.predict(&x2).unwrap() * b;
    assert!((lhs - rhs).amax() <= 1e-10);

    // rank-one mask u v^T factorizes as (b_h u)(v^T b_w)
    let u = DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0));
    let v = DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0));
    let got = model.predict(&(&u * v.transpose())).unwrap();
    let expected = (model.b_h() * &u) * v.dot(model.b_w());
    assert!((got - expected).amax() <= 1e-12);

    assert!(model.predict(&DMatrix::zeros(4, 5)).is_err());
    assert!(model.predict_slice(&[0.0; 3]).is_err());
}

#[test]
fn residual_examples() {
    let mut r = rng(5);
    let model = TrModel::new(random_matrix(2, 3, &mut r), DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0))).unwrap();
    let x = random_matrix(3, 3, &mut r);
    let pred = model.predict(&x).unwrap();
    assert!(model.residual(&pred, &x).unwrap().amax() < 1e-15);
    let shifted = pred.add_scalar(2.5);
    let res = model.residual(&shifted, &x).unwrap();
    assert!(res.iter().all(|v| (v - 2.5).abs() < 1e-12));
    assert!(model.residual(&DVector::zeros(3), &x).is_err());
}

#[test]
fn accuracy_examples() {
    let p = bilinear_problem(2, 5, 3, 3, 2, 0.0, 6);
    let (model, _) = fit(&p.masks, &p.angles, &full_rank_cfg(3, 3)).unwrap();
    let acc = accuracy(&model, &p.masks, &p.angles).unwrap();
    assert!(acc.mean_rmse < 1e-6 && acc.mean_mae < 1e-6);

    // constant +1 bias on joint 0
    let biased: Vec<_> = p
        .angles
        .iter()
        .zip(&p.masks)
        .map(|(_, m)| {
            let mut pred = model.cycle_residuals(m, &DMatrix::zeros(5, 2)).unwrap() * -1.0;
            pred.column_mut(0).add_scalar_mut(1.0);
            pred
        })
        .collect();
    let acc = accuracy(&model, &p.masks, &biased).unwrap();
    assert!((acc.rmse[0] - 1.0).abs() < 1e-12 && (acc.mae[0] - 1.0).abs() < 1e-12);
    assert!(acc.rmse[1] < 1e-12);
    assert!(accuracy(&model, &[], &[]).is_err());
}

#[test]
fn model_files_round_trip() {
    let p = bilinear_problem(2, 6, 4, 5, 3, 0.1, 8);
    let cfg = TrainConfig::default();
    let (model, _) = fit(&p.masks, &p.angles, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_tr_model(dir.path(), &model, &cfg).unwrap();
    let (back, manifest) = load_tr_model::<f64>(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!((manifest.joints, manifest.height, manifest.width), (3, 4, 5));
    assert_eq!(manifest.config, cfg);
    let text = std::fs::read_to_string(dir.path().join("tr_model.json")).unwrap();
    assert!(text.contains("\"J\": 3"));
}

#[test]
fn single_precision_fit() {
    let p = bilinear_problem(2, 10, 4, 4, 2, 0.0, 13);
    let masks: Vec<DenseTensor<f32>> = p
        .masks
        .iter()
        .map(|m| DenseTensor::new(m.dims().to_vec(), m.data().iter().map(|&v| v as f32).collect()).unwrap())
        .collect();
    let angles: Vec<DMatrix<f32>> = p.angles.iter().map(|a| a.map(|v| v as f32)).collect();
    let cfg = TrainConfig { ranks: Some((4, 4)), als_tolerance: 1e-5, ridge: 0.0, ..Default::default() };
    let (model, _) = fit(&masks, &angles, &cfg).unwrap();
    let (reference, _) = fit(&p.masks, &p.angles, &TrainConfig { als_tolerance: 1e-10, ..cfg.clone() }).unwrap();
    // Same seed, same path: single precision tracks the double-precision fit.
    for (m32, m64) in masks.iter().zip(&p.masks) {
        for (f32s, f64s) in m32.data().chunks_exact(16).zip(m64.data().chunks_exact(16)) {
            let a = model.predict_slice(f32s).unwrap().map(|v| v as f64);
            let b = reference.predict_slice(f64s).unwrap();
            assert!((a - &b).amax() <= 1e-2 * b.amax().max(1.0));
        }
    }
}
