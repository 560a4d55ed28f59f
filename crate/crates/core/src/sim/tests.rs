use super::*;
use nalgebra::{DMatrix, DVector};
use nalgebra::Complex;

type Complex64 = Complex<f64>;
use rand::{Rng, SeedableRng};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config() -> SimConfig {
    SimConfig { frames: 40, ..Default::default() }
}

#[test]
fn trajectory_is_deterministic_smooth_and_periodic() {
    let cfg = TrajectoryConfig::default();
    let a = gen_trajectory(6, 240, &cfg, &mut rng(3)).unwrap();
    assert_eq!(a, gen_trajectory(6, 240, &cfg, &mut rng(3)).unwrap());
    assert_ne!(a, gen_trajectory(6, 240, &cfg, &mut rng(4)).unwrap());
    for t in 0..240 {
        for j in 0..6 {
            let step = (a[(t + 1) % 240][j] - a[t][j]).abs();
            assert!(step <= cfg.max_slew, "frame {t} joint {j}: {step}");
            assert!(a[t][j] >= cfg.limits[0] && a[t][j] <= cfg.limits[1]);
        }
    }
    let tight = TrajectoryConfig { max_slew: 0.25, ..cfg.clone() };
    let b = gen_trajectory(3, 100, &tight, &mut rng(5)).unwrap();
    assert!((0..100).all(|t| (0..3).all(|j| (b[(t + 1) % 100][j] - b[t][j]).abs() <= 0.25)));
    assert!(gen_trajectory(6, 1, &cfg, &mut rng(0)).is_err());
    let bad = TrajectoryConfig { amplitude: 100.0, ..cfg };
    assert!(gen_trajectory(6, 10, &bad, &mut rng(0)).is_err());
}

#[test]
fn forward_kinematics_examples() {
    let arm = ArmSpec::default();
    let reach = arm.reach();
    let [bx, by] = arm.base_position;
    let end = *forward_kinematics(&[0.0; 6], &arm).last().unwrap();
    assert!((end[0] - (bx + reach)).abs() < 1e-12 && (end[1] - by).abs() < 1e-12);
    let end = *forward_kinematics(&[90.0, 0.0, 0.0, 0.0, 0.0, 0.0], &arm).last().unwrap();
    assert!((end[0] - bx).abs() < 1e-12 && (end[1] - (by + reach)).abs() < 1e-12);
}

#[test]
fn forward_kinematics_matches_complex_exponentials() {
    let arm = ArmSpec::default();
    let mut r = rng(6);
    for _ in 0..200 {
        let angles: Vec<f64> = (0..6).map(|_| r.random_range(-180.0..180.0)).collect();
        let pts = forward_kinematics(&angles, &arm);
        let mut z = Complex64::new(arm.base_position[0], arm.base_position[1]);
        let mut rot = Complex64::new(1.0, 0.0);
        for (k, (a, l)) in angles.iter().zip(&arm.link_lengths).enumerate() {
            rot *= Complex64::from_polar(1.0, a.to_radians());
            z += rot * *l;
            assert!((pts[k + 1][0] - z.re).abs() < 1e-10 && (pts[k + 1][1] - z.im).abs() < 1e-10);
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let arm = ArmSpec::default();
    let mut r = rng(7);
    let angles: Vec<f64> = (0..6).map(|_| r.random_range(-90.0..90.0)).collect();
    let jac = jacobian(&angles, &arm);
    let h: f64 = 1e-6;
    for k in 0..6 {
        let mut p = angles.clone();
        let mut m = angles.clone();
        p[k] += h.to_degrees();
        m[k] -= h.to_degrees();
        let (ep, em) = (forward_kinematics(&p, &arm)[6], forward_kinematics(&m, &arm)[6]);
        for c in 0..2 {
            assert!(((ep[c] - em[c]) / (2.0 * h) - jac[(c, k)]).abs() < 1e-6);
        }
    }
}

#[test]
fn zero_length_links_render_base_disc() {
    let arm = ArmSpec { link_lengths: vec![0.0; 3], link_thickness: 4.0, ..Default::default() };
    let mask = render_mask(&[10.0, 20.0, 30.0], &arm).unwrap();
    let s = arm.pixels_per_cm;
    let [bx, by] = arm.base_position;
    for row in 0..arm.height {
        for col in 0..arm.width {
            let x = (col as f64 + 0.5) / s - bx;
            let y = (arm.height as f64 - row as f64 - 0.5) / s - by;
            assert_eq!(mask[row * arm.width + col] == 1, x * x + y * y <= 4.0);
        }
    }
}

#[test]
fn capsule_area_matches_analytic_value() {
    // thick enough in pixels that edge quantization stays inside the tolerance
    for (l, w, ppcm) in [(10.0, 1.5, 8.0), (15.0, 3.0, 4.0), (8.0, 2.0, 6.0)] {
        let arm = ArmSpec {
            link_lengths: vec![l],
            link_thickness: w,
            base_position: [15.13, 20.07],
            pixels_per_cm: ppcm,
            height: (40.0 * ppcm) as usize,
            width: (40.0 * ppcm) as usize,
        };
        let area = render_mask(&[0.0], &arm).unwrap().iter().filter(|&&v| v == 1).count() as f64;
        let expected = (l * w + std::f64::consts::PI * (w / 2.0).powi(2)) * ppcm * ppcm;
        assert!((area - expected).abs() <= 0.05 * expected, "{area} vs {expected}");
    }
}

#[test]
fn reflections_of_the_arm_reflect_the_mask() {
    let arm = ArmSpec::default();
    let (h, w) = (arm.height, arm.width);
    let mut r = rng(8);
    for _ in 0..10 {
        let angles: Vec<f64> = (0..6).map(|_| r.random_range(-120.0..120.0)).collect();
        let mask = render_mask(&angles, &arm).unwrap();
        let negated: Vec<f64> = angles.iter().map(|a| -a).collect();
        let mirrored = render_mask(&negated, &arm).unwrap();
        let mut flipped = angles.clone();
        flipped[0] += 180.0;
        let rotated = render_mask(&flipped, &arm).unwrap();
        let (mut mirror_diff, mut rot_diff) = (0, 0);
        for row in 0..h {
            for col in 0..w {
                let v = mask[row * w + col];
                mirror_diff += usize::from(v != mirrored[(h - 1 - row) * w + col]);
                rot_diff += usize::from(v != rotated[(h - 1 - row) * w + (w - 1 - col)]);
            }
        }
        let area = mask.iter().filter(|&&v| v == 1).count();
        // exact up to pixels whose centre lies on a capsule boundary
        assert!(mirror_diff * 100 <= area, "{mirror_diff} of {area}");
        assert!(rot_diff * 100 <= area, "{rot_diff} of {area}");
    }
}

#[test]
fn arm_leaving_the_frame_is_reported_with_its_frame() {
    let arm = ArmSpec { base_position: [24.0, 24.0], link_lengths: vec![10.0, 10.0], ..Default::default() };
    let angles = vec![vec![90.0, 0.0], vec![0.0, 0.0]];
    let narrow = ArmSpec { width: 60, ..arm };
    assert!(matches!(render_cycle(&angles, &narrow), Err(Error::ArmOutOfFrame { frame: 1 })));
    assert!(narrow.validate().is_err());
}

#[test]
fn mask_area_changes_slowly_along_the_task() {
    let cfg = SimConfig::default();
    let task = cfg.task(1).unwrap();
    let masks = render_cycle(&task, &cfg.arm).unwrap();
    let areas: Vec<i64> = masks.iter().map(|m| m.iter().map(|&v| v as i64).sum()).collect();
    // Each link point moves at most (distance to base) * slew per frame; the
    // swept band of a capsule boundary is bounded by its perimeter times that.
    let slew = cfg.trajectory.max_slew.to_radians() * cfg.arm.joints() as f64;
    let s = cfg.arm.pixels_per_cm;
    let perimeter: f64 = cfg.arm.link_lengths.iter().map(|l| 2.0 * l + std::f64::consts::PI * cfg.arm.link_thickness).sum();
    let bound = (perimeter * cfg.arm.reach() * slew * s * s + perimeter * s) as i64;
    for t in 0..areas.len() {
        let d = (areas[(t + 1) % areas.len()] - areas[t]).abs();
        assert!(d <= bound, "frame {t}: area change {d} > {bound}");
    }
}

#[test]
fn zero_displacement_gives_zero_increment() {
    let arm = ArmSpec::default();
    let d = perturb_for_displacement(&[70.0, 20.0, -30.0, 10.0, 5.0, 0.0], &arm, 0.0, DOWNWARD).unwrap();
    assert_eq!(d, DVector::zeros(6));
    assert!(perturb_for_displacement(&[0.0; 6], &arm, arm.reach(), DOWNWARD).is_err());
    assert!(perturb_for_displacement(&[0.0; 6], &arm, 1.0, [1.0, 1.0]).is_err());
}

#[test]
fn displacement_is_achieved_on_random_configurations() {
    let arm = ArmSpec::default();
    let mut r = rng(9);
    let mut tested = 0;
    while tested < 1000 {
        let angles: Vec<f64> = (0..6).map(|_| r.random_range(-150.0..150.0)).collect();
        let d = [0.2, 0.5, 1.0, 5.0][tested % 4];
        let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let dir = [theta.cos(), theta.sin()];
        let p = forward_kinematics(&angles, &arm)[6];
        let goal = ((p[0] + d * dir[0] - arm.base_position[0]).powi(2) + (p[1] + d * dir[1] - arm.base_position[1]).powi(2)).sqrt();
        if goal > 0.9 * arm.reach() {
            continue;
        }
        let delta = match perturb_for_displacement(&angles, &arm, d, dir) {
            Ok(v) => v,
            Err(Error::SingularJacobian { .. }) => continue,
            Err(e) => panic!("{e} at {angles:?}"),
        };
        let moved: Vec<f64> = angles.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let (p0, p1) = (forward_kinematics(&angles, &arm)[6], forward_kinematics(&moved, &arm)[6]);
        let shift = [p1[0] - p0[0], p1[1] - p0[1]];
        let err = ((shift[0] - d * dir[0]).powi(2) + (shift[1] - d * dir[1]).powi(2)).sqrt();
        assert!(err <= 0.02 * d, "d={d}: error {err}");
        tested += 1;
    }
}

/// Moore-Penrose pseudoinverse from the SVD, independent of the solver's
/// damped normal equations.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let s_inv = DMatrix::from_diagonal(&svd.singular_values.map(|s| if s > 1e-12 { 1.0 / s } else { 0.0 }));
    svd.v_t.unwrap().transpose() * s_inv * svd.u.unwrap().transpose()
}

#[test]
fn displacement_increment_is_minimum_norm() {
    let arm = ArmSpec::default();
    let mut r = rng(10);
    for _ in 0..50 {
        let angles: Vec<f64> = (0..6).map(|_| r.random_range(-120.0..120.0)).collect();
        let d = 0.05;
        let delta = perturb_for_displacement(&angles, &arm, d, DOWNWARD).unwrap().map(f64::to_radians);
        let jac = jacobian(&angles, &arm);
        let target = DVector::from_vec(vec![0.0, -d]);
        let oracle = pinv(&jac) * &target;
        assert!((&delta - &oracle).norm() <= 0.02 * oracle.norm());
        // other solutions of the linearized problem are longer
        let null = DMatrix::identity(6, 6) - pinv(&jac) * &jac;
        for _ in 0..10 {
            let z = DVector::from_fn(6, |_, _| r.random_range(-1.0..1.0)) * oracle.norm();
            let other = &oracle + &null * z;
            assert!((&jac * &other - &target).norm() < 1e-9);
            assert!(other.norm() >= delta.norm() * 0.98);
        }
    }
}

fn attack_fixture(d: f64) -> (SimConfig, CycleData, CycleData, AttackSpec) {
    let cfg = small_config();
    let task = cfg.task(11).unwrap();
    let masks = render_cycle(&task, &cfg.arm).unwrap();
    let nominal = nominal_cycle("live", &cfg, &task, &masks, 100).unwrap();
    let recorded = nominal_cycle("rec", &cfg, &task, &masks, 101).unwrap();
    let spec = AttackSpec::standard(cfg.frames, d);
    (cfg, nominal, recorded, spec)
}

#[test]
fn null_attack_changes_nothing() {
    let (cfg, nominal, recorded, _) = attack_fixture(0.0);
    let spec = AttackSpec { onset: 5, replay_shift: 0, deviation_cm: 0.0, ramp_frames: 3 };
    let out = apply_replay_attack(&nominal, &recorded, &spec, &cfg.arm).unwrap();
    assert_eq!(out.reported_angles, nominal.reported_angles);
    assert_eq!(out.true_angles, nominal.true_angles);
    assert_eq!(out.masks, nominal.masks);
}

#[test]
fn replay_attack_replays_and_displaces() {
    let (cfg, nominal, recorded, spec) = attack_fixture(5.0);
    let out = apply_replay_attack(&nominal, &recorded, &spec, &cfg.arm).unwrap();
    let t_len = cfg.frames;
    for t in 0..t_len {
        if t < spec.onset {
            assert_eq!(out.reported_angles[t], nominal.reported_angles[t]);
            assert_eq!(out.true_angles[t], nominal.true_angles[t]);
            assert_eq!(out.masks[t], nominal.masks[t]);
        } else {
            // one-cycle shift: the same phase of the recorded cycle, bit for bit
            assert_eq!(out.reported_angles[t], recorded.reported_angles[t]);
            assert_eq!(out.masks[t], render_mask(&out.true_angles[t], &cfg.arm).unwrap());
            let p0 = forward_kinematics(&nominal.true_angles[t], &cfg.arm)[6];
            let p1 = forward_kinematics(&out.true_angles[t], &cfg.arm)[6];
            let want = 5.0 * spec.ramp(t);
            assert!((p1[1] - p0[1] + want).abs() <= 0.02 * want, "frame {t}");
            assert!((p1[0] - p0[0]).abs() <= 0.02 * want);
        }
    }
    assert_ne!(out.masks[t_len - 1], nominal.masks[t_len - 1]);

    let short = AttackSpec { replay_shift: 7, ..spec.clone() };
    let out = apply_replay_attack(&nominal, &recorded, &short, &cfg.arm).unwrap();
    for t in spec.onset..t_len {
        assert_eq!(out.reported_angles[t], nominal.reported_angles[t - 7]);
    }
    let bad = AttackSpec { replay_shift: t_len + spec.onset + 1, ..spec.clone() };
    assert!(apply_replay_attack(&nominal, &recorded, &bad, &cfg.arm).is_err());
    let bad = AttackSpec { onset: 0, ..spec };
    assert!(apply_replay_attack(&nominal, &recorded, &bad, &cfg.arm).is_err());
}

#[test]
fn nominal_replications_differ_only_by_encoder_noise() {
    let cfg = SimConfig::default();
    let task = cfg.task(2).unwrap();
    let masks = render_cycle(&task, &cfg.arm).unwrap();
    let a = nominal_cycle("a", &cfg, &task, &masks, 1).unwrap();
    let b = nominal_cycle("b", &cfg, &task, &masks, 2).unwrap();
    assert_eq!(a.true_angles, b.true_angles);
    assert_eq!(a.masks, b.masks);
    let noise: Vec<f64> = a
        .reported_angles
        .iter()
        .zip(&a.true_angles)
        .flat_map(|(r, t)| r.iter().zip(t).map(|(x, y)| x - y))
        .collect();
    let sd = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt();
    assert!((sd / cfg.encoder_noise - 1.0).abs() < 0.05, "{sd}");
    assert_eq!(a.mask_tensor::<f64>().dims(), &[240, 96, 96]);
}

fn three_cycle_dataset() -> (DatasetManifest, Vec<CycleData>) {
    let (cfg, nominal, recorded, spec) = attack_fixture(1.0);
    let attacked = CycleData { id: "hit".into(), ..apply_replay_attack(&nominal, &recorded, &spec, &cfg.arm).unwrap() };
    let cycles = vec![nominal, recorded, attacked];
    let entries = cycles
        .iter()
        .map(|c| CycleEntry {
            id: c.id.clone(),
            role: if c.attack.is_some() { CycleRole::Attack } else { CycleRole::Nominal },
            seed: c.seed,
            attack: c.attack.clone(),
            recorded_seed: c.attack.as_ref().map(|_| 101),
        })
        .collect();
    let manifest = DatasetManifest {
        joints: 6,
        frames: cfg.frames,
        height: 96,
        width: 96,
        producer: crate::producer(),
        config_hash: None,
        cycles: entries,
    };
    (manifest, cycles)
}

#[test]
fn dataset_round_trip() {
    let (manifest, cycles) = three_cycle_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &manifest, &cycles, true).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, manifest);
    assert_eq!(back.cycles, cycles);
    assert_eq!(back.cycle("hit").unwrap().attack, cycles[2].attack);
    assert!(matches!(back.cycle("nope"), Err(Error::UnknownCycle(_))));
    let packed = crate::tensor::read_ten::<f64>(dir.path().join("cycles/hit/masks.ten")).unwrap();
    assert_eq!(packed, cycles[2].mask_tensor::<f64>());
}

#[test]
fn masks_reload_with_an_independent_decoder() {
    let (manifest, cycles) = three_cycle_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &manifest, &cycles, false).unwrap();
    let img = image::open(dir.path().join("cycles/live/masks/frame_00003.png")).unwrap();
    let gray = img.as_luma8().expect("8-bit grayscale");
    assert_eq!(gray.dimensions(), (96, 96));
    for (x, y, p) in gray.enumerate_pixels() {
        let want = cycles[0].masks[3][y as usize * 96 + x as usize] * 255;
        assert_eq!(p.0[0], want);
    }
}

#[test]
fn frame_count_mismatch_names_the_cycle() {
    let (manifest, cycles) = three_cycle_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &manifest, &cycles, false).unwrap();
    std::fs::remove_file(dir.path().join("cycles/rec/masks/frame_00010.png")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("rec"), "{err}");

    let mut wrong = manifest.clone();
    wrong.frames += 1;
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &manifest, &cycles, false).unwrap();
    std::fs::write(dir.path().join("manifest.json"), serde_json::to_string(&wrong).unwrap()).unwrap();
    assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("live"));
}
