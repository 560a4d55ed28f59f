use vistr_core::detect::ResidualKind;
use vistr_core::mvgp::empirical_mean;
use vistr_core::pipeline::{cmd_detect, cmd_fit, cmd_simulate, Models, Overrides, RunConfig};
use vistr_core::sim::{read_dataset, CycleRole};
use vistr_core::Error;

fn small_config(root: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sim.frames = 60;
    cfg.dataset.nominal = 4;
    cfg.dataset.holdout = 1;
    cfg.dataset.severities = vec![1.0];
    cfg.dataset.attacked_replications = 1;
    cfg.resolve(&Overrides { out: Some(root.to_path_buf()), ..Default::default() }).unwrap()
}

#[test]
fn nominal_residual_spread_matches_encoder_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_simulate(&cfg).unwrap();
    let data = read_dataset(&cfg.paths.dataset).unwrap();
    let nominal: Vec<_> = data
        .manifest
        .cycles
        .iter()
        .zip(&data.cycles)
        .filter(|(e, _)| e.role == CycleRole::Nominal)
        .map(|(_, c)| c.reported_matrix())
        .collect();
    // The same task is replayed every cycle, so the spread across
    // replications is the encoder noise alone.
    let mean = empirical_mean(&nominal).unwrap();
    let n = nominal.len() as f64;
    let ss: f64 = nominal.iter().map(|c| (c - &mean).norm_squared()).sum();
    let std = (ss / ((n - 1.0) * mean.len() as f64)).sqrt();
    let sigma = cfg.sim.encoder_noise;
    assert!((std - sigma).abs() <= 0.2 * sigma, "spread {std} vs {sigma}");
}

#[test]
fn detect_names_unknown_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_simulate(&cfg).unwrap();
    cmd_fit(&cfg).unwrap();
    let err = cmd_detect(&cfg, "no-such-cycle").unwrap_err();
    assert!(err.to_string().contains("no-such-cycle"), "{err}");
    for mode in [ResidualKind::Mvgp, ResidualKind::Iid] {
        let mut c = cfg.clone();
        c.detector.mode = mode;
        let r = cmd_detect(&c, "replay-1cm-0").unwrap();
        assert_eq!(r.frames, 60);
        assert!(r.detection_delay.is_some());
    }
    let models = Models::load(&cfg.paths.models).unwrap();
    assert_eq!(models.mvgp.joints(), 6);
}

#[test]
fn fit_without_dataset_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = cmd_fit(&cfg).unwrap_err();
    assert!(err.to_string().contains("dataset"), "{err}");
    assert!(!matches!(err, Error::Config(_)));
}
