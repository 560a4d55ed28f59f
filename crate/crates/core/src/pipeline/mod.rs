//! End-to-end stages: simulate, fit, detect, bench and report.

mod bench;
mod config;

pub use bench::{cmd_bench, cmd_report, render_bench, BenchRow, BenchSummary, FitRow};
pub use config::{DatasetConfig, DetectorSettings, Overrides, Paths, RunConfig};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{
    fit_iid, load_iid_model, save_iid_model, write_report_csv, DetectionReport, DetectorConfig, IidModel,
    OnlineDetector, ResidualKind, ResidualPredictor,
};
use crate::error::{shape_err, Error, Result};
use crate::mvgp::{load_mvgp_model, save_mvgp_model, MvgpFitTrace, MvgpModel};
use crate::sim::{
    apply_replay_attack, nominal_cycle, read_dataset, render_cycle, stream_rng, write_dataset, AttackSpec,
    CycleData, CycleEntry, CycleRole, Dataset, DatasetManifest,
};
use crate::tr::{accuracy, fit as fit_tr, load_tr_model, save_tr_model, Accuracy, FitTrace, TrModel};
use crate::{producer, write_json};

const NOMINAL_STREAM: u64 = 1 << 20;
const HOLDOUT_STREAM: u64 = 2 << 20;
const LIVE_STREAM: u64 = 3 << 20;
const RECORDED_STREAM: u64 = 4 << 20;

fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}

pub fn attack_id(severity: f64, replication: usize) -> String {
    format!("replay-{severity}cm-{replication}")
}

/// Generates the nominal, hold-out and attacked cycles and writes them to
/// the dataset directory.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<DatasetManifest> {
    let sim = &cfg.sim;
    let ds = &cfg.dataset;
    let task = sim.task(cfg.seed)?;
    let masks = render_cycle(&task, &sim.arm)?;
    let frames = sim.frames;

    let mut entries = Vec::new();
    let mut cycles = Vec::new();
    for (role, stream, count, prefix) in [
        (CycleRole::Nominal, NOMINAL_STREAM, ds.nominal, "nominal"),
        (CycleRole::Holdout, HOLDOUT_STREAM, ds.holdout, "holdout"),
    ] {
        for i in 0..count {
            let seed = derive_seed(cfg.seed, stream + i as u64);
            let c = nominal_cycle(format!("{prefix}-{i:02}"), sim, &task, &masks, seed)?;
            entries.push(CycleEntry { id: c.id.clone(), role, seed, attack: None, recorded_seed: None });
            cycles.push(c);
        }
    }

    let jobs: Vec<(f64, usize, u64)> = ds
        .severities
        .iter()
        .flat_map(|&s| (0..ds.attacked_replications).map(move |r| (s, r)))
        .enumerate()
        .map(|(k, (s, r))| (s, r, k as u64))
        .collect();
    let attacked = jobs
        .par_iter()
        .map(|&(severity, r, k)| -> Result<(CycleEntry, CycleData)> {
            let live_seed = derive_seed(cfg.seed, LIVE_STREAM + k);
            let rec_seed = derive_seed(cfg.seed, RECORDED_STREAM + k);
            let id = attack_id(severity, r);
            let live = nominal_cycle(id.clone(), sim, &task, &masks, live_seed)?;
            let recorded = nominal_cycle("recorded", sim, &task, &masks, rec_seed)?;
            let spec = AttackSpec {
                onset: ds.onset.unwrap_or(frames / 2),
                replay_shift: ds.replay_shift.unwrap_or(frames),
                deviation_cm: severity,
                ramp_frames: ds.ramp_frames,
            };
            let c = apply_replay_attack(&live, &recorded, &spec, &sim.arm)?;
            let entry = CycleEntry {
                id,
                role: CycleRole::Attack,
                seed: live_seed,
                attack: Some(spec),
                recorded_seed: Some(rec_seed),
            };
            Ok((entry, c))
        })
        .collect::<Result<Vec<_>>>()?;
    for (e, c) in attacked {
        entries.push(e);
        cycles.push(c);
    }

    let manifest = DatasetManifest {
        joints: sim.arm.joints(),
        frames,
        height: sim.arm.height,
        width: sim.arm.width,
        producer: producer(),
        config_hash: Some(cfg.hash()),
        cycles: entries,
    };
    let dir = &cfg.paths.dataset;
    let stale = dir.join("cycles");
    if stale.exists() {
        std::fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(dir, &manifest, &cycles, ds.pack_tensors)?;
    log::info!("wrote {} cycles to {}", cycles.len(), dir.display());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub producer: String,
    pub config_hash: String,
    pub training_cycles: Vec<String>,
    pub tr: FitTrace,
    pub tr_accuracy: Accuracy,
    pub mvgp: MvgpFitTrace,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = &cfg.paths.dataset;
    if !dir.join("manifest.json").is_file() {
        return Err(Error::io(
            dir.join("manifest.json"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found; run simulate first"),
        ));
    }
    read_dataset(dir)
}

/// Fits the vision estimator on the nominal cycles, then both residual
/// models on its in-sample residuals.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitReport> {
    let data = load_dataset(cfg)?;
    let nominal = data.with_role(CycleRole::Nominal);
    if nominal.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no nominal cycles", cfg.paths.dataset.display())));
    }
    let masks: Vec<_> = nominal.iter().map(|c| c.mask_tensor::<f64>()).collect();
    let angles: Vec<DMatrix<f64>> = nominal.iter().map(|c| c.reported_matrix()).collect();
    let (tr, tr_trace) = fit_tr(&masks, &angles, &cfg.train)?;
    let tr_accuracy = accuracy(&tr, &masks, &angles)?;
    log::info!("vision estimator training RMSE {:.4} deg", tr_accuracy.mean_rmse);
    let residuals = masks
        .iter()
        .zip(&angles)
        .map(|(m, a)| tr.cycle_residuals(m, a))
        .collect::<Result<Vec<_>>>()?;
    drop(masks);
    let (mvgp, mvgp_trace) = MvgpModel::fit(&residuals, &cfg.mvgp)?;
    let iid = fit_iid(&residuals)?;

    let dir = &cfg.paths.models;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_tr_model(dir.join("tr"), &tr, &cfg.train)?;
    save_mvgp_model(dir.join("mvgp"), &mvgp)?;
    save_iid_model(&dir.join("iid_model.json"), &iid)?;
    let report = FitReport {
        producer: producer(),
        config_hash: cfg.hash(),
        training_cycles: nominal.iter().map(|c| c.id.clone()).collect(),
        tr: tr_trace,
        tr_accuracy,
        mvgp: mvgp_trace,
    };
    write_json(dir.join("fit_trace.json"), &report)?;
    Ok(report)
}

/// The three fitted models.
pub struct Models {
    pub tr: TrModel<f64>,
    pub mvgp: MvgpModel,
    pub iid: IidModel,
}

impl Models {
    pub fn load(dir: &Path) -> Result<Self> {
        let (tr, _) = load_tr_model::<f64>(dir.join("tr"))?;
        let mvgp = load_mvgp_model(dir.join("mvgp"))?;
        let iid = load_iid_model(&dir.join("iid_model.json"))?;
        Ok(Self { tr, mvgp, iid })
    }

    pub fn predictor(&self, kind: ResidualKind) -> Result<ResidualPredictor> {
        match kind {
            ResidualKind::Mvgp => ResidualPredictor::from_mvgp(&self.mvgp),
            ResidualKind::Iid => ResidualPredictor::from_iid(&self.iid),
        }
    }

    fn check(&self, m: &DatasetManifest) -> Result<()> {
        let tr = &self.tr;
        if (tr.joints(), tr.height(), tr.width()) != (m.joints, m.height, m.width) {
            return Err(shape_err(format!(
                "models expect J={} H={} W={}, dataset has J={} H={} W={}",
                tr.joints(),
                tr.height(),
                tr.width(),
                m.joints,
                m.height,
                m.width
            )));
        }
        if self.mvgp.frames() != m.frames {
            log::warn!("residual model has {} frames, dataset cycles have {}", self.mvgp.frames(), m.frames);
        }
        Ok(())
    }
}

/// Streams one cycle frame by frame through a fresh detector.
pub fn run_cycle(
    tr: &TrModel<f64>,
    predictor: &ResidualPredictor,
    config: DetectorConfig,
    cycle: &CycleData,
) -> Result<DetectionReport> {
    let mut det = OnlineDetector::new(tr, predictor, config)?;
    let mut mask = vec![0.0; cycle.height * cycle.width];
    for (t, (m, reported)) in cycle.masks.iter().zip(&cycle.reported_angles).enumerate() {
        mask.iter_mut().zip(m).for_each(|(d, &s)| *d = f64::from(s));
        det.step(t, &mask, &DVector::from_column_slice(reported))?;
    }
    Ok(det.report(cycle.attack.as_ref().map(|a| a.onset)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectFile {
    pub producer: String,
    pub config_hash: String,
    pub cycle: String,
    #[serde(flatten)]
    pub report: DetectionReport,
}

/// Runs the configured detector over one dataset cycle and writes the
/// report as JSON and CSV.
pub fn cmd_detect(cfg: &RunConfig, cycle_id: &str) -> Result<DetectionReport> {
    let data = load_dataset(cfg)?;
    let cycle = data.cycle(cycle_id)?;
    let models = Models::load(&cfg.paths.models)?;
    models.check(&data.manifest)?;
    let kind = cfg.detector.mode;
    let predictor = models.predictor(kind)?;
    let dcfg = DetectorConfig::new(cfg.detector.alpha, data.manifest.joints, kind)?;
    let report = run_cycle(&models.tr, &predictor, dcfg, cycle)?;
    let dir = &cfg.paths.reports;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = format!("detect-{cycle_id}-{}", mode_name(kind));
    let file = DetectFile {
        producer: producer(),
        config_hash: cfg.hash(),
        cycle: cycle_id.to_string(),
        report: report.clone(),
    };
    write_json(dir.join(format!("{stem}.json")), &file)?;
    write_report_csv(&dir.join(format!("{stem}.csv")), &report)?;
    Ok(report)
}

pub fn mode_name(kind: ResidualKind) -> &'static str {
    match kind {
        ResidualKind::Mvgp => "mvgp",
        ResidualKind::Iid => "iid",
    }
}
