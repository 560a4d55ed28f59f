//! Streaming detector state, reports and their on-disk forms.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{factor, log_det, quad_form, DetectorConfig, IidModel, ResidualKind, SCALE_FLOOR};
use crate::error::{shape_err, Error, Result};
use crate::mvgp::MvgpModel;
use crate::tr::TrModel;
use crate::{read_json, write_json};

/// Per-frame predictive distribution `N(mean_t, scale_t * cov)` of the
/// residual, shared read-only by any number of detector streams.
#[derive(Debug, Clone)]
pub struct ResidualPredictor {
    kind: ResidualKind,
    frames: Vec<(DVector<f64>, f64)>,
    cov_chol: Cholesky<f64, Dyn>,
    cov_log_det: f64,
    mvgp: Option<MvgpModel>,
    scale_floor: f64,
}

impl ResidualPredictor {
    /// Tabulates the one-step-ahead predictive over the training grid.
    pub fn from_mvgp(model: &MvgpModel) -> Result<Self> {
        let s2 = model.kernel().signal_std.powi(2);
        let scale_floor = SCALE_FLOOR * s2;
        let frames = (0..model.frames())
            .map(|t| model.predict(t).map(|p| (p.mean, p.scale.max(scale_floor))))
            .collect::<Result<Vec<_>>>()?;
        let cov_chol = factor(model.output_cov(), "output covariance")?;
        Ok(Self {
            kind: ResidualKind::Mvgp,
            frames,
            cov_log_det: log_det(&cov_chol),
            cov_chol,
            mvgp: Some(model.clone()),
            scale_floor,
        })
    }

    pub fn from_iid(model: &IidModel) -> Result<Self> {
        let cov_chol = factor(model.cov(), "i.i.d. residual covariance")?;
        Ok(Self {
            kind: ResidualKind::Iid,
            frames: vec![(model.mean().clone(), 1.0)],
            cov_log_det: log_det(&cov_chol),
            cov_chol,
            mvgp: None,
            scale_floor: 0.0,
        })
    }

    pub fn kind(&self) -> ResidualKind {
        self.kind
    }

    pub fn joints(&self) -> usize {
        self.frames[0].0.len()
    }

    /// Predictive mean and (floored) scale at frame `t`.
    pub fn predict(&self, t: usize) -> Result<(DVector<f64>, f64)> {
        match (self.kind, &self.mvgp) {
            (ResidualKind::Iid, _) => Ok(self.frames[0].clone()),
            (ResidualKind::Mvgp, _) if t < self.frames.len() => Ok(self.frames[t].clone()),
            (ResidualKind::Mvgp, Some(m)) => {
                let p = m.predict(t)?;
                Ok((p.mean, p.scale.max(self.scale_floor)))
            }
            (ResidualKind::Mvgp, None) => Err(Error::Unfitted("residual model".into())),
        }
    }

    /// Mahalanobis statistic, negative log density and half log-determinant
    /// of residual `r` at frame `t`.
    pub fn score(&self, t: usize, r: &DVector<f64>) -> Result<FrameScore> {
        if r.len() != self.joints() {
            return Err(shape_err(format!("{} residual entries for {} joints", r.len(), self.joints())));
        }
        let (mean, scale) = self.predict(t)?;
        let g = quad_form(&self.cov_chol, &(r - mean)) / scale;
        let j = r.len() as f64;
        let log_det = j * scale.ln() + self.cov_log_det;
        Ok(FrameScore {
            g,
            nll: 0.5 * (j * (2.0 * std::f64::consts::PI).ln() + log_det + g),
            half_log_det: 0.5 * log_det,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub g: f64,
    pub nll: f64,
    pub half_log_det: f64,
}

/// Detector state for one monitored stream.
pub struct OnlineDetector<'a> {
    tr: &'a TrModel<f64>,
    predictor: &'a ResidualPredictor,
    config: DetectorConfig,
    g: Vec<f64>,
    alarms: Vec<bool>,
    nll: f64,
    log_vol: f64,
}

impl<'a> OnlineDetector<'a> {
    pub fn new(tr: &'a TrModel<f64>, predictor: &'a ResidualPredictor, config: DetectorConfig) -> Result<Self> {
        if tr.joints() != predictor.joints() || config.dof != tr.joints() {
            return Err(shape_err(format!(
                "vision model has {} joints, residual model {}, detector dof {}",
                tr.joints(),
                predictor.joints(),
                config.dof
            )));
        }
        if config.residual_model != predictor.kind() {
            return Err(Error::Config(format!(
                "detector configured for {:?} but given a {:?} residual model",
                config.residual_model,
                predictor.kind()
            )));
        }
        Ok(Self { tr, predictor, config, g: Vec::new(), alarms: Vec::new(), nll: 0.0, log_vol: 0.0 })
    }

    /// Processes frame `t`: a row-major `H x W` mask and the reported angles.
    pub fn step(&mut self, t: usize, mask: &[f64], reported: &DVector<f64>) -> Result<(f64, bool)> {
        if reported.len() != self.tr.joints() {
            return Err(shape_err(format!("{} reported angles for {} joints", reported.len(), self.tr.joints())));
        }
        let r = reported - self.tr.predict_slice(mask)?;
        self.step_residual(t, &r)
    }

    /// Same as [`step`](Self::step) for an already formed residual.
    pub fn step_residual(&mut self, t: usize, r: &DVector<f64>) -> Result<(f64, bool)> {
        let s = self.predictor.score(t, r)?;
        let alarm = s.g > self.config.threshold;
        self.g.push(s.g);
        self.alarms.push(alarm);
        self.nll += s.nll;
        self.log_vol += s.half_log_det;
        Ok((s.g, alarm))
    }

    pub fn frames(&self) -> usize {
        self.g.len()
    }

    /// Report over the frames seen so far; `onset` is the attack onset frame, if any.
    pub fn report(&self, onset: Option<usize>) -> DetectionReport {
        DetectionReport::new(&self.config, self.g.clone(), self.alarms.clone(), onset, self.nll, self.log_vol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: ResidualKind,
    pub alpha: f64,
    pub threshold: f64,
    pub frames: usize,
    pub g: Vec<f64>,
    pub alarms: Vec<bool>,
    pub onset: Option<usize>,
    /// Frames from onset to the first alarm at or after it; `None` when no alarm fires.
    pub detection_delay: Option<usize>,
    /// Fraction of post-onset frames flagged.
    pub alarm_frequency: Option<f64>,
    /// Fraction of pre-onset (or all, without an onset) frames flagged.
    pub false_alarm_rate: Option<f64>,
    pub nll: f64,
    pub log_vol: f64,
}

fn fraction(flags: &[bool]) -> Option<f64> {
    (!flags.is_empty()).then(|| flags.iter().filter(|&&a| a).count() as f64 / flags.len() as f64)
}

impl DetectionReport {
    fn new(cfg: &DetectorConfig, g: Vec<f64>, alarms: Vec<bool>, onset: Option<usize>, nll: f64, log_vol: f64) -> Self {
        let frames = g.len();
        let split = onset.unwrap_or(frames).min(frames);
        let (pre, post) = alarms.split_at(split);
        let detection_delay = onset.and_then(|_| post.iter().position(|&a| a));
        let denom = frames.max(1) as f64;
        Self {
            method: cfg.residual_model,
            alpha: cfg.alpha,
            threshold: cfg.threshold,
            frames,
            detection_delay,
            alarm_frequency: onset.and_then(|_| fraction(post)),
            false_alarm_rate: fraction(pre),
            nll: nll / denom,
            log_vol: log_vol / denom,
            g,
            alarms,
            onset,
        }
    }

    pub fn alarm_count(&self) -> usize {
        self.alarms.iter().filter(|&&a| a).count()
    }
}

/// Mean detection delay over the reports that detected, plus the miss count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub mean_delay: Option<f64>,
    pub detected: usize,
    pub missed: usize,
}

pub fn summarize_delays(reports: &[DetectionReport]) -> DelaySummary {
    let delays: Vec<usize> = reports.iter().filter_map(|r| r.detection_delay).collect();
    let attacked = reports.iter().filter(|r| r.onset.is_some()).count();
    DelaySummary {
        mean_delay: (!delays.is_empty()).then(|| delays.iter().sum::<usize>() as f64 / delays.len() as f64),
        detected: delays.len(),
        missed: attacked - delays.len(),
    }
}

/// `t,g,alarm` rows for plotting.
pub fn write_report_csv(path: &Path, report: &DetectionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["t", "g", "alarm"]).map_err(err)?;
    for (t, (g, a)) in report.g.iter().zip(&report.alarms).enumerate() {
        w.write_record([t.to_string(), g.to_string(), u8::from(*a).to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct IidFile {
    joints: usize,
    mean: Vec<f64>,
    /// Row-major `J x J`.
    cov: Vec<f64>,
}

pub fn save_iid_model(path: &Path, model: &IidModel) -> Result<()> {
    let j = model.joints();
    let file = IidFile {
        joints: j,
        mean: model.mean().iter().copied().collect(),
        cov: model.cov().transpose().iter().copied().collect(),
    };
    write_json(path, &file)
}

pub fn load_iid_model(path: &Path) -> Result<IidModel> {
    let f: IidFile = read_json(path)?;
    if f.mean.len() != f.joints || f.cov.len() != f.joints * f.joints {
        return Err(Error::Format(format!("{}: inconsistent i.i.d. model shapes", path.display())));
    }
    IidModel::new(DVector::from_vec(f.mean), DMatrix::from_row_slice(f.joints, f.joints, &f.cov))
}
