//! Smooth periodic joint trajectories for the repeated task.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    /// Centre angle ranges (degrees) for the first joint and for the rest.
    pub base_center: [f64; 2],
    pub joint_center: [f64; 2],
    /// Peak deviation from the centre per joint, degrees.
    pub amplitude: f64,
    /// Per-joint limits, degrees; every sample must stay inside.
    pub limits: [f64; 2],
    pub max_slew: f64,
    pub harmonics: [usize; 2],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            base_center: [60.0, 120.0],
            joint_center: [-35.0, 35.0],
            amplitude: 20.0,
            limits: [-170.0, 170.0],
            max_slew: 2.0,
            harmonics: [2, 4],
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.limits;
        let within = |r: [f64; 2]| r[0] <= r[1] && r[0] - self.amplitude >= lo && r[1] + self.amplitude <= hi;
        if !(self.amplitude >= 0.0 && self.max_slew > 0.0) {
            return Err(Error::Config("trajectory amplitude and slew limit must be positive".into()));
        }
        if !within(self.base_center) || !within(self.joint_center) {
            return Err(Error::Config(format!(
                "joint centres +/- amplitude {} exceed limits {:?}",
                self.amplitude, self.limits
            )));
        }
        if self.harmonics[0] == 0 || self.harmonics[0] > self.harmonics[1] {
            return Err(Error::Config(format!("invalid harmonic range {:?}", self.harmonics)));
        }
        Ok(())
    }
}

/// `T x J` angles in degrees, row-major by frame. Each joint is a centre
/// plus a sum of seeded harmonics of the cycle period, rescaled so that
/// the largest frame-to-frame step (wrap-around included) respects the
/// slew limit.
pub fn gen_trajectory<R: Rng>(joints: usize, frames: usize, cfg: &TrajectoryConfig, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if frames < 2 || joints == 0 {
        return Err(Error::InvalidArgument(format!("need T >= 2 and J >= 1, got T={frames}, J={joints}")));
    }
    let tau = std::f64::consts::TAU;
    let mut out = vec![vec![0.0; joints]; frames];
    for j in 0..joints {
        let [c0, c1] = if j == 0 { cfg.base_center } else { cfg.joint_center };
        let center = rng.random_range(c0..=c1);
        let count = rng.random_range(cfg.harmonics[0]..=cfg.harmonics[1]);
        let terms: Vec<(f64, f64, f64)> = (0..count)
            .map(|h| {
                let order = (h + 1) as f64;
                (rng.random_range(0.3..1.0) / order, order, rng.random_range(0.0..tau))
            })
            .collect();
        let wave: Vec<f64> = (0..frames)
            .map(|t| {
                let s = t as f64 / frames as f64;
                terms.iter().map(|&(a, k, p)| a * (tau * k * s + p).sin()).sum()
            })
            .collect();
        let peak = wave.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let step = (0..frames).fold(0.0f64, |m, t| m.max((wave[(t + 1) % frames] - wave[t]).abs()));
        let mut gain = if peak > 0.0 { cfg.amplitude / peak } else { 0.0 };
        if step * gain > cfg.max_slew {
            gain = cfg.max_slew / step * (1.0 - 1e-9);
        }
        for (row, v) in out.iter_mut().zip(&wave) {
            row[j] = center + gain * v;
        }
    }
    Ok(out)
}
