//! Replay attack: the encoder stream is replaced by a recording while the
//! arm is covertly pushed off its nominal path.

use serde::{Deserialize, Serialize};

use super::arm::{perturb_for_displacement, ArmSpec};
use super::{render_cycle, CycleData};
use crate::error::{shape_err, Error, Result};

/// Image-plane "down": negative y.
pub const DOWNWARD: [f64; 2] = [0.0, -1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "replay")]
pub struct AttackSpec {
    pub onset: usize,
    /// Frames between the replayed reading and the moment it was recorded.
    pub replay_shift: usize,
    pub deviation_cm: f64,
    pub ramp_frames: usize,
}

impl AttackSpec {
    /// Onset at mid-cycle, one-cycle replay shift and a 10-frame ramp.
    pub fn standard(frames: usize, deviation_cm: f64) -> Self {
        Self { onset: frames / 2, replay_shift: frames, deviation_cm, ramp_frames: 10 }
    }

    /// Fraction of the full deviation applied at frame `t`.
    pub fn ramp(&self, t: usize) -> f64 {
        if t < self.onset {
            0.0
        } else if self.ramp_frames == 0 {
            1.0
        } else {
            ((t - self.onset + 1) as f64 / self.ramp_frames as f64).min(1.0)
        }
    }
}

/// Applies `spec` to a nominal cycle.
///
/// The attacker's recording is `recorded` followed by the live cycle, so
/// from the onset on the reported frame `t` is the recording at `t - shift`
/// (indices below zero fall into `recorded`). True angles gain the joint
/// increment that moves the end-effector down by the ramped deviation, and
/// the masks are re-rendered from them.
pub fn apply_replay_attack(nominal: &CycleData, recorded: &CycleData, spec: &AttackSpec, arm: &ArmSpec) -> Result<CycleData> {
    nominal.validate()?;
    recorded.validate()?;
    let t_len = nominal.frames();
    if recorded.frames() != t_len || recorded.joints() != nominal.joints() {
        return Err(shape_err(format!("recorded cycle {} does not match cycle {}", recorded.id, nominal.id)));
    }
    if spec.onset < 1 || spec.onset > t_len {
        return Err(Error::InvalidArgument(format!("attack onset {} outside [1, {t_len}]", spec.onset)));
    }
    if spec.replay_shift > t_len + spec.onset {
        return Err(Error::InvalidArgument(format!(
            "replay shift {} reaches before the recording",
            spec.replay_shift
        )));
    }
    if !(spec.deviation_cm >= 0.0) {
        return Err(Error::InvalidArgument(format!("deviation {} cm", spec.deviation_cm)));
    }
    let mut out = nominal.clone();
    out.attack = Some(spec.clone());
    for t in spec.onset..t_len {
        let src = t_len + t - spec.replay_shift;
        out.reported_angles[t] = if src < t_len {
            recorded.reported_angles[src].clone()
        } else {
            nominal.reported_angles[src - t_len].clone()
        };
        let d = spec.deviation_cm * spec.ramp(t);
        let delta = perturb_for_displacement(&nominal.true_angles[t], arm, d, DOWNWARD).map_err(|e| match e {
            Error::SingularJacobian { .. } => Error::SingularJacobian { frame: t },
            other => other,
        })?;
        for (a, d) in out.true_angles[t].iter_mut().zip(delta.iter()) {
            *a += d;
        }
    }
    if spec.onset < t_len {
        let masks = render_cycle(&out.true_angles[spec.onset..], arm).map_err(|e| match e {
            Error::ArmOutOfFrame { frame } => Error::ArmOutOfFrame { frame: frame + spec.onset },
            other => other,
        })?;
        out.masks.splice(spec.onset.., masks);
    }
    Ok(out)
}
