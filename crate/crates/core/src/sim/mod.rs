//! Synthetic work cell: a planar arm repeating one task, its rendered
//! silhouettes, encoder readings, and replay attacks on the encoder stream.

mod arm;
mod attack;
mod dataset;
mod trajectory;

pub use arm::{forward_kinematics, jacobian, perturb_for_displacement, render_mask, ArmSpec, Mask};
pub use attack::{apply_replay_attack, AttackSpec, DOWNWARD};
pub use dataset::{read_dataset, write_dataset, CycleEntry, CycleRole, Dataset, DatasetManifest};
pub use trajectory::{gen_trajectory, TrajectoryConfig};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::DenseTensor;

/// Seeded generator for one named stream derived from a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One replication of the task: silhouettes plus true and reported angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleData {
    pub id: String,
    /// `T` masks, each row-major `H x W` with values in `{0, 1}`.
    pub masks: Vec<Mask>,
    pub height: usize,
    pub width: usize,
    /// `T x J` degrees.
    pub true_angles: Vec<Vec<f64>>,
    pub reported_angles: Vec<Vec<f64>>,
    pub attack: Option<AttackSpec>,
    pub seed: u64,
}

impl CycleData {
    pub fn frames(&self) -> usize {
        self.true_angles.len()
    }

    pub fn joints(&self) -> usize {
        self.true_angles.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        let j = self.joints();
        if self.masks.len() != t || self.reported_angles.len() != t {
            return Err(shape_err(format!(
                "cycle {}: {} masks, {} true rows, {} reported rows",
                self.id,
                self.masks.len(),
                t,
                self.reported_angles.len()
            )));
        }
        if self.true_angles.iter().chain(&self.reported_angles).any(|r| r.len() != j) {
            return Err(shape_err(format!("cycle {}: ragged angle rows", self.id)));
        }
        let px = self.height * self.width;
        if self.masks.iter().any(|m| m.len() != px || m.iter().any(|&v| v > 1)) {
            return Err(shape_err(format!("cycle {}: masks must be binary {}x{}", self.id, self.height, self.width)));
        }
        Ok(())
    }

    /// `T x H x W` mask stack.
    pub fn mask_tensor<T: Scalar>(&self) -> DenseTensor<T> {
        let data = self.masks.iter().flatten().map(|&v| if v == 0 { T::zero() } else { T::one() }).collect();
        DenseTensor::new(vec![self.frames(), self.height, self.width], data).expect("mask shapes validated")
    }

    pub fn reported_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.reported_angles)
    }

    pub fn true_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.true_angles)
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |t, j| rows[t][j])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub arm: ArmSpec,
    pub trajectory: TrajectoryConfig,
    pub frames: usize,
    /// Encoder noise standard deviation, degrees.
    pub encoder_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { arm: ArmSpec::default(), trajectory: TrajectoryConfig::default(), frames: 240, encoder_noise: 0.05 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        self.trajectory.validate()?;
        if self.frames < 2 {
            return Err(Error::Config(format!("need at least 2 frames per cycle, got {}", self.frames)));
        }
        if !(self.encoder_noise.is_finite() && self.encoder_noise >= 0.0) {
            return Err(Error::Config(format!("encoder noise {}", self.encoder_noise)));
        }
        Ok(())
    }

    /// The shared task trajectory for master seed `seed`.
    pub fn task(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        gen_trajectory(self.arm.joints(), self.frames, &self.trajectory, &mut stream_rng(seed, 0))
    }
}

/// Renders every frame of `angles`, in parallel, tagging errors with the frame index.
pub fn render_cycle(angles: &[Vec<f64>], arm: &ArmSpec) -> Result<Vec<Mask>> {
    angles
        .par_iter()
        .enumerate()
        .map(|(t, a)| {
            render_mask(a, arm).map_err(|e| match e {
                Error::ArmOutOfFrame { .. } => Error::ArmOutOfFrame { frame: t },
                other => other,
            })
        })
        .collect()
}

/// A nominal replication: the shared task trajectory, its silhouettes and
/// encoder readings with i.i.d. Gaussian noise drawn from `noise_seed`.
pub fn nominal_cycle(
    id: impl Into<String>,
    cfg: &SimConfig,
    task: &[Vec<f64>],
    masks: &[Mask],
    noise_seed: u64,
) -> Result<CycleData> {
    let noise = Normal::new(0.0, cfg.encoder_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let reported = task
        .iter()
        .map(|row| row.iter().map(|a| a + noise.sample(&mut rng)).collect())
        .collect();
    let c = CycleData {
        id: id.into(),
        masks: masks.to_vec(),
        height: cfg.arm.height,
        width: cfg.arm.width,
        true_angles: task.to_vec(),
        reported_angles: reported,
        attack: None,
        seed: noise_seed,
    };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests;
