//! Persisted residual model: `mvgp_model.json` plus `.ten` payloads for the
//! mean curve, output covariance and conditioning matrix.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConditioningMode, MvgpModel, SeKernel};
use crate::error::{Error, Result};
use crate::tensor::{read_ten, write_ten, DenseTensor};

pub const MANIFEST: &str = "mvgp_model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvgpManifest {
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "J")]
    pub joints: usize,
    #[serde(rename = "N")]
    pub replications: usize,
    pub kernel: SeKernel,
    pub sigma2: f64,
    pub mode: ConditioningMode,
    pub degenerate: bool,
    pub mean: String,
    pub output_cov: String,
    pub conditioning: String,
}

pub fn save_mvgp_model(dir: impl AsRef<Path>, model: &MvgpModel) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = MvgpManifest {
        frames: model.frames(),
        joints: model.joints(),
        replications: model.replication_count(),
        kernel: model.kernel(),
        sigma2: model.noise_var(),
        mode: model.mode(),
        degenerate: model.is_degenerate(),
        mean: "mvgp_mean.ten".into(),
        output_cov: "mvgp_sigma.ten".into(),
        conditioning: "mvgp_conditioning.ten".into(),
    };
    write_ten(dir.join(&manifest.mean), &DenseTensor::from_matrix(model.mean_curve()))?;
    write_ten(dir.join(&manifest.output_cov), &DenseTensor::from_matrix(model.output_cov()))?;
    write_ten(dir.join(&manifest.conditioning), &DenseTensor::from_matrix(model.conditioning()))?;
    crate::write_json(dir.join(MANIFEST), &manifest)
}

pub fn load_mvgp_model(dir: impl AsRef<Path>) -> Result<MvgpModel> {
    let dir = dir.as_ref();
    let m: MvgpManifest = crate::read_json(dir.join(MANIFEST))?;
    let mean = read_ten::<f64>(dir.join(&m.mean))?.to_matrix()?;
    let sigma = read_ten::<f64>(dir.join(&m.output_cov))?.to_matrix()?;
    let cond = read_ten::<f64>(dir.join(&m.conditioning))?.to_matrix()?;
    if mean.shape() != (m.frames, m.joints) {
        return Err(Error::Format(format!("{}: mean curve disagrees with manifest", dir.display())));
    }
    let kernel = SeKernel::new(m.kernel.signal_std, m.kernel.length_scale)?;
    let mut model = MvgpModel::from_parts(mean, kernel, m.sigma2, sigma, cond, m.replications, m.mode)?;
    model.degenerate = m.degenerate;
    Ok(model)
}
