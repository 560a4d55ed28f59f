//! Persisted estimator: `tr_model.json` plus `b_h.ten` and `b_w.ten`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{TrModel, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_ten, write_ten, DenseTensor};

pub const MANIFEST: &str = "tr_model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrManifest {
    #[serde(rename = "J")]
    pub joints: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    /// Producer tag rather than a timestamp.
    pub created: String,
    pub config: TrainConfig,
    pub b_h: String,
    pub b_w: String,
}

pub fn save_tr_model<T: Scalar>(dir: impl AsRef<Path>, model: &TrModel<T>, config: &TrainConfig) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = TrManifest {
        joints: model.joints(),
        height: model.height(),
        width: model.width(),
        created: crate::producer(),
        config: config.clone(),
        b_h: "b_h.ten".into(),
        b_w: "b_w.ten".into(),
    };
    write_ten(dir.join(&manifest.b_h), &DenseTensor::from_matrix(model.b_h()))?;
    write_ten(
        dir.join(&manifest.b_w),
        &DenseTensor::new(vec![model.width()], model.b_w().as_slice().to_vec())?,
    )?;
    crate::write_json(dir.join(MANIFEST), &manifest)
}

pub fn load_tr_model<T: Scalar>(dir: impl AsRef<Path>) -> Result<(TrModel<T>, TrManifest)> {
    let dir = dir.as_ref();
    let manifest: TrManifest = crate::read_json(dir.join(MANIFEST))?;
    let b_h: DMatrix<T> = read_ten::<T>(dir.join(&manifest.b_h))?.to_matrix()?;
    let b_w = read_ten::<T>(dir.join(&manifest.b_w))?;
    if b_h.shape() != (manifest.joints, manifest.height) || b_w.dims() != [manifest.width] {
        return Err(Error::Format(format!(
            "{}: payload shapes disagree with manifest",
            dir.display()
        )));
    }
    let model = TrModel::new(b_h, DVector::from_vec(b_w.into_data()))?;
    Ok((model, manifest))
}
