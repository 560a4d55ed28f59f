//! Vision-based state estimation and replay-attack detection for robot work cells.

// NaN must fail positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod scalar;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::DenseTensor<f64>;
pub type Tensor32 = tensor::DenseTensor<f32>;

pub mod detect;
pub mod mvgp;
pub mod pipeline;
pub mod sim;
pub mod tr;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Producer tag embedded in persisted artifacts.
pub fn producer() -> String {
    format!("vistr-core {}", env!("CARGO_PKG_VERSION"))
}

pub(crate) fn write_json<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
