//! On-disk dataset layout:
//!
//! ```text
//! manifest.json
//! cycles/<id>/angles.csv           t, true_1..true_J, reported_1..reported_J
//! cycles/<id>/masks/frame_00000.png  8-bit grayscale, 0 or 255
//! cycles/<id>/masks.ten            optional packed T x H x W stack
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttackSpec, CycleData, Mask};
use crate::error::{Error, Result};
use crate::tensor::write_ten;
use crate::{read_json, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleRole {
    /// Training replication.
    Nominal,
    /// Nominal replication kept out of training.
    Holdout,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleEntry {
    pub id: String,
    pub role: CycleRole,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    /// Noise seed of the nominal cycle the attacker replays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "J")]
    pub joints: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub producer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub cycles: Vec<CycleEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub cycles: Vec<CycleData>,
}

impl Dataset {
    pub fn cycle(&self, id: &str) -> Result<&CycleData> {
        self.cycles
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::UnknownCycle(id.to_string()))
    }

    pub fn entry(&self, id: &str) -> Result<&CycleEntry> {
        self.manifest
            .cycles
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::UnknownCycle(id.to_string()))
    }

    /// Cycles with the given role, in manifest order.
    pub fn with_role(&self, role: CycleRole) -> Vec<&CycleData> {
        self.manifest
            .cycles
            .iter()
            .zip(&self.cycles)
            .filter(|(e, _)| e.role == role)
            .map(|(_, c)| c)
            .collect()
    }
}

fn cycle_dir(dir: &Path, id: &str) -> PathBuf {
    dir.join("cycles").join(id)
}

fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:05}.png"))
}

fn write_png(path: &Path, mask: &Mask, height: usize, width: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = mask.iter().map(|&v| v * 255).collect();
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(fmt)?;
    w.write_image_data(&bytes).map_err(fmt)?;
    w.finish().map_err(fmt)
}

fn read_png(path: &Path, height: usize, width: usize) -> Result<Mask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut reader = png::Decoder::new(BufReader::new(file)).read_info().map_err(|e| fmt(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fmt("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(fmt(format!("expected 8-bit grayscale, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    if (info.height as usize, info.width as usize) != (height, width) {
        return Err(fmt(format!("image is {}x{}, expected {height}x{width}", info.height, info.width)));
    }
    buf.truncate(info.buffer_size());
    buf.iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(fmt(format!("pixel value {other} is not binary"))),
        })
        .collect()
}

fn write_angles(path: &Path, cycle: &CycleData) -> Result<()> {
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let j = cycle.joints();
    let header = std::iter::once("t".to_string())
        .chain((1..=j).map(|k| format!("true_{k}")))
        .chain((1..=j).map(|k| format!("reported_{k}")));
    w.write_record(header).map_err(err)?;
    for (t, (a, r)) in cycle.true_angles.iter().zip(&cycle.reported_angles).enumerate() {
        let row = std::iter::once(t.to_string()).chain(a.iter().chain(r).map(f64::to_string));
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

type AngleRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn read_angles(path: &Path, joints: usize) -> Result<AngleRows> {
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header = r.headers().map_err(|e| fmt(e.to_string()))?;
    if header.len() != 1 + 2 * joints {
        return Err(fmt(format!("{} columns for {joints} joints", header.len())));
    }
    let (mut truth, mut reported) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        let t: usize = rec[0].parse().map_err(|_| fmt(format!("bad frame index {:?}", &rec[0])))?;
        if t != i {
            return Err(fmt(format!("row {i} has frame index {t}")));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| fmt(format!("bad number {s:?} in row {i}"))))
            .collect::<Result<Vec<_>>>()?;
        truth.push(vals[..joints].to_vec());
        reported.push(vals[joints..].to_vec());
    }
    Ok((truth, reported))
}

/// Writes `cycles` (in `manifest` order) under `dir`; with `pack` set, each
/// cycle also gets a `masks.ten` stack.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, cycles: &[CycleData], pack: bool) -> Result<()> {
    if manifest.cycles.len() != cycles.len() || manifest.cycles.iter().zip(cycles).any(|(e, c)| e.id != c.id) {
        return Err(Error::InvalidArgument("manifest entries do not match the cycles".into()));
    }
    for c in cycles {
        c.validate()?;
        if (c.frames(), c.joints(), c.height, c.width) != (manifest.frames, manifest.joints, manifest.height, manifest.width) {
            return Err(Error::Shape(format!("cycle {} does not match the manifest dimensions", c.id)));
        }
    }
    cycles.par_iter().try_for_each(|c| -> Result<()> {
        let cdir = cycle_dir(dir, &c.id);
        let mdir = cdir.join("masks");
        std::fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
        write_angles(&cdir.join("angles.csv"), c)?;
        for (t, m) in c.masks.iter().enumerate() {
            write_png(&frame_path(&mdir, t), m, c.height, c.width)?;
        }
        if pack {
            write_ten(cdir.join("masks.ten"), &c.mask_tensor::<f64>())?;
        }
        Ok(())
    })?;
    write_json(dir.join("manifest.json"), manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(dir.join("manifest.json"))?;
    let cycles = manifest
        .cycles
        .par_iter()
        .map(|entry| -> Result<CycleData> {
            let cdir = cycle_dir(dir, &entry.id);
            let (true_angles, reported_angles) = read_angles(&cdir.join("angles.csv"), manifest.joints)?;
            if true_angles.len() != manifest.frames {
                return Err(Error::Format(format!(
                    "cycle {}: {} angle rows, manifest says T={}",
                    entry.id,
                    true_angles.len(),
                    manifest.frames
                )));
            }
            let mdir = cdir.join("masks");
            let count = std::fs::read_dir(&mdir)
                .map_err(|e| Error::io(&mdir, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.file_name().to_string_lossy().ends_with(".png"))
                .count();
            if count != manifest.frames {
                return Err(Error::Format(format!(
                    "cycle {}: {count} mask images, manifest says T={}",
                    entry.id, manifest.frames
                )));
            }
            let masks = (0..manifest.frames)
                .map(|t| read_png(&frame_path(&mdir, t), manifest.height, manifest.width))
                .collect::<Result<Vec<_>>>()?;
            let c = CycleData {
                id: entry.id.clone(),
                masks,
                height: manifest.height,
                width: manifest.width,
                true_angles,
                reported_angles,
                attack: entry.attack.clone(),
                seed: entry.seed,
            };
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, cycles })
}
