//! File formats: raw datasets (RNAV1), volume series (`.rnavvol`), PGM dumps.
//!
//! RNAV1 is a pair `<prefix>.json` + `<prefix>.bin`. The sidecar carries the
//! schedule, phantom config, ground truth and trigger times; the blob holds
//! little-endian complex64 samples in readout, coil, `k_x` order. Coil maps
//! are recomputed from the phantom config on load.
//!
//! A `.rnavvol` file is the magic `RNAVVOL1`, a little-endian `u64` header
//! length, the JSON header, then little-endian `f32` voxels phase by phase,
//! each volume in row-major `(x, y, z)` order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::{coil_maps, GroundTruth, PhantomConfig, RawDataset};
use crate::recon::{VolumeMeta, VolumeSeries};
use crate::sampling::SamplingSchedule;
use crate::scalar::{Cplx, Real};

pub const RAW_FORMAT: &str = "RNAV1";
const VOL_MAGIC: &[u8; 8] = b"RNAVVOL1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&s).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// `(<prefix>.json, <prefix>.bin)`.
pub fn raw_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    (with_ext(prefix, "json"), with_ext(prefix, "bin"))
}

#[derive(Serialize, Deserialize)]
struct RawSidecar {
    format: String,
    coils: usize,
    nx: usize,
    readouts: usize,
    schedule: SamplingSchedule,
    phantom: PhantomConfig,
    truth: GroundTruth,
    trigger_times_s: Vec<f64>,
}

pub fn write_raw<T: Real>(prefix: &Path, raw: &RawDataset<T>) -> Result<(), IoError> {
    let (json, bin) = raw_paths(prefix);
    let side = RawSidecar {
        format: RAW_FORMAT.into(),
        coils: raw.coils(),
        nx: raw.nx(),
        readouts: raw.readout_count(),
        schedule: raw.schedule.clone(),
        phantom: raw.phantom.clone(),
        truth: raw.truth.clone(),
        trigger_times_s: raw.trigger_times_s.clone(),
    };
    write_json(&json, &side)?;
    let mut bytes = Vec::with_capacity(raw.samples.len() * 8);
    for v in &raw.samples {
        bytes.extend_from_slice(&(v.re.as_f64() as f32).to_le_bytes());
        bytes.extend_from_slice(&(v.im.as_f64() as f32).to_le_bytes());
    }
    write_bytes(&bin, &bytes)
}

pub fn read_raw<T: Real>(prefix: &Path) -> Result<RawDataset<T>, IoError> {
    let (json, bin) = raw_paths(prefix);
    let side: RawSidecar = read_json(&json)?;
    if side.format != RAW_FORMAT {
        return Err(format_err(&json, format!("unknown format {:?}", side.format)));
    }
    if side.readouts != side.schedule.readouts.len() || side.nx != side.schedule.config.nx {
        return Err(format_err(&json, "sidecar counts disagree with the schedule"));
    }
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let expected = side.readouts * side.coils * side.nx * 8;
    if bytes.len() != expected {
        return Err(format_err(
            &bin,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Cplx::new(T::lit(re as f64), T::lit(im as f64))
        })
        .collect();
    let mut phantom = side.phantom;
    phantom.coils = side.coils;
    Ok(RawDataset {
        coil_maps: coil_maps(&phantom),
        schedule: side.schedule,
        phantom,
        samples,
        trigger_times_s: side.trigger_times_s,
        truth: side.truth,
    })
}

#[derive(Serialize, Deserialize)]
struct VolHeader {
    dims: [usize; 3],
    phases: usize,
    meta: VolumeMeta,
}

pub fn encode_volumes<T: Real>(vols: &VolumeSeries<T>) -> Vec<u8> {
    let (nx, ny, nz) = vols.dim();
    let header = serde_json::to_vec(&VolHeader {
        dims: [nx, ny, nz],
        phases: vols.phases(),
        meta: vols.meta.clone(),
    })
    .expect("volume header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + vols.phases() * nx * ny * nz * 4);
    out.extend_from_slice(VOL_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &vols.volumes {
        for x in v.iter() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_volumes<T: Real>(path: &Path, vols: &VolumeSeries<T>) -> Result<(), IoError> {
    let file = {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::File::create(path).map_err(io_err(path))?
    };
    let mut w = BufWriter::new(file);
    w.write_all(&encode_volumes(vols)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_volumes<T: Real>(path: &Path) -> Result<VolumeSeries<T>, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    if bytes.len() < 16 || &bytes[..8] != VOL_MAGIC {
        return Err(format_err(path, "missing RNAVVOL1 magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| format_err(path, "truncated header"))?;
    let header: VolHeader = serde_json::from_slice(body).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let [nx, ny, nz] = header.dims;
    let n = nx * ny * nz;
    let data = &bytes[16 + hlen..];
    if data.len() != header.phases * n * 4 {
        return Err(format_err(path, "voxel payload size mismatch"));
    }
    let values: Vec<T> = data
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    let volumes = values
        .chunks_exact(n.max(1))
        .map(|c| Array3::from_shape_vec((nx, ny, nz), c.to_vec()).expect("sized chunk"))
        .collect();
    Ok(VolumeSeries {
        volumes,
        meta: header.meta,
    })
}

/// Binary 16-bit PGM, rows along axis 0, linear scale with `scale_max` mapped to 65535.
pub fn encode_pgm16<T: Real>(image: ArrayView2<T>, scale_max: f64) -> Vec<u8> {
    let (rows, cols) = image.dim();
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for v in image.iter() {
        let u = if scale_max > 0.0 {
            (v.as_f64() / scale_max).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.extend_from_slice(&((u * 65535.0).round() as u16).to_be_bytes());
    }
    out
}

pub fn write_pgm16<T: Real>(path: &Path, image: ArrayView2<T>, scale_max: f64) -> Result<(), IoError> {
    write_bytes(path, &encode_pgm16(image, scale_max))
}

/// Inverse of [`encode_pgm16`] up to quantization, for inspection and tests.
pub fn decode_pgm16(bytes: &[u8]) -> Option<Array2<u16>> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "65535" {
        return None;
    }
    let cols: usize = fields[1].parse().ok()?;
    let rows: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos + 1..)?;
    if data.len() != rows * cols * 2 {
        return None;
    }
    let px = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Array2::from_shape_vec((rows, cols), px).ok()
}
