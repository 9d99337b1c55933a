//! NPY v1.0 arrays with JSON sidecars, landmark CSVs, atomic writes and
//! content hashes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svreg_core::{Field, Grid, LandmarkSet, ScalarField, VectorField};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I32 => "<i4",
        }
    }

    fn from_descr(s: &str) -> Option<Self> {
        match s {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            "<i4" => Some(Dtype::I32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 | Dtype::I32 => 4,
        }
    }
}

/// C-order array held as f64 regardless of its on-disk type.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn encode_npy(arr: &Array) -> CliResult<Vec<u8>> {
    let expected: usize = arr.shape.iter().product();
    if expected != arr.data.len() {
        return Err(CliError::Config(format!(
            "array shape {:?} does not hold {} values",
            arr.shape,
            arr.data.len()
        )));
    }
    let shape = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!(
            "({})",
            arr.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
        arr.dtype.descr()
    );
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let header_len = u16::try_from(header.len()).map_err(|_| CliError::Config("npy header too long".into()))?;

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + arr.data.len() * arr.dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &x in &arr.data {
        match arr.dtype {
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::I32 => {
                if x.fract() != 0.0 || x < i32::MIN as f64 || x > i32::MAX as f64 {
                    return Err(CliError::Config(format!("value {x} is not representable as i32")));
                }
                out.extend_from_slice(&(x as i32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    if rest.starts_with('(') {
        rest.find(')').map(|end| &rest[..=end])
    } else {
        let end = rest.find(',').unwrap_or(rest.len());
        Some(rest[..end].trim())
    }
}

pub fn decode_npy(bytes: &[u8]) -> Result<Array, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("not an NPY file".into());
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(format!("unsupported NPY version {v}")),
    };
    let body = offset + header_len;
    if bytes.len() < body {
        return Err("truncated NPY header".into());
    }
    let header = std::str::from_utf8(&bytes[offset..body]).map_err(|_| "NPY header is not text")?;
    let descr = header_value(header, "descr").ok_or("NPY header lacks descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let dtype = Dtype::from_descr(descr).ok_or_else(|| format!("unsupported dtype {descr}; use <f4, <f8 or <i4"))?;
    if header_value(header, "fortran_order") != Some("False") {
        return Err("only C-order arrays are supported".into());
    }
    let shape_text = header_value(header, "shape").ok_or("NPY header lacks shape")?;
    let shape = shape_text
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| format!("bad shape entry {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let payload = &bytes[body..];
    if payload.len() != n * dtype.width() {
        return Err(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            n * dtype.width()
        ));
    }
    let data = payload
        .chunks_exact(dtype.width())
        .map(|c| match dtype {
            Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
            Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
            Dtype::I32 => i32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
        })
        .collect();
    Ok(Array { shape, dtype, data })
}

pub fn read_npy(path: &Path) -> CliResult<Array> {
    decode_npy(&read_bytes(path)?).map_err(|e| CliError::io(path, e))
}

/// Grid metadata stored next to every volume as `<stem>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub spacing: Vec<f64>,
    pub axis_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn axis_names(ndim: usize) -> Vec<String> {
    ["z", "y", "x"][3 - ndim..].iter().map(|s| s.to_string()).collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn read_sidecar(path: &Path) -> CliResult<Option<Sidecar>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Config(format!("{}: {e}", side.display())))
}

fn grid_for(path: &Path, dims: &[usize]) -> CliResult<Grid> {
    let grid = match read_sidecar(path)? {
        Some(side) => {
            if side.spacing.len() != dims.len() || side.axis_order != axis_names(dims.len()) {
                return Err(CliError::Config(format!(
                    "{}: sidecar does not describe a {}D volume in {:?} order",
                    path.display(),
                    dims.len(),
                    axis_names(dims.len())
                )));
            }
            Grid::with_spacing(dims, &side.spacing)
        }
        None => Grid::new(dims),
    };
    grid.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn read_scalar(path: &Path) -> CliResult<(ScalarField, Dtype)> {
    let arr = read_npy(path)?;
    if !(2..=3).contains(&arr.shape.len()) {
        return Err(CliError::Config(format!(
            "{}: expected a 2D or 3D volume, got shape {:?}",
            path.display(),
            arr.shape
        )));
    }
    let grid = grid_for(path, &arr.shape)?;
    Ok((ScalarField::new(grid, arr.data)?, arr.dtype))
}

pub fn read_vector(path: &Path) -> CliResult<VectorField> {
    let arr = read_npy(path)?;
    let nd = arr.shape.len();
    if !(3..=4).contains(&nd) || arr.shape[nd - 1] != nd - 1 {
        return Err(CliError::Config(format!(
            "{}: expected a displacement of shape (..., d) with d spatial axes, got {:?}",
            path.display(),
            arr.shape
        )));
    }
    let grid = grid_for(path, &arr.shape[..nd - 1])?;
    Ok(VectorField::new(grid, arr.data)?)
}

/// Writes the array and its sidecar; returns the written paths.
fn write_volume(path: &Path, grid: &Grid, arr: &Array, config_hash: Option<&str>) -> CliResult<Vec<PathBuf>> {
    atomic_write(path, &encode_npy(arr)?)?;
    let side = Sidecar {
        spacing: grid.spacing().to_vec(),
        axis_order: axis_names(grid.ndim()),
        config_hash: config_hash.map(str::to_string),
    };
    let side_path = sidecar_path(path);
    atomic_write(&side_path, to_json_bytes(&side).as_slice())?;
    Ok(vec![path.to_path_buf(), side_path])
}

pub fn write_scalar(path: &Path, field: &ScalarField, dtype: Dtype, config_hash: Option<&str>) -> CliResult<Vec<PathBuf>> {
    let arr = Array {
        shape: field.grid().dims().to_vec(),
        dtype,
        data: field.values().to_vec(),
    };
    write_volume(path, field.grid(), &arr, config_hash)
}

pub fn write_vector(path: &Path, field: &VectorField, config_hash: Option<&str>) -> CliResult<Vec<PathBuf>> {
    let mut shape = field.grid().dims().to_vec();
    shape.push(field.ndim());
    let arr = Array {
        shape,
        dtype: Dtype::F64,
        data: field.values().to_vec(),
    };
    write_volume(path, field.grid(), &arr, config_hash)
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable value");
    bytes.push(b'\n');
    bytes
}

/// Landmarks in mm with header `x,y[,z]`; `x` runs along the last array
/// axis.
pub fn read_landmarks(path: &Path, ndim: usize) -> CliResult<LandmarkSet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let want: Vec<String> = axis_names(ndim).into_iter().rev().collect();
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != want {
        return Err(CliError::Config(format!(
            "{}: landmark header must be {:?}, found {:?}",
            path.display(),
            want.join(","),
            headers.join(",")
        )));
    }
    let mut points = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let xyz = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), row + 2)))?;
        points.push(xyz.into_iter().rev().collect());
    }
    Ok(LandmarkSet::new(points)?)
}

pub fn encode_landmarks(set: &LandmarkSet) -> CliResult<Vec<u8>> {
    let ndim = set.points.first().map_or(3, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = axis_names(ndim).into_iter().rev().collect();
    w.write_record(&header).map_err(|e| CliError::Io(e.to_string()))?;
    for p in &set.points {
        w.write_record(p.iter().rev().map(|x| x.to_string()))
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}
