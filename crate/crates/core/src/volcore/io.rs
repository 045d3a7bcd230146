//! `.vhdr`/`.vraw` volume files and read-only NIfTI-1 import.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{Dataset4D, GridMeta, Volume};
use crate::error::{Error, Result};

fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vhdr") | Some("vraw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn parse_err(field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_header(text: &str) -> Result<GridMeta> {
    let v: Value = serde_json::from_str(text).map_err(|e| parse_err("<json>", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err("<json>", "header must be a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "dims" | "voxel_mm" | "dtype" | "order") {
            return Err(parse_err(key, "unknown header field"));
        }
    }
    let arr3 = |name: &str| -> Result<Vec<Value>> {
        let a = obj
            .get(name)
            .ok_or_else(|| parse_err(name, "missing"))?
            .as_array()
            .ok_or_else(|| parse_err(name, "expected an array of 3 numbers"))?;
        if a.len() != 3 {
            return Err(parse_err(name, format!("expected 3 entries, found {}", a.len())));
        }
        Ok(a.clone())
    };
    let dims = arr3("dims")?
        .iter()
        .map(|d| {
            d.as_u64()
                .filter(|&n| n > 0)
                .map(|n| n as usize)
                .ok_or_else(|| parse_err("dims", format!("{d} is not a positive integer")))
        })
        .collect::<Result<Vec<_>>>()?;
    let vox = arr3("voxel_mm")?
        .iter()
        .map(|d| {
            d.as_f64()
                .filter(|&x| x.is_finite() && x > 0.0)
                .ok_or_else(|| parse_err("voxel_mm", format!("{d} is not a positive number")))
        })
        .collect::<Result<Vec<_>>>()?;
    match obj.get("dtype").and_then(Value::as_str) {
        Some("f32le") => {}
        Some(other) => return Err(parse_err("dtype", format!("unsupported dtype `{other}`"))),
        None => return Err(parse_err("dtype", "missing")),
    }
    match obj.get("order").and_then(Value::as_str) {
        Some("x-fastest") => {}
        Some(other) => return Err(parse_err("order", format!("unsupported order `{other}`"))),
        None => return Err(parse_err("order", "missing")),
    }
    GridMeta::new([dims[0], dims[1], dims[2]], [vox[0], vox[1], vox[2]])
        .map_err(|e| parse_err("dims", e.to_string()))
}

/// Write `<base>.vhdr` and `<base>.vraw`. Values are narrowed to `f32`.
pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let base = base_path(path.as_ref());
    let m = vol.meta();
    let header = json!({
        "dims": [m.nx, m.ny, m.nz],
        "voxel_mm": [m.dx, m.dy, m.dz],
        "dtype": "f32le",
        "order": "x-fastest",
    });
    let hdr_path = with_suffix(&base, "vhdr");
    fs::write(&hdr_path, serde_json::to_string(&header).expect("header serializes") + "\n")
        .map_err(|e| Error::io(&hdr_path, e))?;
    let mut raw = Vec::with_capacity(vol.data().len() * 4);
    for &v in vol.data() {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let raw_path = with_suffix(&base, "vraw");
    fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let base = base_path(path.as_ref());
    let hdr_path = with_suffix(&base, "vhdr");
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let meta = parse_header(&text)?;
    let raw_path = with_suffix(&base, "vraw");
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if raw.len() != meta.len() * 4 {
        return Err(Error::Corruption {
            path: raw_path,
            message: format!(
                "payload holds {} bytes ({} values), header declares {} values",
                raw.len(),
                raw.len() as f64 / 4.0,
                meta.len()
            ),
        });
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Volume::new(meta, data).map_err(|e| Error::Corruption {
        path: raw_path,
        message: e.to_string(),
    })
}

/// Persist every frame of `ds` as `sub-<subject>_t-<i>` in `dir`.
pub fn write_dataset(ds: &Dataset4D, dir: impl AsRef<Path>, subject: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..ds.n_t() {
        write_volume(&ds.volume(t), dir.join(format!("sub-{subject}_t-{t}")))?;
    }
    Ok(())
}

/// Load the frames written by [`write_dataset`].
pub fn read_dataset_dir(dir: impl AsRef<Path>, subject: usize, tr_s: f64) -> Result<Dataset4D> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    loop {
        let base = dir.join(format!("sub-{subject}_t-{}", frames.len()));
        if !with_suffix(&base, "vhdr").exists() {
            break;
        }
        frames.push(read_volume(&base)?);
    }
    Dataset4D::from_frames(tr_s, &frames)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NiftiImage {
    Volume(Volume),
    Series(Dataset4D),
}

/// Read a single-file NIfTI-1 image (`n+1`) with float32 voxels.
///
/// Orientation, extensions and intent codes are ignored; `scl_slope` and
/// `scl_inter` are applied when the slope is non-zero.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 348 {
        return Err(parse_err("sizeof_hdr", "file shorter than a NIfTI-1 header"));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == 348;
    if !le && i32::from_be_bytes(bytes[0..4].try_into().unwrap()) != 348 {
        return Err(parse_err("sizeof_hdr", "expected 348"));
    }
    let i16_at = |o: usize| {
        let b = [bytes[o], bytes[o + 1]];
        if le { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }
    };
    let f32_at = |o: usize| {
        let b = [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
        if le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    };
    if &bytes[344..347] != b"n+1" {
        return Err(parse_err("magic", "only single-file `n+1` images are supported"));
    }
    let datatype = i16_at(70);
    if datatype != 16 || i16_at(72) != 32 {
        return Err(parse_err("datatype", format!("expected float32 (16), found {datatype}")));
    }
    let ndim = i16_at(40);
    if !(1..=4).contains(&ndim) {
        return Err(parse_err("dim", format!("unsupported dimensionality {ndim}")));
    }
    let dim = |k: usize| -> Result<usize> {
        if k as i16 > ndim {
            return Ok(1);
        }
        let d = i16_at(40 + 2 * k);
        if d < 1 {
            return Err(parse_err("dim", format!("dim[{k}] = {d}")));
        }
        Ok(d as usize)
    };
    let (nx, ny, nz, nt) = (dim(1)?, dim(2)?, dim(3)?, dim(4)?);
    let pix = |k: usize| {
        let p = f32_at(76 + 4 * k).abs();
        if p > 0.0 { f64::from(p) } else { 1.0 }
    };
    let meta = GridMeta::new([nx, ny, nz], [pix(1), pix(2), pix(3)])
        .map_err(|e| parse_err("pixdim", e.to_string()))?;
    let offset = f32_at(108);
    if !(offset >= 348.0) {
        return Err(parse_err("vox_offset", format!("invalid offset {offset}")));
    }
    let offset = offset as usize;
    let n = meta.len() * nt;
    if bytes.len() < offset + 4 * n {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            message: format!("payload needs {} bytes after offset {offset}, file has {}", 4 * n, bytes.len()),
        });
    }
    let (slope, inter) = (f64::from(f32_at(112)), f64::from(f32_at(116)));
    let data: Vec<f64> = bytes[offset..offset + 4 * n]
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            let v = f64::from(if le { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) });
            if slope != 0.0 { v * slope + inter } else { v }
        })
        .collect();
    if nt == 1 {
        Ok(NiftiImage::Volume(Volume::new(meta, data)?))
    } else {
        let tr = pix(4);
        Ok(NiftiImage::Series(Dataset4D::new(meta, tr, nt, data)?))
    }
}
