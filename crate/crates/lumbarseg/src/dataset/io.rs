//! Two-file volume format: a plain-text header plus a raw little-endian
//! payload.
//!
//! The header (`.hdr`) is key=value lines:
//!
//! ```text
//! format=volume-v1
//! extents=40 40 56
//! spacing_mm=1.0 1.0 1.0
//! origin_mm=0.0 0.0 0.0
//! elem=f32
//! byte_order=little
//! raw_file=case_000.raw
//! ```
//!
//! `elem` is `f32` for intensities and `u8` for labels; the payload sits in
//! `raw_file` next to the header, voxels in `(z, y, x)` row-major order.
//! Floating-point geometry values are written in shortest round-trip form,
//! so save/load is exact.

use std::fs;
use std::path::Path;

use super::{BoundingBox3D, DataError, Geometry, LabelVolume, Volume};
use crate::autodiff::Dims3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElemType {
    F32,
    U8,
}

impl ElemType {
    fn name(self) -> &'static str {
        match self {
            ElemType::F32 => "f32",
            ElemType::U8 => "u8",
        }
    }

    fn byte_size(self) -> usize {
        match self {
            ElemType::F32 => 4,
            ElemType::U8 => 1,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn header_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Header {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

struct Header {
    geometry: Geometry,
    elem: ElemType,
    raw_file: String,
}

fn raw_file_name(hdr_path: &Path) -> String {
    hdr_path
        .with_extension("raw")
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume.raw".to_string())
}

fn write_pair(
    hdr_path: &Path,
    geometry: Geometry,
    elem: ElemType,
    payload: &[u8],
) -> Result<(), DataError> {
    let raw_name = raw_file_name(hdr_path);
    let e = geometry.extents;
    let s = geometry.spacing_mm;
    let o = geometry.origin_mm;
    let header = format!(
        "format=volume-v1\n\
         extents={} {} {}\n\
         spacing_mm={:?} {:?} {:?}\n\
         origin_mm={:?} {:?} {:?}\n\
         elem={}\n\
         byte_order=little\n\
         raw_file={}\n",
        e.d,
        e.h,
        e.w,
        s[0],
        s[1],
        s[2],
        o[0],
        o[1],
        o[2],
        elem.name(),
        raw_name,
    );
    fs::write(hdr_path, header).map_err(|err| io_err(hdr_path, err))?;
    let raw_path = hdr_path.with_file_name(&raw_name);
    fs::write(&raw_path, payload).map_err(|err| io_err(&raw_path, err))
}

fn parse_triple<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    key: &str,
    value: &str,
) -> Result<[T; 3], DataError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(header_err(
            path,
            line,
            format!("{key} needs exactly 3 values, got {}", parts.len()),
        ));
    }
    let mut out: Vec<T> = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| header_err(path, line, format!("cannot parse {key} value `{p}`")))?,
        );
    }
    Ok(out.try_into().map_err(|_| ()).expect("length checked"))
}

fn parse_header(hdr_path: &Path) -> Result<Header, DataError> {
    let text = fs::read_to_string(hdr_path).map_err(|err| io_err(hdr_path, err))?;
    let mut extents: Option<(usize, [usize; 3])> = None;
    let mut spacing: Option<[f64; 3]> = None;
    let mut origin: Option<[f64; 3]> = None;
    let mut elem: Option<ElemType> = None;
    let mut raw_file: Option<String> = None;
    let mut format_seen = false;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(header_err(hdr_path, line_no, format!("expected key=value, got `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                if value != "volume-v1" {
                    return Err(header_err(
                        hdr_path,
                        line_no,
                        format!("unsupported format `{value}`"),
                    ));
                }
                format_seen = true;
            }
            "extents" => {
                extents = Some((line_no, parse_triple::<usize>(hdr_path, line_no, key, value)?))
            }
            "spacing_mm" => spacing = Some(parse_triple::<f64>(hdr_path, line_no, key, value)?),
            "origin_mm" => origin = Some(parse_triple::<f64>(hdr_path, line_no, key, value)?),
            "elem" => {
                elem = Some(match value {
                    "f32" => ElemType::F32,
                    "u8" => ElemType::U8,
                    other => {
                        return Err(header_err(
                            hdr_path,
                            line_no,
                            format!("unsupported element type `{other}`"),
                        ))
                    }
                })
            }
            "byte_order" => {
                if value != "little" {
                    return Err(header_err(
                        hdr_path,
                        line_no,
                        format!("unsupported byte order `{value}`"),
                    ));
                }
            }
            "raw_file" => raw_file = Some(value.to_string()),
            other => {
                return Err(header_err(hdr_path, line_no, format!("unknown key `{other}`")));
            }
        }
    }

    if !format_seen {
        return Err(header_err(hdr_path, 1, "missing `format=volume-v1` line"));
    }
    let (extents_line, e) =
        extents.ok_or_else(|| header_err(hdr_path, 1, "missing `extents` line"))?;
    let spacing = spacing.ok_or_else(|| header_err(hdr_path, 1, "missing `spacing_mm` line"))?;
    let origin = origin.ok_or_else(|| header_err(hdr_path, 1, "missing `origin_mm` line"))?;
    let elem = elem.ok_or_else(|| header_err(hdr_path, 1, "missing `elem` line"))?;
    let raw_file = raw_file.ok_or_else(|| header_err(hdr_path, 1, "missing `raw_file` line"))?;

    let geometry = Geometry::new(Dims3::new(e[0], e[1], e[2]), spacing, origin)
        .map_err(|err| header_err(hdr_path, extents_line, err.to_string()))?;
    Ok(Header {
        geometry,
        elem,
        raw_file,
    })
}

fn read_payload(hdr_path: &Path, header: &Header) -> Result<Vec<u8>, DataError> {
    let raw_path = hdr_path.with_file_name(&header.raw_file);
    let payload = fs::read(&raw_path).map_err(|err| io_err(&raw_path, err))?;
    let expected = header.geometry.voxel_count() * header.elem.byte_size();
    if payload.len() != expected {
        return Err(DataError::Payload {
            path: raw_path.display().to_string(),
            expected_bytes: expected,
            actual_bytes: payload.len(),
        });
    }
    Ok(payload)
}

/// Writes an intensity volume as a header/raw pair rooted at `hdr_path`.
pub fn save_volume(volume: &Volume, hdr_path: &Path) -> Result<(), DataError> {
    let mut payload = Vec::with_capacity(volume.data().len() * 4);
    for v in volume.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_pair(hdr_path, volume.geometry(), ElemType::F32, &payload)
}

/// Reads an intensity volume (element type `f32`) from a header file.
pub fn load_volume(hdr_path: &Path) -> Result<Volume, DataError> {
    let header = parse_header(hdr_path)?;
    if header.elem != ElemType::F32 {
        return Err(header_err(
            hdr_path,
            1,
            format!("expected elem=f32 for an intensity volume, found {}", header.elem.name()),
        ));
    }
    let payload = read_payload(hdr_path, &header)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(header.geometry, data)
}

/// Writes a label volume as a header/raw pair rooted at `hdr_path`.
pub fn save_labels(labels: &LabelVolume, hdr_path: &Path) -> Result<(), DataError> {
    write_pair(hdr_path, labels.geometry(), ElemType::U8, labels.data())
}

/// Reads a label volume (element type `u8`) from a header file.
pub fn load_labels(hdr_path: &Path) -> Result<LabelVolume, DataError> {
    let header = parse_header(hdr_path)?;
    if header.elem != ElemType::U8 {
        return Err(header_err(
            hdr_path,
            1,
            format!("expected elem=u8 for a label volume, found {}", header.elem.name()),
        ));
    }
    let payload = read_payload(hdr_path, &header)?;
    LabelVolume::new(header.geometry, payload)
}

/// Writes a bounding box as a small `box-v1` text file:
///
/// ```text
/// format=box-v1
/// corner_low=10.5 3.25 7.0
/// corner_high=30.5 40.0 36.5
/// ```
///
/// Corners are `z y x` in millimeters, shortest round-trip form.
pub fn save_box(bbox: &BoundingBox3D, path: &Path) -> Result<(), DataError> {
    let lo = bbox.corner_low();
    let hi = bbox.corner_high();
    let text = format!(
        "format=box-v1\n\
         corner_low={:?} {:?} {:?}\n\
         corner_high={:?} {:?} {:?}\n",
        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2],
    );
    fs::write(path, text).map_err(|err| io_err(path, err))
}

/// Reads a `box-v1` file written by [`save_box`].
pub fn load_box(path: &Path) -> Result<BoundingBox3D, DataError> {
    let text = fs::read_to_string(path).map_err(|err| io_err(path, err))?;
    let mut low: Option<[f64; 3]> = None;
    let mut high: Option<[f64; 3]> = None;
    let mut format_seen = false;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(header_err(path, line_no, format!("expected key=value, got `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                if value != "box-v1" {
                    return Err(header_err(path, line_no, format!("unsupported format `{value}`")));
                }
                format_seen = true;
            }
            "corner_low" => low = Some(parse_triple::<f64>(path, line_no, key, value)?),
            "corner_high" => high = Some(parse_triple::<f64>(path, line_no, key, value)?),
            other => return Err(header_err(path, line_no, format!("unknown key `{other}`"))),
        }
    }
    if !format_seen {
        return Err(header_err(path, 1, "missing `format=box-v1` line"));
    }
    let low = low.ok_or_else(|| header_err(path, 1, "missing `corner_low` line"))?;
    let high = high.ok_or_else(|| header_err(path, 1, "missing `corner_high` line"))?;
    BoundingBox3D::new(low, high)
}
