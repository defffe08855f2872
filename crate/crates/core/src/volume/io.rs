//! MetaImage-style header + raw payload files.
//!
//! The header is a `key = value` text file; `ElementDataFile` names the raw
//! payload relative to the header's directory. Payloads are little-endian:
//! scalar volumes `MET_FLOAT` × 1 channel, masks `MET_UCHAR` × 1 channel,
//! vector fields `MET_FLOAT` × 3 interleaved channels. The raw file written
//! next to `name.ext` is `name.ext.raw`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Field3, Grid, Mask, Volume};

/// Any of the three payload kinds.
#[derive(Clone, Debug, PartialEq)]
pub enum Image<T = f64> {
    Scalar(Volume<T>),
    Mask(Mask),
    Field(Field3<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ElementType {
    Float,
    UChar,
}

impl ElementType {
    fn name(self) -> &'static str {
        match self {
            ElementType::Float => "MET_FLOAT",
            ElementType::UChar => "MET_UCHAR",
        }
    }

    fn size(self) -> usize {
        match self {
            ElementType::Float => 4,
            ElementType::UChar => 1,
        }
    }
}

struct Header {
    grid: Grid,
    element: ElementType,
    channels: usize,
    data_file: PathBuf,
}

fn raw_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(|n| format!("{n}.raw"))
        .ok_or_else(|| Error::format(path, "output path has no usable file name"))
}

fn write_pair(path: &Path, grid: &Grid, element: ElementType, channels: usize, payload: &[u8]) -> Result<()> {
    let raw = raw_name(path)?;
    let [nx, ny, nz] = grid.dims();
    let [sx, sy, sz] = grid.spacing();
    let [ox, oy, oz] = grid.origin();
    let mut h = String::new();
    // Infallible: writing into a String.
    let _ = writeln!(h, "ObjectType = Image");
    let _ = writeln!(h, "NDims = 3");
    let _ = writeln!(h, "BinaryData = True");
    let _ = writeln!(h, "BinaryDataByteOrderMSB = False");
    let _ = writeln!(h, "DimSize = {nx} {ny} {nz}");
    let _ = writeln!(h, "ElementSpacing = {sx:?} {sy:?} {sz:?}");
    let _ = writeln!(h, "Offset = {ox:?} {oy:?} {oz:?}");
    let _ = writeln!(h, "ElementNumberOfChannels = {channels}");
    let _ = writeln!(h, "ElementType = {}", element.name());
    let _ = writeln!(h, "ElementDataFile = {raw}");
    let raw_path = path.with_file_name(&raw);
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, h).map_err(|e| Error::io(path, e))
}

fn parse_floats<const N: usize>(path: &Path, key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != N {
        return Err(Error::format(path, format!("{key} needs {N} values, got '{value}'")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::format(path, format!("{key}: cannot parse '{p}'")))?;
    }
    Ok(out)
}

fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut element = None;
    let mut channels = 1usize;
    let mut data_file = None;
    let mut ndims_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {}: expected 'key = value'", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "ObjectType" if value != "Image" => {
                return Err(Error::format(path, format!("unsupported ObjectType '{value}'")))
            }
            "NDims" => {
                if value != "3" {
                    return Err(Error::format(path, format!("NDims must be 3, got '{value}'")));
                }
                ndims_seen = true;
            }
            "DimSize" => {
                let d = parse_floats::<3>(path, key, value)?;
                if d.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
                    return Err(Error::format(path, format!("DimSize must be integers, got '{value}'")));
                }
                dims = Some([d[0] as usize, d[1] as usize, d[2] as usize]);
            }
            "ElementSpacing" | "ElementSize" => spacing = parse_floats::<3>(path, key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_floats::<3>(path, key, value)?,
            "ElementNumberOfChannels" => {
                channels = value
                    .parse()
                    .map_err(|_| Error::format(path, format!("bad channel count '{value}'")))?
            }
            "ElementType" => {
                element = Some(match value {
                    "MET_FLOAT" => ElementType::Float,
                    "MET_UCHAR" => ElementType::UChar,
                    other => return Err(Error::format(path, format!("unknown element type '{other}'"))),
                })
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" if value.eq_ignore_ascii_case("true") => {
                return Err(Error::format(path, "big-endian payloads are not supported"))
            }
            "CompressedData" if value.eq_ignore_ascii_case("true") => {
                return Err(Error::format(path, "compressed payloads are not supported"))
            }
            "TransformMatrix" | "Orientation" | "Rotation" => {
                let m = parse_floats::<9>(path, key, value)?;
                if m != [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0] {
                    return Err(Error::format(path, "only axis-aligned (identity) orientation is supported"));
                }
            }
            "ElementDataFile" => data_file = Some(value.to_string()),
            _ => {}
        }
    }
    if !ndims_seen {
        return Err(Error::format(path, "missing NDims"));
    }
    let dims = dims.ok_or_else(|| Error::format(path, "missing DimSize"))?;
    let element = element.ok_or_else(|| Error::format(path, "missing ElementType"))?;
    let data_file = data_file.ok_or_else(|| Error::format(path, "missing ElementDataFile"))?;
    if data_file == "LOCAL" || data_file.starts_with("LIST") || data_file.contains('%') {
        return Err(Error::format(path, format!("unsupported ElementDataFile '{data_file}'")));
    }
    let grid = Grid::new(dims, spacing, origin).map_err(|e| Error::format(path, e.to_string()))?;
    let data_path = path.parent().unwrap_or_else(|| Path::new(".")).join(data_file);
    Ok(Header {
        grid,
        element,
        channels,
        data_file: data_path,
    })
}

fn f32_payload<T: Real>(path: &Path, values: impl Iterator<Item = T>, cap: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(cap * 4);
    for v in values {
        let x = v.f64() as f32;
        if !x.is_finite() {
            return Err(Error::format(path, format!("value {v} is not representable as a finite f32")));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn write_scalar<T: Real>(vol: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = f32_payload(path, vol.data().iter().copied(), vol.data().len())?;
    write_pair(path, vol.grid(), ElementType::Float, 1, &payload)
}

pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_pair(path.as_ref(), mask.grid(), ElementType::UChar, 1, mask.data())
}

pub fn write_field<T: Real>(field: &Field3<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = f32_payload(path, field.data().iter().flat_map(|v| v.iter().copied()), field.data().len() * 3)?;
    write_pair(path, field.grid(), ElementType::Float, 3, &payload)
}

/// Reads any supported payload. Values are stored as `f32` on disk and
/// widened losslessly into `T = f64`.
pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let h = read_header(path)?;
    let raw = fs::read(&h.data_file).map_err(|e| Error::io(&h.data_file, e))?;
    let n = h.grid.len();
    let expected = n * h.channels * h.element.size();
    if raw.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "raw payload {} has {} bytes, header implies {expected}",
                h.data_file.display(),
                raw.len()
            ),
        ));
    }
    let floats = || -> Result<Vec<T>> {
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, b)| {
                let x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if x.is_finite() {
                    Ok(T::of(x as f64))
                } else {
                    Err(Error::format(path, format!("non-finite payload value at element {i}")))
                }
            })
            .collect()
    };
    match (h.element, h.channels) {
        (ElementType::Float, 1) => Ok(Image::Scalar(Volume::from_vec_unchecked(h.grid, floats()?))),
        (ElementType::Float, 3) => {
            let flat = floats()?;
            let data = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            Ok(Image::Field(Field3::from_vec_unchecked(h.grid, data)))
        }
        (ElementType::UChar, 1) => {
            if let Some(i) = raw.iter().position(|&b| b > 1) {
                return Err(Error::format(path, format!("mask value {} at element {i} is not 0/1", raw[i])));
            }
            Ok(Image::Mask(Mask::from_vec_unchecked(h.grid, raw)))
        }
        (e, c) => Err(Error::format(
            path,
            format!("unsupported combination {} with {c} channels", e.name()),
        )),
    }
}

pub fn read_scalar<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    match read_image(path.as_ref())? {
        Image::Scalar(v) => Ok(v),
        _ => Err(Error::format(path.as_ref(), "expected a scalar MET_FLOAT volume")),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    match read_image::<f64>(path.as_ref())? {
        Image::Mask(m) => Ok(m),
        _ => Err(Error::format(path.as_ref(), "expected a MET_UCHAR mask")),
    }
}

pub fn read_field<T: Real>(path: impl AsRef<Path>) -> Result<Field3<T>> {
    match read_image(path.as_ref())? {
        Image::Field(f) => Ok(f),
        _ => Err(Error::format(path.as_ref(), "expected a 3-channel MET_FLOAT field")),
    }
}
