//! NIfTI-1 single-file volumes (`.nii`, `.nii.gz`).
//!
//! Supported datatypes are `u8`, `i16`, `i32`, `f32` and `f64`. Both byte
//! orders are read; files are written in the byte order of their template
//! header (little-endian without one). The raw 348-byte header is kept so
//! that fields this module does not interpret (orientation, description,
//! intent) survive a read/write cycle unchanged.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use lesion_core::{Dims, Grid, LabelMap, OffsetField, ProbMap, Spacing};

pub const HEADER_SIZE: usize = 348;
/// Data offset used for every written file (header plus empty extension flag).
pub const DATA_OFFSET: usize = 352;

const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SLOPE: usize = 112;
const OFF_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad header size {found} at offset 0 (expected 348)")]
    HeaderSize { found: i32 },
    #[error("bad magic {found:?} at offset 344")]
    Magic { found: [u8; 4] },
    #[error("unsupported datatype code {code} at offset 70")]
    UnsupportedDatatype { code: i16 },
    #[error("invalid dimensions {dims:?} at offset 40")]
    Dims { dims: [i16; 8] },
    #[error("invalid voxel spacing {spacing:?} at offset 76")]
    Spacing { spacing: [f32; 3] },
    #[error("invalid data offset {found} at offset 108")]
    VoxOffset { found: f32 },
    #[error("file truncated at offset {offset}: {needed} bytes needed")]
    Truncated { offset: usize, needed: usize },
    #[error("value {value} does not fit datatype {datatype:?}")]
    Overflow { value: f64, datatype: Datatype },
    #[error("voxel value {value} is not a valid instance id")]
    NotALabel { value: f64 },
    #[error("expected a {expected}-frame volume, found {found}")]
    Frames { expected: usize, found: usize },
    #[error(transparent)]
    Core(#[from] lesion_core::Error),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    fn range(self) -> Option<(f64, f64)> {
        match self {
            Datatype::U8 => Some((0.0, u8::MAX as f64)),
            Datatype::I16 => Some((i16::MIN as f64, i16::MAX as f64)),
            Datatype::I32 => Some((i32::MIN as f64, i32::MAX as f64)),
            Datatype::F32 | Datatype::F64 => None,
        }
    }
}

/// Parsed header plus the raw bytes it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    raw: [u8; HEADER_SIZE],
    big_endian: bool,
    /// Spatial dims followed by the frame count (1 for 3D volumes).
    pub dims: [usize; 4],
    pub datatype: Datatype,
    pub spacing: [f64; 3],
    pub slope: f64,
    pub intercept: f64,
    pub vox_offset: usize,
}

struct Bytes<'a> {
    b: &'a [u8],
    be: bool,
}

impl Bytes<'_> {
    fn i16(&self, at: usize) -> i16 {
        let a = [self.b[at], self.b[at + 1]];
        if self.be { i16::from_be_bytes(a) } else { i16::from_le_bytes(a) }
    }

    fn i32(&self, at: usize) -> i32 {
        let a = self.b[at..at + 4].try_into().unwrap();
        if self.be { i32::from_be_bytes(a) } else { i32::from_le_bytes(a) }
    }

    fn f32(&self, at: usize) -> f32 {
        let a = self.b[at..at + 4].try_into().unwrap();
        if self.be { f32::from_be_bytes(a) } else { f32::from_le_bytes(a) }
    }
}

fn put_i16(raw: &mut [u8], at: usize, v: i16, be: bool) {
    raw[at..at + 2].copy_from_slice(&if be { v.to_be_bytes() } else { v.to_le_bytes() });
}

fn put_i32(raw: &mut [u8], at: usize, v: i32, be: bool) {
    raw[at..at + 4].copy_from_slice(&if be { v.to_be_bytes() } else { v.to_le_bytes() });
}

fn put_f32(raw: &mut [u8], at: usize, v: f32, be: bool) {
    raw[at..at + 4].copy_from_slice(&if be { v.to_be_bytes() } else { v.to_le_bytes() });
}

impl VolumeHeader {
    /// Parse and validate the first 348 bytes of a file.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(NiftiError::Truncated { offset: bytes.len(), needed: HEADER_SIZE });
        }
        let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let big_endian = match (le, be) {
            (348, _) => false,
            (_, 348) => true,
            _ => return Err(NiftiError::HeaderSize { found: le }),
        };
        let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().unwrap();
        if &magic != b"n+1\0" {
            return Err(NiftiError::Magic { found: magic });
        }
        let r = Bytes { b: bytes, be: big_endian };
        let code = r.i16(OFF_DATATYPE);
        let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype { code })?;

        let raw_dims: [i16; 8] = std::array::from_fn(|i| r.i16(OFF_DIM + 2 * i));
        let nd = raw_dims[0];
        if !(1..=4).contains(&nd) || raw_dims[1..=nd as usize].iter().any(|&d| d < 1) {
            return Err(NiftiError::Dims { dims: raw_dims });
        }
        let dim = |i: usize| if i <= nd as usize { raw_dims[i] as usize } else { 1 };
        let dims = [dim(1), dim(2), dim(3), dim(4)];

        let pix: [f32; 3] = std::array::from_fn(|i| r.f32(OFF_PIXDIM + 4 * (i + 1)));
        // unused trailing axes may carry pixdim 0
        let pix_fixed: [f64; 3] = std::array::from_fn(|i| if i as i16 >= nd && pix[i] == 0.0 { 1.0 } else { pix[i] as f64 });
        if pix_fixed.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(NiftiError::Spacing { spacing: pix });
        }

        let vox = r.f32(OFF_VOX_OFFSET);
        if !(vox.is_finite() && vox >= HEADER_SIZE as f32 && vox.fract() == 0.0) {
            return Err(NiftiError::VoxOffset { found: vox });
        }

        let mut raw = [0u8; HEADER_SIZE];
        raw.copy_from_slice(&bytes[..HEADER_SIZE]);
        Ok(Self {
            raw,
            big_endian,
            dims,
            datatype,
            spacing: pix_fixed,
            slope: r.f32(OFF_SLOPE) as f64,
            intercept: r.f32(OFF_INTER) as f64,
            vox_offset: vox as usize,
        })
    }

    /// A fresh little-endian header with millimeter units.
    pub fn new(dims: [usize; 4], spacing: [f64; 3], datatype: Datatype) -> Self {
        let mut raw = [0u8; HEADER_SIZE];
        put_i32(&mut raw, 0, HEADER_SIZE as i32, false);
        put_f32(&mut raw, OFF_PIXDIM, 1.0, false);
        raw[OFF_XYZT_UNITS] = 2;
        let mut h = Self { raw, big_endian: false, dims, datatype, spacing, slope: 1.0, intercept: 0.0, vox_offset: DATA_OFFSET };
        h.sync_raw();
        h
    }

    pub fn is_big_endian(&self) -> bool {
        self.big_endian
    }

    pub fn raw(&self) -> &[u8; HEADER_SIZE] {
        &self.raw
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Copy of `self` describing new geometry and storage, other fields kept.
    pub fn derive(&self, dims: [usize; 4], spacing: [f64; 3], datatype: Datatype) -> Self {
        let mut h = Self { dims, spacing, datatype, slope: 1.0, intercept: 0.0, vox_offset: DATA_OFFSET, ..self.clone() };
        h.sync_raw();
        h
    }

    /// Write the interpreted fields back into the raw bytes.
    fn sync_raw(&mut self) {
        let be = self.big_endian;
        let nd: i16 = if self.dims[3] > 1 { 4 } else { 3 };
        put_i16(&mut self.raw, OFF_DIM, nd, be);
        for i in 0..7 {
            let v = if i < 4 { self.dims[i] as i16 } else { 1 };
            put_i16(&mut self.raw, OFF_DIM + 2 * (i + 1), v, be);
        }
        put_i16(&mut self.raw, OFF_DATATYPE, self.datatype.code(), be);
        put_i16(&mut self.raw, OFF_BITPIX, 8 * self.datatype.size() as i16, be);
        for i in 0..3 {
            put_f32(&mut self.raw, OFF_PIXDIM + 4 * (i + 1), self.spacing[i] as f32, be);
        }
        put_f32(&mut self.raw, OFF_VOX_OFFSET, self.vox_offset as f32, be);
        put_f32(&mut self.raw, OFF_SLOPE, self.slope as f32, be);
        put_f32(&mut self.raw, OFF_INTER, self.intercept as f32, be);
        self.raw[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");
    }

    fn grid_dims(&self) -> Result<Dims> {
        Ok(Dims::new(self.dims[0], self.dims[1], self.dims[2])?)
    }

    fn grid_spacing(&self) -> Result<Spacing> {
        Ok(Spacing::new(self.spacing[0], self.spacing[1], self.spacing[2])?)
    }
}

/// A volume with scaled voxel values, frames stacked x-fastest per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub header: VolumeHeader,
    pub values: Vec<f64>,
}

impl Volume {
    fn frame_grid(&self, frame: usize) -> Result<Grid<f64>> {
        let n = self.header.dims[..3].iter().product::<usize>();
        let data = self.values[frame * n..(frame + 1) * n].to_vec();
        Ok(Grid::from_vec(self.header.grid_dims()?, self.header.grid_spacing()?, data)?)
    }

    fn require_frames(&self, n: usize) -> Result<()> {
        if self.header.dims[3] != n {
            return Err(NiftiError::Frames { expected: n, found: self.header.dims[3] });
        }
        Ok(())
    }

    pub fn to_grid(&self) -> Result<Grid<f64>> {
        self.require_frames(1)?;
        self.frame_grid(0)
    }

    /// Values clamped to [0, 1].
    pub fn to_prob_map(&self) -> Result<ProbMap> {
        Ok(ProbMap::from_grid(self.to_grid()?))
    }

    /// Non-negative integer values as instance ids.
    pub fn to_label_map(&self) -> Result<LabelMap> {
        let g = self.to_grid()?;
        if let Some(&value) = g.data().iter().find(|&&v| !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64)) {
            return Err(NiftiError::NotALabel { value });
        }
        Ok(g.map(|&v| v as u32))
    }

    /// Three frames holding the x, y and z offset components.
    pub fn to_offsets(&self) -> Result<OffsetField> {
        self.require_frames(3)?;
        Ok(OffsetField::new(self.frame_grid(0)?, self.frame_grid(1)?, self.frame_grid(2)?)?)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NiftiError + '_ {
    move |source| NiftiError::Io { path: path.to_path_buf(), source }
}

/// Decode a volume from the bytes of a file (gzip detected by magic).
pub fn decode(bytes: &[u8]) -> Result<Volume> {
    let plain;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|source| NiftiError::Io { path: PathBuf::from("<gzip stream>"), source })?;
        plain = out;
        &plain[..]
    } else {
        bytes
    };
    let header = VolumeHeader::parse(bytes)?;
    let size = header.datatype.size();
    let n = header.voxel_count();
    let needed = header.vox_offset + n * size;
    if bytes.len() < needed {
        return Err(NiftiError::Truncated { offset: bytes.len(), needed });
    }
    let data = &bytes[header.vox_offset..needed];
    let r = Bytes { b: data, be: header.big_endian };
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * size;
        values.push(match header.datatype {
            Datatype::U8 => data[at] as f64,
            Datatype::I16 => r.i16(at) as f64,
            Datatype::I32 => r.i32(at) as f64,
            Datatype::F32 => r.f32(at) as f64,
            Datatype::F64 => {
                let a = data[at..at + 8].try_into().unwrap();
                if header.big_endian { f64::from_be_bytes(a) } else { f64::from_le_bytes(a) }
            }
        });
    }
    // slope 0 means unscaled
    if header.slope != 0.0 && (header.slope != 1.0 || header.intercept != 0.0) {
        for v in &mut values {
            *v = *v * header.slope + header.intercept;
        }
    }
    Ok(Volume { header, values })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes)
}

/// Encode values under `header` (its slope/intercept must be 1 and 0).
pub fn encode(header: &VolumeHeader, values: &[f64]) -> Result<Vec<u8>> {
    let dt = header.datatype;
    let be = header.big_endian;
    let mut out = Vec::with_capacity(DATA_OFFSET + values.len() * dt.size());
    out.extend_from_slice(&header.raw);
    out.resize(DATA_OFFSET, 0);
    for &v in values {
        if let Some((lo, hi)) = dt.range() {
            if !(v >= lo && v <= hi && v.fract() == 0.0) {
                return Err(NiftiError::Overflow { value: v, datatype: dt });
            }
        }
        match dt {
            Datatype::U8 => out.push(v as u8),
            Datatype::I16 => out.extend_from_slice(&if be { (v as i16).to_be_bytes() } else { (v as i16).to_le_bytes() }),
            Datatype::I32 => out.extend_from_slice(&if be { (v as i32).to_be_bytes() } else { (v as i32).to_le_bytes() }),
            Datatype::F32 => out.extend_from_slice(&if be { (v as f32).to_be_bytes() } else { (v as f32).to_le_bytes() }),
            Datatype::F64 => out.extend_from_slice(&if be { v.to_be_bytes() } else { v.to_le_bytes() }),
        }
    }
    Ok(out)
}

/// Write `values` with the geometry of `dims`/`spacing`, keeping the other
/// header fields of `template`. Paths ending in `.gz` are gzip-compressed.
pub fn write_values(
    path: impl AsRef<Path>,
    dims: [usize; 4],
    spacing: [f64; 3],
    values: &[f64],
    datatype: Datatype,
    template: Option<&VolumeHeader>,
) -> Result<()> {
    let path = path.as_ref();
    let header = match template {
        Some(t) => t.derive(dims, spacing, datatype),
        None => VolumeHeader::new(dims, spacing, datatype),
    };
    let bytes = encode(&header, values)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    let payload = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(io_err(path))
}

fn dims4(d: Dims, frames: usize) -> [usize; 4] {
    [d.w, d.h, d.d, frames]
}

/// Smallest integer datatype holding every id of `m`.
pub fn label_datatype(m: &LabelMap) -> Datatype {
    match m.data().iter().copied().max().unwrap_or(0) {
        0..=255 => Datatype::U8,
        256..=32767 => Datatype::I16,
        _ => Datatype::I32,
    }
}

pub fn write_labels(path: impl AsRef<Path>, m: &LabelMap, datatype: Datatype, template: Option<&VolumeHeader>) -> Result<()> {
    let values: Vec<f64> = m.data().iter().map(|&k| k as f64).collect();
    write_values(path, dims4(m.dims(), 1), m.spacing().as_array(), &values, datatype, template)
}

pub fn write_grid(path: impl AsRef<Path>, g: &Grid<f64>, datatype: Datatype, template: Option<&VolumeHeader>) -> Result<()> {
    write_values(path, dims4(g.dims(), 1), g.spacing().as_array(), g.data(), datatype, template)
}

pub fn write_offsets(path: impl AsRef<Path>, o: &OffsetField, datatype: Datatype, template: Option<&VolumeHeader>) -> Result<()> {
    let mut values = Vec::with_capacity(3 * o.dims().len());
    for g in [&o.dx, &o.dy, &o.dz] {
        values.extend_from_slice(g.data());
    }
    write_values(path, dims4(o.dims(), 3), o.spacing().as_array(), &values, datatype, template)
}
