//! NIfTI-1 single-file volumes (`.nii`, `.nii.gz`).
//!
//! Reading accepts either byte order, applies `scl_slope`/`scl_inter`, and
//! reorients the voxel array into the canonical axis-aligned frame: each
//! voxel axis is mapped to the world axis its direction cosine is closest
//! to, flipped where it points the negative way. Oblique rotations are
//! dropped; only the axis permutation and flips survive.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, VoxelGrid};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// On-disk scalar types supported for reading and writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => DataType::U8,
            4 => DataType::I16,
            8 => DataType::I32,
            16 => DataType::F32,
            64 => DataType::F64,
            256 => DataType::I8,
            512 => DataType::U16,
            768 => DataType::U32,
            1024 => DataType::I64,
            1280 => DataType::U64,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::I32 => 8,
            DataType::F32 => 16,
            DataType::F64 => 64,
            DataType::I8 => 256,
            DataType::U16 => 512,
            DataType::U32 => 768,
            DataType::I64 => 1024,
            DataType::U64 => 1280,
        }
    }

    fn size(self) -> usize {
        match self {
            DataType::U8 | DataType::I8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::I64 | DataType::U64 | DataType::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, DataType::F32 | DataType::F64)
    }

    fn decode<B: ByteOrder>(self, b: &[u8]) -> f64 {
        match self {
            DataType::U8 => b[0] as f64,
            DataType::I8 => b[0] as i8 as f64,
            DataType::I16 => B::read_i16(b) as f64,
            DataType::U16 => B::read_u16(b) as f64,
            DataType::I32 => B::read_i32(b) as f64,
            DataType::U32 => B::read_u32(b) as f64,
            DataType::I64 => B::read_i64(b) as f64,
            DataType::U64 => B::read_u64(b) as f64,
            DataType::F32 => B::read_f32(b) as f64,
            DataType::F64 => B::read_f64(b),
        }
    }

    fn encode<B: ByteOrder>(self, v: f64, out: &mut [u8]) {
        // integer targets saturate after rounding
        match self {
            DataType::U8 => out[0] = v.round() as u8,
            DataType::I8 => out[0] = v.round() as i8 as u8,
            DataType::I16 => B::write_i16(out, v.round() as i16),
            DataType::U16 => B::write_u16(out, v.round() as u16),
            DataType::I32 => B::write_i32(out, v.round() as i32),
            DataType::U32 => B::write_u32(out, v.round() as u32),
            DataType::I64 => B::write_i64(out, v.round() as i64),
            DataType::U64 => B::write_u64(out, v.round() as u64),
            DataType::F32 => B::write_f32(out, v as f32),
            DataType::F64 => B::write_f64(out, v),
        }
    }
}

/// How a grid is laid out on disk when saving.
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    pub datatype: DataType,
    pub endian: Endian,
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl Encoding {
    pub fn float32() -> Self {
        Self {
            datatype: DataType::F32,
            endian: Endian::Little,
            scl_slope: 1.0,
            scl_inter: 0.0,
        }
    }

    pub fn uint8() -> Self {
        Self {
            datatype: DataType::U8,
            ..Self::float32()
        }
    }
}

struct Header {
    endian: Endian,
    dims: [usize; 3],
    datatype: DataType,
    pixdim: [f32; 8],
    vox_offset: usize,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 3],
    qoffset: [f32; 3],
    srow: [[f32; 4]; 3],
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedVolume(msg.into())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| malformed(format!("{}: gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(malformed(format!("header truncated ({} bytes)", bytes.len())));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_header_with::<LittleEndian>(bytes, Endian::Little)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse_header_with::<BigEndian>(bytes, Endian::Big)
    } else {
        Err(malformed("sizeof_hdr is not 348 in either byte order"))
    }
}

fn parse_header_with<B: ByteOrder>(b: &[u8], endian: Endian) -> Result<Header> {
    let magic = &b[344..348];
    if magic != MAGIC_SINGLE {
        return Err(if magic == b"ni1\0" {
            Error::UnsupportedVolume("two-file (.hdr/.img) NIfTI is not supported".into())
        } else {
            malformed("missing n+1 magic")
        });
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&b[40 + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(malformed(format!("dim[0] = {ndim}")));
    }
    if ndim < 3 {
        return Err(Error::UnsupportedVolume(format!("{ndim}-D data, expected 3-D")));
    }
    for (axis, &extent) in dim.iter().enumerate().take(ndim as usize + 1).skip(4) {
        if extent > 1 {
            return Err(Error::UnsupportedVolume(format!(
                "{ndim}-D data with dim[{axis}] = {extent}, expected a single 3-D frame"
            )));
        }
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(malformed(format!("non-positive dims {:?}", &dim[1..4])));
    }
    let code = B::read_i16(&b[70..]);
    let datatype = DataType::from_code(code)
        .ok_or_else(|| Error::UnsupportedVolume(format!("datatype code {code}")))?;
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = B::read_f32(&b[76 + 4 * i..]);
    }
    let vox_offset = B::read_f32(&b[108..]);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(malformed(format!("vox_offset {vox_offset}")));
    }
    let read3 = |off: usize| [B::read_f32(&b[off..]), B::read_f32(&b[off + 4..]), B::read_f32(&b[off + 8..])];
    let read4 = |off: usize| {
        [
            B::read_f32(&b[off..]),
            B::read_f32(&b[off + 4..]),
            B::read_f32(&b[off + 8..]),
            B::read_f32(&b[off + 12..]),
        ]
    };
    Ok(Header {
        endian,
        dims: [dim[1] as usize, dim[2] as usize, dim[3] as usize],
        datatype,
        pixdim,
        vox_offset: vox_offset as usize,
        scl_slope: B::read_f32(&b[112..]),
        scl_inter: B::read_f32(&b[116..]),
        qform_code: B::read_i16(&b[252..]),
        sform_code: B::read_i16(&b[254..]),
        quatern: read3(256),
        qoffset: read3(268),
        srow: [read4(280), read4(296), read4(312)],
    })
}

/// Voxel-to-world affine as (3x3 linear part, translation).
fn affine(h: &Header) -> ([[f64; 3]; 3], [f64; 3]) {
    if h.sform_code > 0 {
        let mut m = [[0.0; 3]; 3];
        let mut t = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = h.srow[r][c] as f64;
            }
            t[r] = h.srow[r][3] as f64;
        }
        return (m, t);
    }
    let px = [h.pixdim[1] as f64, h.pixdim[2] as f64, h.pixdim[3] as f64];
    if h.qform_code > 0 {
        let [b, c, d] = h.quatern.map(|v| v as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let mut m = [[0.0; 3]; 3];
        for row in 0..3 {
            m[row][0] = r[row][0] * px[0];
            m[row][1] = r[row][1] * px[1];
            m[row][2] = r[row][2] * px[2] * qfac;
        }
        return (m, h.qoffset.map(|v| v as f64));
    }
    (
        [[px[0], 0.0, 0.0], [0.0, px[1], 0.0], [0.0, 0.0, px[2]]],
        [0.0; 3],
    )
}

/// Axis permutation (voxel axis -> world axis) and flips closest to `m`.
fn closest_axes(m: &[[f64; 3]; 3]) -> ([usize; 3], [bool; 3]) {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut best = PERMS[0];
    let mut best_score = f64::NEG_INFINITY;
    for perm in PERMS {
        let score: f64 = (0..3).map(|j| m[perm[j]][j].abs()).sum();
        if score > best_score {
            best_score = score;
            best = perm;
        }
    }
    let flip = [0, 1, 2].map(|j| m[best[j]][j] < 0.0);
    (best, flip)
}

/// Decoded, reoriented voxel values in f64 plus the canonical geometry.
fn read_canonical(path: &Path) -> Result<(Geometry, Vec<f64>, DataType)> {
    let bytes = read_all(path)?;
    let h = parse_header(&bytes)?;
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let size = h.datatype.size();
    let end = h.vox_offset + n * size;
    if bytes.len() < end {
        return Err(malformed(format!(
            "{}: truncated data ({} bytes, expected {end})",
            path.display(),
            bytes.len()
        )));
    }
    let raw = &bytes[h.vox_offset..end];
    let decode: fn(DataType, &[u8]) -> f64 = match h.endian {
        Endian::Little => |t, b| t.decode::<LittleEndian>(b),
        Endian::Big => |t, b| t.decode::<BigEndian>(b),
    };
    let (slope, inter) = if h.scl_slope != 0.0 && h.scl_slope.is_finite() {
        (h.scl_slope as f64, if h.scl_inter.is_finite() { h.scl_inter as f64 } else { 0.0 })
    } else {
        (1.0, 0.0)
    };

    let (m, t) = affine(&h);
    let (perm, flip) = closest_axes(&m);
    let mut spacing_old = [0.0; 3];
    for (j, s) in spacing_old.iter_mut().enumerate() {
        *s = (0..3).map(|r| m[r][j] * m[r][j]).sum::<f64>().sqrt();
    }
    if spacing_old.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidGeometry(format!(
            "{}: non-positive voxel spacing {spacing_old:?}",
            path.display()
        )));
    }
    let mut dims = [0usize; 3];
    let mut spacing = [0.0; 3];
    for j in 0..3 {
        dims[perm[j]] = h.dims[j];
        spacing[perm[j]] = spacing_old[j];
    }
    // world position of the old voxel that becomes canonical (0,0,0)
    let corner = [0, 1, 2].map(|j| if flip[j] { (h.dims[j] - 1) as f64 } else { 0.0 });
    let origin = [0, 1, 2].map(|r| t[r] + (0..3).map(|c| m[r][c] * corner[c]).sum::<f64>());
    let geometry = Geometry::new(dims, spacing, origin)?;

    let mut out = vec![0.0; n];
    for (l, v) in out.iter_mut().enumerate() {
        let p = geometry.ijk(l);
        let mut o = [0usize; 3];
        for j in 0..3 {
            let w = p[perm[j]];
            o[j] = if flip[j] { h.dims[j] - 1 - w } else { w };
        }
        let src = o[0] + h.dims[0] * (o[1] + h.dims[1] * o[2]);
        *v = decode(h.datatype, &raw[src * size..(src + 1) * size]) * slope + inter;
    }
    Ok((geometry, out, h.datatype))
}

/// Load a 3-D image in true Hounsfield units.
pub fn load_volume(path: impl AsRef<Path>) -> Result<VoxelGrid<f32>> {
    let (geometry, values, _) = read_canonical(path.as_ref())?;
    VoxelGrid::from_vec(geometry, values.into_iter().map(|v| v as f32).collect())
}

/// Load an integer label map; non-integral or negative values are rejected.
pub fn load_labels(path: impl AsRef<Path>) -> Result<VoxelGrid<u32>> {
    let path = path.as_ref();
    let (geometry, values, dtype) = read_canonical(path)?;
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
            return Err(malformed(format!(
                "{}: label map holds non-label value {v} (datatype {dtype:?})",
                path.display()
            )));
        }
        labels.push(v as u32);
    }
    VoxelGrid::from_vec(geometry, labels)
}

/// Load a mask: voxels equal to `label`, or all nonzero voxels when `label` is `None`.
pub fn load_mask(path: impl AsRef<Path>, label: Option<u32>) -> Result<BinaryMask> {
    let labels = load_labels(path)?;
    Ok(match label {
        Some(l) => labels.select(l),
        None => labels.map(|&v| v != 0),
    })
}

pub fn save_volume(grid: &VoxelGrid<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_with(grid.geometry(), |l| grid.data()[l] as f64, Encoding::float32(), path.as_ref())
}

pub fn save_volume_encoded(grid: &VoxelGrid<f32>, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
    save_with(grid.geometry(), |l| grid.data()[l] as f64, encoding, path.as_ref())
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_with(mask.geometry(), |l| mask.data()[l] as u8 as f64, Encoding::uint8(), path.as_ref())
}

pub fn save_labels(labels: &VoxelGrid<u8>, path: impl AsRef<Path>) -> Result<()> {
    save_with(labels.geometry(), |l| labels.data()[l] as f64, Encoding::uint8(), path.as_ref())
}

fn save_with(geometry: &Geometry, value: impl Fn(usize) -> f64, enc: Encoding, path: &Path) -> Result<()> {
    let bytes = match enc.endian {
        Endian::Little => encode::<LittleEndian>(geometry, value, enc)?,
        Endian::Big => encode::<BigEndian>(geometry, value, enc)?,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let res = if gz {
        let mut enc = GzEncoder::new(w, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish()).and_then(|mut w| w.flush())
    } else {
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

fn encode<B: ByteOrder>(g: &Geometry, value: impl Fn(usize) -> f64, enc: Encoding) -> Result<Vec<u8>> {
    if g.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::UnsupportedVolume(format!("dims {:?} exceed NIfTI-1 limits", g.dims)));
    }
    if enc.scl_slope == 0.0 {
        return Err(Error::InvalidConfig("scl_slope must be nonzero".into()));
    }
    let size = enc.datatype.size();
    let n = g.len();
    let mut out = vec![0u8; VOX_OFFSET + n * size];
    let h = &mut out[..HEADER_SIZE];
    B::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[39] = 0; // dim_info
    let dim: [i16; 8] = [3, g.dims[0] as i16, g.dims[1] as i16, g.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        B::write_i16(&mut h[40 + 2 * i..], *d);
    }
    B::write_i16(&mut h[70..], enc.datatype.code());
    B::write_i16(&mut h[72..], (size * 8) as i16);
    let pixdim = [1.0, g.spacing[0] as f32, g.spacing[1] as f32, g.spacing[2] as f32, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        B::write_f32(&mut h[76 + 4 * i..], *p);
    }
    B::write_f32(&mut h[108..], VOX_OFFSET as f32);
    B::write_f32(&mut h[112..], enc.scl_slope);
    B::write_f32(&mut h[116..], enc.scl_inter);
    h[123] = 2; // xyzt_units: mm
    B::write_i16(&mut h[252..], 1);
    B::write_i16(&mut h[254..], 1);
    for a in 0..3 {
        B::write_f32(&mut h[268 + 4 * a..], g.origin[a] as f32);
        let row = 280 + 16 * a;
        B::write_f32(&mut h[row + 4 * a..], g.spacing[a] as f32);
        B::write_f32(&mut h[row + 12..], g.origin[a] as f32);
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE);

    let slope = enc.scl_slope as f64;
    let inter = enc.scl_inter as f64;
    let data = &mut out[VOX_OFFSET..];
    for l in 0..n {
        let mut stored = (value(l) - inter) / slope;
        if enc.datatype.is_integer() {
            stored = stored.round();
        }
        enc.datatype.encode::<B>(stored, &mut data[l * size..(l + 1) * size]);
    }
    Ok(out)
}
