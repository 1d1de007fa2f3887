//! Minimal NIfTI-1 reader/writer.
//!
//! Covers exactly the single-file subset this toolkit needs: magic `n+1\0`,
//! 348-byte header, little- or big-endian, datatypes u8/i16/f32/f64,
//! intensity scaling via `scl_slope`/`scl_inter`, sform-then-qform affines,
//! and RFC 1952 gzip when (and only when) the filename ends in `.gz`.
//! Values are canonicalized to f64 on load.
//!
//! The writer always emits little-endian with `scl_slope = 1`, a 352-byte
//! data offset, an sform affine, and zeroed defaults for every header field
//! this module does not honor (descrip, intent, units, ...). Files written
//! here are deterministic byte-for-byte, including the gzip container
//! (flate2 stamps mtime = 0); f64 payloads round-trip bitwise, NaN and
//! infinities included.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 348;
/// Data offset in files we write: header + 4-byte "no extensions" flag.
const WRITE_VOX_OFFSET: u32 = 352;

/// Byte offsets of the honored NIfTI-1 header fields.
mod offset {
    pub const SIZEOF_HDR: usize = 0; // i32, must be 348
    pub const DIM: usize = 40; // i16[8]
    pub const DATATYPE: usize = 70; // i16
    pub const BITPIX: usize = 72; // i16
    pub const PIXDIM: usize = 76; // f32[8]; pixdim[0] is qfac
    pub const VOX_OFFSET: usize = 108; // f32
    pub const SCL_SLOPE: usize = 112; // f32
    pub const SCL_INTER: usize = 116; // f32
    pub const QFORM_CODE: usize = 252; // i16
    pub const SFORM_CODE: usize = 254; // i16
    pub const QUATERN: usize = 256; // f32[6]: b, c, d, qoffset x, y, z
    pub const SROW_X: usize = 280; // f32[4] × 3 rows
    pub const MAGIC: usize = 344; // [u8;4]
}

/// Supported NIfTI-1 datatype codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    F32,
    F64,
}

impl Datatype {
    pub fn from_code(code: i16, path: &Path) -> Result<Self> {
        match code {
            2 => Ok(Datatype::U8),
            4 => Ok(Datatype::I16),
            16 => Ok(Datatype::F32),
            64 => Ok(Datatype::F64),
            _ => Err(Error::UnsupportedDatatype {
                path: path.to_path_buf(),
                code,
            }),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::U8 => 8,
            Datatype::I16 => 16,
            Datatype::F32 => 32,
            Datatype::F64 => 64,
        }
    }

    fn byte_size(self) -> usize {
        (self.bitpix() / 8) as usize
    }
}

/// A NIfTI volume canonicalized to f64.
///
/// `data` keeps the on-disk order: the first axis varies fastest, so the
/// linear index of `(x, y, z, t)` is `x + nx·(y + ny·(z + nz·t))`. 3-D
/// volumes have `dims[3] == 1`.
#[derive(Clone, Debug)]
pub struct NiftiVolume {
    pub dims: [usize; 4],
    /// mm per spatial axis (always > 0).
    pub voxel_size: [f64; 3],
    /// Voxel-to-world transform; sform preferred over qform on load.
    pub affine: [[f64; 4]; 4],
    /// Datatype the data had on disk (F64 for volumes built in memory).
    pub datatype: Datatype,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub data: Vec<f64>,
}

impl NiftiVolume {
    /// Build an in-memory volume with a diagonal affine from `voxel_size`.
    pub fn new(dims: [usize; 4], voxel_size: [f64; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "volume dims must all be ≥ 1, got {dims:?}"
            )));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voxel size must be positive, got {voxel_size:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match dims {:?} (= {} values)",
                data.len(),
                dims,
                n
            )));
        }
        let mut affine = [[0.0; 4]; 4];
        for i in 0..3 {
            affine[i][i] = voxel_size[i];
        }
        affine[3][3] = 1.0;
        Ok(NiftiVolume {
            dims,
            voxel_size,
            affine,
            datatype: Datatype::F64,
            scl_slope: 1.0,
            scl_inter: 0.0,
            data,
        })
    }

    pub fn new_3d(dims: [usize; 3], voxel_size: [f64; 3], data: Vec<f64>) -> Result<Self> {
        Self::new([dims[0], dims[1], dims[2], 1], voxel_size, data)
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    /// Number of spatial voxels (product of the first three dims).
    pub fn nvox(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Number of volumes along the 4th axis.
    pub fn nvols(&self) -> usize {
        self.dims[3]
    }

    pub fn index(&self, x: usize, y: usize, z: usize, t: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2] && t < self.dims[3]);
        x + self.dims[0] * (y + self.dims[1] * (z + self.dims[2] * t))
    }

    pub fn value(&self, x: usize, y: usize, z: usize, t: usize) -> f64 {
        self.data[self.index(x, y, z, t)]
    }
}

fn is_gz(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".gz")
}

fn read_all_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        MultiGzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        io::BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

/// Honored header fields, endian-resolved.
struct RawHeader {
    dims: [usize; 4],
    datatype: Datatype,
    pixdim: [f32; 8],
    vox_offset: f32,
    scl_slope: f32,
    scl_inter: f32,
    qform_code: i16,
    sform_code: i16,
    quatern: [f32; 6],
    srow: [[f32; 4]; 3],
}

fn parse_header<E: ByteOrder>(h: &[u8], path: &Path) -> Result<RawHeader> {
    let ndim = E::read_i16(&h[offset::DIM..]);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("dim[0] = {ndim} out of range 1..=7")));
    }
    let mut dims = [1usize; 4];
    for axis in 1..=ndim as usize {
        let extent = E::read_i16(&h[offset::DIM + 2 * axis..]);
        if extent < 1 {
            return Err(Error::format(
                path,
                format!("dim[{axis}] = {extent} (must be ≥ 1)"),
            ));
        }
        if axis <= 4 {
            dims[axis - 1] = extent as usize;
        } else if extent > 1 {
            return Err(Error::format(
                path,
                format!("{}-dimensional data not supported (dim[{axis}] = {extent})", ndim),
            ));
        }
    }

    let dt_code = E::read_i16(&h[offset::DATATYPE..]);
    let datatype = Datatype::from_code(dt_code, path)?;
    let bitpix = E::read_i16(&h[offset::BITPIX..]);
    if bitpix != datatype.bitpix() {
        return Err(Error::format(
            path,
            format!(
                "bitpix {bitpix} inconsistent with datatype code {dt_code} (expected {})",
                datatype.bitpix()
            ),
        ));
    }

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&h[offset::PIXDIM + 4 * i..]);
    }
    let mut quatern = [0f32; 6];
    for (i, q) in quatern.iter_mut().enumerate() {
        *q = E::read_f32(&h[offset::QUATERN + 4 * i..]);
    }
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = E::read_f32(&h[offset::SROW_X + 16 * r + 4 * c..]);
        }
    }

    Ok(RawHeader {
        dims,
        datatype,
        pixdim,
        vox_offset: E::read_f32(&h[offset::VOX_OFFSET..]),
        scl_slope: E::read_f32(&h[offset::SCL_SLOPE..]),
        scl_inter: E::read_f32(&h[offset::SCL_INTER..]),
        qform_code: E::read_i16(&h[offset::QFORM_CODE..]),
        sform_code: E::read_i16(&h[offset::SFORM_CODE..]),
        quatern,
        srow,
    })
}

/// sform when sform_code > 0, else qform (quaternion method), else a
/// pixdim-diagonal fallback.
fn affine_from(h: &RawHeader) -> [[f64; 4]; 4] {
    let mut a = [[0.0; 4]; 4];
    a[3][3] = 1.0;
    if h.sform_code > 0 {
        for r in 0..3 {
            for c in 0..4 {
                a[r][c] = h.srow[r][c] as f64;
            }
        }
        return a;
    }
    if h.qform_code > 0 {
        let (b, c, d) = (h.quatern[0] as f64, h.quatern[1] as f64, h.quatern[2] as f64);
        let aa = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let (px, py, pz) = (
            h.pixdim[1] as f64,
            h.pixdim[2] as f64,
            qfac * h.pixdim[3] as f64,
        );
        let rot = [
            [aa * aa + b * b - c * c - d * d, 2.0 * (b * c - aa * d), 2.0 * (b * d + aa * c)],
            [2.0 * (b * c + aa * d), aa * aa + c * c - b * b - d * d, 2.0 * (c * d - aa * b)],
            [2.0 * (b * d - aa * c), 2.0 * (c * d + aa * b), aa * aa + d * d - b * b - c * c],
        ];
        let scale = [px, py, pz];
        for r in 0..3 {
            for cidx in 0..3 {
                a[r][cidx] = rot[r][cidx] * scale[cidx];
            }
            a[r][3] = h.quatern[3 + r] as f64;
        }
        return a;
    }
    for i in 0..3 {
        a[i][i] = h.pixdim[1 + i] as f64;
    }
    a
}

fn decode_payload<E: ByteOrder>(
    bytes: &[u8],
    n: usize,
    dt: Datatype,
    path: &Path,
) -> Result<Vec<f64>> {
    let need = n * dt.byte_size();
    if bytes.len() < need {
        return Err(Error::io(
            path,
            io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("truncated payload: need {need} bytes, found {}", bytes.len()),
            ),
        ));
    }
    let mut out = Vec::with_capacity(n);
    match dt {
        Datatype::U8 => out.extend(bytes[..n].iter().map(|&b| b as f64)),
        Datatype::I16 => {
            out.extend((0..n).map(|i| E::read_i16(&bytes[2 * i..]) as f64));
        }
        Datatype::F32 => {
            out.extend((0..n).map(|i| E::read_f32(&bytes[4 * i..]) as f64));
        }
        Datatype::F64 => {
            out.extend((0..n).map(|i| E::read_f64(&bytes[8 * i..])));
        }
    }
    Ok(out)
}

/// Read a `.nii` / `.nii.gz` volume, canonicalizing values to f64.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = read_all_bytes(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("file is {} bytes, shorter than a NIfTI-1 header", bytes.len()),
        ));
    }

    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(Error::format(path, "two-file NIfTI (.hdr/.img) is not supported"));
    }
    if magic != b"n+1\0" {
        return Err(Error::format(path, format!("bad magic {magic:?} (want \"n+1\\0\")")));
    }

    let header = if LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_LEN as i32 {
        parse_header::<LittleEndian>(&bytes[..HEADER_LEN], path)?
    } else if BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_LEN as i32 {
        parse_header::<BigEndian>(&bytes[..HEADER_LEN], path)?
    } else {
        return Err(Error::format(path, "sizeof_hdr is not 348 in either byte order"));
    };
    let big_endian = BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == HEADER_LEN as i32
        && LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) != HEADER_LEN as i32;

    let start = header.vox_offset.round() as i64;
    if start < HEADER_LEN as i64 || start as usize > bytes.len() {
        return Err(Error::format(
            path,
            format!("vox_offset {} outside the file", header.vox_offset),
        ));
    }

    let n: usize = header.dims.iter().product();
    let mut data = if big_endian {
        decode_payload::<BigEndian>(&bytes[start as usize..], n, header.datatype, path)?
    } else {
        decode_payload::<LittleEndian>(&bytes[start as usize..], n, header.datatype, path)?
    };

    // Intensity scaling. slope == 1, inter == 0 is skipped outright: applying
    // it would still normalize -0.0 to +0.0 and so break bitwise round-trips.
    let slope = header.scl_slope;
    let inter = header.scl_inter;
    if slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        let (s, i) = (slope as f64, inter as f64);
        for v in &mut data {
            *v = *v * s + i;
        }
    }

    // Spatial voxel sizes; a singleton axis may carry pixdim 0 in the wild,
    // which we replace by 1 to keep the voxel_size > 0 invariant.
    let mut voxel_size = [0.0f64; 3];
    for i in 0..3 {
        let p = header.pixdim[1 + i] as f64;
        if p > 0.0 {
            voxel_size[i] = p;
        } else if header.dims[i] == 1 {
            voxel_size[i] = 1.0;
        } else {
            return Err(Error::format(
                path,
                format!("non-positive pixdim[{}] = {p} on an axis of extent {}", i + 1, header.dims[i]),
            ));
        }
    }

    Ok(NiftiVolume {
        dims: header.dims,
        voxel_size,
        affine: affine_from(&header),
        datatype: header.datatype,
        scl_slope: slope,
        scl_inter: inter,
        data,
    })
}

fn put_i16(buf: &mut [u8], at: usize, v: i16) {
    LittleEndian::write_i16(&mut buf[at..], v);
}

fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    LittleEndian::write_f32(&mut buf[at..], v);
}

fn build_header(dims: [usize; 4], voxel_size: [f64; 3], affine: &[[f64; 4]; 4], dt: Datatype) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    LittleEndian::write_i32(&mut h[offset::SIZEOF_HDR..], HEADER_LEN as i32);
    let ndim: i16 = if dims[3] > 1 { 4 } else { 3 };
    put_i16(&mut h, offset::DIM, ndim);
    for axis in 0..4 {
        put_i16(&mut h, offset::DIM + 2 * (axis + 1), dims[axis] as i16);
    }
    for axis in 4..7 {
        put_i16(&mut h, offset::DIM + 2 * (axis + 1), 1);
    }
    put_i16(&mut h, offset::DATATYPE, dt.code());
    put_i16(&mut h, offset::BITPIX, dt.bitpix());
    put_f32(&mut h, offset::PIXDIM, 1.0); // qfac, unused with qform_code 0
    for i in 0..3 {
        put_f32(&mut h, offset::PIXDIM + 4 * (i + 1), voxel_size[i] as f32);
    }
    put_f32(&mut h, offset::VOX_OFFSET, WRITE_VOX_OFFSET as f32);
    put_f32(&mut h, offset::SCL_SLOPE, 1.0);
    put_f32(&mut h, offset::SCL_INTER, 0.0);
    put_i16(&mut h, offset::QFORM_CODE, 0);
    put_i16(&mut h, offset::SFORM_CODE, 1);
    for r in 0..3 {
        for c in 0..4 {
            put_f32(&mut h, offset::SROW_X + 16 * r + 4 * c, affine[r][c] as f32);
        }
    }
    h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

fn write_all(path: &Path, header: &[u8], payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut sink: Box<dyn Write> = if is_gz(path) {
        Box::new(GzEncoder::new(io::BufWriter::new(file), Compression::default()))
    } else {
        Box::new(io::BufWriter::new(file))
    };
    let extension_flag = [0u8; 4]; // no header extensions
    sink.write_all(header)
        .and_then(|_| sink.write_all(&extension_flag))
        .and_then(|_| sink.write_all(payload))
        .and_then(|_| sink.flush())
        .map_err(|e| Error::io(path, e))
}

/// Write a volume as little-endian f64 (datatype 64); gzip iff `.gz`.
pub fn write_nifti(path: impl AsRef<Path>, vol: &NiftiVolume) -> Result<()> {
    let path = path.as_ref();
    let n: usize = vol.dims.iter().product();
    if vol.data.len() != n {
        return Err(Error::InvalidArgument(format!(
            "volume data length {} does not match dims {:?}",
            vol.data.len(),
            vol.dims
        )));
    }
    let header = build_header(vol.dims, vol.voxel_size, &vol.affine, Datatype::F64);
    let mut payload = vec![0u8; n * 8];
    for (i, v) in vol.data.iter().enumerate() {
        LittleEndian::write_f64(&mut payload[8 * i..], *v);
    }
    write_all(path, &header, &payload)
}

/// Write a 3-D u8 code map (datatype 2) — used for `valid` volumes and masks.
pub fn write_nifti_codes(
    path: impl AsRef<Path>,
    dims: [usize; 3],
    voxel_size: [f64; 3],
    affine: &[[f64; 4]; 4],
    codes: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let n = dims[0] * dims[1] * dims[2];
    if codes.len() != n {
        return Err(Error::InvalidArgument(format!(
            "code map length {} does not match dims {:?}",
            codes.len(),
            dims
        )));
    }
    let header = build_header([dims[0], dims[1], dims[2], 1], voxel_size, affine, Datatype::U8);
    write_all(path, &header, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;
    use tempfile::TempDir;

    /// Hand-assemble a header + payload, field by field, independent of the
    /// writer above, per the format's byte offsets.
    fn assemble<E: ByteOrder>(
        dims: &[i16],
        dt_code: i16,
        bitpix: i16,
        scl: (f32, f32),
        payload: &[u8],
    ) -> Vec<u8> {
        let mut h = vec![0u8; HEADER_LEN + 4];
        E::write_i32(&mut h[0..], 348);
        E::write_i16(&mut h[40..], dims.len() as i16 - 1);
        for (i, d) in dims.iter().enumerate().skip(1) {
            E::write_i16(&mut h[40 + 2 * i..], *d);
        }
        E::write_i16(&mut h[70..], dt_code);
        E::write_i16(&mut h[72..], bitpix);
        for i in 1..=3 {
            E::write_f32(&mut h[76 + 4 * i..], 1.0);
        }
        E::write_f32(&mut h[108..], 352.0);
        E::write_f32(&mut h[112..], scl.0);
        E::write_f32(&mut h[116..], scl.1);
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(payload);
        h
    }

    fn write_tmp(name: &str, bytes: &[u8]) -> (TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        (dir, p)
    }

    #[test]
    fn parses_hand_assembled_f32_header() {
        // 2×2×2 f32 volume with scl_slope 2, scl_inter 1: stored v → 2v + 1
        let mut payload = Vec::new();
        for v in 0..8 {
            payload.write_f32::<LittleEndian>(v as f32 - 2.0).unwrap();
        }
        let bytes = assemble::<LittleEndian>(&[0, 2, 2, 2], 16, 32, (2.0, 1.0), &payload);
        let (_dir, p) = write_tmp("lil.nii", &bytes);
        let vol = read_nifti(&p).unwrap();
        assert_eq!(vol.dims, [2, 2, 2, 1]);
        assert_eq!(vol.datatype, Datatype::F32);
        // stored v → 2v + 1
        for (i, v) in vol.data.iter().enumerate() {
            assert_eq!(*v, 2.0 * (i as f64 - 2.0) + 1.0);
        }
    }

    #[test]
    fn big_endian_loads_to_the_same_values() {
        let mut le_payload = Vec::new();
        let mut be_payload = Vec::new();
        for v in [-3i16, 0, 7, 1000] {
            le_payload.write_i16::<LittleEndian>(v).unwrap();
            be_payload.write_i16::<BigEndian>(v).unwrap();
        }
        let le = assemble::<LittleEndian>(&[0, 4], 4, 16, (1.0, 0.0), &le_payload);
        let be = assemble::<BigEndian>(&[0, 4], 4, 16, (1.0, 0.0), &be_payload);
        let (_d1, le_path) = write_tmp("le.nii", &le);
        let (_d2, be_path) = write_tmp("be.nii", &be);
        let a = read_nifti(le_path).unwrap();
        let b = read_nifti(be_path).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.data, vec![-3.0, 0.0, 7.0, 1000.0]);
    }

    #[test]
    fn scl_slope_zero_means_unscaled() {
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(5.0).unwrap();
        let bytes = assemble::<LittleEndian>(&[0, 1], 16, 32, (0.0, 100.0), &payload);
        let (_dir, p) = write_tmp("raw.nii", &bytes);
        let vol = read_nifti(p).unwrap();
        assert_eq!(vol.data, vec![5.0]);
    }

    #[test]
    fn rejects_bad_magic_unsupported_datatype_and_truncation() {
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(1.0).unwrap();

        let mut bad_magic = assemble::<LittleEndian>(&[0, 1], 16, 32, (1.0, 0.0), &payload);
        bad_magic[344] = b'x';
        let (_d1, p) = write_tmp("m.nii", &bad_magic);
        assert!(matches!(read_nifti(p), Err(Error::Format { .. })));

        // datatype 8 = i32: recognized by the standard, not by this reader
        let mut unsupported = assemble::<LittleEndian>(&[0, 1], 8, 32, (1.0, 0.0), &payload);
        LittleEndian::write_i16(&mut unsupported[70..], 8);
        let (_d2, p) = write_tmp("d.nii", &unsupported);
        match read_nifti(p) {
            Err(Error::UnsupportedDatatype { code, .. }) => assert_eq!(code, 8),
            other => panic!("expected UnsupportedDatatype, got {other:?}"),
        }

        // claims 2 values, ships 1
        let truncated = assemble::<LittleEndian>(&[0, 2], 16, 32, (1.0, 0.0), &payload);
        let (_d3, p) = write_tmp("t.nii", &truncated);
        assert!(matches!(read_nifti(p), Err(Error::Io { .. })));

        // bitpix disagrees with datatype
        let mut bad_bitpix = assemble::<LittleEndian>(&[0, 1], 16, 32, (1.0, 0.0), &payload);
        LittleEndian::write_i16(&mut bad_bitpix[72..], 64);
        let (_d4, p) = write_tmp("b.nii", &bad_bitpix);
        assert!(matches!(read_nifti(p), Err(Error::Format { .. })));
    }

    #[test]
    fn qform_quaternion_affine() {
        // b=c=0, d=√½ is a 90° rotation about z; offsets (10, 20, 30).
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(0.0).unwrap();
        let mut bytes = assemble::<LittleEndian>(&[0, 1], 16, 32, (1.0, 0.0), &payload);
        LittleEndian::write_i16(&mut bytes[252..], 1); // qform_code
        let d = (0.5f32).sqrt();
        LittleEndian::write_f32(&mut bytes[256 + 8..], d); // quatern_d
        LittleEndian::write_f32(&mut bytes[268..], 10.0);
        LittleEndian::write_f32(&mut bytes[272..], 20.0);
        LittleEndian::write_f32(&mut bytes[276..], 30.0);
        let (_dir, p) = write_tmp("q.nii", &bytes);
        let vol = read_nifti(p).unwrap();
        let want = [
            [0.0, -1.0, 0.0, 10.0],
            [1.0, 0.0, 0.0, 20.0],
            [0.0, 0.0, 1.0, 30.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!(
                    (vol.affine[r][c] - want[r][c]).abs() < 1e-6,
                    "affine[{r}][{c}] = {} want {}",
                    vol.affine[r][c],
                    want[r][c]
                );
            }
        }
    }

    #[test]
    fn sform_takes_precedence_over_qform() {
        let mut payload = Vec::new();
        payload.write_f32::<LittleEndian>(0.0).unwrap();
        let mut bytes = assemble::<LittleEndian>(&[0, 1], 16, 32, (1.0, 0.0), &payload);
        LittleEndian::write_i16(&mut bytes[252..], 1);
        LittleEndian::write_i16(&mut bytes[254..], 2);
        // srow = diag(2,3,4) with translation (1,2,3)
        for (r, (s, t)) in [(2.0f32, 1.0f32), (3.0, 2.0), (4.0, 3.0)].iter().enumerate() {
            LittleEndian::write_f32(&mut bytes[280 + 16 * r + 4 * r..], *s);
            LittleEndian::write_f32(&mut bytes[280 + 16 * r + 12..], *t);
        }
        let (_dir, p) = write_tmp("s.nii", &bytes);
        let vol = read_nifti(p).unwrap();
        assert_eq!(vol.affine[0][0], 2.0);
        assert_eq!(vol.affine[1][1], 3.0);
        assert_eq!(vol.affine[2][2], 4.0);
        assert_eq!(vol.affine[2][3], 3.0);
    }

    #[test]
    fn f64_round_trip_is_bitwise_including_nan_and_gzip_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![
            0.0,
            -0.0,
            1.5,
            f64::NAN,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::MIN_POSITIVE / 2.0, // subnormal
            -123.456789e12,
        ];
        let vol = NiftiVolume::new([2, 2, 2, 1], [0.7, 0.8, 0.9], data.clone()).unwrap();
        for name in ["v.nii", "v.nii.gz"] {
            let p = dir.path().join(name);
            write_nifti(&p, &vol).unwrap();
            let back = read_nifti(&p).unwrap();
            assert_eq!(back.dims, vol.dims);
            let bits: Vec<u64> = back.data.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, want, "payload not bitwise identical via {name}");

            // write → read → write must reproduce the file byte for byte
            let p2 = dir.path().join(format!("again_{name}"));
            write_nifti(&p2, &back).unwrap();
            let original = std::fs::read(&p).unwrap();
            let again = std::fs::read(&p2).unwrap();
            assert_eq!(original, again, "{name} rewrite differs");
        }
    }

    #[test]
    fn uncompressed_file_size_is_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.nii");
        let vol = NiftiVolume::new_3d([3, 3, 3], [1.0; 3], vec![0.0; 27]).unwrap();
        write_nifti(&p, &vol).unwrap();
        let len = std::fs::metadata(&p).unwrap().len();
        assert_eq!(len, 352 + 27 * 8);
    }

    #[test]
    fn code_map_round_trips_through_u8() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("valid.nii");
        let codes = vec![0u8, 1, 2, 3, 4, 1, 1, 0];
        let affine = NiftiVolume::new_3d([2, 2, 2], [1.0; 3], vec![0.0; 8])
            .unwrap()
            .affine;
        write_nifti_codes(&p, [2, 2, 2], [1.0; 3], &affine, &codes).unwrap();
        let back = read_nifti(&p).unwrap();
        assert_eq!(back.datatype, Datatype::U8);
        let got: Vec<u8> = back.data.iter().map(|v| *v as u8).collect();
        assert_eq!(got, codes);
    }
}
