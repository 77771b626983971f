//! Single-file NIfTI-1 subset: 3D scalar volumes, optional gzip layer.
//!
//! Orientation (qform/sform) is ignored; axes are taken as stored, with
//! NIfTI `dim[1]` (x, fastest) mapped to width and `dim[3]` to depth.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Dims, LabelVolume, Spacing, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_UINT16: i16 = 512;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if let Endian::Big = self.endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }
}

fn maybe_gunzip(raw: Vec<u8>) -> Result<Vec<u8>> {
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::Nifti(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn image_path_for(header: &Path) -> PathBuf {
    let s = header.to_string_lossy();
    if let Some(stem) = s.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else {
        header.with_extension("img")
    }
}

/// Read a NIfTI-1 file into a 32-bit float [`Volume`].
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = maybe_gunzip(read_file(path)?)?;
    let header = parse_header(&bytes)?;
    let body = if header.single_file {
        let start = header.vox_offset.max(HEADER_SIZE);
        bytes.get(start..).unwrap_or(&[]).to_vec()
    } else {
        let img = maybe_gunzip(read_file(&image_path_for(path))?)?;
        img.get(header.vox_offset..).unwrap_or(&[]).to_vec()
    };
    decode_body(&header, &body)
}

struct Header {
    dims: Dims,
    spacing: Spacing,
    datatype: i16,
    vox_offset: usize,
    slope: f32,
    inter: f32,
    endian: Endian,
    single_file: bool,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Nifti(format!("file too short for header ({} bytes)", bytes.len())));
    }
    let sizeof_hdr = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::Nifti("sizeof_hdr is not 348".into()));
    };
    let single_file = match &bytes[344..348] {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(Error::Nifti("bad magic: expected \"n+1\" or \"ni1\"".into())),
    };
    let r = Reader { buf: bytes, endian };
    let rank = r.i16(40);
    if rank != 3 {
        return Err(Error::UnsupportedRank(rank));
    }
    let mut dims = [0usize; 3];
    for (axis, slot) in [3usize, 2, 1].into_iter().zip(dims.iter_mut()) {
        let d = r.i16(40 + 2 * axis);
        if d < 1 {
            return Err(Error::Nifti(format!("dim[{axis}] = {d}")));
        }
        *slot = d as usize;
    }
    let mut spacing = [0f64; 3];
    for (axis, slot) in [3usize, 2, 1].into_iter().zip(spacing.iter_mut()) {
        *slot = (r.f32(76 + 4 * axis) as f64).abs();
    }
    let datatype = r.i16(70);
    if !matches!(datatype, DT_UINT8 | DT_INT16 | DT_UINT16 | DT_FLOAT32 | DT_FLOAT64) {
        return Err(Error::UnsupportedDatatype(datatype));
    }
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= 0.0) {
        return Err(Error::Nifti(format!("vox_offset = {vox_offset}")));
    }
    Ok(Header {
        dims: Dims(dims),
        spacing: Spacing(spacing),
        datatype,
        vox_offset: vox_offset as usize,
        slope: r.f32(112),
        inter: r.f32(116),
        endian,
        single_file,
    })
}

fn decode_body(h: &Header, body: &[u8]) -> Result<Volume> {
    let n = h.dims.len();
    let width = match h.datatype {
        DT_UINT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    if body.len() < n * width {
        return Err(Error::Nifti(format!("voxel data truncated: need {} bytes, have {}", n * width, body.len())));
    }
    let r = Reader { buf: body, endian: h.endian };
    let mut data: Vec<f32> = (0..n)
        .map(|i| {
            let off = i * width;
            match h.datatype {
                DT_UINT8 => body[off] as f32,
                DT_INT16 => r.i16(off) as f32,
                DT_UINT16 => u16::from_le_bytes(r.bytes(off)) as f32,
                DT_FLOAT32 => r.f32(off),
                _ => f64::from_le_bytes(r.bytes(off)) as f32,
            }
        })
        .collect();
    if h.slope != 0.0 && h.slope.is_finite() {
        let inter = if h.inter.is_finite() { h.inter } else { 0.0 };
        for v in &mut data {
            *v = *v * h.slope + inter;
        }
    }
    if h.spacing.0.contains(&0.0) {
        return Err(Error::Nifti(format!("pixdim has zero spacing {:?}", h.spacing.0)));
    }
    Volume::new(h.dims, h.spacing, data)
}

fn build_header(dims: super::Dims, spacing: Spacing, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; SINGLE_FILE_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [3, dims.width() as i16, dims.height() as i16, dims.depth() as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&datatype.to_le_bytes());
    h[72..74].copy_from_slice(&bitpix.to_le_bytes());
    let pixdim: [f32; 8] = [1.0, spacing.0[2] as f32, spacing.0[1] as f32, spacing.0[0] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&(SINGLE_FILE_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    // xyzt_units: mm
    h[123] = 2;
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path.to_string_lossy().ends_with(".gz");
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        let out = enc.finish().map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    } else {
        f.write_all(bytes).map_err(|e| Error::io(path, e))
    }
}

fn check_nifti_dims(dims: Dims) -> Result<()> {
    if dims.0.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Nifti(format!("dims {:?} exceed NIfTI-1 limits", dims.0)));
    }
    Ok(())
}

/// Write a float32 NIfTI-1 file (gzip when the path ends in `.gz`).
pub fn write_nifti_f32(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    check_nifti_dims(v.dims())?;
    let mut bytes = build_header(v.dims(), v.spacing(), DT_FLOAT32, 32);
    bytes.extend(v.data().iter().flat_map(|x| x.to_le_bytes()));
    write_bytes(path.as_ref(), &bytes)
}

/// Write labels as a uint8 NIfTI-1 file.
pub fn write_nifti_labels(l: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    check_nifti_dims(l.dims())?;
    let mut bytes = build_header(l.dims(), l.spacing(), DT_UINT8, 8);
    bytes.extend_from_slice(l.data());
    write_bytes(path.as_ref(), &bytes)
}
