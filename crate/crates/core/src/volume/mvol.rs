//! Internal `.mvol` format: one UTF-8 JSON header line
//! `{"dims":[d,h,w],"spacing":[a,b,c],"dtype":"f32"|"u8"}`, a newline, then
//! the raw little-endian voxel body.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, LabelVolume, Spacing, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: Dtype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    U8,
}

/// Either volume kind, as loaded from an `.mvol` file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(Volume),
    Labels(LabelVolume),
}

impl From<Volume> for AnyVolume {
    fn from(v: Volume) -> Self {
        AnyVolume::Scalar(v)
    }
}

impl From<LabelVolume> for AnyVolume {
    fn from(v: LabelVolume) -> Self {
        AnyVolume::Labels(v)
    }
}

/// Borrowed view for writing.
pub enum VolumeRef<'a> {
    Scalar(&'a Volume),
    Labels(&'a LabelVolume),
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        VolumeRef::Scalar(v)
    }
}

impl<'a> From<&'a LabelVolume> for VolumeRef<'a> {
    fn from(v: &'a LabelVolume) -> Self {
        VolumeRef::Labels(v)
    }
}

impl<'a> From<&'a AnyVolume> for VolumeRef<'a> {
    fn from(v: &'a AnyVolume) -> Self {
        match v {
            AnyVolume::Scalar(v) => VolumeRef::Scalar(v),
            AnyVolume::Labels(v) => VolumeRef::Labels(v),
        }
    }
}

pub(crate) fn encode<'a>(v: impl Into<VolumeRef<'a>>) -> Vec<u8> {
    let (dims, spacing, dtype, body) = match v.into() {
        VolumeRef::Scalar(v) => {
            (v.dims(), v.spacing(), Dtype::F32, v.data().iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>())
        }
        VolumeRef::Labels(v) => (v.dims(), v.spacing(), Dtype::U8, v.data().to_vec()),
    };
    let header = Header { dims: dims.0, spacing: spacing.0, dtype };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&body);
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<AnyVolume> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let dims = Dims(header.dims);
    let spacing = Spacing(header.spacing);
    let body = &bytes[nl + 1..];
    let width = match header.dtype {
        Dtype::F32 => 4,
        Dtype::U8 => 1,
    };
    let expected = dims.len() * width;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "body length {} does not match header ({} voxels x {width} bytes = {expected})",
            body.len(),
            dims.len()
        )));
    }
    Ok(match header.dtype {
        Dtype::F32 => {
            let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            AnyVolume::Scalar(Volume::new(dims, spacing, data)?)
        }
        Dtype::U8 => AnyVolume::Labels(LabelVolume::new(dims, spacing, body.to_vec())?),
    })
}

pub fn write_internal<'a>(v: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_internal(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn load_internal_volume(path: impl AsRef<Path>) -> Result<Volume> {
    match load_internal(path.as_ref())? {
        AnyVolume::Scalar(v) => Ok(v),
        AnyVolume::Labels(l) => Ok(l.to_volume()),
    }
}

pub fn load_internal_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match load_internal(path.as_ref())? {
        AnyVolume::Labels(l) => Ok(l),
        AnyVolume::Scalar(v) => LabelVolume::from_volume(&v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn float_body_is_little_endian_ieee754() {
        let v = Volume::new(Dims::new(1, 1, 2), Spacing::default(), vec![1.5, -2.0]).unwrap();
        let bytes = encode(&v);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"dims":[1,1,2],"spacing":[1.0,1.0,1.0],"dtype":"f32"}"#
        );
        assert_eq!(&bytes[nl + 1..], &[0x00, 0x00, 0xC0, 0x3F, 0x00, 0x00, 0x00, 0xC0]);
    }

    #[test]
    fn label_round_trip_is_byte_identical() {
        let l = LabelVolume::new(Dims::new(2, 1, 2), Spacing([1.0, 0.5, 2.0]), vec![0, 1, 2, 4]).unwrap();
        let bytes = encode(&l);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, AnyVolume::Labels(l));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_body_is_an_error() {
        let v = Volume::new(Dims::new(1, 1, 2), Spacing::default(), vec![1.5, -2.0]).unwrap();
        let mut bytes = encode(&v);
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_label_in_body_is_an_error() {
        let l = LabelVolume::new(Dims::new(1, 1, 2), Spacing::default(), vec![0, 1]).unwrap();
        let mut bytes = encode(&l);
        *bytes.last_mut().unwrap() = 3;
        assert!(matches!(decode(&bytes), Err(Error::InvalidLabel { .. })));
    }

    proptest! {
        #[test]
        fn scalar_round_trip_is_bit_exact(
            data in proptest::collection::vec(-1e30f32..1e30f32, 1..40),
            sz in 0.1f64..5.0,
        ) {
            let n = data.len();
            let v = Volume::new(Dims::new(1, 1, n), Spacing([sz, 1.0, 0.7]), data).unwrap();
            let back = decode(&encode(&v)).unwrap();
            match back {
                AnyVolume::Scalar(b) => {
                    prop_assert_eq!(b.spacing(), v.spacing());
                    prop_assert!(b.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
                _ => prop_assert!(false, "wrong kind"),
            }
        }
    }
}
