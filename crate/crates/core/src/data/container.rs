//! Raw+JSON container for volumes and masks.
//!
//! A grid is stored as `<stem>.json` (header) plus `<stem>.raw` (payload).
//! The header declares `{shape, spacing_mm, dtype, endianness, order}`; the
//! raw file holds exactly `nz*ny*nx` little-endian elements in C order.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{DataError, Mask3D, Shape3, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeDtype {
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "f32")]
    F32,
}

impl VolumeDtype {
    fn bytes_per_element(self) -> u64 {
        match self {
            VolumeDtype::I16 => 2,
            VolumeDtype::U8 => 1,
            VolumeDtype::F32 => 4,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    shape: Shape3,
    spacing_mm: [f64; 3],
    dtype: String,
    endianness: String,
    order: String,
}

fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    }
}

fn raw_path(path: &Path) -> PathBuf {
    header_path(path).with_extension("raw")
}

fn read_header(path: &Path) -> Result<ContainerHeader, DataError> {
    let header_file = header_path(path);
    if !header_file.is_file() {
        return Err(DataError::MissingFile(header_file));
    }
    let bytes = fs::read(&header_file)?;
    let header: ContainerHeader =
        serde_json::from_slice(&bytes).map_err(|e| DataError::MalformedJson {
            path: header_file.clone(),
            detail: e.to_string(),
        })?;
    if header.endianness != "little" {
        return Err(DataError::MalformedJson {
            path: header_file.clone(),
            detail: format!("unsupported endianness {:?}", header.endianness),
        });
    }
    if header.order != "C" {
        return Err(DataError::MalformedJson {
            path: header_file,
            detail: format!("unsupported order {:?}", header.order),
        });
    }
    Ok(header)
}

fn read_raw(
    path: &Path,
    header: &ContainerHeader,
    dtype: VolumeDtype,
) -> Result<Vec<u8>, DataError> {
    let raw_file = raw_path(path);
    if !raw_file.is_file() {
        return Err(DataError::MissingFile(raw_file));
    }
    let elements = header.shape.iter().product::<usize>() as u64;
    let expected = elements * dtype.bytes_per_element();
    let bytes = fs::read(&raw_file)?;
    if bytes.len() as u64 != expected {
        return Err(DataError::HeaderMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes)
}

fn parse_dtype(name: &str) -> Result<VolumeDtype, DataError> {
    match name {
        "i16" => Ok(VolumeDtype::I16),
        "u8" => Ok(VolumeDtype::U8),
        "f32" => Ok(VolumeDtype::F32),
        other => Err(DataError::UnsupportedDtype(other.to_string())),
    }
}

/// Load a volume container; integer dtypes are widened to scalar HU values.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D, DataError> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let dtype = parse_dtype(&header.dtype)?;
    let bytes = read_raw(path, &header, dtype)?;
    let n = header.shape.iter().product::<usize>();
    let voxels: Vec<f32> = match dtype {
        VolumeDtype::I16 => {
            let mut out = vec![0i16; n];
            LittleEndian::read_i16_into(&bytes, &mut out);
            out.into_iter().map(|v| v as f32).collect()
        }
        VolumeDtype::U8 => bytes.into_iter().map(|v| v as f32).collect(),
        VolumeDtype::F32 => {
            let mut out = vec![0f32; n];
            LittleEndian::read_f32_into(&bytes, &mut out);
            out
        }
    };
    Volume3D::new(header.shape, header.spacing_mm, voxels)
}

/// Write a volume container with the requested on-disk dtype.
pub fn save_volume(
    volume: &Volume3D,
    path: impl AsRef<Path>,
    dtype: VolumeDtype,
) -> Result<(), DataError> {
    let path = path.as_ref();
    let header = ContainerHeader {
        shape: volume.shape(),
        spacing_mm: volume.spacing_mm(),
        dtype: match dtype {
            VolumeDtype::I16 => "i16",
            VolumeDtype::U8 => "u8",
            VolumeDtype::F32 => "f32",
        }
        .to_string(),
        endianness: "little".to_string(),
        order: "C".to_string(),
    };
    let mut bytes = Vec::with_capacity(volume.voxels().len() * dtype.bytes_per_element() as usize);
    match dtype {
        VolumeDtype::I16 => {
            for &v in volume.voxels() {
                let q = v.round().clamp(i16::MIN as f32, i16::MAX as f32) as i16;
                bytes.extend_from_slice(&q.to_le_bytes());
            }
        }
        VolumeDtype::U8 => {
            for &v in volume.voxels() {
                bytes.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        VolumeDtype::F32 => {
            for &v in volume.voxels() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    write_container(path, &header, &bytes)
}

/// Load a mask container (u8 payload restricted to {0,1}).
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask3D, DataError> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let dtype = parse_dtype(&header.dtype)?;
    if dtype != VolumeDtype::U8 {
        return Err(DataError::UnsupportedDtype(header.dtype));
    }
    let bytes = read_raw(path, &header, dtype)?;
    let mut bits = Vec::with_capacity(bytes.len());
    for (offset, &value) in bytes.iter().enumerate() {
        match value {
            0 => bits.push(false),
            1 => bits.push(true),
            _ => return Err(DataError::InvalidMaskValue { offset, value }),
        }
    }
    Mask3D::from_bits(header.shape, bits)
}

/// Write a mask container as u8 {0,1}.
pub fn save_mask(mask: &Mask3D, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let header = ContainerHeader {
        shape: mask.shape(),
        spacing_mm: [1.0, 1.0, 1.0],
        dtype: "u8".to_string(),
        endianness: "little".to_string(),
        order: "C".to_string(),
    };
    let bytes: Vec<u8> = mask.bits().iter().map(|&b| b as u8).collect();
    write_container(path, &header, &bytes)
}

fn write_container(path: &Path, header: &ContainerHeader, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(dir) = header_path(path).parent() {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string(header).expect("header serialization");
    fs::write(header_path(path), text)?;
    fs::write(raw_path(path), bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn decode_i16_example() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        std::fs::write(
            stem.with_extension("json"),
            r#"{"shape":[1,1,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"i16","endianness":"little","order":"C"}"#,
        )
        .unwrap();
        std::fs::write(stem.with_extension("raw"), [0x00u8, 0x00, 0x0A, 0x00]).unwrap();
        let v = load_volume(&stem).unwrap();
        assert_eq!(v.voxels(), &[0.0, 10.0]);
    }

    #[test]
    fn header_mismatch_on_short_raw() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        std::fs::write(
            stem.with_extension("json"),
            r#"{"shape":[2,2,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8","endianness":"little","order":"C"}"#,
        )
        .unwrap();
        std::fs::write(stem.with_extension("raw"), vec![0u8; 7]).unwrap();
        let err = load_volume(&stem).unwrap_err();
        assert!(matches!(
            err,
            DataError::HeaderMismatch {
                expected: 8,
                actual: 7
            }
        ));
    }

    #[test]
    fn volume_round_trip_f32_bit_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let voxels: Vec<f32> = (0..64).map(|_| rng.gen_range(-1024.0..3071.0)).collect();
        let v = Volume3D::new([4, 4, 4], [1.5, 0.7, 0.7], voxels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("vol");
        save_volume(&v, &stem, VolumeDtype::F32).unwrap();
        let back = load_volume(&stem).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn mask_file_bytes_and_round_trip() {
        let mut m = Mask3D::empty([2, 2, 2]);
        m.set(1, 0, 1, true);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        save_mask(&m, &stem).unwrap();
        let bytes = std::fs::read(stem.with_extension("raw")).unwrap();
        assert_eq!(bytes.len(), 8);
        assert_eq!(bytes.iter().filter(|&&b| b == 1).count(), 1);
        assert_eq!(load_mask(&stem).unwrap(), m);
    }

    #[test]
    fn mask_round_trip_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let bits: Vec<bool> = (0..512).map(|_| rng.gen_bool(0.3)).collect();
        let m = Mask3D::from_bits([8, 8, 8], bits).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        save_mask(&m, &stem).unwrap();
        assert_eq!(load_mask(&stem).unwrap(), m);
    }

    #[test]
    fn mask_byte_two_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        std::fs::write(
            stem.with_extension("json"),
            r#"{"shape":[1,1,2],"spacing_mm":[1.0,1.0,1.0],"dtype":"u8","endianness":"little","order":"C"}"#,
        )
        .unwrap();
        std::fs::write(stem.with_extension("raw"), [0u8, 2u8]).unwrap();
        let err = load_mask(&stem).unwrap_err();
        assert!(matches!(
            err,
            DataError::InvalidMaskValue {
                offset: 1,
                value: 2
            }
        ));
    }

    #[test]
    fn missing_file_reported() {
        let err = load_volume("/nonexistent/v.json").unwrap_err();
        assert!(matches!(err, DataError::MissingFile(_)));
        assert_eq!(err.code(), "data.MissingFile");
    }

    #[test]
    fn unsupported_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        std::fs::write(
            stem.with_extension("json"),
            r#"{"shape":[1,1,1],"spacing_mm":[1.0,1.0,1.0],"dtype":"f64","endianness":"little","order":"C"}"#,
        )
        .unwrap();
        std::fs::write(stem.with_extension("raw"), vec![0u8; 8]).unwrap();
        assert!(matches!(
            load_volume(&stem).unwrap_err(),
            DataError::UnsupportedDtype(_)
        ));
    }
}
