//! CT4F tensor files.
//!
//! Layout: the 8-byte magic `CT4F\0\0\0\x01`, a little-endian `u32` header
//! length, a UTF-8 JSON header `{"dims": [s, c, ky, kx], "dtype": "c64"|"c128",
//! "domain": "image"|"kspace"}`, then interleaved little-endian (re, im)
//! pairs in row-major (slice, coil, ky, kx) order.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::tensor::{ComplexTensor4, Dims, Domain};

pub const MAGIC: [u8; 8] = *b"CT4F\0\0\0\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    /// Single precision complex (two `f32`).
    C64,
    /// Double precision complex (two `f64`).
    C128,
}

impl Dtype {
    pub fn bytes_per_element(self) -> u64 {
        match self {
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [u64; 4],
    dtype: Dtype,
    domain: Domain,
}

/// Serialize to bytes. With `Dtype::C64` values are rounded to `f32`.
pub fn encode(t: &ComplexTensor4, dtype: Dtype) -> Vec<u8> {
    let d = t.dims();
    let header =
        Header { dims: [d.slices as u64, d.coils as u64, d.ny as u64, d.nx as u64], dtype, domain: t.domain() };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + t.len() * dtype.bytes_per_element() as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match dtype {
        Dtype::C128 => {
            for v in t.data() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        Dtype::C64 => {
            for v in t.data() {
                out.extend_from_slice(&(v.re as f32).to_le_bytes());
                out.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Parse bytes, returning the tensor and the stored precision.
pub fn decode(bytes: &[u8]) -> std::result::Result<(ComplexTensor4, Dtype), FormatError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(FormatError::InvalidHeader("missing header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(FormatError::InvalidHeader(format!("header length {hlen} exceeds file size")));
    }
    let header: Header =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    let payload = &rest[hlen..];

    let count = header
        .dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::InvalidHeader("dims product overflows".into()))?;
    if header.dims.contains(&0) {
        return Err(FormatError::InvalidHeader("zero-length dimension".into()));
    }
    let expected = count
        .checked_mul(header.dtype.bytes_per_element())
        .ok_or_else(|| FormatError::InvalidHeader("payload size overflows".into()))?;
    let found = payload.len() as u64;
    if found < expected {
        return Err(FormatError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FormatError::SizeMismatch { expected, found });
    }
    let to_usize = |d: u64| usize::try_from(d).map_err(|_| FormatError::InvalidHeader("dimension too large".into()));
    let dims = Dims::new(
        to_usize(header.dims[0])?,
        to_usize(header.dims[1])?,
        to_usize(header.dims[2])?,
        to_usize(header.dims[3])?,
    );

    let data: Vec<Complex64> = match header.dtype {
        Dtype::C128 => payload
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect(),
        Dtype::C64 => payload
            .chunks_exact(8)
            .map(|c| {
                Complex64::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
                )
            })
            .collect(),
    };
    let t =
        ComplexTensor4::from_vec(dims, header.domain, data).map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    Ok((t, header.dtype))
}

pub fn write_tensor(t: &ComplexTensor4, path: impl AsRef<Path>) -> Result<()> {
    write_tensor_as(t, path, Dtype::C128)
}

pub fn write_tensor_as(t: &ComplexTensor4, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    write_atomic(path.as_ref(), &encode(t, dtype))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ComplexTensor4> {
    read_tensor_with_dtype(path).map(|(t, _)| t)
}

pub fn read_tensor_with_dtype(path: impl AsRef<Path>) -> Result<(ComplexTensor4, Dtype)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}

/// Write through a temporary sibling file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, FormatError::InvalidHeader(e.to_string())))
}
