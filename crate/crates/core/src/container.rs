//! Array container: one line of JSON header followed by a raw little-endian
//! payload.
//!
//! ```text
//! {"dtype":"f32le","shape":[41,512,512],"pitch_um":2.0,...}\n<payload>
//! ```
//!
//! Values are stored as `f32` (`f32le`) or interleaved `f32` real/imaginary
//! pairs (`c64le`), row-major. Headers are written with a fixed key order, so
//! reading a file and writing it back reproduces it byte for byte.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32le,
    #[serde(rename = "c64le")]
    C64le,
}

impl Dtype {
    pub fn element_size(self) -> usize {
        match self {
            Dtype::F32le => 4,
            Dtype::C64le => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub pitch_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_positions_um: Option<Vec<f64>>,
    pub seed: u64,
    pub provenance: String,
}

impl Header {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f32>),
    Complex(Vec<Complex32>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
        }
    }

    fn dtype(&self) -> Dtype {
        match self {
            Payload::Real(_) => Dtype::F32le,
            Payload::Complex(_) => Dtype::C64le,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    pub header: Header,
    pub payload: Payload,
}

fn bad(field: &str, msg: impl Into<String>) -> Error {
    Error::Container {
        field: field.into(),
        msg: msg.into(),
    }
}

impl ArrayContainer {
    pub fn new(header: Header, payload: Payload) -> Result<Self> {
        let c = Self { header, payload };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.payload.dtype() != self.header.dtype {
            return Err(bad("dtype", "header dtype does not match the payload"));
        }
        if self.payload.len() != self.header.element_count() {
            return Err(bad(
                "shape",
                format!(
                    "shape {:?} needs {} elements, payload has {}",
                    self.header.shape,
                    self.header.element_count(),
                    self.payload.len()
                ),
            ));
        }
        if !(self.header.pitch_um > 0.0 && self.header.pitch_um.is_finite()) {
            return Err(bad("pitch_um", "must be positive and finite"));
        }
        if let Some(z) = &self.header.z_positions_um {
            if self.header.shape.len() != 3 || self.header.shape[0] != z.len() {
                return Err(bad("z_positions_um", "needs one entry per slice of a 3D array"));
            }
        }
        Ok(())
    }

    /// Real array stored as `f32`.
    pub fn from_real<D: ndarray::Dimension>(
        a: &ndarray::Array<f64, D>,
        pitch_um: f64,
        z_positions_um: Option<Vec<f64>>,
        seed: u64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let header = Header {
            dtype: Dtype::F32le,
            shape: a.shape().to_vec(),
            pitch_um,
            z_positions_um,
            seed,
            provenance: provenance.into(),
        };
        Self::new(header, Payload::Real(a.iter().map(|&v| v as f32).collect()))
    }

    /// Complex array stored as `f32` pairs.
    pub fn from_complex<D: ndarray::Dimension>(
        a: &ndarray::Array<Complex64, D>,
        pitch_um: f64,
        seed: u64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let header = Header {
            dtype: Dtype::C64le,
            shape: a.shape().to_vec(),
            pitch_um,
            z_positions_um: None,
            seed,
            provenance: provenance.into(),
        };
        let data = a.iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect();
        Self::new(header, Payload::Complex(data))
    }

    pub fn real(&self) -> Result<ArrayD<f64>> {
        match &self.payload {
            Payload::Real(v) => ArrayD::from_shape_vec(IxDyn(&self.header.shape), v.iter().map(|&x| x as f64).collect())
                .map_err(|e| bad("shape", e.to_string())),
            Payload::Complex(_) => Err(bad("dtype", "expected f32le, found c64le")),
        }
    }

    pub fn complex(&self) -> Result<ArrayD<Complex64>> {
        match &self.payload {
            Payload::Complex(v) => ArrayD::from_shape_vec(
                IxDyn(&self.header.shape),
                v.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect(),
            )
            .map_err(|e| bad("shape", e.to_string())),
            Payload::Real(_) => Err(bad("dtype", "expected c64le, found f32le")),
        }
    }

    pub fn real2(&self) -> Result<Array2<f64>> {
        self.real()?
            .into_dimensionality()
            .map_err(|_| bad("shape", format!("expected 2 dimensions, found {:?}", self.header.shape)))
    }

    pub fn real3(&self) -> Result<Array3<f64>> {
        self.real()?
            .into_dimensionality()
            .map_err(|_| bad("shape", format!("expected 3 dimensions, found {:?}", self.header.shape)))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(self.header.element_count() * self.header.dtype.element_size());
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header", "no newline after the JSON header"))?;
        let text = std::str::from_utf8(&bytes[..nl]).map_err(|e| bad("header", e.to_string()))?;
        let header: Header = serde_json::from_str(text).map_err(|e| bad("header", e.to_string()))?;
        let body = &bytes[nl + 1..];
        let want = header
            .element_count()
            .checked_mul(header.dtype.element_size())
            .ok_or_else(|| bad("shape", "element count overflows"))?;
        if body.len() != want {
            return Err(bad(
                "payload",
                format!("expected {want} bytes for shape {:?}, found {}", header.shape, body.len()),
            ));
        }
        let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        let payload = match header.dtype {
            Dtype::F32le => Payload::Real(body.chunks_exact(4).map(f).collect()),
            Dtype::C64le => Payload::Complex(body.chunks_exact(8).map(|c| Complex32::new(f(&c[..4]), f(&c[4..]))).collect()),
        };
        Self::new(header, payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Container { field, msg } => Error::Container {
                field,
                msg: format!("{}: {msg}", path.display()),
            },
            other => other,
        })
    }

    /// Write through a temporary file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `bytes` to `path` atomically (temporary sibling plus rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
