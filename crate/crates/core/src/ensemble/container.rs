//! The UWS binary container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UWS1"
//! 4       8     manifest length L (u64, little-endian)
//! 12      L     UTF-8 JSON manifest
//! 12+L    ...   payload: entries back to back, row-major, little-endian
//! ```
//!
//! The manifest is `{"model_id", "layers": [{"name", "rows", "cols", "dtype",
//! "offset", "nbytes"}], "meta"?}` with offsets relative to the payload start.
//! Entries of order other than 2 additionally carry `"shape"`; `rows` is then
//! the first extent and `cols` the product of the rest. Entries must tile the
//! payload in manifest order with no gaps or trailing bytes.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::tensor::MAX_ORDER;

pub const MAGIC: &[u8; 4] = b"UWS1";
pub const HEADER_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(Dtype::F32),
            "f64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// One named array. Values are held as f64 regardless of on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Entry {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub model_id: String,
    pub entries: Vec<Entry>,
    pub meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model_id: String,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    rows: u64,
    cols: u64,
    dtype: String,
    offset: u64,
    nbytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<u64>>,
}

impl Container {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            ..Self::default()
        }
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut layers = Vec::with_capacity(self.entries.len());
        let mut names = HashSet::new();
        let mut offset = 0u64;
        for e in &self.entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate entry {:?}", e.name)));
            }
            let count: usize = e.shape.iter().product();
            if e.shape.is_empty() || e.shape.len() > MAX_ORDER || count != e.data.len() || count == 0
            {
                return Err(Error::InvalidArgument(format!(
                    "entry {:?}: shape {:?} does not describe {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            let nbytes = (count * e.dtype.size()) as u64;
            layers.push(LayerRecord {
                name: e.name.clone(),
                rows: e.rows() as u64,
                cols: e.cols() as u64,
                dtype: e.dtype.as_str().to_string(),
                offset,
                nbytes,
                shape: (e.shape.len() != 2).then(|| e.shape.iter().map(|&n| n as u64).collect()),
            });
            offset += nbytes;
        }
        let manifest = serde_json::to_vec(&Manifest {
            model_id: self.model_id.clone(),
            layers,
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Internal(format!("manifest serialisation: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for e in &self.entries {
            match e.dtype {
                Dtype::F64 => e.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Dtype::F32 => e
                    .data
                    .iter()
                    .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, ParseError> {
        let total = bytes.len();
        let magic_len = total.min(MAGIC.len());
        if bytes[..magic_len] != MAGIC[..magic_len] {
            return Err(ParseError::BadMagic {
                offset: 0,
                found: bytes[..magic_len].to_vec(),
            });
        }
        if total < HEADER_LEN {
            let offset = if total < MAGIC.len() { total } else { MAGIC.len() };
            return Err(ParseError::Truncated {
                offset,
                needed: (HEADER_LEN - total) as u64,
                available: 0,
            });
        }
        let manifest_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let available = (total - HEADER_LEN) as u64;
        if manifest_len > available {
            return Err(ParseError::Truncated {
                offset: HEADER_LEN,
                needed: manifest_len,
                available,
            });
        }
        let payload_start = HEADER_LEN + manifest_len as usize;
        let text = std::str::from_utf8(&bytes[HEADER_LEN..payload_start]).map_err(|e| {
            ParseError::Manifest {
                offset: HEADER_LEN + e.valid_up_to(),
                reason: "manifest is not valid UTF-8".into(),
            }
        })?;
        let manifest: Manifest = serde_json::from_str(text).map_err(|e| ParseError::Manifest {
            offset: HEADER_LEN + json_error_offset(text, &e),
            reason: e.to_string(),
        })?;

        let payload = &bytes[payload_start..];
        let mut entries = Vec::with_capacity(manifest.layers.len());
        let mut names = HashSet::new();
        let mut expected_offset = 0u64;
        for rec in manifest.layers {
            // Where this entry must start; the declared offset may be garbage.
            let at_usize = payload_start + expected_offset as usize;
            if !names.insert(rec.name.clone()) {
                return Err(ParseError::Manifest {
                    offset: HEADER_LEN,
                    reason: format!("duplicate layer name {:?}", rec.name),
                });
            }
            let dtype = Dtype::parse(&rec.dtype).ok_or_else(|| ParseError::UnknownDtype {
                offset: HEADER_LEN,
                layer: rec.name.clone(),
                dtype: rec.dtype.clone(),
            })?;
            let mismatch = |reason: String| ParseError::LengthMismatch {
                offset: at_usize,
                reason: format!("layer {:?}: {reason}", rec.name),
            };
            let shape: Vec<u64> = rec.shape.clone().unwrap_or_else(|| vec![rec.rows, rec.cols]);
            if shape.is_empty() || shape.len() > MAX_ORDER || shape.contains(&0) {
                return Err(mismatch(format!("invalid shape {shape:?}")));
            }
            let count = shape.iter().try_fold(1u64, |a, &n| a.checked_mul(n));
            let rows_cols = rec.rows.checked_mul(rec.cols);
            if count.is_none() || count != rows_cols || shape[0] != rec.rows {
                return Err(mismatch(format!(
                    "shape {shape:?} inconsistent with {}x{}",
                    rec.rows, rec.cols
                )));
            }
            let count = count.expect("checked");
            let nbytes = count.checked_mul(dtype.size() as u64);
            if nbytes != Some(rec.nbytes) {
                return Err(mismatch(format!(
                    "nbytes {} but {} values of {} need {:?}",
                    rec.nbytes,
                    count,
                    dtype.as_str(),
                    nbytes
                )));
            }
            if rec.offset != expected_offset {
                return Err(mismatch(format!(
                    "offset {} but the previous entry ends at {expected_offset}",
                    rec.offset
                )));
            }
            let end = rec.offset.checked_add(rec.nbytes).ok_or_else(|| mismatch("extent overflows".into()))?;
            if end > payload.len() as u64 {
                return Err(ParseError::Truncated {
                    offset: at_usize,
                    needed: rec.nbytes,
                    available: (payload.len() as u64).saturating_sub(rec.offset),
                });
            }
            expected_offset = end;
            let raw = &payload[rec.offset as usize..end as usize];
            let data: Vec<f64> = match dtype {
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(ParseError::NonFinite {
                    offset: at_usize + i * dtype.size(),
                    layer: rec.name,
                });
            }
            entries.push(Entry {
                name: rec.name,
                dtype,
                shape: shape.iter().map(|&n| n as usize).collect(),
                data,
            });
        }
        if expected_offset != payload.len() as u64 {
            return Err(ParseError::LengthMismatch {
                offset: payload_start + expected_offset as usize,
                reason: format!(
                    "manifest describes {expected_offset} payload bytes, found {}",
                    payload.len()
                ),
            });
        }
        Ok(Self {
            model_id: manifest.model_id,
            entries,
            meta: manifest.meta,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::decode(&bytes)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }
}

fn json_error_offset(text: &str, err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(io)?;
    }
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            model_id: "m".into(),
            entries: vec![
                Entry {
                    name: "a".into(),
                    dtype: Dtype::F64,
                    shape: vec![2, 2],
                    data: vec![1.0, 2.0, 3.0, 4.0],
                },
                Entry {
                    name: "b".into(),
                    dtype: Dtype::F32,
                    shape: vec![1, 2, 3],
                    data: vec![0.5, -1.0, 2.0, 0.25, 8.0, -0.125],
                },
            ],
            meta: Some(serde_json::json!({"kind": "test"})),
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = c.encode().unwrap();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().encode().unwrap();
        bytes[..4].copy_from_slice(b"UWSX");
        let err = Container::decode(&bytes).unwrap_err();
        assert!(matches!(err, ParseError::BadMagic { offset: 0, .. }));
        assert_eq!(err.offset(), 0);
    }

    #[test]
    fn short_inputs() {
        assert!(matches!(Container::decode(b""), Err(ParseError::Truncated { .. })));
        assert!(matches!(Container::decode(b"UW"), Err(ParseError::Truncated { .. })));
        assert!(matches!(Container::decode(b"XY"), Err(ParseError::BadMagic { .. })));
        assert!(matches!(
            Container::decode(b"UWS1\x01"),
            Err(ParseError::Truncated { offset: 4, .. })
        ));
    }

    #[test]
    fn unknown_dtype() {
        let mut bytes = sample().encode().unwrap();
        let at = bytes.windows(5).position(|w| w == b"\"f32\"").unwrap();
        bytes[at + 2..at + 4].copy_from_slice(b"16");
        let err = Container::decode(&bytes).unwrap_err();
        assert!(matches!(err, ParseError::UnknownDtype { ref dtype, .. } if dtype == "f16"));
    }

    #[test]
    fn trailing_bytes() {
        let mut bytes = sample().encode().unwrap();
        bytes.push(0);
        assert!(matches!(
            Container::decode(&bytes),
            Err(ParseError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let bytes = sample().encode().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match Container::decode(cut).unwrap_err() {
            ParseError::Truncated { offset, .. } => assert!(offset > HEADER_LEN),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = sample().encode().unwrap();
        let l = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let at = HEADER_LEN + l + 8;
        bytes[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            Container::decode(&bytes),
            Err(ParseError::NonFinite { offset, .. }) if offset == at
        ));
    }

    #[test]
    fn duplicate_names_rejected_on_encode() {
        let mut c = sample();
        c.entries[1].name = "a".into();
        assert!(c.encode().is_err());
    }
}
