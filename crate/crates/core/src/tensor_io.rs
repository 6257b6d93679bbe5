//! KTAN v1 checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//!   0..4     magic  b"KTAN"
//!   4..8     version: u32 = 1
//!   8..16    header length H: u64
//!   16..16+H UTF-8 JSON object, keys sorted, no whitespace:
//!            {"<name>":{"dtype":"f32"|"f16","nbytes":n,"offset":o,"shape":[..]},..}
//!   16+H..   data section; `offset` is relative to its start
//! ```
//!
//! Element bytes are little-endian and row-major. Writing is canonical:
//! tensors are laid out contiguously in name order, so the file bytes are a
//! pure function of the set of records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use half::f16;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KTAN";
pub const VERSION: u32 = 1;
const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            other => Err(Error::Format(format!("unknown dtype {other:?}"))),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named tensor with its raw little-endian element bytes.
///
/// The raw buffer is kept as stored so that a read/write cycle is bit-exact;
/// numeric consumers go through [`TensorRecord::values_f32`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl TensorRecord {
    pub fn from_raw(name: impl Into<String>, dtype: DType, shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Format("tensor name must be non-empty".into()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Format(format!(
                "tensor {name:?}: shape {shape:?} must have at least one dimension, all positive"
            )));
        }
        let expected = shape
            .iter()
            .try_fold(dtype.size_of(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {name:?}: shape {shape:?} overflows")))?;
        if bytes.len() != expected {
            return Err(Error::SizeMismatch {
                name,
                expected,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            name,
            dtype,
            shape,
            bytes,
        })
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_raw(name, DType::F32, shape, bytes)
    }

    pub fn from_f16(name: impl Into<String>, shape: Vec<usize>, values: &[f16]) -> Result<Self> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_raw(name, DType::F16, shape, bytes)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn raw_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Elements promoted to `f32` (exact for f16 sources).
    pub fn values_f32(&self) -> Vec<f32> {
        match self.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            DType::F16 => self
                .bytes
                .chunks_exact(2)
                .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
                .collect(),
        }
    }

    /// Fails with the flat index of the first NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.values_f32().iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(Error::NonFiniteData {
                name: self.name.clone(),
                index,
            }),
        }
    }
}

/// Location of one tensor inside a checkpoint file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Byte offset relative to the start of the data section.
    pub offset: u64,
    pub nbytes: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Validated, lazily-read view of a checkpoint file. Holds only the header;
/// tensor data is read on demand, so the view can be shared across threads.
#[derive(Debug, Clone)]
pub struct CheckpointView {
    path: PathBuf,
    entries: BTreeMap<String, TensorEntry>,
    data_start: u64,
    total_bytes: u64,
}

impl CheckpointView {
    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries in serialization (name) order.
    pub fn entries(&self) -> &BTreeMap<String, TensorEntry> {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// File size in bytes.
    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn read_tensor(&self, name: &str) -> Result<TensorRecord> {
        let entry = self
            .entries
            .get(name)
            .ok_or_else(|| Error::NotFound(name.to_string()))?;
        let mut file = File::open(&self.path).map_err(|e| Error::io_at(&self.path, e))?;
        file.seek(SeekFrom::Start(self.data_start + entry.offset))?;
        let mut bytes = vec![0u8; entry.nbytes as usize];
        file.read_exact(&mut bytes)
            .map_err(|e| Error::io_at(&self.path, e))?;
        let record = TensorRecord::from_raw(name, entry.dtype, entry.shape.clone(), bytes)?;
        record.check_finite()?;
        Ok(record)
    }

    pub fn read_all(&self) -> Result<Vec<TensorRecord>> {
        self.names().map(|n| self.read_tensor(n)).collect()
    }

    /// SHA-256 of the whole file, lowercase hex.
    pub fn sha256(&self) -> Result<String> {
        let bytes = std::fs::read(&self.path).map_err(|e| Error::io_at(&self.path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize)]
struct OutEntry<'a> {
    // field order is the serialized key order, which must stay sorted
    dtype: &'a str,
    nbytes: u64,
    offset: u64,
    shape: &'a [usize],
}

/// Header map that keeps every key, so duplicate names can be reported
/// instead of silently overwritten.
struct HeaderPairs(Vec<(String, RawEntry)>);

impl<'de> Deserialize<'de> for HeaderPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct PairsVisitor;

        impl<'de> Visitor<'de> for PairsVisitor {
            type Value = HeaderPairs;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object of tensor entries")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RawEntry>()? {
                    out.push((k, v));
                }
                Ok(HeaderPairs(out))
            }
        }

        deserializer.deserialize_map(PairsVisitor)
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointView> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let total_bytes = file.metadata().map_err(|e| Error::io_at(path, e))?.len();

    let mut preamble = [0u8; PREAMBLE_LEN as usize];
    if total_bytes < PREAMBLE_LEN {
        return Err(Error::Format(format!(
            "{} is too short to be a KTAN file ({total_bytes} bytes)",
            path.display()
        )));
    }
    file.read_exact(&mut preamble)
        .map_err(|e| Error::io_at(path, e))?;
    if &preamble[0..4] != MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(preamble[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported KTAN version {version}")));
    }
    let header_len = u64::from_le_bytes(preamble[8..16].try_into().expect("8 bytes"));
    let data_start = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&s| s <= total_bytes)
        .ok_or_else(|| {
            Error::CorruptHeader(format!(
                "header length {header_len} exceeds file size {total_bytes}"
            ))
        })?;
    let mut header = vec![0u8; header_len as usize];
    file.read_exact(&mut header)
        .map_err(|e| Error::io_at(path, e))?;
    let data_len = total_bytes - data_start;

    let pairs: HeaderPairs = serde_json::from_slice(&header)
        .map_err(|e| Error::CorruptHeader(format!("header is not a valid entry map: {e}")))?;

    let mut entries = BTreeMap::new();
    for (name, raw) in pairs.0 {
        if name.is_empty() {
            return Err(Error::CorruptHeader("empty tensor name".into()));
        }
        let dtype = DType::parse(&raw.dtype)?;
        if raw.shape.is_empty() || raw.shape.contains(&0) {
            return Err(Error::CorruptHeader(format!(
                "tensor {name:?} has invalid shape {:?}",
                raw.shape
            )));
        }
        let shape: Vec<usize> = raw.shape.iter().map(|&d| d as usize).collect();
        let expected = shape
            .iter()
            .try_fold(dtype.size_of() as u64, |acc, &d| acc.checked_mul(d as u64));
        if expected != Some(raw.nbytes) {
            return Err(Error::CorruptHeader(format!(
                "tensor {name:?}: nbytes {} disagrees with shape {shape:?} and dtype {dtype}",
                raw.nbytes
            )));
        }
        match raw.offset.checked_add(raw.nbytes) {
            Some(end) if end <= data_len => {}
            _ => {
                return Err(Error::CorruptHeader(format!(
                    "tensor {name:?}: range {}+{} lies outside the {data_len}-byte data section",
                    raw.offset, raw.nbytes
                )))
            }
        }
        let entry = TensorEntry {
            dtype,
            shape,
            offset: raw.offset,
            nbytes: raw.nbytes,
        };
        if entries.insert(name.clone(), entry).is_some() {
            return Err(Error::DuplicateTensor(name));
        }
    }

    let mut ranges: Vec<(u64, u64, &str)> = entries
        .iter()
        .map(|(n, e)| (e.offset, e.offset + e.nbytes, n.as_str()))
        .collect();
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::CorruptHeader(format!(
                "tensors {:?} and {:?} overlap",
                w[0].2, w[1].2
            )));
        }
    }

    Ok(CheckpointView {
        path: path.to_path_buf(),
        entries,
        data_start,
        total_bytes,
    })
}

pub fn read_tensor(view: &CheckpointView, name: &str) -> Result<TensorRecord> {
    view.read_tensor(name)
}

/// Canonical KTAN v1 encoding of a record set.
pub fn encode_checkpoint(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&TensorRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for w in sorted.windows(2) {
        if w[0].name == w[1].name {
            return Err(Error::DuplicateTensor(w[0].name.clone()));
        }
    }

    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for r in &sorted {
        let nbytes = r.bytes.len() as u64;
        header.insert(
            r.name.as_str(),
            OutEntry {
                dtype: r.dtype.as_str(),
                nbytes,
                offset,
                shape: &r.shape,
            },
        );
        offset += nbytes;
    }
    let header = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(PREAMBLE_LEN as usize + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for r in &sorted {
        out.extend_from_slice(&r.bytes);
    }
    Ok(out)
}

pub fn write_checkpoint(records: &[TensorRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

/// One line of a raw-blob ingestion manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    /// Blob path; relative paths resolve against the manifest's directory.
    pub file: PathBuf,
}

/// Builds records from a JSON manifest of raw little-endian blobs.
pub fn records_from_manifest(manifest_path: impl AsRef<Path>) -> Result<Vec<TensorRecord>> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read(manifest_path).map_err(|e| Error::io_at(manifest_path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&text)
        .map_err(|e| Error::Format(format!("manifest {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(entries.len());
    for e in entries {
        if !seen.insert(e.name.clone()) {
            return Err(Error::DuplicateTensor(e.name));
        }
        let dtype = DType::parse(&e.dtype)?;
        let blob_path = base.join(&e.file);
        let bytes = std::fs::read(&blob_path).map_err(|err| Error::io_at(&blob_path, err))?;
        records.push(TensorRecord::from_raw(e.name, dtype, e.shape, bytes)?);
    }
    Ok(records)
}

/// Converts a manifest of raw blobs into a KTAN checkpoint at `out_path`.
pub fn ingest_raw(manifest_path: impl AsRef<Path>, out_path: impl AsRef<Path>) -> Result<()> {
    let records = records_from_manifest(manifest_path)?;
    write_checkpoint(&records, out_path)
}
