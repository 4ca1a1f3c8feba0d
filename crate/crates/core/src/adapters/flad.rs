//! FLAD: a flat binary container for adapter sets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FLAD" | version: u32 (=1) | header_len: u64 | header: UTF-8 JSON | payload
//! ```
//!
//! The header is a JSON object with top-level `rank` and `alpha` plus one entry
//! per tensor, keyed `<slot>.A` / `<slot>.B`:
//! `{"dtype": "f64", "shape": [rows, cols], "offset": <byte offset into payload>}`.
//! The payload is the concatenation of every tensor as row-major `f64` LE.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::{AdapterSet, LoraAdapter, WeightMatrix};
use crate::error::{Error, Result};

pub const FLAD_MAGIC: &[u8; 4] = b"FLAD";
pub const FLAD_VERSION: u32 = 1;

const PREAMBLE_LEN: usize = 4 + 4 + 8;
const FILE: &str = "<file>";
const HEADER: &str = "<header>";

/// SHA-256 of a complete FLAD file.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Checksum(pub [u8; 32]);

impl Checksum {
    pub fn of(bytes: &[u8]) -> Self {
        Checksum(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Checksum({})", self.to_hex())
    }
}

impl FromStr for Checksum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out)
            .map_err(|e| Error::Argument(format!("bad checksum '{s}': {e}")))?;
        Ok(Checksum(out))
    }
}

impl Serialize for Checksum {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Encodes `set` as FLAD bytes. Tensors are laid out in slot order, `A` before `B`.
pub fn write_adapter_bytes(set: &AdapterSet) -> Vec<u8> {
    let mut header = Map::new();
    header.insert("rank".into(), json!(set.rank()));
    header.insert("alpha".into(), json!(set.alpha()));
    let mut payload: Vec<u8> = Vec::new();
    for adapter in set.iter() {
        for (suffix, m) in [("A", adapter.a_factor()), ("B", adapter.b_factor())] {
            header.insert(
                format!("{}.{suffix}", adapter.name()),
                json!({
                    "dtype": "f64",
                    "shape": [m.rows(), m.cols()],
                    "offset": payload.len(),
                }),
            );
            for v in m.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Value::Object(header)).expect("header is plain JSON");

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload.len());
    out.extend_from_slice(FLAD_MAGIC);
    out.extend_from_slice(&FLAD_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Writes `set` to `path` and returns the checksum of the written bytes.
pub fn write_adapter_file(set: &AdapterSet, path: impl AsRef<Path>) -> Result<Checksum> {
    let path = path.as_ref();
    let bytes = write_adapter_bytes(set);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(Checksum::of(&bytes))
}

pub fn read_adapter_file(path: impl AsRef<Path>) -> Result<AdapterSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_adapter_bytes(&bytes)
}

struct TensorEntry {
    shape: (usize, usize),
    offset: usize,
}

/// Decodes FLAD bytes. Every structural problem, and any non-finite entry, is
/// reported as [`Error::Format`] naming the tensor at fault.
pub fn read_adapter_bytes(bytes: &[u8]) -> Result<AdapterSet> {
    decode(bytes, true)
}

/// Like [`read_adapter_bytes`] but lets NaN and infinite entries through, so a
/// submission can be rejected by content validation rather than as malformed.
pub fn read_adapter_bytes_unvalidated(bytes: &[u8]) -> Result<AdapterSet> {
    decode(bytes, false)
}

fn decode(bytes: &[u8], require_finite: bool) -> Result<AdapterSet> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::format(FILE, "truncated preamble"));
    }
    if &bytes[0..4] != FLAD_MAGIC {
        return Err(Error::format(
            FILE,
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[0..4])),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FLAD_VERSION {
        return Err(Error::format(
            FILE,
            format!("unsupported version {version}"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let remaining = (bytes.len() - PREAMBLE_LEN) as u64;
    if header_len > remaining {
        return Err(Error::format(
            HEADER,
            format!("header length {header_len} exceeds remaining {remaining} bytes"),
        ));
    }
    let header_end = PREAMBLE_LEN + header_len as usize;
    let header: Value = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| Error::format(HEADER, format!("invalid JSON: {e}")))?;
    let Value::Object(header) = header else {
        return Err(Error::format(HEADER, "header is not a JSON object"));
    };
    let payload = &bytes[header_end..];

    let rank = header
        .get("rank")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::format(HEADER, "missing integer 'rank'"))? as usize;
    let alpha = header
        .get("alpha")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::format(HEADER, "missing number 'alpha'"))?;

    let mut slots: std::collections::BTreeMap<String, [Option<TensorEntry>; 2]> =
        Default::default();
    for (key, value) in &header {
        if key == "rank" || key == "alpha" {
            continue;
        }
        let (slot, which) = match key.rsplit_once('.') {
            Some((slot, "A")) if !slot.is_empty() => (slot, 0),
            Some((slot, "B")) if !slot.is_empty() => (slot, 1),
            _ => return Err(Error::format(key, "tensor names must end in '.A' or '.B'")),
        };
        let entry = parse_entry(key, value)?;
        slots.entry(slot.to_string()).or_default()[which] = Some(entry);
    }
    if slots.is_empty() {
        return Err(Error::format(HEADER, "no tensors"));
    }

    let mut spans: Vec<(usize, usize, String)> = Vec::new();
    let mut adapters = Vec::with_capacity(slots.len());
    for (slot, [a, b]) in slots {
        let a = a.ok_or_else(|| Error::format(format!("{slot}.A"), "missing"))?;
        let b = b.ok_or_else(|| Error::format(format!("{slot}.B"), "missing"))?;
        let a_name = format!("{slot}.A");
        let b_name = format!("{slot}.B");
        if a.shape.1 != rank {
            return Err(Error::format(
                &a_name,
                format!("has {} columns but rank is {rank}", a.shape.1),
            ));
        }
        if b.shape.0 != rank {
            return Err(Error::format(
                &b_name,
                format!("has {} rows but rank is {rank}", b.shape.0),
            ));
        }
        let a_mat = read_tensor(&a_name, &a, payload, &mut spans, require_finite)?;
        let b_mat = read_tensor(&b_name, &b, payload, &mut spans, require_finite)?;
        let adapter = LoraAdapter::from_parts_unchecked(slot.as_str(), a_mat, b_mat, alpha)
            .map_err(|e| Error::format(&a_name, e.to_string()))?;
        adapters.push(adapter);
    }

    spans.sort();
    let mut cursor = 0usize;
    for (start, end, name) in &spans {
        if *start != cursor {
            return Err(Error::format(
                name,
                format!("payload gap or overlap at byte {cursor} (tensor starts at {start})"),
            ));
        }
        cursor = *end;
    }
    if cursor != payload.len() {
        return Err(Error::format(
            FILE,
            format!(
                "payload has {} bytes but tensors cover {cursor}",
                payload.len()
            ),
        ));
    }

    let mut set = AdapterSet::single(adapters.remove(0));
    for adapter in adapters {
        let name = adapter.name().to_string();
        set.insert(adapter)
            .map_err(|e| Error::format(name, e.to_string()))?;
    }
    Ok(set)
}

fn parse_entry(name: &str, value: &Value) -> Result<TensorEntry> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::format(name, "entry is not an object"))?;
    match obj.get("dtype").and_then(Value::as_str) {
        Some("f64") => {}
        Some(other) => return Err(Error::format(name, format!("unsupported dtype '{other}'"))),
        None => return Err(Error::format(name, "missing dtype")),
    }
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format(name, "missing shape"))?;
    let dims: Vec<usize> = shape
        .iter()
        .map(|d| d.as_u64().map(|d| d as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::format(name, "shape entries must be non-negative integers"))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::format(
            name,
            format!("expected 2-d shape, got {dims:?}"),
        ));
    };
    let offset = obj
        .get("offset")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::format(name, "missing offset"))? as usize;
    if obj.len() != 3 {
        return Err(Error::format(name, "unexpected keys in tensor entry"));
    }
    Ok(TensorEntry {
        shape: (rows, cols),
        offset,
    })
}

fn read_tensor(
    name: &str,
    entry: &TensorEntry,
    payload: &[u8],
    spans: &mut Vec<(usize, usize, String)>,
    require_finite: bool,
) -> Result<WeightMatrix> {
    let (rows, cols) = entry.shape;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(name, "shape overflows"))?;
    let end = entry
        .offset
        .checked_add(len)
        .ok_or_else(|| Error::format(name, "offset overflows"))?;
    if end > payload.len() {
        return Err(Error::format(
            name,
            format!(
                "declares {rows}x{cols} ({len} bytes at offset {}) but payload has {} bytes",
                entry.offset,
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = payload[entry.offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data
        .iter()
        .position(|v| !v.is_finite())
        .filter(|_| require_finite)
    {
        return Err(Error::format(
            name,
            format!("non-finite entry at index {i}"),
        ));
    }
    spans.push((entry.offset, end, name.to_string()));
    WeightMatrix::from_vec_unchecked(rows, cols, data)
        .map_err(|e| Error::format(name, e.to_string()))
}
