//! JSON profile files.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "grid": {"type": "icosahedral", "level": 3, "n_r": 64, "fingerprint": "…"},
//!   "layout": "column-major, k fastest",
//!   "encoding": "base64-f64le",
//!   "arrays": {"beta": [...], "alpha_s": {"vertical": [...], "horizontal": [...]}, ...}
//! }
//! ```
//!
//! A full field is a flat array; a separated field is an object with
//! `vertical` and `horizontal` arrays. Without `encoding`, arrays are JSON
//! numbers; with `"base64-f64le"` each array is one base64 string of
//! little-endian doubles.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::HorizontalGrid;
use crate::profiles::{ProfileField, ProfileSet};

pub const FORMAT_VERSION: u64 = 1;
const LAYOUT: &str = "column-major, k fastest";
const BASE64: &str = "base64-f64le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Decimal,
    Base64,
}

pub fn save_profiles(set: &ProfileSet, grid: &HorizontalGrid, path: &Path, encoding: Encoding) -> Result<()> {
    set.validate(grid, set.n_r())?;
    let write_array = |values: &[f64]| -> Value {
        match encoding {
            Encoding::Decimal => Value::from(values.to_vec()),
            Encoding::Base64 => {
                let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
                Value::String(STANDARD.encode(bytes))
            }
        }
    };
    let write_field = |field: &ProfileField| -> Value {
        match field {
            ProfileField::Full { values, .. } => write_array(values),
            ProfileField::Separable { vertical, horizontal } => {
                json!({"vertical": write_array(vertical), "horizontal": write_array(horizontal)})
            }
        }
    };
    let mut doc = json!({
        "format_version": FORMAT_VERSION,
        "grid": {
            "type": "icosahedral",
            "level": grid.level,
            "n_r": set.n_r(),
            "fingerprint": grid.fingerprint(),
        },
        "layout": LAYOUT,
        "arrays": {
            "beta": write_field(&set.beta),
            "alpha_s": write_field(&set.alpha_s),
            "alpha_r": write_field(&set.alpha_r),
            "xi_r": write_field(&set.xi_r),
        },
    });
    if encoding == Encoding::Base64 {
        doc["encoding"] = Value::from(BASE64);
    }
    std::fs::write(path, serde_json::to_vec(&doc)?)?;
    Ok(())
}

/// Reads a profile file and checks it against the active grid and `n_r`.
pub fn load_profiles(path: &Path, grid: &HorizontalGrid, n_r: usize) -> Result<ProfileSet> {
    let text = std::fs::read(path)?;
    let doc: Value = serde_json::from_slice(&text)?;
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };

    let version = doc.get("format_version").and_then(Value::as_u64).ok_or_else(|| bad("missing format_version"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format_version {version}")));
    }
    let header = doc.get("grid").and_then(Value::as_object).ok_or_else(|| bad("missing grid"))?;
    if header.get("type").and_then(Value::as_str) != Some("icosahedral") {
        return Err(bad("grid type must be \"icosahedral\""));
    }
    if let Some(layout) = doc.get("layout") {
        if layout.as_str() != Some(LAYOUT) {
            return Err(bad(&format!("layout must be \"{LAYOUT}\"")));
        }
    }
    let fingerprint = header.get("fingerprint").and_then(Value::as_str).ok_or_else(|| bad("missing fingerprint"))?;
    let expected = grid.fingerprint();
    if fingerprint != expected {
        return Err(Error::FingerprintMismatch { expected, found: fingerprint.to_string() });
    }
    let file_n_r = header.get("n_r").and_then(Value::as_u64).ok_or_else(|| bad("missing n_r"))? as usize;
    if file_n_r != n_r {
        return Err(Error::ShapeMismatch(format!("file has n_r = {file_n_r}, active vertical grid has {n_r}")));
    }
    let base64 = match doc.get("encoding") {
        None => false,
        Some(v) if v.as_str() == Some(BASE64) => true,
        Some(v) => return Err(bad(&format!("unknown encoding {v}"))),
    };
    let arrays = doc.get("arrays").and_then(Value::as_object).ok_or_else(|| bad("missing arrays"))?;

    let read_field = |name: &str, n_vertical: usize| -> Result<ProfileField> {
        let value = arrays.get(name).ok_or_else(|| bad(&format!("missing array {name}")))?;
        match value {
            Value::Object(parts) => {
                let vertical = read_array(parts, "vertical", name, base64).map_err(|e| e.unwrap_or_else(|r| bad(&r)))?;
                let horizontal =
                    read_array(parts, "horizontal", name, base64).map_err(|e| e.unwrap_or_else(|r| bad(&r)))?;
                Ok(ProfileField::Separable { vertical, horizontal })
            }
            other => {
                let values = decode(other, name, base64).map_err(|e| e.unwrap_or_else(|r| bad(&r)))?;
                if values.len() % n_vertical != 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: {} values is not a multiple of {n_vertical}",
                        values.len()
                    )));
                }
                Ok(ProfileField::Full { values, n_vertical })
            }
        }
    };
    let set = ProfileSet {
        beta: read_field("beta", n_r)?,
        alpha_s: read_field("alpha_s", n_r)?,
        alpha_r: read_field("alpha_r", n_r + 1)?,
        xi_r: read_field("xi_r", n_r + 1)?,
    };
    set.validate(grid, n_r)?;
    Ok(set)
}

/// `Err(Ok(e))` is a typed error, `Err(Err(reason))` a format problem.
type Decoded = std::result::Result<Vec<f64>, std::result::Result<Error, String>>;

fn read_array(parts: &Map<String, Value>, key: &str, name: &str, base64: bool) -> Decoded {
    let value = parts.get(key).ok_or_else(|| Err(format!("{name} is missing {key}")))?;
    decode(value, &format!("{name}.{key}"), base64)
}

fn decode(value: &Value, name: &str, base64: bool) -> Decoded {
    if base64 {
        let text = value.as_str().ok_or_else(|| Err(format!("{name} must be a base64 string")))?;
        let bytes = STANDARD.decode(text).map_err(|e| Err(format!("{name}: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Err(format!("{name}: byte length {} is not a multiple of 8", bytes.len())));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Ok(Error::NonFinite { field: name.to_string(), index }));
        }
        return Ok(values);
    }
    let items = value.as_array().ok_or_else(|| Err(format!("{name} must be an array")))?;
    items
        .iter()
        .enumerate()
        .map(|(index, item)| match item {
            Value::Number(n) => n.as_f64().ok_or_else(|| Err(format!("{name}[{index}] is not a float"))),
            // JSON has no NaN/Inf literals; writers emit null or strings for them.
            Value::Null | Value::String(_) => Err(Ok(Error::NonFinite { field: name.to_string(), index })),
            _ => Err(Err(format!("{name}[{index}] is not a number"))),
        })
        .collect()
}
