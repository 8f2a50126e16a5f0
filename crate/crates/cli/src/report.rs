//! Report envelope and its serialization: JSON with every real written to 17
//! significant digits so that serialize → parse → serialize is byte-identical.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::CliError;

/// Bumped on any breaking change to the report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub results: Value,
    /// `null` unless timing was requested, so reruns stay byte-identical.
    pub timing: Option<Timing>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
}

/// Pretty JSON, except that reals are written as `{:.16e}`.
struct ReportFormatter(PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

pub fn to_text<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ReportFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("JSON is UTF-8"))
}

/// Write via a temporary file in the destination directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// A real that may be infinite: finite values are numbers, `±inf` the strings
/// `"inf"`/`"-inf"`, NaN is `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtF64(pub f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            v if v.is_finite() => s.serialize_f64(v),
            v if v == f64::INFINITY => s.serialize_str("inf"),
            v if v == f64::NEG_INFINITY => s.serialize_str("-inf"),
            _ => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for ExtF64 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => Ok(ExtF64(n.as_f64().unwrap_or(f64::NAN))),
            Value::String(s) if s == "inf" => Ok(ExtF64(f64::INFINITY)),
            Value::String(s) if s == "-inf" => Ok(ExtF64(f64::NEG_INFINITY)),
            Value::Null => Ok(ExtF64(f64::NAN)),
            other => Err(serde::de::Error::custom(format!("expected a real, got {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            command: "fit".into(),
            config: serde_json::json!({"seed": 7, "q": 0.1, "learners": "constant,linear"}),
            results: serde_json::json!({
                "psi_hat": 0.1234567890123456789,
                "tiny": -3.0e-300,
                "zero": 0.0,
                "oracle_comparison": null,
                "threshold": serde_json::to_value(ExtF64(f64::NEG_INFINITY)).unwrap(),
                "nested": [1.0, 2.5, {"z": 1e22, "a": 1}]
            }),
            timing: None,
            warnings: vec!["first".into(), "second".into()],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let text = to_text(&sample()).unwrap();
        let parsed: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(to_text(&parsed).unwrap(), text);
        let value: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(to_text(&value).unwrap(), text);
    }

    #[test]
    fn reals_carry_17_digits() {
        let text = to_text(&sample()).unwrap();
        assert!(text.contains("1.2345678901234568e-1"), "{text}");
        assert!(text.contains("\"threshold\": \"-inf\""));
        assert!(text.contains("\"oracle_comparison\": null"));
        assert!(text.find("first").unwrap() < text.find("second").unwrap());
        assert!(text.contains("\"timing\": null"));
    }

    #[test]
    fn infinite_thresholds_survive() {
        for v in [f64::INFINITY, f64::NEG_INFINITY, 2.5] {
            let text = serde_json::to_string(&ExtF64(v)).unwrap();
            assert_eq!(serde_json::from_str::<ExtF64>(&text).unwrap(), ExtF64(v));
        }
    }
}
