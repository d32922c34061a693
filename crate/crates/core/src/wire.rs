//! NDJSON telemetry frames.
//!
//! Every frame is one flat JSON object on one line. Field order is fixed:
//! `sid`, `seq`, `t_ms`, `kind`, then the payload fields, so identical frames
//! always encode to identical bytes.
//!
//! ```text
//! {"sid":"a","seq":7,"t_ms":30000,"kind":"vitals","bpm":72.0,"temp_c":37.0,"temp_f":98.6,"valid":true,"beats_used":30,"window_s":24.166666666666668}
//! {"sid":"a","seq":8,"t_ms":30000,"kind":"sample","v":[0.51,0.53],"dt_ms":10.0}
//! {"sid":"a","seq":9,"t_ms":30000,"kind":"status","power_mode":"sleep","watts":0.64,"lcd_line1":"HR:  72 bpm     ","lcd_line2":"T: 98.6F      * "}
//! ```
//!
//! Decoding ignores unknown fields.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Longest accepted line, newline included.
pub const MAX_LINE_BYTES: usize = 64 * 1024;
/// Most samples carried by one batched sample frame.
pub const MAX_BATCH: usize = 50;
pub const MAX_SID_LEN: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("sid must be 1..={MAX_SID_LEN} bytes, got {0}")]
    SidLength(usize),
    #[error("field `{0}` is not a finite number")]
    NonFinite(&'static str),
    #[error("sample batch must hold 1..={MAX_BATCH} values, got {0}")]
    BatchSize(usize),
    #[error("dt_ms must be > 0")]
    BadInterval,
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    TooLong,
    #[error("line is not valid UTF-8")]
    Utf8,
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("frame is not a JSON object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("field `{field}` has the wrong type: expected {expected}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("unknown power mode `{0}`")]
    UnknownPowerMode(String),
    #[error("invalid frame: {0}")]
    Invalid(#[from] EncodeError),
}

/// Device power mode and its fixed consumption figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    #[default]
    Normal,
    Sleep,
    PowerDown,
    DeepPowerDown,
}

impl PowerMode {
    pub const ALL: [PowerMode; 4] = [
        PowerMode::Normal,
        PowerMode::Sleep,
        PowerMode::PowerDown,
        PowerMode::DeepPowerDown,
    ];

    pub fn watts(self) -> f64 {
        match self {
            PowerMode::Normal => 0.70,
            PowerMode::Sleep => 0.64,
            PowerMode::PowerDown => 0.49,
            PowerMode::DeepPowerDown => 0.29,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PowerMode::Normal => "normal",
            PowerMode::Sleep => "sleep",
            PowerMode::PowerDown => "power_down",
            PowerMode::DeepPowerDown => "deep_power_down",
        }
    }

    /// Acquisition and estimation run only at full power.
    pub fn acquires(self) -> bool {
        self == PowerMode::Normal
    }
}

impl fmt::Display for PowerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PowerMode {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PowerMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DecodeError::UnknownPowerMode(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplePayload {
    Single {
        v: f64,
    },
    /// Consecutive samples; sample `i` is at `t_ms + i·dt_ms`.
    Batch {
        v: Vec<f64>,
        dt_ms: f64,
    },
}

impl SamplePayload {
    pub fn len(&self) -> usize {
        match self {
            SamplePayload::Single { .. } => 1,
            SamplePayload::Batch { v, .. } => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (offset from the frame time in ms, volts) pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        match self {
            SamplePayload::Single { v } => vec![(0.0, *v)],
            SamplePayload::Batch { v, dt_ms } => v
                .iter()
                .enumerate()
                .map(|(i, &x)| (i as f64 * dt_ms, x))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsPayload {
    pub bpm: Option<f64>,
    pub temp_c: f64,
    pub temp_f: f64,
    pub valid: bool,
    pub beats_used: u32,
    pub window_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub power_mode: PowerMode,
    pub watts: f64,
    pub lcd_line1: String,
    pub lcd_line2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Sample(SamplePayload),
    Vitals(VitalsPayload),
    Status(StatusPayload),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameKind {
    Sample,
    Vitals,
    Status,
}

impl FrameKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Sample => "sample",
            FrameKind::Vitals => "vitals",
            FrameKind::Status => "status",
        }
    }
}

impl Payload {
    pub fn kind(&self) -> FrameKind {
        match self {
            Payload::Sample(_) => FrameKind::Sample,
            Payload::Vitals(_) => FrameKind::Vitals,
            Payload::Status(_) => FrameKind::Status,
        }
    }
}

/// Unit of transfer from device to server and from server to viewers.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryFrame {
    pub sid: String,
    pub seq: u64,
    pub t_ms: u64,
    pub payload: Payload,
}

impl TelemetryFrame {
    pub fn kind(&self) -> FrameKind {
        self.payload.kind()
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.sid.is_empty() || self.sid.len() > MAX_SID_LEN {
            return Err(EncodeError::SidLength(self.sid.len()));
        }
        let finite = |field, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(EncodeError::NonFinite(field))
            }
        };
        match &self.payload {
            Payload::Sample(SamplePayload::Single { v }) => finite("v", *v)?,
            Payload::Sample(SamplePayload::Batch { v, dt_ms }) => {
                if v.is_empty() || v.len() > MAX_BATCH {
                    return Err(EncodeError::BatchSize(v.len()));
                }
                for &x in v {
                    finite("v", x)?;
                }
                finite("dt_ms", *dt_ms)?;
                if *dt_ms <= 0.0 {
                    return Err(EncodeError::BadInterval);
                }
            }
            Payload::Vitals(p) => {
                if let Some(bpm) = p.bpm {
                    finite("bpm", bpm)?;
                }
                finite("temp_c", p.temp_c)?;
                finite("temp_f", p.temp_f)?;
                finite("window_s", p.window_s)?;
            }
            Payload::Status(p) => finite("watts", p.watts)?,
        }
        Ok(())
    }
}

fn push_f64(out: &mut String, x: f64) {
    // Shortest representation that parses back to the same value.
    out.push_str(&serde_json::to_string(&x).expect("finite f64 serializes"));
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serializes"));
}

/// Encode one frame as a newline-terminated line.
pub fn encode_frame(frame: &TelemetryFrame) -> Result<String, EncodeError> {
    frame.validate()?;
    let mut out = String::with_capacity(128);
    out.push_str("{\"sid\":");
    push_str(&mut out, &frame.sid);
    let _ = write!(
        out,
        ",\"seq\":{},\"t_ms\":{},\"kind\":\"{}\"",
        frame.seq,
        frame.t_ms,
        frame.kind().as_str()
    );
    match &frame.payload {
        Payload::Sample(SamplePayload::Single { v }) => {
            out.push_str(",\"v\":");
            push_f64(&mut out, *v);
        }
        Payload::Sample(SamplePayload::Batch { v, dt_ms }) => {
            out.push_str(",\"v\":[");
            for (i, &x) in v.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_f64(&mut out, x);
            }
            out.push_str("],\"dt_ms\":");
            push_f64(&mut out, *dt_ms);
        }
        Payload::Vitals(p) => {
            out.push_str(",\"bpm\":");
            match p.bpm {
                Some(bpm) => push_f64(&mut out, bpm),
                None => out.push_str("null"),
            }
            out.push_str(",\"temp_c\":");
            push_f64(&mut out, p.temp_c);
            out.push_str(",\"temp_f\":");
            push_f64(&mut out, p.temp_f);
            let _ = write!(
                out,
                ",\"valid\":{},\"beats_used\":{},\"window_s\":",
                p.valid, p.beats_used
            );
            push_f64(&mut out, p.window_s);
        }
        Payload::Status(p) => {
            let _ = write!(out, ",\"power_mode\":\"{}\",\"watts\":", p.power_mode);
            push_f64(&mut out, p.watts);
            out.push_str(",\"lcd_line1\":");
            push_str(&mut out, &p.lcd_line1);
            out.push_str(",\"lcd_line2\":");
            push_str(&mut out, &p.lcd_line2);
        }
    }
    out.push_str("}\n");
    Ok(out)
}

struct Fields(Map<String, Value>);

impl Fields {
    fn get(&self, field: &'static str) -> Result<&Value, DecodeError> {
        self.0.get(field).ok_or(DecodeError::Missing(field))
    }

    fn f64(&self, field: &'static str) -> Result<f64, DecodeError> {
        self.get(field)?.as_f64().ok_or(DecodeError::WrongType {
            field,
            expected: "number",
        })
    }

    fn u64(&self, field: &'static str) -> Result<u64, DecodeError> {
        self.get(field)?.as_u64().ok_or(DecodeError::WrongType {
            field,
            expected: "non-negative integer",
        })
    }

    fn str(&self, field: &'static str) -> Result<&str, DecodeError> {
        self.get(field)?.as_str().ok_or(DecodeError::WrongType {
            field,
            expected: "string",
        })
    }

    fn bool(&self, field: &'static str) -> Result<bool, DecodeError> {
        self.get(field)?.as_bool().ok_or(DecodeError::WrongType {
            field,
            expected: "boolean",
        })
    }
}

/// Decode one line (with or without its trailing newline).
pub fn decode_frame(line: &[u8]) -> Result<TelemetryFrame, DecodeError> {
    if line.len() > MAX_LINE_BYTES {
        return Err(DecodeError::TooLong);
    }
    let text = std::str::from_utf8(line).map_err(|_| DecodeError::Utf8)?;
    let text = text.trim_end_matches(['\n', '\r']);
    let value: Value =
        serde_json::from_str(text).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(DecodeError::NotAnObject);
    };
    let f = Fields(map);

    let sid = f.str("sid")?.to_owned();
    let seq = f.u64("seq")?;
    let t_ms = f.u64("t_ms")?;
    let payload = match f.str("kind")? {
        "sample" => match f.get("v")? {
            Value::Array(items) => {
                let v = items
                    .iter()
                    .map(|x| {
                        x.as_f64().ok_or(DecodeError::WrongType {
                            field: "v",
                            expected: "array of numbers",
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Payload::Sample(SamplePayload::Batch {
                    v,
                    dt_ms: f.f64("dt_ms")?,
                })
            }
            _ => Payload::Sample(SamplePayload::Single { v: f.f64("v")? }),
        },
        "vitals" => {
            let bpm = match f.get("bpm")? {
                Value::Null => None,
                other => Some(other.as_f64().ok_or(DecodeError::WrongType {
                    field: "bpm",
                    expected: "number or null",
                })?),
            };
            let beats_used =
                u32::try_from(f.u64("beats_used")?).map_err(|_| DecodeError::WrongType {
                    field: "beats_used",
                    expected: "32-bit unsigned integer",
                })?;
            Payload::Vitals(VitalsPayload {
                bpm,
                temp_c: f.f64("temp_c")?,
                temp_f: f.f64("temp_f")?,
                valid: f.bool("valid")?,
                beats_used,
                window_s: f.f64("window_s")?,
            })
        }
        "status" => Payload::Status(StatusPayload {
            power_mode: f.str("power_mode")?.parse()?,
            watts: f.f64("watts")?,
            lcd_line1: f.str("lcd_line1")?.to_owned(),
            lcd_line2: f.str("lcd_line2")?.to_owned(),
        }),
        other => return Err(DecodeError::UnknownKind(other.to_owned())),
    };
    let frame = TelemetryFrame {
        sid,
        seq,
        t_ms,
        payload,
    };
    frame.validate()?;
    Ok(frame)
}

/// Threshold override sent from the server to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCommand {
    /// `None` returns the device to auto-calibration.
    pub threshold_v: Option<f64>,
    pub refractory_s: Option<f64>,
    #[serde(default)]
    pub issued_at_ms: u64,
}
