//! Remote heart-rate and body-temperature monitor, in software.
//!
//! The pipeline mirrors the hardware it stands in for:
//!
//! - [`sim`]: fingertip PPG and LM35 sources with known ground truth
//! - [`chain`]: two-stage RC low-pass/amplifier front end and the ADC
//! - [`engine`]: pick-value beat detection, 30-beat heart rate, temperature
//!   conversion and the validity flag
//! - [`wire`]: NDJSON telemetry frames
//! - [`device`]: the acquisition loop, LCD and power model
//! - [`harness`]: actual-vs-measured accuracy sweeps

pub mod chain;
pub mod device;
pub mod engine;
pub mod harness;
pub mod sim;
pub mod wire;

pub use chain::{AdcConfig, Chain, ChainConfig, RcStage, StageFilter};
pub use device::{render_lcd, Device, DeviceConfig, LcdLines};
pub use engine::{DetectorConfig, ValidityConfig, VitalsReading};
pub use sim::{HeartProfile, NoiseModel, Sample, TempProfile};
pub use wire::{
    decode_frame, encode_frame, CalibrationCommand, Payload, PowerMode, TelemetryFrame,
};
