//! Shared fixtures for the benchmarks.

use pulsemon_core::chain::apply_chain;
use pulsemon_core::sim::generate_ppg;
use pulsemon_core::{
    ChainConfig, Device, DeviceConfig, HeartProfile, NoiseModel, Sample, TelemetryFrame,
};

pub const FS_HZ: f64 = 100.0;

/// Raw PPG at 72 bpm with light noise.
pub fn raw_ppg(seconds: f64) -> Vec<Sample> {
    generate_ppg(
        &HeartProfile::default(),
        &NoiseModel::white(0.001, 7),
        FS_HZ,
        seconds,
    )
    .expect("default profile is valid")
    .samples
}

/// The same signal after the analog front end.
pub fn filtered_ppg(seconds: f64) -> Vec<(f64, f64)> {
    apply_chain(&ChainConfig::default(), FS_HZ, &raw_ppg(seconds))
        .expect("default chain is valid")
        .iter()
        .map(|s| (s.t_s, s.v))
        .collect()
}

/// Frames a default device emits over `seconds`.
pub fn device_frames(seconds: f64) -> Vec<TelemetryFrame> {
    let mut device = Device::new(DeviceConfig::default()).expect("default config is valid");
    device.run_for(seconds)
}
