//! Two-stage active low-pass front end and ADC.
//!
//! Each stage is a single-pole RC low-pass discretized with the
//! impulse-invariant form
//!
//! ```text
//! y[n] = y[n-1] + (1 - exp(-2π·fc/fs)) · (x[n] - y[n-1])
//! ```
//!
//! followed by the stage's passband gain and a hard clamp to the op-amp rails.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Sample;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("input is not uniformly sampled at {fs_hz} Hz (sample {index} at t = {t_s} s)")]
    NonUniformSampling { fs_hz: f64, index: usize, t_s: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ChainError {
    ChainError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// One filter/amplifier stage, described by its feedback network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcStage {
    pub r_f_ohms: f64,
    pub c_f_farads: f64,
    pub gain: f64,
}

impl Default for RcStage {
    /// 68 kΩ and 1 µF: a 2.34 Hz corner.
    fn default() -> Self {
        Self {
            r_f_ohms: 68e3,
            c_f_farads: 1e-6,
            gain: 5.0,
        }
    }
}

impl RcStage {
    pub fn cutoff_hz(&self) -> Result<f64, ChainError> {
        cutoff_frequency(self)
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        self.cutoff_hz()?;
        if !(self.gain.is_finite() && self.gain >= 1.0) {
            return Err(invalid("gain", "must be finite and >= 1"));
        }
        Ok(())
    }
}

/// Corner frequency of an RC low-pass, 1 / (2π·Rf·Cf).
pub fn cutoff_frequency(stage: &RcStage) -> Result<f64, ChainError> {
    if !(stage.r_f_ohms.is_finite() && stage.r_f_ohms > 0.0) {
        return Err(invalid("r_f_ohms", "must be finite and > 0"));
    }
    if !(stage.c_f_farads.is_finite() && stage.c_f_farads > 0.0) {
        return Err(invalid("c_f_farads", "must be finite and > 0"));
    }
    let fc = 1.0 / (2.0 * PI * stage.r_f_ohms * stage.c_f_farads);
    if !(fc.is_finite() && fc > 0.0) {
        return Err(invalid("r_f_ohms", "Rf·Cf yields a non-finite cutoff"));
    }
    Ok(fc)
}

/// Highest heart rate whose fundamental still lies inside the passband.
pub fn max_measurable_bpm(cutoff_hz: f64) -> Result<f64, ChainError> {
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0) {
        return Err(invalid("cutoff_hz", "must be finite and > 0"));
    }
    Ok(60.0 * cutoff_hz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub stage1: RcStage,
    pub stage2: RcStage,
    pub rail_low_v: f64,
    pub rail_high_v: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            stage1: RcStage::default(),
            stage2: RcStage::default(),
            rail_low_v: 0.0,
            rail_high_v: 5.0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        self.stage1.validate()?;
        self.stage2.validate()?;
        if !(self.rail_low_v.is_finite()
            && self.rail_high_v.is_finite()
            && self.rail_low_v < self.rail_high_v)
        {
            return Err(invalid("rail_high_v", "rails must satisfy low < high"));
        }
        Ok(())
    }

    /// Ceiling set by the narrower of the two stages.
    pub fn max_measurable_bpm(&self) -> Result<f64, ChainError> {
        let fc = self.stage1.cutoff_hz()?.min(self.stage2.cutoff_hz()?);
        max_measurable_bpm(fc)
    }
}

/// Filter state for one stage, without rail clamping.
#[derive(Debug, Clone)]
pub struct StageFilter {
    alpha: f64,
    gain: f64,
    y: Option<f64>,
}

impl StageFilter {
    pub fn new(stage: &RcStage, fs_hz: f64) -> Result<Self, ChainError> {
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(invalid("fs_hz", "must be finite and > 0"));
        }
        let fc = stage.cutoff_hz()?;
        if fc >= fs_hz / 2.0 {
            return Err(invalid(
                "fs_hz",
                format!("cutoff {fc} Hz must be below Nyquist ({} Hz)", fs_hz / 2.0),
            ));
        }
        Ok(Self {
            alpha: 1.0 - (-2.0 * PI * fc / fs_hz).exp(),
            gain: stage.gain,
            y: None,
        })
    }

    pub fn process(&mut self, x: f64) -> f64 {
        // Start in steady state with the first input.
        let prev = self.y.unwrap_or(x);
        let y = prev + self.alpha * (x - prev);
        self.y = Some(y);
        self.gain * y
    }
}

/// Streaming two-stage chain. Owned by a single stream processor.
#[derive(Debug, Clone)]
pub struct Chain {
    stages: [StageFilter; 2],
    rail_low_v: f64,
    rail_high_v: f64,
}

impl Chain {
    pub fn new(cfg: &ChainConfig, fs_hz: f64) -> Result<Self, ChainError> {
        cfg.validate()?;
        Ok(Self {
            stages: [
                StageFilter::new(&cfg.stage1, fs_hz)?,
                StageFilter::new(&cfg.stage2, fs_hz)?,
            ],
            rail_low_v: cfg.rail_low_v,
            rail_high_v: cfg.rail_high_v,
        })
    }

    pub fn process(&mut self, v: f64) -> f64 {
        self.stages.iter_mut().fold(v, |x, stage| {
            stage.process(x).clamp(self.rail_low_v, self.rail_high_v)
        })
    }
}

/// Check that `input` is spaced by 1/fs.
pub fn check_uniform(fs_hz: f64, input: &[Sample]) -> Result<(), ChainError> {
    let Some(first) = input.first() else {
        return Ok(());
    };
    let dt = 1.0 / fs_hz;
    for (i, pair) in input.windows(2).enumerate() {
        let step = pair[1].t_s - pair[0].t_s;
        // Timestamps may come from either n/fs or accumulated dt.
        let expected = first.t_s + (i + 1) as f64 * dt;
        let tol = 1e-6 * dt + 1e-9 * pair[1].t_s.abs();
        if !((step - dt).abs() <= tol || (pair[1].t_s - expected).abs() <= tol) {
            return Err(ChainError::NonUniformSampling {
                fs_hz,
                index: i + 1,
                t_s: pair[1].t_s,
            });
        }
    }
    Ok(())
}

/// Run a uniformly sampled recording through both stages.
pub fn apply_chain(
    cfg: &ChainConfig,
    fs_hz: f64,
    input: &[Sample],
) -> Result<Vec<Sample>, ChainError> {
    let mut chain = Chain::new(cfg, fs_hz)?;
    check_uniform(fs_hz, input)?;
    Ok(input
        .iter()
        .map(|s| Sample::new(s.t_s, chain.process(s.v)))
        .collect())
}

/// Analog-to-digital converter model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdcConfig {
    pub bits: u32,
    pub vref_v: f64,
    pub fs_hz: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            bits: 12,
            vref_v: 3.3,
            fs_hz: 100.0,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if !(8..=24).contains(&self.bits) {
            return Err(invalid("bits", "must lie in [8, 24]"));
        }
        if !(self.vref_v.is_finite() && self.vref_v > 0.0) {
            return Err(invalid("vref_v", "must be finite and > 0"));
        }
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(invalid("fs_hz", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn lsb_v(&self) -> f64 {
        self.vref_v / f64::from(self.max_code())
    }

    /// Round-to-nearest conversion of a (clamped) voltage.
    pub fn quantize(&self, v: f64) -> u32 {
        let full = f64::from(self.max_code());
        let v = if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, self.vref_v)
        };
        ((v * full / self.vref_v).round() as u32).min(self.max_code())
    }

    pub fn reconstruct(&self, code: u32) -> f64 {
        f64::from(code) * self.vref_v / f64::from(self.max_code())
    }
}

pub fn digitize(adc: &AdcConfig, input: &[Sample]) -> Vec<(f64, u32)> {
    input.iter().map(|s| (s.t_s, adc.quantize(s.v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(r: f64, c: f64, gain: f64) -> RcStage {
        RcStage {
            r_f_ohms: r,
            c_f_farads: c,
            gain,
        }
    }

    fn dc(v: f64, n: usize, fs: f64) -> Vec<Sample> {
        (0..n).map(|i| Sample::new(i as f64 / fs, v)).collect()
    }

    #[test]
    fn cutoff_examples() {
        let fc = cutoff_frequency(&stage(68e3, 1e-6, 1.0)).unwrap();
        assert!((fc - 2.3405).abs() < 5e-5, "{fc}");
        let fc = cutoff_frequency(&stage(1.0, 1.0 / (2.0 * PI), 1.0)).unwrap();
        assert!((fc - 1.0).abs() < 1e-12);
        let fc = cutoff_frequency(&stage(159.155e3, 1e-6, 1.0)).unwrap();
        assert!((fc - 1.0).abs() < 5e-5);
        assert!(cutoff_frequency(&stage(0.0, 1e-6, 1.0)).is_err());
        assert!(matches!(
            cutoff_frequency(&stage(1e3, -1e-6, 1.0)),
            Err(ChainError::InvalidParameter {
                field: "c_f_farads",
                ..
            })
        ));
    }

    #[test]
    fn bpm_ceiling() {
        assert!((max_measurable_bpm(2.34).unwrap() - 140.4).abs() < 1e-9);
        assert_eq!(max_measurable_bpm(1.0).unwrap(), 60.0);
        assert_eq!(max_measurable_bpm(2.5).unwrap(), 150.0);
        assert!(max_measurable_bpm(0.0).is_err());
    }

    #[test]
    fn dc_gain_and_clamp() {
        let cfg = ChainConfig::default();
        let out = apply_chain(&cfg, 100.0, &dc(0.1, 500, 100.0)).unwrap();
        assert!((out.last().unwrap().v - 2.5).abs() < 1e-9);
        let out = apply_chain(&cfg, 100.0, &dc(0.5, 500, 100.0)).unwrap();
        assert_eq!(out.last().unwrap().v, 5.0);
        assert_eq!(out.len(), 500);
    }

    #[test]
    fn dc_step_settles_to_gain() {
        let cfg = ChainConfig::default();
        let mut input = dc(0.0, 1000, 100.0);
        for s in input.iter_mut().skip(10) {
            s.v = 0.1;
        }
        let out = apply_chain(&cfg, 100.0, &input).unwrap();
        assert!((out.last().unwrap().v - 2.5).abs() < 1e-6);
    }

    #[test]
    fn non_uniform_input_is_rejected() {
        let mut input = dc(0.1, 10, 100.0);
        input[5].t_s += 0.003;
        assert!(matches!(
            apply_chain(&ChainConfig::default(), 100.0, &input),
            Err(ChainError::NonUniformSampling { index: 5, .. })
        ));
        // Wrong declared rate.
        assert!(apply_chain(&ChainConfig::default(), 200.0, &dc(0.1, 10, 100.0)).is_err());
    }

    #[test]
    fn digitize_examples() {
        let adc = AdcConfig::default();
        let codes = digitize(
            &adc,
            &[
                Sample::new(0.0, 0.0),
                Sample::new(0.01, 3.3),
                Sample::new(0.02, 0.370),
                Sample::new(0.03, 4.5),
                Sample::new(0.04, -1.0),
            ],
        );
        let codes: Vec<u32> = codes.into_iter().map(|(_, c)| c).collect();
        assert_eq!(codes, vec![0, 4095, 459, 4095, 0]);
        assert!(AdcConfig { bits: 7, ..adc }.validate().is_err());
    }

    #[test]
    fn nyquist_guard() {
        let cfg = ChainConfig::default();
        assert!(Chain::new(&cfg, 4.0).is_err());
        assert!(Chain::new(&cfg, 5.0).is_ok());
    }
}
