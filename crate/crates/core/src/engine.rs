//! Beat detection and vitals estimation.
//!
//! A beat is a rising crossing of the pick threshold while the detector is
//! armed. After a beat the detector stays disarmed until the signal falls
//! below `threshold · (1 - hysteresis)`, so the secondary peak of a pulse is
//! only counted if it climbs back over the threshold after a real dip. With
//! auto-calibration the threshold sits a fixed fraction of the way between
//! the trailing window's minimum and maximum.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::AdcConfig;
use crate::sim::LM35_V_PER_C;

/// Beats timed for one heart-rate figure.
pub const REQUIRED_BEATS: usize = 30;

const BEAT_HISTORY: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("ADC code {code} exceeds full scale {max}")]
    CodeOutOfRange { code: u32, max: u32 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> EngineError {
    EngineError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Fixed pick value, used when `auto_calibrate` is off.
    pub threshold_v: f64,
    pub refractory_s: f64,
    pub auto_calibrate: bool,
    pub calib_window_s: f64,
    pub calib_fraction: f64,
    /// Disarm band below the threshold, as a fraction of the threshold.
    pub hysteresis: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold_v: 1.0,
            refractory_s: 0.25,
            auto_calibrate: true,
            calib_window_s: 3.0,
            calib_fraction: 0.6,
            hysteresis: 0.05,
        }
    }
}

impl DetectorConfig {
    /// Fixed-threshold detector.
    pub fn fixed(threshold_v: f64) -> Self {
        Self {
            threshold_v,
            auto_calibrate: false,
            ..Self::default()
        }
    }

    /// `max_bpm` is the chain's ceiling; the refractory period must still
    /// admit beats at that rate.
    pub fn validate(&self, max_bpm: f64) -> Result<(), EngineError> {
        if !self.threshold_v.is_finite() {
            return Err(invalid("threshold_v", "must be finite"));
        }
        if !(self.refractory_s.is_finite() && self.refractory_s >= 0.0) {
            return Err(invalid("refractory_s", "must be finite and >= 0"));
        }
        if self.refractory_s >= 60.0 / max_bpm {
            return Err(invalid(
                "refractory_s",
                format!(
                    "must be below {:.4} s to admit {max_bpm} bpm",
                    60.0 / max_bpm
                ),
            ));
        }
        if !(self.calib_window_s.is_finite() && self.calib_window_s > 0.0) {
            return Err(invalid("calib_window_s", "must be finite and > 0"));
        }
        if !(self.calib_fraction > 0.0 && self.calib_fraction < 1.0) {
            return Err(invalid("calib_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            return Err(invalid("hysteresis", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Signal-quality gate behind the flashing validity segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityConfig {
    pub min_swing_v: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Largest allowed deviation of any inter-beat interval from the mean
    /// interval, as a fraction of the mean.
    pub max_ibi_spread: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            min_swing_v: 0.1,
            min_bpm: 30.0,
            // 60 · 1/(2π · 68 kΩ · 1 µF)
            max_bpm: 140.4,
            max_ibi_spread: 0.4,
        }
    }
}

/// Sliding-window minimum and maximum over the trailing `span_s` seconds.
#[derive(Debug, Clone)]
struct Extrema {
    span_s: f64,
    min: VecDeque<(f64, f64)>,
    max: VecDeque<(f64, f64)>,
}

impl Extrema {
    fn new(span_s: f64) -> Self {
        Self {
            span_s,
            min: VecDeque::new(),
            max: VecDeque::new(),
        }
    }

    fn push(&mut self, t: f64, v: f64) {
        while self.min.back().is_some_and(|&(_, m)| m >= v) {
            self.min.pop_back();
        }
        self.min.push_back((t, v));
        while self.max.back().is_some_and(|&(_, m)| m <= v) {
            self.max.pop_back();
        }
        self.max.push_back((t, v));
        let cutoff = t - self.span_s;
        while self.min.front().is_some_and(|&(ts, _)| ts <= cutoff) {
            self.min.pop_front();
        }
        while self.max.front().is_some_and(|&(ts, _)| ts <= cutoff) {
            self.max.pop_front();
        }
    }

    fn min(&self) -> Option<f64> {
        self.min.front().map(|&(_, v)| v)
    }

    fn max(&self) -> Option<f64> {
        self.max.front().map(|&(_, v)| v)
    }

    fn swing(&self) -> f64 {
        match (self.min(), self.max()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }
}

/// Streaming threshold-crossing beat detector. Single owner per stream.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    extrema: Extrema,
    beats: VecDeque<f64>,
    last_beat: Option<f64>,
    armed: bool,
    prev: Option<(f64, f64)>,
}

impl Detector {
    pub fn new(cfg: DetectorConfig) -> Self {
        Self {
            extrema: Extrema::new(cfg.calib_window_s),
            cfg,
            beats: VecDeque::with_capacity(BEAT_HISTORY),
            last_beat: None,
            armed: false,
            prev: None,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Switch to a fixed pick value (`Some`) or back to auto-calibration.
    pub fn set_threshold(&mut self, threshold_v: Option<f64>) {
        match threshold_v {
            Some(v) => {
                self.cfg.threshold_v = v;
                self.cfg.auto_calibrate = false;
            }
            None => self.cfg.auto_calibrate = true,
        }
    }

    pub fn set_refractory(&mut self, refractory_s: f64) {
        self.cfg.refractory_s = refractory_s;
    }

    /// Current pick value.
    pub fn threshold(&self) -> Option<f64> {
        if !self.cfg.auto_calibrate {
            return Some(self.cfg.threshold_v);
        }
        let lo = self.extrema.min()?;
        let hi = self.extrema.max()?;
        Some(lo + self.cfg.calib_fraction * (hi - lo))
    }

    /// Peak-to-peak swing over the calibration window.
    pub fn swing(&self) -> f64 {
        self.extrema.swing()
    }

    pub fn beat_times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.beats.iter().copied()
    }

    pub fn recent_beats(&self, n: usize) -> Vec<f64> {
        let skip = self.beats.len().saturating_sub(n);
        self.beats.iter().skip(skip).copied().collect()
    }

    pub fn beat_count(&self) -> usize {
        self.beats.len()
    }

    /// Feed one sample; returns the beat time if this sample completes a
    /// rising crossing. The time is interpolated between this sample and the
    /// previous one.
    pub fn push(&mut self, t: f64, v: f64) -> Option<f64> {
        self.extrema.push(t, v);
        let threshold = self.threshold()?;
        let prev = self.prev.replace((t, v));

        if !self.armed {
            let rearm_level = if self.last_beat.is_some() {
                threshold * (1.0 - self.cfg.hysteresis)
            } else {
                threshold
            };
            let below = if self.last_beat.is_some() {
                v < rearm_level
            } else {
                v <= rearm_level
            };
            if below {
                self.armed = true;
            }
            return None;
        }
        if v <= threshold {
            return None;
        }

        self.armed = false;
        let t_cross = match prev {
            Some((tp, vp)) if vp < threshold && v > vp => {
                let frac = ((threshold - vp) / (v - vp)).clamp(0.0, 1.0);
                tp + frac * (t - tp)
            }
            _ => t,
        };
        if self
            .last_beat
            .is_some_and(|last| t_cross - last < self.cfg.refractory_s)
        {
            return None;
        }
        self.last_beat = Some(t_cross);
        if self.beats.len() == BEAT_HISTORY {
            self.beats.pop_front();
        }
        self.beats.push_back(t_cross);
        Some(t_cross)
    }
}

/// Beat times detected in a time-ordered stream.
pub fn detect_beats(cfg: &DetectorConfig, stream: &[(f64, f64)]) -> Vec<f64> {
    let mut det = Detector::new(cfg.clone());
    stream.iter().filter_map(|&(t, v)| det.push(t, v)).collect()
}

/// Heart rate over the most recent `required_beats` beats, using the
/// (N − 1) intervals between the first and last of them.
pub fn bpm_from_beats(beat_times_s: &[f64], required_beats: usize) -> Option<f64> {
    let required = required_beats.max(2);
    if beat_times_s.len() < required {
        return None;
    }
    let recent = &beat_times_s[beat_times_s.len() - required..];
    let span = recent[required - 1] - recent[0];
    (span > 0.0).then(|| (required - 1) as f64 * 60.0 / span)
}

pub fn celsius_to_fahrenheit(temp_c: f64) -> f64 {
    temp_c * 9.0 / 5.0 + 32.0
}

/// Convert a temperature-channel ADC code to (°C, °F).
pub fn temp_from_code(adc: &AdcConfig, code: u32) -> Result<(f64, f64), EngineError> {
    if code > adc.max_code() {
        return Err(EngineError::CodeOutOfRange {
            code,
            max: adc.max_code(),
        });
    }
    Ok(temp_from_volts(adc.reconstruct(code)))
}

pub fn temp_from_volts(v: f64) -> (f64, f64) {
    let temp_c = v / LM35_V_PER_C;
    (temp_c, celsius_to_fahrenheit(temp_c))
}

/// Whether finger placement and signal quality permit a measurement: enough
/// swing in the window, a mean rate over `beats` inside the measurable
/// band, and no interval far from that mean (a skipped or split beat).
pub fn assess_validity(window: &[(f64, f64)], beats: &[f64], cfg: &ValidityConfig) -> bool {
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
            (lo.min(v), hi.max(v))
        });
    let swing = if window.is_empty() { 0.0 } else { hi - lo };
    swing_and_rate_ok(swing, beats, cfg)
}

pub(crate) fn swing_and_rate_ok(swing: f64, beats: &[f64], cfg: &ValidityConfig) -> bool {
    if swing <= cfg.min_swing_v {
        return false;
    }
    let (Some(first), Some(last)) = (beats.first(), beats.last()) else {
        return false;
    };
    let span = last - first;
    if beats.len() < 2 || span <= 0.0 {
        return false;
    }
    let mean_ibi = span / (beats.len() - 1) as f64;
    let regular = beats
        .windows(2)
        .all(|w| ((w[1] - w[0]) - mean_ibi).abs() <= cfg.max_ibi_spread * mean_ibi);
    regular && (cfg.min_bpm..=cfg.max_bpm).contains(&(60.0 / mean_ibi))
}

/// One estimate of heart rate and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalsReading {
    pub bpm: Option<f64>,
    pub temp_c: f64,
    pub temp_f: f64,
    pub valid: bool,
    pub beats_used: u32,
    pub window_s: f64,
    pub t_s: f64,
}

impl VitalsReading {
    pub fn empty(t_s: f64, temp_c: f64) -> Self {
        Self {
            bpm: None,
            temp_c,
            temp_f: celsius_to_fahrenheit(temp_c),
            valid: false,
            beats_used: 0,
            window_s: 0.0,
            t_s,
        }
    }

    /// Reading from the detector's beat history.
    pub fn from_beats(
        beats: &[f64],
        required_beats: usize,
        temp_c: f64,
        valid: bool,
        t_s: f64,
    ) -> Self {
        match bpm_from_beats(beats, required_beats) {
            Some(bpm) => {
                let recent = &beats[beats.len() - required_beats..];
                Self {
                    bpm: Some(bpm),
                    temp_c,
                    temp_f: celsius_to_fahrenheit(temp_c),
                    valid,
                    beats_used: required_beats as u32,
                    window_s: recent[required_beats - 1] - recent[0],
                    t_s,
                }
            }
            None => Self {
                valid,
                ..Self::empty(t_s, temp_c)
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_never_beats() {
        for level in [0.0, 0.7, 3.3] {
            let stream: Vec<_> = (0..2000).map(|i| (i as f64 * 0.01, level)).collect();
            assert!(detect_beats(&DetectorConfig::default(), &stream).is_empty());
            assert!(detect_beats(&DetectorConfig::fixed(0.5), &stream).is_empty());
        }
    }

    #[test]
    fn square_wave_with_fixed_threshold() {
        // 1 Hz square wave, high for 0.3 s of each second.
        let stream: Vec<_> = (0..1000)
            .map(|i| {
                let t = i as f64 * 0.01;
                (
                    t,
                    if (0.5..0.8).contains(&(t % 1.0)) {
                        2.0
                    } else {
                        0.0
                    },
                )
            })
            .collect();
        let beats = detect_beats(&DetectorConfig::fixed(1.0), &stream);
        assert_eq!(beats.len(), 10);
        for (k, b) in beats.iter().enumerate() {
            assert!((b - (k as f64 + 0.495)).abs() < 1e-9, "{b}");
        }
        // Starting above the pick value is not a rising crossing.
        let high_start: Vec<_> = stream.iter().map(|&(t, v)| (t + 10.0, 2.0 - v)).collect();
        let beats = detect_beats(&DetectorConfig::fixed(1.0), &high_start);
        assert_eq!(beats.len(), 10);
        assert!((beats[0] - 10.795).abs() < 1e-9, "{}", beats[0]);
    }

    #[test]
    fn refractory_suppresses_close_crossings() {
        // Two pulses 0.1 s apart, repeated each second.
        let stream: Vec<_> = (0..500)
            .map(|i| {
                let t = i as f64 * 0.01;
                let ph = t % 1.0;
                let high = (0.1..0.15).contains(&ph) || (0.2..0.25).contains(&ph);
                (t, if high { 2.0 } else { 0.0 })
            })
            .collect();
        let beats = detect_beats(&DetectorConfig::fixed(1.0), &stream);
        assert_eq!(beats.len(), 5);
        assert!(beats.windows(2).all(|w| w[1] - w[0] >= 0.25));
    }

    #[test]
    fn bpm_examples() {
        let beats: Vec<f64> = (0..31).map(f64::from).collect();
        assert_eq!(bpm_from_beats(&beats, 30), Some(60.0));
        let span = 24.857;
        let beats: Vec<f64> = (0..30).map(|k| k as f64 * span / 29.0).collect();
        let bpm = bpm_from_beats(&beats, 30).unwrap();
        assert!((bpm - 70.0).abs() < 0.01, "{bpm}");
        assert_eq!(bpm_from_beats(&beats[..29], 30), None);
    }

    #[test]
    fn temperature_conversion() {
        let adc = AdcConfig::default();
        let (c, f) = temp_from_code(&adc, 459).unwrap();
        // 459 · 3.3 / 4095 / 0.01
        assert!((c - 36.98901).abs() < 1e-4, "{c}");
        assert!((f - 98.58022).abs() < 1e-4, "{f}");
        assert_eq!(temp_from_code(&adc, 0).unwrap(), (0.0, 32.0));
        let (_, f) = temp_from_volts(0.37);
        assert!((f - 98.6).abs() < 1e-9);
        assert!(matches!(
            temp_from_code(&adc, 4096),
            Err(EngineError::CodeOutOfRange { .. })
        ));
    }

    #[test]
    fn validity_rules() {
        let cfg = ValidityConfig::default();
        let window: Vec<_> = (0..300)
            .map(|i| (i as f64 * 0.01, if i % 86 < 20 { 1.5 } else { 0.5 }))
            .collect();
        let beats = [0.0, 0.857, 1.714];
        assert!(assess_validity(&window, &beats, &cfg));
        let flat: Vec<_> = (0..300).map(|i| (i as f64 * 0.01, 0.0)).collect();
        assert!(!assess_validity(&flat, &beats, &cfg));
        // 160 bpm
        assert!(!assess_validity(&window, &[0.0, 0.375], &cfg));
        // 20 bpm
        assert!(!assess_validity(&window, &[0.0, 3.0], &cfg));
        assert!(!assess_validity(&window, &[0.0], &cfg));
        // one beat missed
        assert!(!assess_validity(&window, &[0.0, 0.857, 2.571, 3.428], &cfg));
    }

    #[test]
    fn config_validation() {
        let cfg = DetectorConfig::default();
        assert!(cfg.validate(140.4).is_ok());
        let slow = DetectorConfig {
            refractory_s: 0.43,
            ..cfg.clone()
        };
        assert!(slow.validate(140.4).is_err());
        let bad = DetectorConfig {
            calib_fraction: 1.0,
            ..cfg
        };
        assert!(bad.validate(140.4).is_err());
    }

    #[test]
    fn reading_invariants() {
        let beats: Vec<f64> = (0..40).map(|k| k as f64 * 0.8).collect();
        let r = VitalsReading::from_beats(&beats, 30, 37.0, true, 32.0);
        assert_eq!(r.beats_used, 30);
        let bpm = r.bpm.unwrap();
        assert!((bpm - 29.0 * 60.0 / r.window_s).abs() < 1e-12);
        assert!((bpm - 75.0).abs() < 1e-9);
        assert_eq!(r.temp_f, r.temp_c * 9.0 / 5.0 + 32.0);
        let r = VitalsReading::from_beats(&beats[..5], 30, 37.0, false, 4.0);
        assert_eq!(r.bpm, None);
        assert_eq!(r.beats_used, 0);
    }
}
