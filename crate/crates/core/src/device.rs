//! The simulated portable device.
//!
//! [`Device`] is the acquisition loop of the monitor: simulator → analog
//! chain → ADC → detector, plus the LM35 channel, the 16×2 LCD and the power
//! model. It advances one sample period per [`Device::step`] and hands back
//! the telemetry frames it would transmit. Transport and pacing live with the
//! caller.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{AdcConfig, Chain, ChainConfig, ChainError};
use crate::engine::{
    self, Detector, DetectorConfig, EngineError, ValidityConfig, VitalsReading, REQUIRED_BEATS,
};
use crate::sim::{
    HeartProfile, NoiseModel, PpgStream, SimError, TempProfile, LM35_V_PER_C, TEMP_RANGE_C,
};
use crate::wire::{
    CalibrationCommand, Payload, PowerMode, SamplePayload, StatusPayload, TelemetryFrame,
    VitalsPayload, MAX_BATCH, MAX_SID_LEN,
};

pub const LCD_WIDTH: usize = 16;

/// Beats detected before the auto-threshold has seen a full pulse are not
/// timed.
pub const CALIBRATION_WARMUP_S: f64 = 2.0;

/// Time the analog chain runs before the first ADC conversion.
pub const FRONT_END_SETTLE_S: f64 = 2.0;

const COUNTED_HISTORY: usize = 64;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid device setting `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub profile: HeartProfile,
    pub noise: NoiseModel,
    pub temp: TempProfile,
    pub chain: ChainConfig,
    pub adc: AdcConfig,
    pub detector: DetectorConfig,
    pub validity: ValidityConfig,
    pub server_addr: String,
    pub sid: String,
    pub lcd_period_s: f64,
    /// Samples per sample frame.
    pub batch_size: usize,
    pub power_mode: PowerMode,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            profile: HeartProfile::default(),
            noise: NoiseModel::default(),
            temp: TempProfile::default(),
            chain: ChainConfig::default(),
            adc: AdcConfig::default(),
            detector: DetectorConfig::default(),
            validity: ValidityConfig::default(),
            server_addr: "127.0.0.1:7070".into(),
            sid: "device-1".into(),
            lcd_period_s: 1.0,
            batch_size: MAX_BATCH,
            power_mode: PowerMode::Normal,
        }
    }
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<(), DeviceError> {
        self.profile.validate()?;
        self.noise.validate()?;
        self.temp.validate()?;
        self.chain.validate()?;
        self.adc.validate()?;
        self.detector.validate(self.chain.max_measurable_bpm()?)?;
        if self.sid.is_empty() || self.sid.len() > MAX_SID_LEN {
            return Err(DeviceError::InvalidParameter {
                field: "sid",
                reason: format!("must be 1..={MAX_SID_LEN} bytes"),
            });
        }
        if !(self.lcd_period_s.is_finite() && self.lcd_period_s > 0.0) {
            return Err(DeviceError::InvalidParameter {
                field: "lcd_period_s",
                reason: "must be finite and > 0".into(),
            });
        }
        if !(1..=MAX_BATCH).contains(&self.batch_size) {
            return Err(DeviceError::InvalidParameter {
                field: "batch_size",
                reason: format!("must lie in 1..={MAX_BATCH}"),
            });
        }
        Ok(())
    }
}

/// Two 16-character display lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcdLines {
    pub line1: String,
    pub line2: String,
}

fn fit(mut s: String, width: usize) -> String {
    s.truncate(width);
    while s.len() < width {
        s.push(' ');
    }
    s
}

/// Format a reading for the 16×2 display. The last-but-one cell of line 2 is
/// the validity segment, lit on alternate refreshes while the reading is
/// valid.
pub fn render_lcd(reading: &VitalsReading, blink_phase: bool) -> LcdLines {
    let bpm = match reading.bpm {
        Some(bpm) => format!("{:>4}", bpm.round() as i64),
        None => " ---".to_owned(),
    };
    let line1 = fit(format!("HR:{bpm} bpm"), LCD_WIDTH);
    let blink = if reading.valid && blink_phase {
        '*'
    } else {
        ' '
    };
    let mut line2 = fit(format!("T:{:>5.1}F", reading.temp_f), LCD_WIDTH - 2);
    line2.push(blink);
    line2.push(' ');
    LcdLines { line1, line2 }
}

impl LcdLines {
    /// Terminal rendering with a border.
    pub fn boxed(&self) -> String {
        let bar = "-".repeat(LCD_WIDTH);
        format!("+{bar}+\n|{}|\n|{}|\n+{bar}+", self.line1, self.line2)
    }
}

/// Acquisition loop of one device.
#[derive(Debug)]
pub struct Device {
    cfg: DeviceConfig,
    ppg: PpgStream,
    chain: Chain,
    detector: Detector,
    power: PowerMode,
    fs_hz: f64,
    tick: u64,
    seq: u64,
    batch: Vec<f64>,
    batch_start_s: f64,
    counted: VecDeque<f64>,
    temp_sum_v: f64,
    temp_n: u32,
    temp_c: Option<f64>,
    reading: VitalsReading,
    lcd: LcdLines,
    blink: bool,
    next_refresh_s: f64,
    last_vitals_s: Option<f64>,
}

/// LM35 output after the ADC.
fn sensed_volts(cfg: &DeviceConfig, t: f64) -> f64 {
    let temp_c = cfg.temp.temp_at(t).clamp(TEMP_RANGE_C.0, TEMP_RANGE_C.1);
    cfg.adc.reconstruct(cfg.adc.quantize(LM35_V_PER_C * temp_c))
}

fn sensed_temp_c(cfg: &DeviceConfig, t: f64) -> f64 {
    engine::temp_from_volts(sensed_volts(cfg, t)).0
}

impl Device {
    pub fn new(cfg: DeviceConfig) -> Result<Self, DeviceError> {
        cfg.validate()?;
        let fs_hz = cfg.adc.fs_hz;
        let lead_in = (FRONT_END_SETTLE_S * fs_hz).round() as u32;
        let mut ppg =
            PpgStream::with_lead_in(cfg.profile.clone(), cfg.noise.clone(), fs_hz, lead_in)?;
        let mut chain = Chain::new(&cfg.chain, fs_hz)?;
        // The analog front end is powered before the first conversion.
        for _ in 0..lead_in {
            chain.process(ppg.next_sample().v);
        }
        let detector = Detector::new(cfg.detector.clone());
        let reading = VitalsReading::empty(0.0, sensed_temp_c(&cfg, 0.0));
        let lcd = render_lcd(&reading, false);
        Ok(Self {
            power: cfg.power_mode,
            ppg,
            chain,
            detector,
            fs_hz,
            tick: 0,
            seq: 0,
            batch: Vec::with_capacity(cfg.batch_size),
            batch_start_s: 0.0,
            counted: VecDeque::with_capacity(COUNTED_HISTORY),
            temp_sum_v: 0.0,
            temp_n: 0,
            temp_c: None,
            reading,
            lcd,
            blink: false,
            next_refresh_s: cfg.lcd_period_s,
            last_vitals_s: None,
            cfg,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn now_s(&self) -> f64 {
        self.tick as f64 / self.fs_hz
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn reading(&self) -> &VitalsReading {
        &self.reading
    }

    pub fn lcd(&self) -> &LcdLines {
        &self.lcd
    }

    pub fn power_mode(&self) -> PowerMode {
        self.power
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Seq of the last frame produced (0 before any).
    pub fn last_seq(&self) -> u64 {
        self.seq
    }

    pub fn set_power_mode(&mut self, mode: PowerMode) {
        if mode != self.power && !mode.acquires() {
            self.batch.clear();
        }
        self.power = mode;
    }

    /// Apply a server-issued calibration. The 30-beat window restarts so a
    /// reading never mixes beats timed against different pick values.
    pub fn apply_calibration(&mut self, cmd: &CalibrationCommand) {
        self.detector.set_threshold(cmd.threshold_v);
        if let Some(r) = cmd.refractory_s {
            self.detector.set_refractory(r);
        }
        self.counted.clear();
    }

    fn frame(&mut self, payload: Payload, t_s: f64) -> TelemetryFrame {
        self.seq += 1;
        TelemetryFrame {
            sid: self.cfg.sid.clone(),
            seq: self.seq,
            t_ms: (t_s * 1000.0).round() as u64,
            payload,
        }
    }

    fn vitals_frame(&mut self, t_s: f64) -> TelemetryFrame {
        self.last_vitals_s = Some(t_s);
        let r = &self.reading;
        let payload = Payload::Vitals(VitalsPayload {
            bpm: r.bpm,
            temp_c: r.temp_c,
            temp_f: r.temp_f,
            valid: r.valid,
            beats_used: r.beats_used,
            window_s: r.window_s,
        });
        self.frame(payload, t_s)
    }

    fn status_frame(&mut self, t_s: f64) -> TelemetryFrame {
        let payload = Payload::Status(StatusPayload {
            power_mode: self.power,
            watts: self.power.watts(),
            lcd_line1: self.lcd.line1.clone(),
            lcd_line2: self.lcd.line2.clone(),
        });
        self.frame(payload, t_s)
    }

    fn flush_batch(&mut self, out: &mut Vec<TelemetryFrame>) {
        if self.batch.is_empty() {
            return;
        }
        let v = std::mem::take(&mut self.batch);
        let payload = Payload::Sample(SamplePayload::Batch {
            v,
            dt_ms: 1000.0 / self.fs_hz,
        });
        let t = self.batch_start_s;
        let frame = self.frame(payload, t);
        out.push(frame);
        self.batch = Vec::with_capacity(self.cfg.batch_size);
    }

    fn current_temp_c(&self) -> f64 {
        self.temp_c
            .unwrap_or_else(|| sensed_temp_c(&self.cfg, self.now_s()))
    }

    fn signal_valid(&self, t: f64) -> bool {
        let skip = self.counted.len().saturating_sub(REQUIRED_BEATS);
        let beats: Vec<f64> = self.counted.iter().skip(skip).copied().collect();
        // A beat must have arrived within the slowest admissible interval.
        let fresh = beats
            .last()
            .is_some_and(|&last| t - last <= 60.0 / self.cfg.validity.min_bpm);
        fresh && engine::swing_and_rate_ok(self.detector.swing(), &beats, &self.cfg.validity)
    }

    fn refresh_reading(&mut self, t: f64) {
        let beats: Vec<f64> = self.counted.iter().copied().collect();
        let valid = self.signal_valid(t);
        let mut reading =
            VitalsReading::from_beats(&beats, REQUIRED_BEATS, self.current_temp_c(), valid, t);
        if reading.bpm.is_none() && self.reading.bpm.is_some() {
            // Keep showing the last figure; validity carries the staleness.
            reading.bpm = self.reading.bpm;
            reading.beats_used = self.reading.beats_used;
            reading.window_s = self.reading.window_s;
        }
        self.reading = reading;
    }

    fn sample_temperature(&mut self, t: f64) {
        let v = sensed_volts(&self.cfg, t);
        self.temp_sum_v += v;
        self.temp_n += 1;
        if self.temp_c.is_none() {
            self.temp_c = Some(engine::temp_from_volts(v).0);
        }
    }

    /// Advance one sample period.
    pub fn step(&mut self, out: &mut Vec<TelemetryFrame>) {
        let t = self.now_s();
        self.tick += 1;

        if self.power.acquires() {
            let raw = self.ppg.next_sample();
            let filtered = self.chain.process(raw.v);
            let code = self.cfg.adc.quantize(filtered);
            let v = self.cfg.adc.reconstruct(code);

            if self.batch.is_empty() {
                self.batch_start_s = t;
            }
            self.batch.push(v);
            if self.batch.len() >= self.cfg.batch_size {
                self.flush_batch(out);
            }

            self.sample_temperature(t);

            if let Some(beat) = self.detector.push(t, v) {
                if beat >= CALIBRATION_WARMUP_S {
                    if self.counted.len() == COUNTED_HISTORY {
                        self.counted.pop_front();
                    }
                    self.counted.push_back(beat);
                    if self.counted.len() >= REQUIRED_BEATS {
                        self.refresh_reading(t);
                        let frame = self.vitals_frame(t);
                        out.push(frame);
                    }
                }
            }
        }

        if t + 0.5 / self.fs_hz >= self.next_refresh_s {
            self.next_refresh_s += self.cfg.lcd_period_s;
            self.display_refresh(t, out);
        }
    }

    fn display_refresh(&mut self, t: f64, out: &mut Vec<TelemetryFrame>) {
        if self.temp_n > 0 {
            let mean_v = self.temp_sum_v / f64::from(self.temp_n);
            self.temp_c = Some(engine::temp_from_volts(mean_v).0);
            self.temp_sum_v = 0.0;
            self.temp_n = 0;
        }
        if self.power.acquires() {
            self.refresh_reading(t);
        }
        self.blink = !self.blink;
        self.lcd = render_lcd(&self.reading, self.blink);

        let vitals_due = self
            .last_vitals_s
            .is_none_or(|last| t - last >= self.cfg.lcd_period_s - 0.5 / self.fs_hz);
        if self.power.acquires() && vitals_due {
            let frame = self.vitals_frame(t);
            out.push(frame);
        }
        let frame = self.status_frame(t);
        out.push(frame);
    }

    /// Advance by `seconds` of device time.
    pub fn run_for(&mut self, seconds: f64) -> Vec<TelemetryFrame> {
        let mut out = Vec::new();
        let ticks = (seconds * self.fs_hz).round() as u64;
        for _ in 0..ticks {
            self.step(&mut out);
        }
        out
    }

    /// Run through the next display refresh and return the reading it set.
    pub fn run_until_refresh(&mut self) -> VitalsReading {
        let mut sink = Vec::new();
        let due = self.next_refresh_s;
        while self.next_refresh_s <= due {
            self.step(&mut sink);
            sink.clear();
        }
        self.reading.clone()
    }

    /// Run until the first heart-rate reading completes, or give up after
    /// `timeout_s`.
    pub fn run_until_reading(&mut self, timeout_s: f64) -> Option<VitalsReading> {
        let mut sink = Vec::new();
        let limit = self.tick + (timeout_s * self.fs_hz).ceil() as u64;
        while self.tick < limit {
            self.step(&mut sink);
            sink.clear();
            if self.reading.bpm.is_some() {
                return Some(self.reading.clone());
            }
        }
        None
    }

    /// Stop acquisition: flush the partial sample batch and emit a closing
    /// vitals/status pair whose values match the final LCD.
    pub fn finish(&mut self) -> Vec<TelemetryFrame> {
        let mut out = Vec::new();
        let t = self.now_s();
        if self.power.acquires() {
            self.flush_batch(&mut out);
            self.lcd = render_lcd(&self.reading, self.blink);
            let frame = self.vitals_frame(t);
            out.push(frame);
        }
        let frame = self.status_frame(t);
        out.push(frame);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(bpm: Option<f64>, temp_f: f64, valid: bool) -> VitalsReading {
        VitalsReading {
            bpm,
            temp_c: (temp_f - 32.0) * 5.0 / 9.0,
            temp_f,
            valid,
            beats_used: 30,
            window_s: 24.0,
            t_s: 30.0,
        }
    }

    #[test]
    fn lcd_examples() {
        let lcd = render_lcd(&reading(Some(72.0), 98.6, true), true);
        assert_eq!(lcd.line1, "HR:  72 bpm     ");
        assert_eq!(lcd.line2, "T: 98.6F      * ");
        let lcd = render_lcd(&reading(None, 98.6, true), true);
        assert_eq!(lcd.line1, "HR: --- bpm     ");
        for phase in [true, false] {
            let lcd = render_lcd(&reading(Some(72.0), 98.6, false), phase);
            assert_eq!(lcd.line2.chars().nth(14), Some(' '));
        }
        let lcd = render_lcd(&reading(Some(72.0), 98.6, true), false);
        assert_eq!(lcd.line2, "T: 98.6F        ");
        let lcd = render_lcd(&reading(Some(140.4), 104.26, true), true);
        assert_eq!(lcd.line1, "HR: 140 bpm     ");
        assert_eq!(lcd.line2, "T:104.3F      * ");
        for l in [&lcd.line1, &lcd.line2] {
            assert_eq!(l.len(), LCD_WIDTH);
        }
    }

    #[test]
    fn clean_72_bpm_minute() {
        let cfg = DeviceConfig {
            profile: HeartProfile::with_bpm(72.0),
            ..DeviceConfig::default()
        };
        let mut dev = Device::new(cfg).unwrap();
        let frames = dev.run_for(60.0);
        let last_vitals = frames
            .iter()
            .rev()
            .find_map(|f| match &f.payload {
                Payload::Vitals(v) => Some(v.clone()),
                _ => None,
            })
            .unwrap();
        let bpm = last_vitals.bpm.unwrap();
        assert!((71.28..=72.72).contains(&bpm), "{bpm}");
        assert!((last_vitals.temp_f - 98.6).abs() <= 0.986);
        assert!(last_vitals.valid);
        // seq strictly increasing
        assert!(frames.windows(2).all(|w| w[1].seq > w[0].seq));
        let samples: usize = frames
            .iter()
            .filter_map(|f| match &f.payload {
                Payload::Sample(s) => Some(s.len()),
                _ => None,
            })
            .sum();
        assert_eq!(samples, 6000);
    }

    #[test]
    fn first_reading_arrives_in_time() {
        for bpm in [40.0, 72.0, 140.0] {
            let cfg = DeviceConfig {
                profile: HeartProfile::with_bpm(bpm),
                ..DeviceConfig::default()
            };
            let mut dev = Device::new(cfg).unwrap();
            let bound = 30.0 / (bpm / 60.0) + CALIBRATION_WARMUP_S + 1.0 / dev.fs_hz();
            let r = dev.run_until_reading(120.0).unwrap();
            assert!(
                r.t_s <= bound,
                "bpm {bpm}: first reading at {} > {bound}",
                r.t_s
            );
        }
    }

    #[test]
    fn deep_power_down_sends_status_only() {
        let cfg = DeviceConfig {
            power_mode: PowerMode::DeepPowerDown,
            ..DeviceConfig::default()
        };
        let mut dev = Device::new(cfg).unwrap();
        let frames = dev.run_for(5.0);
        assert_eq!(frames.len(), 4);
        for f in &frames {
            match &f.payload {
                Payload::Status(s) => {
                    assert_eq!(s.watts, 0.29);
                    assert_eq!(s.power_mode, PowerMode::DeepPowerDown);
                }
                other => panic!("unexpected frame {other:?}"),
            }
        }
    }

    #[test]
    fn calibration_switches_detector_mode() {
        let mut dev = Device::new(DeviceConfig::default()).unwrap();
        dev.run_for(10.0);
        dev.apply_calibration(&CalibrationCommand {
            threshold_v: Some(1.8),
            refractory_s: Some(0.3),
            issued_at_ms: 0,
        });
        assert!(!dev.detector().config().auto_calibrate);
        assert_eq!(dev.detector().threshold(), Some(1.8));
        assert_eq!(dev.detector().config().refractory_s, 0.3);
        dev.apply_calibration(&CalibrationCommand {
            threshold_v: None,
            refractory_s: None,
            issued_at_ms: 0,
        });
        assert!(dev.detector().config().auto_calibrate);
    }

    #[test]
    fn finish_matches_lcd() {
        let mut dev = Device::new(DeviceConfig::default()).unwrap();
        dev.run_for(40.0);
        let frames = dev.finish();
        let Payload::Vitals(v) = &frames[frames.len() - 2].payload else {
            panic!("expected vitals");
        };
        let expected = render_lcd(dev.reading(), true);
        assert_eq!(expected.line1, dev.lcd().line1);
        assert_eq!(v.bpm, dev.reading().bpm);
        let Payload::Status(s) = &frames[frames.len() - 1].payload else {
            panic!("expected status");
        };
        assert_eq!(s.lcd_line1, dev.lcd().line1);
    }

    #[test]
    fn config_round_trips_as_json() {
        let cfg = DeviceConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: DeviceConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: DeviceConfig =
            serde_json::from_str(r#"{"sid":"bed-4","profile":{"bpm_true":88}}"#).unwrap();
        assert_eq!(partial.sid, "bed-4");
        assert_eq!(partial.profile.bpm_true, 88.0);
        assert_eq!(
            partial.profile.systolic_amp_v,
            HeartProfile::default().systolic_amp_v
        );
    }
}
