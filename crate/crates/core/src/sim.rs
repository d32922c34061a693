//! Synthetic fingertip PPG and LM35 temperature sources.
//!
//! Each beat is rendered as two Gaussian pulses: a systolic peak and a
//! smaller secondary (dicrotic) peak trailing it. Ground-truth beat onsets are
//! kept in a sidecar list so the sample stream itself carries only volts.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Supply rail of the sensor front end, volts.
pub const SUPPLY_V: f64 = 5.0;

/// LM35 transfer scale, volts per degree Celsius.
pub const LM35_V_PER_C: f64 = 0.010;

/// Operating temperature range of the sensor, degrees Celsius.
pub const TEMP_RANGE_C: (f64, f64) = (0.0, 70.0);

/// Minimum sample rate accepted by [`generate_ppg`].
pub const MIN_FS_HZ: f64 = 50.0;

// Pulse morphology, as fractions of the beat interval.
const SYSTOLIC_PHASE: f64 = 0.3;
const SYSTOLIC_WIDTH: f64 = 0.08;
const DICROTIC_WIDTH: f64 = 0.04;
// Gaussian support, in standard deviations.
const SUPPORT_SIGMAS: f64 = 6.0;

// Keeps the jitter stream independent of the noise stream for the same seed.
const NOISE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("temperature {temp_c} °C outside sensor range [0, 70] °C")]
    TemperatureOutOfRange { temp_c: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// One timestamped voltage of an analog channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub v: f64,
}

impl Sample {
    pub fn new(t_s: f64, v: f64) -> Self {
        Self { t_s, v }
    }
}

/// Ground-truth cardiac physiology driving the PPG source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeartProfile {
    pub bpm_true: f64,
    /// Per-interval jitter, as a fraction of the mean interval.
    pub jitter_pct: f64,
    pub systolic_amp_v: f64,
    pub dicrotic_ratio: f64,
    /// Delay of the secondary peak after the systolic peak, as a fraction of
    /// the beat interval.
    pub dicrotic_delay_frac: f64,
    pub dc_offset_v: f64,
}

impl Default for HeartProfile {
    fn default() -> Self {
        Self {
            bpm_true: 72.0,
            jitter_pct: 0.0,
            systolic_amp_v: 0.04,
            dicrotic_ratio: 0.4,
            dicrotic_delay_frac: 0.3,
            dc_offset_v: 0.02,
        }
    }
}

impl HeartProfile {
    pub fn with_bpm(bpm: f64) -> Self {
        Self {
            bpm_true: bpm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.bpm_true.is_finite() && self.bpm_true > 0.0) {
            return Err(invalid("bpm_true", "must be finite and > 0"));
        }
        if !(self.jitter_pct.is_finite() && self.jitter_pct >= 0.0) {
            return Err(invalid("jitter_pct", "must be finite and >= 0"));
        }
        if !(self.systolic_amp_v.is_finite() && self.systolic_amp_v > 0.0) {
            return Err(invalid("systolic_amp_v", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.dicrotic_ratio) {
            return Err(invalid("dicrotic_ratio", "must lie in [0, 1)"));
        }
        if !(self.dicrotic_delay_frac > 0.0 && self.dicrotic_delay_frac < 1.0) {
            return Err(invalid("dicrotic_delay_frac", "must lie in (0, 1)"));
        }
        if !(self.dc_offset_v.is_finite() && self.dc_offset_v >= 0.0) {
            return Err(invalid("dc_offset_v", "must be finite and >= 0"));
        }
        if self.systolic_amp_v + self.dc_offset_v > SUPPLY_V {
            return Err(invalid(
                "systolic_amp_v",
                format!("systolic_amp_v + dc_offset_v exceeds the {SUPPLY_V} V rail"),
            ));
        }
        Ok(())
    }

    pub fn mean_interval_s(&self) -> f64 {
        60.0 / self.bpm_true
    }
}

/// Additive disturbances on the PPG channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub white_sigma_v: f64,
    pub motion_amp_v: f64,
    pub motion_freq_hz: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            white_sigma_v: 0.0,
            motion_amp_v: 0.0,
            motion_freq_hz: 8.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn white(sigma_v: f64, seed: u64) -> Self {
        Self {
            white_sigma_v: sigma_v,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.white_sigma_v.is_finite() && self.white_sigma_v >= 0.0) {
            return Err(invalid("white_sigma_v", "must be finite and >= 0"));
        }
        if !(self.motion_amp_v.is_finite() && self.motion_amp_v >= 0.0) {
            return Err(invalid("motion_amp_v", "must be finite and >= 0"));
        }
        if !(self.motion_freq_hz.is_finite() && self.motion_freq_hz > 0.0) {
            return Err(invalid("motion_freq_hz", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Ground-truth body temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempProfile {
    pub temp_c_true: f64,
    pub drift_c_per_min: f64,
}

impl Default for TempProfile {
    fn default() -> Self {
        Self {
            temp_c_true: 37.0,
            drift_c_per_min: 0.0,
        }
    }
}

impl TempProfile {
    pub fn new(temp_c: f64) -> Self {
        Self {
            temp_c_true: temp_c,
            drift_c_per_min: 0.0,
        }
    }

    pub fn temp_at(&self, t_s: f64) -> f64 {
        self.temp_c_true + self.drift_c_per_min * t_s / 60.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.drift_c_per_min.is_finite() {
            return Err(invalid("drift_c_per_min", "must be finite"));
        }
        check_temp_range(self.temp_c_true)
    }
}

fn check_temp_range(temp_c: f64) -> Result<(), SimError> {
    if temp_c.is_finite() && (TEMP_RANGE_C.0..=TEMP_RANGE_C.1).contains(&temp_c) {
        Ok(())
    } else {
        Err(SimError::TemperatureOutOfRange { temp_c })
    }
}

/// LM35 output voltage for the profile at time `t_s`.
pub fn lm35_voltage(temp: &TempProfile, t_s: f64) -> Result<f64, SimError> {
    let temp_c = temp.temp_at(t_s);
    check_temp_range(temp_c)?;
    Ok(LM35_V_PER_C * temp_c)
}

#[derive(Debug, Clone, Copy)]
struct Beat {
    onset: f64,
    interval: f64,
}

impl Beat {
    fn systolic_center(&self) -> f64 {
        self.onset + SYSTOLIC_PHASE * self.interval
    }

    fn end_of_support(&self, dicrotic_delay_frac: f64) -> f64 {
        self.systolic_center()
            + dicrotic_delay_frac * self.interval
            + SUPPORT_SIGMAS * DICROTIC_WIDTH * self.interval
    }

    fn start_of_support(&self) -> f64 {
        self.systolic_center() - SUPPORT_SIGMAS * SYSTOLIC_WIDTH * self.interval
    }
}

fn gaussian(t: f64, center: f64, sigma: f64) -> f64 {
    let z = (t - center) / sigma;
    (-0.5 * z * z).exp()
}

/// Streaming PPG source. Samples are produced at `t = n / fs_hz`.
///
/// With an end time, only beats whose first half fits inside the stream are
/// rendered, and those are exactly the beats reported by [`PpgStream::onsets`].
#[derive(Debug, Clone)]
pub struct PpgStream {
    profile: HeartProfile,
    noise: NoiseModel,
    fs_hz: f64,
    end_s: Option<f64>,
    index: i64,
    next_onset: f64,
    active: VecDeque<Beat>,
    onsets: Vec<f64>,
    beat_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    white: Option<Normal<f64>>,
    motion_phase: f64,
}

impl PpgStream {
    pub fn new(profile: HeartProfile, noise: NoiseModel, fs_hz: f64) -> Result<Self, SimError> {
        Self::build(profile, noise, fs_hz, None)
    }

    /// Stream that begins `lead_in` samples before `t = 0`, with the first
    /// beat at the first sample.
    pub fn with_lead_in(
        profile: HeartProfile,
        noise: NoiseModel,
        fs_hz: f64,
        lead_in: u32,
    ) -> Result<Self, SimError> {
        let mut stream = Self::build(profile, noise, fs_hz, None)?;
        stream.index = -i64::from(lead_in);
        stream.next_onset = stream.index as f64 / fs_hz;
        Ok(stream)
    }

    fn build(
        profile: HeartProfile,
        noise: NoiseModel,
        fs_hz: f64,
        end_s: Option<f64>,
    ) -> Result<Self, SimError> {
        profile.validate()?;
        noise.validate()?;
        if !(fs_hz.is_finite() && fs_hz > 0.0) {
            return Err(invalid("fs_hz", "must be finite and > 0"));
        }
        let beat_rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise.seed ^ NOISE_STREAM_SALT);
        let motion_phase = noise_rng.random::<f64>() * 2.0 * PI;
        let jitter = (profile.jitter_pct > 0.0)
            .then(|| Normal::new(0.0, profile.jitter_pct).expect("finite jitter"));
        let white = (noise.white_sigma_v > 0.0)
            .then(|| Normal::new(0.0, noise.white_sigma_v).expect("finite sigma"));
        Ok(Self {
            profile,
            noise,
            fs_hz,
            end_s,
            index: 0,
            next_onset: 0.0,
            active: VecDeque::new(),
            onsets: Vec::new(),
            beat_rng,
            noise_rng,
            jitter,
            white,
            motion_phase,
        })
    }

    pub fn fs_hz(&self) -> f64 {
        self.fs_hz
    }

    pub fn profile(&self) -> &HeartProfile {
        &self.profile
    }

    /// Onsets of every beat scheduled so far (for a bounded stream, the
    /// complete ground truth once the stream is exhausted).
    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    fn draw_interval(&mut self) -> f64 {
        let mean = self.profile.mean_interval_s();
        match &self.jitter {
            Some(dist) => {
                let bound = 3.0 * self.profile.jitter_pct;
                let j = dist.sample(&mut self.beat_rng).clamp(-bound, bound);
                mean * (1.0 + j).max(0.1)
            }
            None => mean,
        }
    }

    fn schedule_until(&mut self, horizon: f64) {
        while self.next_onset <= horizon {
            let interval = self.draw_interval();
            let beat = Beat {
                onset: self.next_onset,
                interval,
            };
            self.next_onset += interval;
            let included = self
                .end_s
                .is_none_or(|end| beat.onset + 0.5 * beat.interval <= end);
            if included {
                self.onsets.push(beat.onset);
                self.active.push_back(beat);
            }
        }
    }

    fn pulse_at(&self, t: f64) -> f64 {
        let p = &self.profile;
        self.active
            .iter()
            .map(|b| {
                let sys = b.systolic_center();
                let dic = sys + p.dicrotic_delay_frac * b.interval;
                p.systolic_amp_v * gaussian(t, sys, SYSTOLIC_WIDTH * b.interval)
                    + p.dicrotic_ratio
                        * p.systolic_amp_v
                        * gaussian(t, dic, DICROTIC_WIDTH * b.interval)
            })
            .sum()
    }

    /// Produce the next sample.
    pub fn next_sample(&mut self) -> Sample {
        let t = self.index as f64 / self.fs_hz;
        self.index += 1;

        // Leading support of a beat can start before its onset; look ahead so
        // it is always scheduled in time.
        let lookahead = 2.0 * self.profile.mean_interval_s();
        self.schedule_until(t + lookahead);
        let delay = self.profile.dicrotic_delay_frac;
        while self
            .active
            .front()
            .is_some_and(|b| b.end_of_support(delay) < t)
        {
            self.active.pop_front();
        }

        let mut v = self.profile.dc_offset_v;
        if self.active.iter().any(|b| b.start_of_support() <= t) {
            v += self.pulse_at(t);
        }
        if let Some(white) = &self.white {
            v += white.sample(&mut self.noise_rng);
        }
        if self.noise.motion_amp_v > 0.0 {
            v += self.noise.motion_amp_v
                * (2.0 * PI * self.noise.motion_freq_hz * t + self.motion_phase).sin();
        }
        Sample::new(t, v.clamp(0.0, SUPPLY_V))
    }
}

/// A bounded PPG recording plus its ground-truth beat onsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgTrace {
    pub fs_hz: f64,
    pub samples: Vec<Sample>,
    pub onsets_s: Vec<f64>,
}

/// Number of samples covering `duration_s` at `fs_hz`, i.e. ⌈fs·duration⌉.
pub fn sample_count(fs_hz: f64, duration_s: f64) -> usize {
    let exact = fs_hz * duration_s;
    // Absorb representation error such as 100 * 0.3 = 30.000000000000004.
    let rounded = exact.round();
    if (exact - rounded).abs() <= 1e-9 * exact.max(1.0) {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}

/// Render a PPG recording of `duration_s` seconds.
pub fn generate_ppg(
    profile: &HeartProfile,
    noise: &NoiseModel,
    fs_hz: f64,
    duration_s: f64,
) -> Result<PpgTrace, SimError> {
    if !(fs_hz.is_finite() && fs_hz >= MIN_FS_HZ) {
        return Err(invalid("fs_hz", format!("must be >= {MIN_FS_HZ}")));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(invalid("duration_s", "must be finite and > 0"));
    }
    let mut stream = PpgStream::build(profile.clone(), noise.clone(), fs_hz, Some(duration_s))?;
    let n = sample_count(fs_hz, duration_s);
    let samples: Vec<Sample> = (0..n).map(|_| stream.next_sample()).collect();
    // Settle the schedule to the end of the recording so trailing beats whose
    // support started after the last sample are still accounted for.
    stream.schedule_until(duration_s);
    Ok(PpgTrace {
        fs_hz,
        samples,
        onsets_s: stream.onsets,
    })
}

/// Write samples as `t_s,v` CSV.
pub fn write_trace_csv<W: Write>(mut out: W, samples: &[Sample]) -> io::Result<()> {
    writeln!(out, "t_s,v")?;
    for s in samples {
        writeln!(out, "{},{}", s.t_s, s.v)?;
    }
    out.flush()
}
