//! Actual-vs-measured sweeps over heart rate and temperature.
//!
//! Each sweep point runs the full device pipeline offline and without
//! pacing until its first reading completes, then records the relative
//! error against the simulator's ground truth.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Device, DeviceConfig, DeviceError};
use crate::engine::celsius_to_fahrenheit;
use crate::sim::{HeartProfile, NoiseModel, TempProfile};

/// Heart-rate points give up after this many simulated beats.
pub const TIMEOUT_BEATS: f64 = 90.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePreset {
    Clean,
    Mild,
    Heavy,
}

impl NoisePreset {
    pub const ALL: [NoisePreset; 3] = [NoisePreset::Clean, NoisePreset::Mild, NoisePreset::Heavy];

    /// Disturbance levels relative to the default 40 mV raw pulse.
    pub fn model(self, seed: u64) -> NoiseModel {
        let (white, motion) = match self {
            NoisePreset::Clean => (0.0, 0.0),
            NoisePreset::Mild => (0.001, 0.002),
            NoisePreset::Heavy => (0.003, 0.006),
        };
        NoiseModel {
            white_sigma_v: white,
            motion_amp_v: motion,
            motion_freq_hz: 8.0,
            seed,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoisePreset::Clean => "clean",
            NoisePreset::Mild => "mild",
            NoisePreset::Heavy => "heavy",
        }
    }
}

impl fmt::Display for NoisePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoisePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoisePreset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown noise preset `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Hr,
    Temp,
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hr" => Ok(Kind::Hr),
            "temp" => Ok(Kind::Temp),
            other => Err(format!("unknown kind `{other}` (expected hr or temp)")),
        }
    }
}

/// Inclusive arithmetic grid, robust to accumulated step error.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub bpm_values: Vec<f64>,
    pub temp_values_c: Vec<f64>,
    pub noise_levels: Vec<NoisePreset>,
    pub trials_per_point: u32,
    pub tolerance_pct: f64,
    pub base_seed: u64,
    /// Template for everything the sweep does not vary.
    pub device: DeviceConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            bpm_values: grid(40.0, 140.0, 10.0),
            temp_values_c: grid(30.0, 45.0, 0.5),
            noise_levels: NoisePreset::ALL.to_vec(),
            trials_per_point: 5,
            tolerance_pct: 1.0,
            base_seed: 1,
            device: DeviceConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials_per_point == 0 {
            return Err(HarnessError::InvalidSpec(
                "trials_per_point must be >= 1".into(),
            ));
        }
        if !(self.tolerance_pct.is_finite() && self.tolerance_pct > 0.0) {
            return Err(HarnessError::InvalidSpec(
                "tolerance_pct must be > 0".into(),
            ));
        }
        if self.bpm_values.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(HarnessError::InvalidSpec("bpm values must be > 0".into()));
        }
        self.device.validate()?;
        Ok(())
    }
}

/// One measured point. `measured` is absent when the pipeline produced no
/// valid reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: Kind,
    pub actual: f64,
    pub measured: Option<f64>,
    pub rel_err_pct: Option<f64>,
    pub noise: NoisePreset,
    pub seed: u64,
}

impl SweepRow {
    fn new(kind: Kind, actual: f64, measured: Option<f64>, noise: NoisePreset, seed: u64) -> Self {
        let rel_err_pct = measured.map(|m| 100.0 * (m - actual) / actual);
        Self {
            kind,
            actual,
            measured,
            rel_err_pct,
            noise,
            seed,
        }
    }

    pub fn failed(&self) -> bool {
        self.measured.is_none()
    }
}

/// Error statistics for one (kind, noise) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub kind: Kind,
    pub noise: NoisePreset,
    pub points: usize,
    pub failures: usize,
    pub max_abs_err_pct: f64,
    pub mean_abs_err_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<SweepRow>,
}

/// Heart rate measured by the pipeline for one sweep point.
pub fn measure_heart_rate(
    template: &DeviceConfig,
    bpm: f64,
    noise: NoiseModel,
) -> Result<Option<f64>, DeviceError> {
    let cfg = DeviceConfig {
        profile: HeartProfile {
            bpm_true: bpm,
            ..template.profile.clone()
        },
        noise,
        ..template.clone()
    };
    let mut device = Device::new(cfg)?;
    let timeout = TIMEOUT_BEATS * 60.0 / bpm;
    Ok(device
        .run_until_reading(timeout)
        .filter(|r| r.valid)
        .and_then(|r| r.bpm))
}

/// Temperature (°F) measured by the pipeline for one sweep point.
pub fn measure_temperature(
    template: &DeviceConfig,
    temp_c: f64,
    noise: NoiseModel,
) -> Result<Option<f64>, DeviceError> {
    let cfg = DeviceConfig {
        temp: TempProfile {
            temp_c_true: temp_c,
            ..template.temp.clone()
        },
        noise,
        ..template.clone()
    };
    let mut device = Device::new(cfg)?;
    // One display period averages the temperature channel.
    Ok(Some(device.run_until_refresh().temp_f))
}

#[derive(Debug, Clone, Copy)]
struct Point {
    kind: Kind,
    value: f64,
    noise: NoisePreset,
    seed: u64,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Report, HarnessError> {
    spec.validate()?;
    let mut points = Vec::new();
    for &noise in &spec.noise_levels {
        for trial in 0..u64::from(spec.trials_per_point) {
            let seed = spec.base_seed + trial;
            points.extend(spec.bpm_values.iter().map(|&value| Point {
                kind: Kind::Hr,
                value,
                noise,
                seed,
            }));
            points.extend(spec.temp_values_c.iter().map(|&value| Point {
                kind: Kind::Temp,
                value,
                noise,
                seed,
            }));
        }
    }
    let mut rows = points
        .par_iter()
        .map(|p| -> Result<SweepRow, DeviceError> {
            let noise = p.noise.model(p.seed);
            Ok(match p.kind {
                Kind::Hr => {
                    let measured = measure_heart_rate(&spec.device, p.value, noise)?;
                    SweepRow::new(Kind::Hr, p.value, measured, p.noise, p.seed)
                }
                Kind::Temp => {
                    let measured = measure_temperature(&spec.device, p.value, noise)?;
                    let actual = celsius_to_fahrenheit(p.value);
                    SweepRow::new(Kind::Temp, actual, measured, p.noise, p.seed)
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        (a.kind, a.noise, a.seed)
            .cmp(&(b.kind, b.noise, b.seed))
            .then(a.actual.total_cmp(&b.actual))
    });
    Ok(Report { rows })
}

impl Report {
    pub fn stats(&self) -> Vec<ErrorStats> {
        let mut cells: Vec<(Kind, NoisePreset)> =
            self.rows.iter().map(|r| (r.kind, r.noise)).collect();
        cells.sort();
        cells.dedup();
        cells
            .into_iter()
            .map(|(kind, noise)| {
                let rows: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.kind == kind && r.noise == noise)
                    .collect();
                let errs: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.rel_err_pct)
                    .map(f64::abs)
                    .collect();
                ErrorStats {
                    kind,
                    noise,
                    points: rows.len(),
                    failures: rows.len() - errs.len(),
                    max_abs_err_pct: errs.iter().copied().fold(0.0, f64::max),
                    mean_abs_err_pct: if errs.is_empty() {
                        0.0
                    } else {
                        errs.iter().sum::<f64>() / errs.len() as f64
                    },
                }
            })
            .collect()
    }

    /// Clean-signal rows within `tolerance_pct`, with every heart-rate point
    /// up to `max_bpm` producing a reading.
    pub fn clean_passes(&self, tolerance_pct: f64, max_bpm: f64) -> bool {
        self.rows
            .iter()
            .filter(|r| r.noise == NoisePreset::Clean)
            .all(|r| match (r.kind, r.rel_err_pct) {
                (_, Some(e)) => e.abs() <= tolerance_pct,
                (Kind::Hr, None) => r.actual > max_bpm,
                (Kind::Temp, None) => false,
            })
    }

    pub fn summary(&self) -> String {
        let mut out = String::from("kind  noise  points failures max|err|%  mean|err|%\n");
        for s in self.stats() {
            let kind = match s.kind {
                Kind::Hr => "hr",
                Kind::Temp => "temp",
            };
            out.push_str(&format!(
                "{kind:<5} {:<6} {:>6} {:>8} {:>9.4} {:>11.4}\n",
                s.noise.as_str(),
                s.points,
                s.failures,
                s.max_abs_err_pct,
                s.mean_abs_err_pct
            ));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["kind", "actual", "measured", "rel_err_pct", "noise", "seed"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?;
        Ok(Self { rows })
    }
}

/// Actual-vs-measured pairs for one kind and noise level, ordered by actual
/// value. Trials at the same point are averaged; points with no successful
/// trial are left out.
pub fn export_curve(report: &Report, kind: Kind, noise: NoisePreset) -> Vec<(f64, f64)> {
    let mut rows: Vec<&SweepRow> = report
        .rows
        .iter()
        .filter(|r| r.kind == kind && r.noise == noise)
        .collect();
    rows.sort_by(|a, b| a.actual.total_cmp(&b.actual).then(a.seed.cmp(&b.seed)));
    let mut curve = Vec::new();
    for group in rows.chunk_by(|a, b| a.actual == b.actual) {
        let measured: Vec<f64> = group.iter().filter_map(|r| r.measured).collect();
        if !measured.is_empty() {
            curve.push((
                group[0].actual,
                measured.iter().sum::<f64>() / measured.len() as f64,
            ));
        }
    }
    curve
}

pub fn write_curve<W: Write>(out: W, curve: &[(f64, f64)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["actual", "measured"])?;
    for (a, m) in curve {
        w.write_record([a.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let spec = SweepSpec::default();
        assert_eq!(spec.bpm_values.len(), 11);
        assert_eq!(spec.bpm_values[10], 140.0);
        assert_eq!(spec.temp_values_c.len(), 31);
        assert_eq!(*spec.temp_values_c.last().unwrap(), 45.0);
    }

    #[test]
    fn clean_70_and_37() {
        let t = DeviceConfig::default();
        let bpm = measure_heart_rate(&t, 70.0, NoisePreset::Clean.model(1))
            .unwrap()
            .unwrap();
        assert!((69.3..=70.7).contains(&bpm), "{bpm}");
        let f = measure_temperature(&t, 37.0, NoisePreset::Clean.model(1))
            .unwrap()
            .unwrap();
        assert!((f - 98.6).abs() <= 0.986, "{f}");
    }

    #[test]
    fn above_ceiling_is_a_failure_row() {
        let t = DeviceConfig::default();
        assert_eq!(
            measure_heart_rate(&t, 160.0, NoisePreset::Clean.model(1)).unwrap(),
            None
        );
    }

    #[test]
    fn curve_projection() {
        let rows = vec![
            SweepRow::new(Kind::Hr, 50.0, Some(50.1), NoisePreset::Clean, 1),
            SweepRow::new(Kind::Hr, 40.0, Some(40.2), NoisePreset::Clean, 1),
            SweepRow::new(Kind::Hr, 60.0, None, NoisePreset::Clean, 1),
            SweepRow::new(Kind::Hr, 40.0, Some(40.0), NoisePreset::Mild, 1),
            SweepRow::new(Kind::Temp, 98.6, Some(98.58), NoisePreset::Clean, 1),
        ];
        let report = Report { rows };
        let curve = export_curve(&report, Kind::Hr, NoisePreset::Clean);
        assert_eq!(curve, vec![(40.0, 40.2), (50.0, 50.1)]);
        assert!(export_curve(&Report::default(), Kind::Temp, NoisePreset::Clean).is_empty());
        let mut out = Vec::new();
        write_curve(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "actual,measured\n");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            SweepRow::new(Kind::Hr, 160.0, None, NoisePreset::Clean, 3),
            SweepRow::new(Kind::Temp, 98.6, Some(98.58022), NoisePreset::Heavy, 4),
        ];
        let report = Report { rows };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("kind,actual,measured,rel_err_pct,noise,seed\nhr,160.0,,,clean,3\n")
        );
        assert_eq!(Report::read_csv(buf.as_slice()).unwrap(), report);
    }
}
