use proptest::prelude::*;
use pulsemon_core::sim::{generate_ppg, sample_count, write_trace_csv, HeartProfile, NoiseModel};
use pulsemon_core::{ChainConfig, Sample};

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>() / (x.len() - lag) as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ground_truth_count_matches_rate(bpm in 30.0f64..200.0, duration in 5.0f64..180.0) {
        let trace = generate_ppg(&HeartProfile::with_bpm(bpm), &NoiseModel::off(), 50.0, duration).unwrap();
        let expected = (bpm * duration / 60.0).round() as usize;
        prop_assert_eq!(trace.onsets_s.len(), expected);
        prop_assert_eq!(trace.samples.len(), sample_count(50.0, duration));
    }

    #[test]
    fn output_stays_within_supply(
        bpm in 40.0f64..140.0,
        sigma in 0.0f64..2.0,
        motion in 0.0f64..2.0,
        dc in 0.0f64..4.9,
        seed in any::<u64>(),
    ) {
        let profile = HeartProfile { dc_offset_v: dc, ..HeartProfile::with_bpm(bpm) };
        let noise = NoiseModel { white_sigma_v: sigma, motion_amp_v: motion, seed, ..NoiseModel::default() };
        let trace = generate_ppg(&profile, &noise, 100.0, 5.0).unwrap();
        for s in &trace.samples {
            prop_assert!((0.0..=5.0).contains(&s.v), "{} out of range", s.v);
        }
    }

    #[test]
    fn chain_output_never_exceeds_rails(input in prop::collection::vec(-1.0e3f64..1.0e3, 1..400)) {
        let samples: Vec<Sample> = input.iter().enumerate().map(|(n, &v)| Sample::new(n as f64 / 100.0, v)).collect();
        let cfg = ChainConfig::default();
        let out = pulsemon_core::chain::apply_chain(&cfg, 100.0, &samples).unwrap();
        for s in out {
            prop_assert!(s.v >= cfg.rail_low_v && s.v <= cfg.rail_high_v);
        }
    }

    #[test]
    fn noiseless_signal_is_periodic(bpm in 40.0f64..140.0) {
        let fs = 100.0;
        let trace = generate_ppg(&HeartProfile::with_bpm(bpm), &NoiseModel::off(), fs, 30.0).unwrap();
        let mean = trace.samples.iter().map(|s| s.v).sum::<f64>() / trace.samples.len() as f64;
        let x: Vec<f64> = trace.samples.iter().map(|s| s.v - mean).collect();
        let period = 60.0 / bpm * fs;
        let lo = (period * 0.5) as usize;
        let hi = (period * 1.5) as usize;
        let best = (lo..=hi)
            .max_by(|&a, &b| autocorrelation(&x, a).total_cmp(&autocorrelation(&x, b)))
            .unwrap();
        prop_assert!((best as f64 - period).abs() <= 1.0, "peak lag {} vs period {}", best, period);
    }
}

#[test]
fn seeded_runs_are_byte_identical() {
    let profile = HeartProfile {
        jitter_pct: 3.0,
        ..HeartProfile::with_bpm(60.0)
    };
    let noise = NoiseModel {
        white_sigma_v: 0.05,
        motion_amp_v: 0.01,
        seed: 42,
        ..NoiseModel::default()
    };
    let render = || {
        let trace = generate_ppg(&profile, &noise, 100.0, 20.0).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace.samples).unwrap();
        (buf, trace.onsets_s)
    };
    assert_eq!(render(), render());

    let other = NoiseModel {
        seed: 43,
        ..noise.clone()
    };
    let a = generate_ppg(&profile, &noise, 100.0, 5.0).unwrap();
    let b = generate_ppg(&profile, &other, 100.0, 5.0).unwrap();
    assert_ne!(a.samples, b.samples);
}
