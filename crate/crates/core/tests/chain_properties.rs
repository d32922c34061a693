use std::f64::consts::PI;

use proptest::prelude::*;
use pulsemon_core::chain::{cutoff_frequency, digitize, max_measurable_bpm};
use pulsemon_core::{AdcConfig, Chain, ChainConfig, RcStage, Sample, StageFilter};

const FS: f64 = 2000.0;

/// Single-pole analog magnitude response.
fn analog_gain(stage: &RcStage, f: f64) -> f64 {
    let fc = 1.0 / (2.0 * PI * stage.r_f_ohms * stage.c_f_farads);
    stage.gain / (1.0 + (f / fc).powi(2)).sqrt()
}

/// Least-squares amplitude of the `f` component in steady state.
fn measured_gain(mut system: impl FnMut(f64) -> f64, f: f64, amp: f64) -> f64 {
    let settle = (10.0 / f).max(3.0);
    let measure = (20.0 / f).max(2.0);
    let periods = (measure * f).ceil();
    let n_settle = (settle * FS) as usize;
    let n_measure = (periods / f * FS).round() as usize;
    let mut y_sum = 0.0;
    let mut ys = Vec::with_capacity(n_measure);
    for n in 0..n_settle + n_measure {
        let t = n as f64 / FS;
        let y = system(amp * (2.0 * PI * f * t).sin());
        if n >= n_settle {
            ys.push((t, y));
            y_sum += y;
        }
    }
    let mean = y_sum / ys.len() as f64;
    let (mut ss, mut cc, mut sc) = (0.0, 0.0, 0.0);
    let (mut ys_dot, mut yc_dot) = (0.0, 0.0);
    for &(t, y) in &ys {
        let (sn, cs) = (2.0 * PI * f * t).sin_cos();
        ss += sn * sn;
        cc += cs * cs;
        sc += sn * cs;
        ys_dot += (y - mean) * sn;
        yc_dot += (y - mean) * cs;
    }
    let det = ss * cc - sc * sc;
    let a = (ys_dot * cc - yc_dot * sc) / det;
    let b = (yc_dot * ss - ys_dot * sc) / det;
    (a * a + b * b).sqrt() / amp
}

fn test_frequencies(fc: f64) -> [f64; 4] {
    [fc / 4.0, fc, 4.0 * fc, 10.0 * fc]
}

#[test]
fn single_stage_matches_analog_response() {
    let stage = RcStage::default();
    let fc = cutoff_frequency(&stage).unwrap();
    for f in test_frequencies(fc) {
        let mut filter = StageFilter::new(&stage, FS).unwrap();
        let got = measured_gain(|x| filter.process(x), f, 0.1);
        let want = analog_gain(&stage, f);
        let err = (got - want).abs() / want;
        assert!(
            err <= 0.02,
            "f = {f}: gain {got} vs {want} ({:.2}%)",
            err * 100.0
        );
    }
}

#[test]
fn two_stages_give_product_response() {
    let cfg = ChainConfig {
        rail_low_v: -1.0e6,
        rail_high_v: 1.0e6,
        ..ChainConfig::default()
    };
    let fc = cutoff_frequency(&cfg.stage1).unwrap();
    for f in test_frequencies(fc) {
        let mut chain = Chain::new(&cfg, FS).unwrap();
        let got = measured_gain(|x| chain.process(x), f, 0.01);
        let want = analog_gain(&cfg.stage1, f) * analog_gain(&cfg.stage2, f);
        let err = (got - want).abs() / want;
        assert!(
            err <= 0.03,
            "f = {f}: gain {got} vs {want} ({:.2}%)",
            err * 100.0
        );
    }
}

proptest! {
    #[test]
    fn stage_response_holds_across_designs(
        r in 1.0e3f64..1.0e6,
        c in 1.0e-7f64..1.0e-5,
        gain in 0.5f64..20.0,
        ratio in 0.1f64..10.0,
    ) {
        let stage = RcStage { r_f_ohms: r, c_f_farads: c, gain };
        let fc = cutoff_frequency(&stage).unwrap();
        let f = fc * ratio;
        prop_assume!(fc <= 20.0 && f >= 0.05);
        let mut filter = StageFilter::new(&stage, FS).unwrap();
        let got = measured_gain(|x| filter.process(x), f, 0.1);
        let want = analog_gain(&stage, f);
        prop_assert!((got - want).abs() / want <= 0.02, "{} vs {}", got, want);
    }

    #[test]
    fn digitize_reconstruct_within_half_lsb(v in -2.0f64..6.0, bits in 8u32..=24) {
        let adc = AdcConfig { bits, ..AdcConfig::default() };
        let code = digitize(&adc, &[Sample::new(0.0, v)])[0].1;
        let clamped = v.clamp(0.0, adc.vref_v);
        prop_assert!(code <= adc.max_code());
        prop_assert!((adc.reconstruct(code) - clamped).abs() <= adc.lsb_v() / 2.0 + 1e-12);
    }

    #[test]
    fn cutoff_is_scale_invariant(r in 1.0e2f64..1.0e7, c in 1.0e-9f64..1.0e-3, k in 1.0e-3f64..1.0e3) {
        let a = cutoff_frequency(&RcStage { r_f_ohms: r, c_f_farads: c, gain: 1.0 }).unwrap();
        let b = cutoff_frequency(&RcStage { r_f_ohms: k * r, c_f_farads: c / k, gain: 1.0 }).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }
}

#[test]
fn default_chain_ceiling() {
    let fc = cutoff_frequency(&RcStage::default()).unwrap();
    assert!((fc - 1.0 / (2.0 * PI * 0.068)).abs() < 1e-12);
    assert!((max_measurable_bpm(2.34).unwrap() - 140.4).abs() < 1e-9);
}
