mod common;

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use pel::signal::*;
use pel::simulate::{run_trial, NoiseConfig, TrialConfig};
use proptest::prelude::*;

// Closed-form squared magnitude of an order-n bilinear Butterworth low-pass.
fn butterworth_power(order: usize, cutoff: f64, fs: f64, freq: f64) -> f64 {
    let r = (PI * freq / fs).tan() / (PI * cutoff / fs).tan();
    1.0 / (1.0 + r.powi(2 * order as i32))
}

fn sine(freq: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / SAMPLE_RATE).sin()).collect()
}

fn series(nominal: Nominal, x: Vec<f64>, value: impl Fn(f64, usize) -> f64) -> TrialSeries {
    let channels = Channel::ALL
        .iter()
        .map(|c| x.iter().map(|&v| value(v, c.index())).collect())
        .collect();
    TrialSeries { nominal, x, channels }
}

const NOMINAL: Nominal = Nominal {
    alpha_deg: 10.0,
    beta_deg: -25.0,
    f: 0.5,
};

#[test]
fn magnitude_matches_closed_form() {
    for order in 1..=8 {
        for cutoff in [1.5, 3.0, 6.0, 20.0] {
            let f = Butterworth::lowpass(order, cutoff, SAMPLE_RATE).unwrap();
            for freq in [0.0, 0.3, 1.0, 2.9, 7.5, 15.0, 24.0] {
                let got = f.magnitude(freq, SAMPLE_RATE).powi(2);
                let want = butterworth_power(order, cutoff, SAMPLE_RATE, freq);
                assert_abs_diff_eq!(got, want, epsilon = 1e-10);
            }
        }
    }
}

#[test]
fn constant_series_is_unchanged() {
    let x = vec![3.25; 200];
    let y = zero_phase_filter(&x, 6, 1.5, SAMPLE_RATE).unwrap();
    for v in y {
        assert_abs_diff_eq!(v, 3.25, epsilon = 1e-9);
    }
}

#[test]
fn slow_sine_has_zero_lag() {
    let x = sine(0.5, 1251);
    let y = zero_phase_filter(&x, 6, 1.5, SAMPLE_RATE).unwrap();
    let corr = |lag: i64| -> f64 {
        (100..1151).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum()
    };
    let best = (-20..=20).max_by(|a, b| corr(*a).total_cmp(&corr(*b))).unwrap();
    assert_eq!(best, 0);
}

#[test]
fn steady_sine_is_scaled_by_squared_response() {
    // Forward-backward filtering applies |H|^2 with no phase shift.
    for (freq, cutoff) in [(1.0, 1.5), (2.0, 3.0), (4.5, 6.0), (3.0, 1.5)] {
        let x = sine(freq, 2000);
        let y = zero_phase_filter(&x, 6, cutoff, SAMPLE_RATE).unwrap();
        let gain = butterworth_power(6, cutoff, SAMPLE_RATE, freq);
        for i in 500..1500 {
            assert_abs_diff_eq!(y[i], gain * x[i], epsilon = 1e-6);
        }
    }
}

#[test]
fn twice_the_cutoff_is_down_40_db() {
    for cutoff in [1.5, 3.0, 6.0] {
        let x = sine(2.0 * cutoff, 2000);
        let y = zero_phase_filter(&x, 6, cutoff, SAMPLE_RATE).unwrap();
        let peak = y[500..1500].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 0.01, "cutoff {cutoff}: {peak}");
    }
}

#[test]
fn short_series_is_rejected() {
    let err = zero_phase_filter(&[1.0; 18], 6, 1.5, SAMPLE_RATE).unwrap_err();
    assert!(matches!(err, pel::Error::SeriesTooShort { len: 18, order: 6 }));
    assert!(zero_phase_filter(&[1.0; 19], 6, 1.5, SAMPLE_RATE).is_ok());
}

#[test]
fn cutoff_at_nyquist_is_rejected() {
    assert!(zero_phase_filter(&[0.0; 100], 6, 25.0, SAMPLE_RATE).is_err());
}

#[test]
fn grid_has_301_points() {
    let g = averaging_grid();
    assert_eq!(g.len(), 301);
    assert_eq!((g[0], g[300]), (-100.0, 200.0));
}

#[test]
fn identical_trials_have_zero_spread() {
    let x: Vec<f64> = (0..1251).map(|i| -200.0 + 0.4 * i as f64).collect();
    let t = series(NOMINAL, x, |x, c| (x * 0.01 + c as f64).sin());
    let avg = resample_average(&vec![t.clone(); 5], &averaging_grid()).unwrap();
    assert_eq!(avg.repetitions, 5);
    for c in Channel::ALL {
        assert!(avg.std(c).iter().all(|&s| s == 0.0));
        for (i, &x) in avg.x.iter().enumerate() {
            assert_abs_diff_eq!(avg.mean(c)[i], interpolate(&t.x, t.channel(c), x).unwrap(), epsilon = 1e-12);
        }
    }
}

#[test]
fn linear_channels_are_reproduced_exactly() {
    let x: Vec<f64> = (0..1251).map(|i| -200.0 + 0.4 * i as f64).collect();
    let t = series(NOMINAL, x, |x, c| 2.5 * x - c as f64);
    let avg = resample_average(&[t], &averaging_grid()).unwrap();
    for c in Channel::ALL {
        for (i, &x) in avg.x.iter().enumerate() {
            assert_abs_diff_eq!(avg.mean(c)[i], 2.5 * x - c.index() as f64, epsilon = 1e-9);
        }
    }
}

#[test]
fn spread_is_sample_standard_deviation() {
    let x: Vec<f64> = (0..400).map(|i| -150.0 + i as f64).collect();
    let trials: Vec<_> = [1.0, 2.0, 3.0, 4.0, 5.0]
        .iter()
        .map(|&k| series(NOMINAL, x.clone(), move |_, _| k))
        .collect();
    let avg = resample_average(&trials, &averaging_grid()).unwrap();
    assert_abs_diff_eq!(avg.mean(Channel::Fx)[0], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(avg.std(Channel::Fx)[0], 2.5f64.sqrt(), epsilon = 1e-12);
}

#[test]
fn uncovered_grid_points_are_flagged() {
    let x: Vec<f64> = (0..200).map(|i| -100.0 + i as f64).collect();
    let avg = resample_average(&[series(NOMINAL, x, |x, _| x)], &averaging_grid()).unwrap();
    assert!(!avg.missing[199]);
    assert!(avg.missing[200..].iter().all(|&m| m));
    assert!(avg.mean(Channel::Fx)[250].is_nan());
}

#[test]
fn mixed_configurations_are_rejected() {
    let x: Vec<f64> = (0..400).map(|i| -150.0 + i as f64).collect();
    let other = Nominal { f: 1.0, ..NOMINAL };
    let trials = [series(NOMINAL, x.clone(), |_, _| 0.0), series(other, x, |_, _| 0.0)];
    assert!(resample_average(&trials, &averaging_grid()).is_err());
    assert!(matches!(resample_average(&[], &averaging_grid()), Err(pel::Error::EmptyInput(_))));
}

#[test]
fn trial_csv_round_trips_into_series() {
    let cfg = TrialConfig {
        alpha_deg: 10.0,
        beta_deg: -25.0,
        f: 1.0,
        noise: NoiseConfig::default(),
        seed: 5,
        ..TrialConfig::default()
    };
    let rec = run_trial(&cfg, common::scene(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trial.csv");
    rec.write_csv(&path).unwrap();
    rec.write_sidecar(&path.with_extension("json")).unwrap();
    let back = TrialSeries::read_csv(&path).unwrap();
    assert_eq!(back, TrialSeries::from_record(&rec));
    assert_eq!(back.nominal.stem(), "a10_b-25_f1");
}

#[test]
fn averaged_csv_round_trips() {
    let x: Vec<f64> = (0..300).map(|i| -150.0 + i as f64).collect();
    let trials: Vec<_> = (0..3)
        .map(|k| series(NOMINAL, x.clone(), move |x, c| (x * 0.03 + k as f64).cos() * c as f64))
        .collect();
    let avg = resample_average(&trials, &averaging_grid()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(format!("{}.csv", avg.nominal.stem()));
    avg.write_csv(&path).unwrap();
    let back = AveragedTrial::read_csv(&path).unwrap();
    assert_eq!(back.nominal, avg.nominal);
    assert_eq!(back.missing, avg.missing);
    for c in Channel::ALL {
        for i in 0..301 {
            let (a, b) = (avg.mean(c)[i], back.mean(c)[i]);
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
}

#[test]
fn sensed_channels_only_are_filtered() {
    let x: Vec<f64> = (0..500).map(|i| -100.0 + 0.4 * i as f64).collect();
    let t = series(NOMINAL, x, |x, _| if x > 0.0 { 1.0 } else { 0.0 });
    let f = t.filtered().unwrap();
    for c in Channel::ALL {
        assert_eq!(f.channel(c) == t.channel(c), !c.is_sensed(), "{c:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, seed in 0u64..1000) {
        let n = 120;
        let u: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed * 3) % 11) as f64).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let fu = zero_phase_filter(&u, 6, 3.0, SAMPLE_RATE).unwrap();
        let fv = zero_phase_filter(&v, 6, 3.0, SAMPLE_RATE).unwrap();
        let fw = zero_phase_filter(&w, 6, 3.0, SAMPLE_RATE).unwrap();
        for i in 0..n {
            prop_assert!((fw[i] - (a * fu[i] + b * fv[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn filter_commutes_with_time_reversal(seed in 0u64..1000, cutoff in 1.0..6.0f64) {
        // Zero phase: running the series backwards gives the same output
        // backwards, away from the padded ends.
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 37 + seed) % 23) as f64 + (0.02 * i as f64).sin()).collect();
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let y = zero_phase_filter(&x, 6, cutoff, SAMPLE_RATE).unwrap();
        let yr = zero_phase_filter(&rev, 6, cutoff, SAMPLE_RATE).unwrap();
        for i in 700..n - 700 {
            prop_assert!((y[i] - yr[n - 1 - i]).abs() < 1e-6, "i={} {} vs {}", i, y[i], yr[n - 1 - i]);
        }
    }

    #[test]
    fn filter_preserves_dc(level in -100.0..100.0f64, order in 1usize..9, cutoff in 0.5..20.0f64) {
        let y = zero_phase_filter(&vec![level; 3 * order + 40], order, cutoff, SAMPLE_RATE).unwrap();
        for v in y {
            prop_assert!((v - level).abs() < 1e-9 * (1.0 + level.abs()));
        }
    }

    #[test]
    fn averaging_commutes_with_affine_maps(scale in -3.0..3.0f64, shift in -10.0..10.0f64, k in 1usize..6) {
        let x: Vec<f64> = (0..350).map(|i| -120.0 + i as f64).collect();
        let trials: Vec<_> = (0..k)
            .map(|j| series(NOMINAL, x.clone(), move |x, c| (0.05 * x + j as f64).sin() + c as f64))
            .collect();
        let mapped: Vec<_> = trials
            .iter()
            .map(|t| TrialSeries {
                channels: t.channels.iter().map(|c| c.iter().map(|v| scale * v + shift).collect()).collect(),
                ..t.clone()
            })
            .collect();
        let grid = averaging_grid();
        let a = resample_average(&trials, &grid).unwrap();
        let b = resample_average(&mapped, &grid).unwrap();
        for c in Channel::ALL {
            for i in 0..grid.len() {
                prop_assert!((b.mean(c)[i] - (scale * a.mean(c)[i] + shift)).abs() < 1e-9);
                prop_assert!((b.std(c)[i] - scale.abs() * a.std(c)[i]).abs() < 1e-9);
            }
        }
    }
}
