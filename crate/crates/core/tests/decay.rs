use lls_qaoa::decay::{fit_exponential_decay_with, FitOptions};
use lls_qaoa::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn times(n: usize, t_max: f64) -> Vec<f64> {
    (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect()
}

fn series(t_lls: f64, a0: f64, noise: f64, seed: u64) -> DecaySeries {
    let t = times(25, 3.0 * t_lls);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise * a0.abs()).unwrap();
    let a = t
        .iter()
        .map(|&x| a0 * (-x / t_lls).exp() + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 })
        .collect();
    DecaySeries::new(t, a, "synthetic").unwrap()
}

#[test]
fn noiseless_decay_is_recovered_exactly() {
    for t_lls in [0.8, 5.0, 39.4, 250.0] {
        let fit = fit_exponential_decay(&series(t_lls, 1.7, 0.0, 0)).unwrap();
        assert!((fit.t_lls - t_lls).abs() <= 1e-6, "{t_lls}: {}", fit.t_lls);
        assert!((fit.amplitude0 - 1.7).abs() <= 1e-9);
        assert!(fit.residual_rms < 1e-9);
    }
}

#[test]
fn two_percent_noise_within_five_percent() {
    let t_lls = 39.4;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let fit = fit_exponential_decay(&series(t_lls, 1.0, 0.02, seed)).unwrap();
        let rel = (fit.t_lls - t_lls).abs() / t_lls;
        worst = worst.max(rel);
        assert!(fit.t_lls_stderr > 0.0);
    }
    assert!(worst <= 0.05, "worst relative error {worst}");
}

#[test]
fn offset_fit_recovers_baseline() {
    let t = times(30, 120.0);
    let a: Vec<f64> = t.iter().map(|&x| 0.9 * (-x / 30.0).exp() + 0.05).collect();
    let s = DecaySeries::new(t, a, "offset").unwrap();
    let opts = FitOptions {
        offset: true,
        ..FitOptions::default()
    };
    let fit = fit_exponential_decay_with(&s, &opts).unwrap();
    assert!((fit.t_lls - 30.0).abs() < 1e-6);
    assert!((fit.offset.unwrap() - 0.05).abs() < 1e-8);
}

#[test]
fn degenerate_series_are_rejected() {
    let two = DecaySeries::new(vec![0.0, 1.0], vec![1.0, 0.5], "two");
    assert!(two.unwrap_err().is_validation());
    let unordered = DecaySeries::new(vec![0.0, 2.0, 1.0], vec![1.0, 0.5, 0.3], "x");
    assert!(unordered.is_err());
    let flat = DecaySeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4], "flat").unwrap();
    assert!(matches!(fit_exponential_decay(&flat), Err(Error::FitFailure(_))));
    let growing = DecaySeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 4.0], "up").unwrap();
    assert!(matches!(fit_exponential_decay(&growing), Err(Error::FitFailure(_))));
}

#[test]
fn csv_errors_name_the_column() {
    let missing = "time_s,signal\n0,1\n1,0.5\n2,0.25\n";
    let e = DecaySeries::read_csv(missing.as_bytes(), "m").unwrap_err();
    assert!(e.to_string().contains("amplitude"), "{e}");
    let bad = "time_s,amplitude\n0,1\n1,abc\n2,0.25\n";
    let e = DecaySeries::read_csv(bad.as_bytes(), "b").unwrap_err();
    assert!(e.to_string().contains("row 3") && e.to_string().contains("amplitude"), "{e}");
    let ok = "time_s, amplitude\n0,1\n1,0.5\n2,0.25\n";
    let s = DecaySeries::read_csv(ok.as_bytes(), "ok").unwrap();
    let fit = fit_exponential_decay(&s).unwrap();
    assert!((fit.t_lls - 1.0 / 2f64.ln()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_is_scale_invariant(seed in 0u64..1000, k in 1e-3f64..1e3) {
        let s = series(20.0, 1.0, 0.02, seed);
        let scaled = DecaySeries::new(s.times.clone(), s.amplitudes.iter().map(|a| a * k).collect(), "k").unwrap();
        let a = fit_exponential_decay(&s).unwrap();
        let b = fit_exponential_decay(&scaled).unwrap();
        prop_assert!((a.t_lls - b.t_lls).abs() <= 1e-12 * a.t_lls, "{} vs {}", a.t_lls, b.t_lls);
        prop_assert!((b.amplitude0 / k - a.amplitude0).abs() <= 1e-9);
    }

    #[test]
    fn negative_signals_fit_like_positive(t_lls in 1.0f64..100.0) {
        let pos = series(t_lls, 2.0, 0.0, 0);
        let neg = DecaySeries::new(pos.times.clone(), pos.amplitudes.iter().map(|a| -a).collect(), "neg").unwrap();
        let a = fit_exponential_decay(&pos).unwrap();
        let b = fit_exponential_decay(&neg).unwrap();
        prop_assert!((a.t_lls - b.t_lls).abs() < 1e-9 * t_lls);
        prop_assert!((a.amplitude0 + b.amplitude0).abs() < 1e-9);
    }
}
