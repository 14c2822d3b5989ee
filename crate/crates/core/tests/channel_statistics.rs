use outage_core::channel_sim::{build_dataset, capacity, simulate_episode, ChannelMode, SimConfig};
use outage_core::rng::StreamKey;
use outage_core::stats::{ks_test, rayleigh_unit_power_cdf};
use rayon::prelude::*;

#[test]
fn fixed_bin_magnitudes_are_rayleigh() {
    let cfg = SimConfig::default();
    let t = cfg.k - 1;
    let key = StreamKey::new(21);
    let mags: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|e| simulate_episode(&cfg, &mut key.child(e).rng()).unwrap().row(3)[t].norm())
        .collect();
    let ks = ks_test(&mags, rayleigh_unit_power_cdf).unwrap();
    assert!(ks.p_value > 0.01, "{ks:?}");
    let power = mags.iter().map(|m| m * m).sum::<f64>() / mags.len() as f64;
    assert!((power - 1.0).abs() < 0.05, "mean power {power}");
}

#[test]
fn magnitudes_decorrelate_slowly() {
    let cfg = SimConfig::default();
    let key = StreamKey::new(22);
    let rows: Vec<Vec<f64>> = (0..300u64)
        .into_par_iter()
        .map(|e| simulate_episode(&cfg, &mut key.child(e).rng()).unwrap().row(0).iter().map(|h| h.norm()).collect())
        .collect();
    let pairs: Vec<(f64, f64)> = rows.iter().flat_map(|r| r.windows(2).map(|w| (w[0], w[1]))).collect();
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let rho = sxy / (sxx * syy).sqrt();
    assert!(rho > 0.9, "lag-1 autocorrelation {rho}");
}

#[test]
fn small_sample_label_rate_matches_large_reference() {
    let mut cfg = SimConfig { n_taps: 64, k: 5, l: 10, resource_count: 16, ..SimConfig::default() };
    let mode = ChannelMode::SharedFft;

    // rate threshold at the pilot's 10% capacity quantile, so P1 is near 0.1
    let pilot = build_dataset(&cfg, mode, 20_000, StreamKey::new(30)).unwrap();
    let mut caps: Vec<f64> = pilot.windows.iter().map(|w| capacity(&w.future, cfg.capacity_mode).unwrap()).collect();
    caps.sort_by(f64::total_cmp);
    cfg.gamma_th = caps[caps.len() / 10];

    let reference_key = StreamKey::new(31);
    let mut positives = 0usize;
    for chunk in 0..10u64 {
        let ds = build_dataset(&cfg, mode, 100_000, reference_key.child(chunk)).unwrap();
        positives += ds.windows.iter().filter(|w| w.label).count();
    }
    let reference = positives as f64 / 1e6;
    assert!((reference - 0.1).abs() < 0.01, "reference P1 {reference}");

    let sample = build_dataset(&cfg, mode, 1_000, StreamKey::new(32)).unwrap().label_rate();
    let tol = 3.0 * (0.1f64 * 0.9 / 1000.0).sqrt();
    assert!((sample - reference).abs() < tol, "sample {sample} vs reference {reference}");
}
