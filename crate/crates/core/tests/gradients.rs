use num_complex::Complex64;
use outage_core::losses::{bce, custom_loss, mae, mse, LossValue};
use outage_core::predictor::{backward, forward, Architecture, FeatureMode, PredictorParams};
use outage_core::rng::StreamKey;
use outage_core::trainer::{batch_gradient, TrainConfig};
use rand::Rng;

const STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|)`, with differences under `floor` counted as agreement.
fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

fn random_window(rng: &mut impl Rng, len: usize) -> Vec<Complex64> {
    (0..len).map(|_| Complex64::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2))).collect()
}

fn random_params(seed: u64, arch: Architecture) -> PredictorParams {
    let mut rng = StreamKey::new(seed).rng();
    let mut p = PredictorParams::init(arch, &mut rng).unwrap();
    for v in &mut p.values {
        *v += rng.random_range(-0.1..0.1);
    }
    p
}

#[test]
fn lstm_output_gradient_matches_central_differences() {
    for (seed, mode) in [(1, FeatureMode::Magnitude), (2, FeatureMode::ReIm), (3, FeatureMode::Magnitude)] {
        let arch = Architecture { feature_mode: mode, hidden: 8, dense: 5 };
        let params = random_params(seed, arch);
        let window = random_window(&mut StreamKey::new(100 + seed).rng(), 15);
        let (_, cache) = forward(&params, &window).unwrap();
        let grad = backward(&params, &cache, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..params.values.len() {
            let mut up = params.clone();
            up.values[i] += STEP;
            let mut dn = params.clone();
            dn.values[i] -= STEP;
            let num = (forward(&up, &window).unwrap().0 - forward(&dn, &window).unwrap().0) / (2.0 * STEP);
            worst = worst.max(rel_err(grad[i], num, 1e-10));
        }
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn batch_gradient_is_sum_of_window_gradients() {
    let arch = Architecture { hidden: 6, dense: 4, ..Architecture::default() };
    let params = random_params(9, arch);
    let mut rng = StreamKey::new(10).rng();
    let a = random_window(&mut rng, 12);
    let b = random_window(&mut rng, 12);
    let (_, ca) = forward(&params, &a).unwrap();
    let (_, cb) = forward(&params, &b).unwrap();
    let ga = backward(&params, &ca, 0.7).unwrap();
    let gb = backward(&params, &cb, -0.3).unwrap();
    let mut acc = vec![0.0; params.values.len()];
    outage_core::predictor::backward_into(&params, &ca, 0.7, &mut acc).unwrap();
    outage_core::predictor::backward_into(&params, &cb, -0.3, &mut acc).unwrap();
    for i in 0..acc.len() {
        assert!((acc[i] - (ga[i] + gb[i])).abs() <= 1e-15 * (1.0 + acc[i].abs()));
    }
}

fn check_loss_gradient(loss: impl Fn(&[f64], &[bool]) -> LossValue, q: &[f64], b: &[bool], tol: f64) -> f64 {
    let lv = loss(q, b);
    let mut worst: f64 = 0.0;
    for i in 0..q.len() {
        let mut up = q.to_vec();
        up[i] += STEP;
        let mut dn = q.to_vec();
        dn[i] -= STEP;
        let num = (loss(&up, b).value - loss(&dn, b).value) / (2.0 * STEP);
        worst = worst.max(rel_err(lv.grad[i], num, 1e-11));
    }
    assert!(worst < tol, "worst relative error {worst:e}");
    worst
}

#[test]
fn custom_loss_gradient_over_random_batches() {
    let mut rng = StreamKey::new(77).rng();
    for _ in 0..20 {
        let q: Vec<f64> = (0..32).map(|_| rng.random_range(0.02..0.98)).collect();
        let b: Vec<bool> = (0..32).map(|_| rng.random_bool(0.4)).collect();
        check_loss_gradient(|q, b| custom_loss(q, b, 0.5, 10.0, 5).unwrap(), &q, &b, 1e-6);
    }
}

#[test]
fn baseline_loss_gradients() {
    let mut rng = StreamKey::new(78).rng();
    let q: Vec<f64> = (0..16).map(|_| rng.random_range(0.05..0.95)).collect();
    let b: Vec<bool> = (0..16).map(|_| rng.random_bool(0.5)).collect();
    check_loss_gradient(|q, b| bce(q, b).unwrap(), &q, &b, 1e-6);
    check_loss_gradient(|q, b| mse(q, b).unwrap(), &q, &b, 1e-6);
    check_loss_gradient(|q, b| mae(q, b).unwrap(), &q, &b, 1e-6);
}

#[test]
fn custom_loss_through_the_network() {
    let cfg = TrainConfig { resource_count: 6, ..TrainConfig::default() };
    let arch = Architecture { hidden: 8, dense: 5, ..Architecture::default() };
    let params = random_params(4, arch);
    let mut rng = StreamKey::new(5).rng();
    let windows: Vec<Vec<Complex64>> = (0..6).map(|_| random_window(&mut rng, 10)).collect();
    let inputs: Vec<&[Complex64]> = windows.iter().map(|w| w.as_slice()).collect();
    let labels = [true, false, false, true, false, false];
    let (_, grad) = batch_gradient(&params, &TrainConfig { architecture: arch, ..cfg.clone() }, &inputs, &labels).unwrap();
    let loss_at = |p: &PredictorParams| {
        let q: Vec<f64> = inputs.iter().map(|w| forward(p, w).unwrap().0).collect();
        custom_loss(&q, &labels, cfg.q_th_train, cfg.alpha, cfg.resource_count).unwrap().value
    };
    let mut worst: f64 = 0.0;
    for i in 0..params.values.len() {
        let mut up = params.clone();
        up.values[i] += STEP;
        let mut dn = params.clone();
        dn.values[i] -= STEP;
        let num = (loss_at(&up) - loss_at(&dn)) / (2.0 * STEP);
        worst = worst.max(rel_err(grad[i], num, 1e-10));
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}
