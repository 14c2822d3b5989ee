//! Self-checks behind `outage verify`.

use std::fmt;

use num_complex::Complex64;
use outage_core::allocator::monte_carlo;
use outage_core::allocator::stubs::{ExpPower, LastMagnitude, MeanMagnitude};
use outage_core::analysis::{geometric_series_check, theorem1_outage, OutageInputs};
use outage_core::channel_sim::{init_impulse_response, simulate_episode, ChannelMode, SimConfig};
use outage_core::losses::custom_loss;
use outage_core::predictor::{forward, Architecture, OutagePredictor, PredictorParams};
use outage_core::rng::StreamKey;
use outage_core::stats::{ks_test, rayleigh_unit_power_cdf};
use outage_core::trainer::{batch_gradient, TrainConfig};
use outage_core::Result;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub expected: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: measured {}, expected {}", self.name, self.measured, self.expected)
    }
}

/// Run sizes and tolerances for one verification pass.
#[derive(Clone, Copy, Debug)]
pub struct Effort {
    pub theorem_episodes: usize,
    /// Allowed distance in combined standard errors.
    pub theorem_z: f64,
    pub loss_batches: usize,
    pub network_instances: usize,
    pub ks_episodes: usize,
    pub ks_alpha: f64,
}

impl Effort {
    pub const FULL: Effort = Effort {
        theorem_episodes: 100_000,
        theorem_z: 3.0,
        loss_batches: 20,
        network_instances: 10,
        ks_episodes: 10_000,
        ks_alpha: 0.01,
    };

    /// Smaller runs with a wider statistical margin.
    pub const QUICK: Effort = Effort {
        theorem_episodes: 10_000,
        theorem_z: 4.0,
        loss_batches: 5,
        network_instances: 2,
        ks_episodes: 2_000,
        ks_alpha: 0.001,
    };
}

pub struct StubSetting {
    pub name: &'static str,
    pub sim: SimConfig,
    pub q_th: f64,
    pub predictor: Box<dyn OutagePredictor>,
}

/// Three deterministic stubs on independent resources.
pub fn stub_settings() -> Vec<StubSetting> {
    let sim = |resource_count: usize, gamma_th: f64| SimConfig {
        k: 20,
        l: 10,
        resource_count,
        gamma_th,
        ..SimConfig::default()
    };
    vec![
        StubSetting {
            name: "last-sample cutoff, |R| = 2",
            sim: sim(2, 0.575),
            q_th: 0.5,
            predictor: Box::new(LastMagnitude { cutoff: 0.8, high: 0.9, low: 0.1 }),
        },
        StubSetting { name: "exp(-|h|^2), |R| = 6", sim: sim(6, 0.5), q_th: 0.3, predictor: Box::new(ExpPower) },
        StubSetting {
            name: "mean-magnitude cutoff, |R| = 10",
            sim: sim(10, 0.7),
            q_th: 0.5,
            predictor: Box::new(MeanMagnitude { cutoff: 0.9, high: 0.8, low: 0.2 }),
        },
    ]
}

/// Monte Carlo outage against the closed form `formula` evaluated at the
/// first-resource plug-in estimates.
pub fn theorem1_check(
    setting: &StubSetting,
    n_episodes: usize,
    z_max: f64,
    key: StreamKey,
    formula: &dyn Fn(&OutageInputs) -> f64,
) -> Result<Check> {
    let r = monte_carlo(&setting.sim, &*setting.predictor, setting.q_th, n_episodes, ChannelMode::IndependentEpisodes, key)?;
    let predicted = formula(&r.plugin_inputs);
    let se = r.outage.combined_se(&r.plugin);
    let z = if se > 0.0 { (r.outage.value - predicted).abs() / se } else { f64::INFINITY };
    Ok(Check {
        name: format!("closed-form outage, {}", setting.name),
        passed: z < z_max,
        measured: format!("MC {:.5} vs formula {:.5} ({z:.2} SE)", r.outage.value, predicted),
        expected: format!("< {z_max} SE"),
    })
}

pub fn geometric_check() -> Result<Check> {
    let s = geometric_series_check(0.2, 0.5, 60)?;
    Ok(Check {
        name: "geometric series".into(),
        passed: (s - 0.2).abs() < 1e-12,
        measured: format!("{s:.17}"),
        expected: "0.2 within 1e-12".into(),
    })
}

const FD_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

pub fn loss_gradient_check(batches: usize, key: StreamKey) -> Result<Check> {
    use rand::Rng;
    let mut rng = key.rng();
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let q: Vec<f64> = (0..32).map(|_| rng.random_range(0.02..0.98)).collect();
        let b: Vec<bool> = (0..32).map(|_| rng.random_bool(0.4)).collect();
        let lv = custom_loss(&q, &b, 0.5, 10.0, 5)?;
        for i in 0..q.len() {
            let (mut up, mut dn) = (q.clone(), q.clone());
            up[i] += FD_STEP;
            dn[i] -= FD_STEP;
            let num = (custom_loss(&up, &b, 0.5, 10.0, 5)?.value - custom_loss(&dn, &b, 0.5, 10.0, 5)?.value)
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(lv.grad[i], num, 1e-11));
        }
    }
    Ok(Check {
        name: format!("custom loss gradient ({batches} batches)"),
        passed: worst < 1e-6,
        measured: format!("max relative error {worst:.2e}"),
        expected: "< 1e-6".into(),
    })
}

/// Custom loss through the full network, every parameter.
pub fn network_gradient_check(instances: usize, key: StreamKey) -> Result<Check> {
    use rand::Rng;
    let cfg = TrainConfig { resource_count: 6, ..TrainConfig::default() };
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut rng = key.child(inst as u64).rng();
        let params = PredictorParams::init(Architecture::default(), &mut rng)?;
        let windows: Vec<Vec<Complex64>> = (0..4)
            .map(|_| (0..8).map(|_| Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))).collect())
            .collect();
        let inputs: Vec<&[Complex64]> = windows.iter().map(|w| w.as_slice()).collect();
        let labels: Vec<bool> = (0..4).map(|i| (i + inst) % 2 == 0).collect();
        let (_, grad) = batch_gradient(&params, &cfg, &inputs, &labels)?;
        let loss_at = |p: &PredictorParams| -> Result<f64> {
            let q = inputs.iter().map(|w| Ok(forward(p, w)?.0)).collect::<Result<Vec<_>>>()?;
            Ok(custom_loss(&q, &labels, cfg.q_th_train, cfg.alpha, cfg.resource_count)?.value)
        };
        let mut p = params.clone();
        for i in 0..params.values.len() {
            p.values[i] = params.values[i] + FD_STEP;
            let up = loss_at(&p)?;
            p.values[i] = params.values[i] - FD_STEP;
            let dn = loss_at(&p)?;
            p.values[i] = params.values[i];
            worst = worst.max(rel_err(grad[i], (up - dn) / (2.0 * FD_STEP), 1e-10));
        }
    }
    Ok(Check {
        name: format!("network gradient ({instances} instances)"),
        passed: worst < 1e-4,
        measured: format!("max relative error {worst:.2e}"),
        expected: "< 1e-4".into(),
    })
}

/// One magnitude per episode: resource 0 at the last time step.
pub fn rayleigh_ks_check(episodes: usize, alpha: f64, key: StreamKey) -> Result<Check> {
    use rayon::prelude::*;
    let sim = SimConfig::default();
    let last = sim.episode_len() - 1;
    let mags = (0..episodes as u64)
        .into_par_iter()
        .map(|e| Ok(simulate_episode(&sim, &mut key.child(e).rng())?.row(0)[last].norm()))
        .collect::<Result<Vec<f64>>>()?;
    let ks = ks_test(&mags, rayleigh_unit_power_cdf)?;
    Ok(Check {
        name: format!("Rayleigh marginal ({episodes} episodes)"),
        passed: ks.p_value > alpha,
        measured: format!("D = {:.4}, p = {:.3}", ks.statistic, ks.p_value),
        expected: format!("p > {alpha}"),
    })
}

pub fn drift_check(key: StreamKey) -> Result<Check> {
    let mut rng = key.rng();
    let mut taps = init_impulse_response(1024, &mut rng)?;
    let before: Vec<f64> = taps.taps.iter().map(|h| h.norm()).collect();
    for _ in 0..1000 {
        taps.advance(0.1, &mut rng);
    }
    let worst = taps.taps.iter().zip(&before).map(|(h, m)| (h.norm() - m).abs()).fold(0.0, f64::max);
    Ok(Check {
        name: "tap magnitudes under 1000 drift steps".into(),
        passed: worst < 1e-9,
        measured: format!("max change {worst:.2e}"),
        expected: "< 1e-9".into(),
    })
}

/// Runs every check and returns them in a fixed order.
pub fn run_all(effort: Effort, seed: u64) -> Result<Vec<Check>> {
    let key = StreamKey::new(seed).named("verify");
    let mut out = Vec::new();
    for (i, s) in stub_settings().iter().enumerate() {
        out.push(theorem1_check(s, effort.theorem_episodes, effort.theorem_z, key.child(i as u64), &theorem1_outage)?);
    }
    out.push(geometric_check()?);
    out.push(loss_gradient_check(effort.loss_batches, key.named("loss"))?);
    out.push(network_gradient_check(effort.network_instances, key.named("network"))?);
    out.push(rayleigh_ks_check(effort.ks_episodes, effort.ks_alpha, key.named("ks"))?);
    out.push(drift_check(key.named("drift"))?);
    Ok(out)
}
