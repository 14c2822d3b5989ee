//! Time-varying multipath channel synthesis.
//!
//! A tap vector of i.i.d. circularly-symmetric complex Gaussians drifts by a
//! small uniform phase shift per tap at every time step. Its frequency
//! response is sampled at equally spaced bins, one bin per resource, which
//! yields Rayleigh-faded, slowly decorrelating per-resource channel series.

mod dataset;

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{argument, config, Result};
use crate::rng::StreamKey;

pub use dataset::{build_dataset, read_dataset, write_dataset, Dataset, LabeledWindow};

/// How the capacity of a window of channel samples is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CapacityMode {
    /// Sum of per-sample capacities over the window.
    Sum,
    /// Sum divided by the window length.
    #[default]
    Mean,
}

impl CapacityMode {
    pub fn as_u8(self) -> u8 {
        match self {
            CapacityMode::Sum => 0,
            CapacityMode::Mean => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(CapacityMode::Sum),
            1 => Some(CapacityMode::Mean),
            _ => None,
        }
    }
}

impl fmt::Display for CapacityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapacityMode::Sum => "sum",
            CapacityMode::Mean => "mean",
        })
    }
}

/// How per-resource series are produced for an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    /// All resources are bins of one shared frequency response.
    #[default]
    SharedFft,
    /// Every resource is driven by its own independent tap vector.
    IndependentEpisodes,
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::SharedFft => "shared_fft",
            ChannelMode::IndependentEpisodes => "independent_episodes",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_taps: usize,
    /// Input window length.
    pub k: usize,
    /// Prediction window length.
    pub l: usize,
    pub resource_count: usize,
    /// Half width of the per-step uniform phase shift, in radians.
    pub phase_half_width: f64,
    /// Rate threshold in bits/s/Hz.
    pub gamma_th: f64,
    pub capacity_mode: CapacityMode,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_taps: 1024,
            k: 100,
            l: 10,
            resource_count: 8,
            phase_half_width: 0.1,
            gamma_th: 0.575,
            capacity_mode: CapacityMode::Mean,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Checks the configuration for shared-FFT extraction, which needs
    /// `resource_count` to divide `n_taps`.
    pub fn validate(&self) -> Result<()> {
        self.validate_for(ChannelMode::SharedFft)
    }

    /// Independent-episode resources each own a tap vector, so any
    /// `resource_count >= 1` works there.
    pub fn validate_for(&self, mode: ChannelMode) -> Result<()> {
        if !self.n_taps.is_power_of_two() {
            return Err(config(format!("n_taps = {} is not a power of two", self.n_taps)));
        }
        if self.k == 0 || self.l == 0 {
            return Err(config(format!("window lengths must be positive (k = {}, l = {})", self.k, self.l)));
        }
        if self.resource_count == 0 {
            return Err(config("resource_count must be at least 1"));
        }
        if mode == ChannelMode::SharedFft && self.n_taps % self.resource_count != 0 {
            return Err(config(format!(
                "resource_count = {} does not divide n_taps = {}",
                self.resource_count, self.n_taps
            )));
        }
        if !(self.phase_half_width > 0.0 && self.phase_half_width.is_finite()) {
            return Err(config(format!("phase_half_width = {} must be positive", self.phase_half_width)));
        }
        if !(self.gamma_th > 0.0 && self.gamma_th.is_finite()) {
            return Err(config(format!("gamma_th = {} must be positive", self.gamma_th)));
        }
        Ok(())
    }

    /// Samples per resource in one episode.
    pub fn episode_len(&self) -> usize {
        self.k + self.l
    }
}

/// Time-domain channel impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct TapVector {
    pub taps: Vec<Complex64>,
    pub time_index: u64,
}

/// Draws `n_taps` i.i.d. CN(0, 1) taps.
pub fn init_impulse_response<R: Rng + ?Sized>(n_taps: usize, rng: &mut R) -> Result<TapVector> {
    if !n_taps.is_power_of_two() {
        return Err(config(format!("n_taps = {n_taps} is not a power of two")));
    }
    let taps = (0..n_taps)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect();
    Ok(TapVector { taps, time_index: 0 })
}

impl TapVector {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Rotates every tap by an independent phase drawn from `Unif(-delta, delta)`.
    pub fn advance<R: Rng + ?Sized>(&mut self, delta: f64, rng: &mut R) {
        let mut phases = [0.0f64; 64];
        for chunk in self.taps.chunks_mut(phases.len()) {
            let phases = &mut phases[..chunk.len()];
            for p in phases.iter_mut() {
                *p = delta * (2.0 * rng.random::<f64>() - 1.0);
            }
            if delta <= SERIES_MAX_PHASE {
                for (tap, &theta) in chunk.iter_mut().zip(phases.iter()) {
                    *tap *= small_angle_phasor(theta);
                }
            } else {
                for (tap, &theta) in chunk.iter_mut().zip(phases.iter()) {
                    let (s, c) = theta.sin_cos();
                    *tap *= Complex64::new(c, s);
                }
            }
        }
        self.time_index += 1;
    }
}

/// Largest phase magnitude for which [`small_angle_phasor`] is exact to
/// double precision.
const SERIES_MAX_PHASE: f64 = 0.2;

/// `exp(i theta)` from truncated Taylor series; truncation error is below
/// 1e-20 for `|theta| <= SERIES_MAX_PHASE`.
#[inline]
fn small_angle_phasor(theta: f64) -> Complex64 {
    let t2 = theta * theta;
    let c = 1.0
        + t2 * (-1.0 / 2.0
            + t2 * (1.0 / 24.0
                + t2 * (-1.0 / 720.0
                    + t2 * (1.0 / 40_320.0 + t2 * (-1.0 / 3_628_800.0 + t2 * (1.0 / 479_001_600.0))))));
    let s = theta
        * (1.0
            + t2 * (-1.0 / 6.0
                + t2 * (1.0 / 120.0
                    + t2 * (-1.0 / 5040.0
                        + t2 * (1.0 / 362_880.0 + t2 * (-1.0 / 39_916_800.0 + t2 * (1.0 / 6_227_020_800.0)))))));
    Complex64::new(c, s)
}

/// Reusable forward transform of a fixed length.
pub struct Dft {
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Dft {
    pub fn new(len: usize) -> Result<Self> {
        if !len.is_power_of_two() {
            return Err(config(format!("transform length {len} is not a power of two")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        Ok(Dft { fft, scratch })
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.len() == 0
    }

    /// Unnormalized forward transform, `X[m] = sum_n x[n] exp(-2 pi i n m / N)`, in place.
    pub fn process(&mut self, buf: &mut [Complex64]) {
        self.fft.process_with_scratch(buf, &mut self.scratch);
    }
}

/// Unnormalized forward DFT of a power-of-two length vector.
pub fn dft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut plan = Dft::new(v.len())?;
    let mut out = v.to_vec();
    plan.process(&mut out);
    Ok(out)
}

/// Picks `resource_count` equally spaced bins, starting at bin 0.
pub fn extract_resources(freq: &[Complex64], resource_count: usize) -> Result<Vec<Complex64>> {
    let n = freq.len();
    if resource_count == 0 || resource_count > n || n % resource_count != 0 {
        return Err(config(format!("resource_count = {resource_count} does not divide {n} bins")));
    }
    let stride = n / resource_count;
    Ok(freq.iter().step_by(stride).copied().collect())
}

/// Per-resource channel series for one realization, `resource_count x (k + l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEpisode {
    samples: Vec<Complex64>,
    resource_count: usize,
    k: usize,
    l: usize,
}

impl ChannelEpisode {
    pub fn from_rows(rows: Vec<Vec<Complex64>>, k: usize, l: usize) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(argument("episode windows must be nonempty"));
        }
        if rows.is_empty() {
            return Err(argument("episode has no resources"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != k + l) {
            return Err(argument(format!("resource {bad} has {} samples, expected {}", rows[bad].len(), k + l)));
        }
        let resource_count = rows.len();
        Ok(ChannelEpisode { samples: rows.concat(), resource_count, k, l })
    }

    pub fn resource_count(&self) -> usize {
        self.resource_count
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Full `k + l` series of one resource.
    pub fn row(&self, resource: usize) -> &[Complex64] {
        let len = self.k + self.l;
        &self.samples[resource * len..(resource + 1) * len]
    }

    /// The first `k` samples: what the predictor sees.
    pub fn input(&self, resource: usize) -> &[Complex64] {
        &self.row(resource)[..self.k]
    }

    /// The last `l` samples: what decides the outage label.
    pub fn future(&self, resource: usize) -> &[Complex64] {
        &self.row(resource)[self.k..]
    }
}

/// Generates one episode with every resource taken from a shared frequency
/// response, scaled to unit average power per resource.
pub fn simulate_episode<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<ChannelEpisode> {
    cfg.validate()?;
    let len = cfg.episode_len();
    let count = cfg.resource_count;
    let stride = cfg.n_taps / count;
    let scale = 1.0 / (cfg.n_taps as f64).sqrt();

    let mut plan = Dft::new(cfg.n_taps)?;
    let mut taps = init_impulse_response(cfg.n_taps, rng)?;
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_taps];
    let mut samples = vec![Complex64::new(0.0, 0.0); count * len];
    for t in 0..len {
        if t > 0 {
            taps.advance(cfg.phase_half_width, rng);
        }
        buf.copy_from_slice(&taps.taps);
        plan.process(&mut buf);
        for r in 0..count {
            samples[r * len + t] = buf[r * stride] * scale;
        }
    }
    Ok(ChannelEpisode { samples, resource_count: count, k: cfg.k, l: cfg.l })
}

/// Generates a single resource's `k + l` series from its own tap vector
/// (bin 0 of the response, unit average power).
pub fn simulate_resource_series<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<Complex64>> {
    cfg.validate_for(ChannelMode::IndependentEpisodes)?;
    let scale = 1.0 / (cfg.n_taps as f64).sqrt();
    let mut taps = init_impulse_response(cfg.n_taps, rng)?;
    let mut out = Vec::with_capacity(cfg.episode_len());
    out.push(taps.taps.iter().sum::<Complex64>() * scale);
    for _ in 1..cfg.episode_len() {
        taps.advance(cfg.phase_half_width, rng);
        out.push(taps.taps.iter().sum::<Complex64>() * scale);
    }
    Ok(out)
}

/// Generates an episode whose resources are mutually independent; resource
/// `i` is drawn from stream `key.child(i)`.
pub fn simulate_independent_episode(cfg: &SimConfig, key: StreamKey) -> Result<ChannelEpisode> {
    let rows = (0..cfg.resource_count as u64)
        .map(|i| simulate_resource_series(cfg, &mut key.child(i).rng()))
        .collect::<Result<Vec<_>>>()?;
    ChannelEpisode::from_rows(rows, cfg.k, cfg.l)
}

/// Generates one episode in the requested mode from stream `key`.
pub fn simulate(cfg: &SimConfig, mode: ChannelMode, key: StreamKey) -> Result<ChannelEpisode> {
    match mode {
        ChannelMode::SharedFft => simulate_episode(cfg, &mut key.rng()),
        ChannelMode::IndependentEpisodes => simulate_independent_episode(cfg, key),
    }
}

/// Gaussian-channel capacity of a window, `sum_j log2(1 + |h_j|^2)`,
/// optionally divided by the window length.
pub fn capacity(window: &[Complex64], mode: CapacityMode) -> Result<f64> {
    if window.is_empty() {
        return Err(argument("capacity of an empty window"));
    }
    let total: f64 = window.iter().map(|h| (1.0 + h.norm_sqr()).log2()).sum();
    Ok(match mode {
        CapacityMode::Sum => total,
        CapacityMode::Mean => total / window.len() as f64,
    })
}

/// Outage label: `true` iff the window's capacity is strictly below `gamma_th`.
pub fn label(future: &[Complex64], gamma_th: f64, mode: CapacityMode) -> Result<bool> {
    Ok(capacity(future, mode)? < gamma_th)
}
