//! LSTM outage classifier.
//!
//! One LSTM layer over the featurized input window, then a ReLU dense layer
//! and a single sigmoid output unit. Parameters live in one flat `Vec<f64>`
//! in the order they are stored on disk:
//!
//! | tensor | shape |
//! |--------|-------|
//! | `w_ih` | `4H x F` (gate order i, f, g, o) |
//! | `w_hh` | `4H x H` |
//! | `b`    | `4H` |
//! | `w1`   | `D x H` |
//! | `b1`   | `D` |
//! | `w2`   | `1 x D` |
//! | `b2`   | `1` |

use std::fs;
use std::ops::Range;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{argument, Error, Result};
use crate::losses::sigmoid;

pub const PARAMS_MAGIC: &[u8; 8] = b"OUTAGEQP";
pub const PARAMS_VERSION: u32 = 1;
const PARAMS_HEADER_LEN: usize = 8 + 4 + 4 * 4;

/// Largest output strictly below 1.
const Q_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// How a complex channel window is turned into network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// `|h|` per step.
    #[default]
    Magnitude,
    /// `(Re h, Im h)` per step.
    ReIm,
}

impl FeatureMode {
    pub fn input_dim(self) -> usize {
        match self {
            FeatureMode::Magnitude => 1,
            FeatureMode::ReIm => 2,
        }
    }

    fn from_input_dim(f: usize) -> Option<Self> {
        match f {
            1 => Some(FeatureMode::Magnitude),
            2 => Some(FeatureMode::ReIm),
            _ => None,
        }
    }
}

/// Row-major sequence of per-step feature vectors.
pub fn featurize(window: &[Complex64], mode: FeatureMode) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(argument("cannot featurize an empty window"));
    }
    Ok(match mode {
        FeatureMode::Magnitude => window.iter().map(|h| h.norm()).collect(),
        FeatureMode::ReIm => window.iter().flat_map(|h| [h.re, h.im]).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub feature_mode: FeatureMode,
    pub hidden: usize,
    pub dense: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { feature_mode: FeatureMode::Magnitude, hidden: 32, dense: 16 }
    }
}

/// Index ranges of each tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub w_ih: Range<usize>,
    pub w_hh: Range<usize>,
    pub b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        self.feature_mode.input_dim()
    }

    pub fn layout(&self) -> Layout {
        let (f, h, d) = (self.input_dim(), self.hidden, self.dense);
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        Layout {
            w_ih: next(4 * h * f),
            w_hh: next(4 * h * h),
            b: next(4 * h),
            w1: next(d * h),
            b1: next(d),
            w2: next(d),
            b2: next(1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().b2.end
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.dense == 0 {
            return Err(argument(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

/// Same shape as the parameter vector.
pub type Gradients = Vec<f64>;

impl PredictorParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(PredictorParams { arch, values: vec![0.0; arch.param_count()] })
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let lay = arch.layout();
        let (f, h, d) = (arch.input_dim(), arch.hidden, arch.dense);
        let mut glorot = |range: Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.values[range] {
                *w = rng.random_range(-limit..limit);
            }
        };
        glorot(lay.w_ih.clone(), f, 4 * h);
        glorot(lay.w_hh.clone(), h, 4 * h);
        glorot(lay.w1.clone(), h, d);
        glorot(lay.w2.clone(), d, 1);
        for v in &mut p.values[lay.b.start + h..lay.b.start + 2 * h] {
            *v = 1.0;
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PARAMS_HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        for dim in [self.arch.input_dim(), self.arch.hidden, self.arch.dense, 1] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, what: &str| Error::Format {
            offset: offset as u64,
            message: format!("truncated while reading {what}"),
        };
        if bytes.len() < 8 {
            return Err(truncated(bytes.len(), "magic"));
        }
        if &bytes[..8] != PARAMS_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic, not an OUTAGEQP file".into() });
        }
        let u32_at = |off: usize, what: &str| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
                .ok_or_else(|| truncated(bytes.len(), what))
        };
        let version = u32_at(8, "version")?;
        if version != PARAMS_VERSION {
            return Err(Error::Version { found: version, expected: PARAMS_VERSION });
        }
        let f = u32_at(12, "input dim")? as usize;
        let hidden = u32_at(16, "hidden size")? as usize;
        let dense = u32_at(20, "dense size")? as usize;
        let out = u32_at(24, "output size")? as usize;
        let feature_mode = FeatureMode::from_input_dim(f)
            .ok_or_else(|| Error::Format { offset: 12, message: format!("unsupported input dim {f}") })?;
        if hidden == 0 || dense == 0 || out != 1 {
            return Err(Error::Format {
                offset: 16,
                message: format!("unsupported architecture ({hidden}, {dense}, {out})"),
            });
        }
        let arch = Architecture { feature_mode, hidden, dense };
        let count = arch.param_count();
        let body = &bytes[PARAMS_HEADER_LEN..];
        if body.len() != 8 * count {
            let offset = PARAMS_HEADER_LEN + 8 * (body.len() / 8).min(count);
            return Err(Error::Format {
                offset: offset as u64,
                message: format!("expected {count} parameters, found {} bytes of tensor data", body.len()),
            });
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(PredictorParams { arch, values })
    }
}

pub fn save_params(params: &PredictorParams, path: &Path) -> Result<()> {
    fs::write(path, params.encode())?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<PredictorParams> {
    PredictorParams::decode(&fs::read(path)?)
}

/// Activations recorded by [`forward`] for use in [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    arch: Architecture,
    steps: usize,
    /// `T x F` inputs.
    xs: Vec<f64>,
    /// `T x 4H` post-activation gates (i, f, g, o).
    gates: Vec<f64>,
    /// `T x H` cell states.
    cs: Vec<f64>,
    /// `T x H` `tanh` of the cell states.
    tanh_cs: Vec<f64>,
    /// `T x H` hidden states.
    hs: Vec<f64>,
    d1: Vec<f64>,
    a1: Vec<f64>,
    pub q: f64,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }
}

/// Four interleaved partial sums, so the additions can pipeline.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `tanh` from a single `exp_m1`; agrees with libm to a few ulps.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

struct Recurrence<'a> {
    cache: Option<&'a mut ForwardCache>,
}

fn run(params: &PredictorParams, window: &[Complex64], mut rec: Recurrence<'_>) -> Result<f64> {
    let arch = params.arch;
    let xs = featurize(window, arch.feature_mode)?;
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(argument("non-finite sample in input window"));
    }
    let (f, h, d) = (arch.input_dim(), arch.hidden, arch.dense);
    let steps = window.len();
    let lay = arch.layout();
    let p = &params.values;
    let (w_ih, w_hh, b) = (&p[lay.w_ih.clone()], &p[lay.w_hh.clone()], &p[lay.b.clone()]);

    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    let mut tanh_c = vec![0.0; h];
    if let Some(c) = rec.cache.as_deref_mut() {
        c.arch = arch;
        c.steps = steps;
        c.gates.clear();
        c.cs.clear();
        c.tanh_cs.clear();
        c.hs.clear();
    }
    for t in 0..steps {
        let x = &xs[t * f..(t + 1) * f];
        for j in 0..4 * h {
            z[j] = b[j] + dot(&w_ih[j * f..(j + 1) * f], x) + dot(&w_hh[j * h..(j + 1) * h], &hs);
        }
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = tanh(z[2 * h + j]);
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            cs[j] = z[h + j] * cs[j] + z[j] * z[2 * h + j];
        }
        for (tc, c) in tanh_c.iter_mut().zip(&cs) {
            *tc = tanh(*c);
        }
        for j in 0..h {
            hs[j] = z[3 * h + j] * tanh_c[j];
        }
        if let Some(c) = rec.cache.as_deref_mut() {
            c.gates.extend_from_slice(&z);
            c.cs.extend_from_slice(&cs);
            c.tanh_cs.extend_from_slice(&tanh_c);
            c.hs.extend_from_slice(&hs);
        }
    }

    let (w1, b1) = (&p[lay.w1.clone()], &p[lay.b1.clone()]);
    let d1: Vec<f64> = (0..d).map(|i| b1[i] + dot(&w1[i * h..(i + 1) * h], &hs)).collect();
    let a1: Vec<f64> = d1.iter().map(|v| v.max(0.0)).collect();
    let z2 = p[lay.b2.start] + dot(&p[lay.w2.clone()], &a1);
    let q = sigmoid(z2).clamp(f64::MIN_POSITIVE, Q_MAX);
    if let Some(c) = rec.cache {
        c.xs = xs;
        c.d1 = d1;
        c.a1 = a1;
        c.q = q;
    }
    Ok(q)
}

/// Evaluates the network and records everything [`backward`] needs.
pub fn forward(params: &PredictorParams, window: &[Complex64]) -> Result<(f64, ForwardCache)> {
    let mut cache = ForwardCache {
        arch: params.arch,
        steps: 0,
        xs: Vec::new(),
        gates: Vec::new(),
        cs: Vec::new(),
        tanh_cs: Vec::new(),
        hs: Vec::new(),
        d1: Vec::new(),
        a1: Vec::new(),
        q: 0.0,
    };
    let q = run(params, window, Recurrence { cache: Some(&mut cache) })?;
    Ok((q, cache))
}

/// Gradient of `dl_dq * q` with respect to every parameter.
pub fn backward(params: &PredictorParams, cache: &ForwardCache, dl_dq: f64) -> Result<Gradients> {
    let mut grads = vec![0.0; params.values.len()];
    backward_into(params, cache, dl_dq, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds the gradient into `grads`.
pub fn backward_into(params: &PredictorParams, cache: &ForwardCache, dl_dq: f64, grads: &mut [f64]) -> Result<()> {
    let arch = params.arch;
    if cache.arch != arch || cache.steps == 0 || cache.hs.len() != cache.steps * arch.hidden {
        return Err(argument("forward cache does not belong to these parameters"));
    }
    if grads.len() != params.values.len() {
        return Err(argument("gradient buffer has the wrong length"));
    }
    if dl_dq == 0.0 {
        return Ok(());
    }
    let (f, h, d) = (arch.input_dim(), arch.hidden, arch.dense);
    let lay = arch.layout();
    let p = &params.values;
    let steps = cache.steps;
    let h_last = &cache.hs[(steps - 1) * h..];

    let q = cache.q;
    let dz2 = dl_dq * q * (1.0 - q);
    grads[lay.b2.start] += dz2;
    axpy(dz2, &cache.a1, &mut grads[lay.w2.clone()]);
    let w2 = &p[lay.w2.clone()];
    let dd1: Vec<f64> = (0..d).map(|i| if cache.d1[i] > 0.0 { dz2 * w2[i] } else { 0.0 }).collect();
    let mut dh = vec![0.0; h];
    {
        let w1 = &p[lay.w1.clone()];
        for i in 0..d {
            if dd1[i] != 0.0 {
                grads[lay.b1.start + i] += dd1[i];
                axpy(dd1[i], h_last, &mut grads[lay.w1.start + i * h..lay.w1.start + (i + 1) * h]);
                axpy(dd1[i], &w1[i * h..(i + 1) * h], &mut dh);
            }
        }
    }

    let w_hh = &p[lay.w_hh.clone()];
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];
    for t in (0..steps).rev() {
        let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let tanh_c = &cache.tanh_cs[t * h..(t + 1) * h];
        let c_prev = if t > 0 { &cache.cs[(t - 1) * h..t * h] } else { &zeros[..] };
        let h_prev = if t > 0 { &cache.hs[(t - 1) * h..t * h] } else { &zeros[..] };
        for j in 0..h {
            let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let d_o = dh[j] * tanh_c[j];
            let dcj = dc[j] + dh[j] * og * (1.0 - tanh_c[j] * tanh_c[j]);
            dz[j] = dcj * gg * ig * (1.0 - ig);
            dz[h + j] = dcj * c_prev[j] * fg * (1.0 - fg);
            dz[2 * h + j] = dcj * ig * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * og * (1.0 - og);
            dc[j] = dcj * fg;
        }
        let x = &cache.xs[t * f..(t + 1) * f];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..4 * h {
            let dzj = dz[j];
            grads[lay.b.start + j] += dzj;
            axpy(dzj, x, &mut grads[lay.w_ih.start + j * f..lay.w_ih.start + (j + 1) * f]);
            if t > 0 {
                axpy(dzj, h_prev, &mut grads[lay.w_hh.start + j * h..lay.w_hh.start + (j + 1) * h]);
            }
            axpy(dzj, &w_hh[j * h..(j + 1) * h], &mut dh);
        }
    }
    Ok(())
}

/// Anything that maps a channel history window to an output in `[0, 1]`,
/// where larger values predict outage.
pub trait OutagePredictor: Sync {
    fn predict(&self, window: &[Complex64]) -> Result<f64>;
}

impl OutagePredictor for PredictorParams {
    fn predict(&self, window: &[Complex64]) -> Result<f64> {
        run(self, window, Recurrence { cache: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn window(seed: u64, len: usize) -> Vec<Complex64> {
        let mut rng = StreamKey::new(seed).rng();
        (0..len).map(|_| Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))).collect()
    }

    #[test]
    fn tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.005 + 1e-9;
            let (a, b) = (tanh(x), x.tanh());
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1e-300), "{x}: {a} vs {b}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
    }

    #[test]
    fn param_count_matches_declared_shapes() {
        // 4*(32*1 + 32*32 + 32) + (32*16 + 16) + (16*1 + 1)
        assert_eq!(Architecture::default().param_count(), 4897);
        let re_im = Architecture { feature_mode: FeatureMode::ReIm, ..Architecture::default() };
        assert_eq!(re_im.param_count(), 4897 + 4 * 32);
    }

    #[test]
    fn init_is_seeded() {
        let a = PredictorParams::init(Architecture::default(), &mut StreamKey::new(1).rng()).unwrap();
        let b = PredictorParams::init(Architecture::default(), &mut StreamKey::new(1).rng()).unwrap();
        assert_eq!(a, b);
        let lay = a.arch.layout();
        assert!(a.values[lay.b.start..lay.b.start + 32].iter().all(|&v| v == 0.0));
        assert!(a.values[lay.b.start + 32..lay.b.start + 64].iter().all(|&v| v == 1.0));
        let limit = (6.0f64 / 129.0).sqrt();
        assert!(a.values[lay.w_ih].iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn featurize_modes() {
        let w = [Complex64::new(3.0, 4.0)];
        assert_eq!(featurize(&w, FeatureMode::Magnitude).unwrap(), vec![5.0]);
        assert_eq!(featurize(&w, FeatureMode::ReIm).unwrap(), vec![3.0, 4.0]);
        assert!(featurize(&[], FeatureMode::Magnitude).is_err());
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = PredictorParams::zeros(Architecture::default()).unwrap();
        let (q, _) = forward(&p, &[Complex64::new(0.0, 0.0); 10]).unwrap();
        assert_eq!(q, 0.5);
        assert_eq!(p.predict(&window(3, 20)).unwrap(), 0.5);
    }

    #[test]
    fn forward_range_and_determinism() {
        let p = PredictorParams::init(Architecture::default(), &mut StreamKey::new(2).rng()).unwrap();
        let w = window(4, 50);
        let (q1, cache) = forward(&p, &w).unwrap();
        let q2 = p.predict(&w).unwrap();
        assert!(q1 > 0.0 && q1 < 1.0);
        assert_eq!(q1.to_bits(), q2.to_bits());
        assert_eq!(cache.len(), 50);
        let mut bad = w.clone();
        bad[7] = Complex64::new(f64::NAN, 0.0);
        assert!(forward(&p, &bad).is_err());
    }

    #[test]
    fn saturated_output_stays_inside_unit_interval() {
        let mut p = PredictorParams::zeros(Architecture::default()).unwrap();
        let b2 = p.arch.layout().b2.start;
        p.values[b2] = 100.0;
        let q = p.predict(&window(1, 5)).unwrap();
        assert!(q < 1.0);
        p.values[b2] = -1000.0;
        let q = p.predict(&window(1, 5)).unwrap();
        assert!(q > 0.0);
    }

    #[test]
    fn reversing_input_changes_output() {
        let p = PredictorParams::init(Architecture::default(), &mut StreamKey::new(5).rng()).unwrap();
        let w = window(6, 30);
        let mut r = w.clone();
        r.reverse();
        assert!((p.predict(&w).unwrap() - p.predict(&r).unwrap()).abs() > 1e-9);
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = PredictorParams::init(Architecture::default(), &mut StreamKey::new(7).rng()).unwrap();
        let (_, cache) = forward(&p, &window(8, 12)).unwrap();
        assert!(backward(&p, &cache, 0.0).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let p = PredictorParams::init(Architecture::default(), &mut StreamKey::new(7).rng()).unwrap();
        let other = Architecture { hidden: 8, ..Architecture::default() };
        let q = PredictorParams::init(other, &mut StreamKey::new(7).rng()).unwrap();
        let (_, cache) = forward(&q, &window(8, 12)).unwrap();
        assert!(matches!(backward(&p, &cache, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn params_round_trip_and_errors() {
        let p = PredictorParams::init(Architecture::default(), &mut StreamKey::new(9).rng()).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 28 + 8 * 4897);
        let back = PredictorParams::decode(&bytes).unwrap();
        assert_eq!(back, p);
        assert!(back.values.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(matches!(PredictorParams::decode(&bytes[..100]), Err(Error::Format { offset: 100, .. })));
        assert!(matches!(PredictorParams::decode(&bytes[..3]), Err(Error::Format { .. })));
        let mut v2 = bytes.clone();
        v2[8] = 9;
        assert!(matches!(PredictorParams::decode(&v2), Err(Error::Version { found: 9, .. })));
        let mut bad_dim = bytes;
        bad_dim[12] = 3;
        assert!(matches!(PredictorParams::decode(&bad_dim), Err(Error::Format { offset: 12, .. })));
    }
}
