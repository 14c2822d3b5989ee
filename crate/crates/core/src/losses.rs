//! Confusion functionals and training losses over predictor outputs.
//!
//! The confusion tallies are weighted sums over a batch of `(q_i, b_i)`
//! pairs. With a step weighting they count TN/FN/TP/FP; with a logistic
//! weighting they become differentiable in `q_i`, which is what the
//! outage-probability loss is built from.

use std::fmt;
use std::str::FromStr;

use crate::error::{argument, Error, Result};

/// Denominator guard for ratio estimators and logarithms.
pub const EPS: f64 = 1e-12;

/// Default logistic slope used in training.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// Unit step with `step(0) = 1`.
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `1 / (1 + exp(-alpha x))`, evaluated without overflow.
pub fn logistic(alpha: f64, x: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(argument(format!("logistic slope must be positive, got {alpha}")));
    }
    Ok(sigmoid(alpha * x))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weighting function applied to `q_th - q_i` in the confusion functionals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting {
    Heaviside,
    Logistic { alpha: f64 },
}

impl Weighting {
    fn check(self) -> Result<()> {
        match self {
            Weighting::Heaviside => Ok(()),
            Weighting::Logistic { alpha } if alpha > 0.0 => Ok(()),
            Weighting::Logistic { alpha } => Err(argument(format!("logistic slope must be positive, got {alpha}"))),
        }
    }

    /// Returns `(accept, reject)` weights for a sample with margin
    /// `x = q_th - q`, where `accept + reject = 1`.
    #[inline]
    fn split(self, x: f64) -> (f64, f64) {
        match self {
            Weighting::Heaviside => {
                let a = heaviside(x);
                (a, 1.0 - a)
            }
            Weighting::Logistic { alpha } => (sigmoid(alpha * x), sigmoid(-alpha * x)),
        }
    }

    /// Derivative of the accept weight with respect to `q`.
    #[inline]
    fn d_accept_dq(self, x: f64) -> f64 {
        match self {
            Weighting::Heaviside => 0.0,
            Weighting::Logistic { alpha } => -alpha * sigmoid(alpha * x) * sigmoid(-alpha * x),
        }
    }
}

/// Weighted confusion functionals of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionTally {
    pub tn: f64,
    pub fn_: f64,
    pub tp: f64,
    pub fp: f64,
    pub n: usize,
    pub weighting: Weighting,
    pub q_th: f64,
}

fn check_batch(q: &[f64], b: &[bool]) -> Result<()> {
    if q.len() != b.len() {
        return Err(argument(format!("{} outputs but {} labels", q.len(), b.len())));
    }
    if q.is_empty() {
        return Err(argument("empty batch"));
    }
    Ok(())
}

/// TN/FN/TP/FP of a batch of outputs `q` against outage labels `b`.
///
/// A sample is accepted (predicted no-outage) with weight `f(q_th - q)` and
/// rejected with the complementary weight, so the four tallies always sum to
/// `n`. With the step weighting a tie `q == q_th` counts as accepted.
pub fn confusion(q: &[f64], b: &[bool], q_th: f64, weighting: Weighting) -> Result<ConfusionTally> {
    check_batch(q, b)?;
    weighting.check()?;
    let mut t = ConfusionTally { tn: 0.0, fn_: 0.0, tp: 0.0, fp: 0.0, n: q.len(), weighting, q_th };
    for (&qi, &bi) in q.iter().zip(b) {
        let (accept, reject) = weighting.split(q_th - qi);
        if bi {
            t.fn_ += accept;
            t.tp += reject;
        } else {
            t.tn += accept;
            t.fp += reject;
        }
    }
    Ok(t)
}

impl ConfusionTally {
    pub fn total(&self) -> f64 {
        self.tn + self.fn_ + self.tp + self.fp
    }

    fn ensure_nonempty(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(argument("empty batch"));
        }
        Ok(self.total().max(EPS))
    }

    /// Estimated single-resource outage probability, `(TP + FN) / total`.
    pub fn p1_hat(&self) -> Result<f64> {
        let s = self.ensure_nonempty()?;
        Ok((self.tp + self.fn_) / s)
    }

    /// Estimated acceptance probability, `(TN + FN) / total`.
    pub fn fq_hat(&self) -> Result<f64> {
        let s = self.ensure_nonempty()?;
        Ok((self.tn + self.fn_) / s)
    }

    /// Estimated outage probability among accepted samples, `FN / (TN + FN)`.
    pub fn pinf_hat(&self) -> Result<f64> {
        self.ensure_nonempty()?;
        let accepted = self.tn + self.fn_;
        if self.weighting == Weighting::Heaviside && accepted == 0.0 {
            return Err(Error::Degenerate("no sample accepted at this threshold".into()));
        }
        Ok(self.fn_ / accepted.max(EPS))
    }
}

/// A loss value with its gradient with respect to each predictor output.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// The system outage loss
/// `P1 (1 - FQ)^(R-1) + Pinf (1 - (1 - FQ)^(R-1))`, with all three ratios
/// estimated from logistic-weighted tallies of the whole batch.
pub fn custom_loss(q: &[f64], b: &[bool], q_th: f64, alpha: f64, resource_count: usize) -> Result<LossValue> {
    if resource_count == 0 {
        return Err(argument("resource_count must be at least 1"));
    }
    let w = Weighting::Logistic { alpha };
    let t = confusion(q, b, q_th, w)?;
    Ok(outage_loss_from_tally(&t, q, b, resource_count))
}

fn outage_loss_from_tally(t: &ConfusionTally, q: &[f64], b: &[bool], resource_count: usize) -> LossValue {
    let s = t.total().max(EPS);
    let u = t.tp + t.fn_;
    let acc = t.tn + t.fn_;
    let acc_g = acc.max(EPS);
    let p1 = u / s;
    let fq = acc / s;
    let pinf = t.fn_ / acc_g;

    let m = (resource_count - 1) as i32;
    let reject = 1.0 - fq;
    let a = reject.powi(m);
    let value = p1 * a + pinf * (1.0 - a);

    let dl_dp1 = a;
    let dl_dpinf = 1.0 - a;
    let dl_dfq = if m == 0 { 0.0 } else { -(m as f64) * reject.powi(m - 1) * (p1 - pinf) };

    // partials of the three ratios with respect to (TN, FN, TP, FP)
    let s2 = s * s;
    let a2 = acc_g * acc_g;
    let dp1 = [-u / s2, 1.0 / s - u / s2, 1.0 / s - u / s2, -u / s2];
    let dfq = [1.0 / s - acc / s2, 1.0 / s - acc / s2, -acc / s2, -acc / s2];
    let dpinf = [-t.fn_ / a2, t.tn / a2, 0.0, 0.0];
    let dl: [f64; 4] = std::array::from_fn(|j| dl_dp1 * dp1[j] + dl_dfq * dfq[j] + dl_dpinf * dpinf[j]);

    let grad = q
        .iter()
        .zip(b)
        .map(|(&qi, &bi)| {
            // d(accept)/dq = -d(reject)/dq
            let da = t.weighting.d_accept_dq(t.q_th - qi);
            if bi {
                dl[1] * da - dl[2] * da
            } else {
                dl[0] * da - dl[3] * da
            }
        })
        .collect();
    LossValue { value, grad }
}

/// Mean binary cross-entropy, with outputs clamped to `[EPS, 1 - EPS]`.
pub fn bce(q: &[f64], b: &[bool]) -> Result<LossValue> {
    check_batch(q, b)?;
    let n = q.len() as f64;
    let mut value = 0.0;
    let grad = q
        .iter()
        .zip(b)
        .map(|(&qi, &bi)| {
            let qc = qi.clamp(EPS, 1.0 - EPS);
            if bi {
                value -= qc.ln();
                -1.0 / (qc * n)
            } else {
                value -= (1.0 - qc).ln();
                1.0 / ((1.0 - qc) * n)
            }
        })
        .collect();
    Ok(LossValue { value: value / n, grad })
}

pub fn mse(q: &[f64], b: &[bool]) -> Result<LossValue> {
    check_batch(q, b)?;
    let n = q.len() as f64;
    let mut value = 0.0;
    let grad = q
        .iter()
        .zip(b)
        .map(|(&qi, &bi)| {
            let d = qi - f64::from(u8::from(bi));
            value += d * d;
            2.0 * d / n
        })
        .collect();
    Ok(LossValue { value: value / n, grad })
}

/// Mean absolute error; the subgradient at `q == b` is 0.
pub fn mae(q: &[f64], b: &[bool]) -> Result<LossValue> {
    check_batch(q, b)?;
    let n = q.len() as f64;
    let mut value = 0.0;
    let grad = q
        .iter()
        .zip(b)
        .map(|(&qi, &bi)| {
            let d = qi - f64::from(u8::from(bi));
            value += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue { value: value / n, grad })
}

/// Which objective a predictor is trained with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossKind {
    Custom,
    Bce,
    Mse,
    Mae,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Custom, LossKind::Bce, LossKind::Mse, LossKind::Mae];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Custom => "custom",
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "custom" => Ok(LossKind::Custom),
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}
