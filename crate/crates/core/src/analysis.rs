//! Closed-form system outage and its empirical ingredients.
//!
//! For `R` i.i.d. resources scanned greedily, the outage probability is a
//! mixture of the single-resource outage `p1` (every resource rejected,
//! weight `(1 - fq)^(R-1)`) and the outage among accepted resources `pinf`.

use std::fmt;

use crate::error::{argument, Error, Result};
use crate::losses::{ConfusionTally, Weighting};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutageInputs {
    /// Single-resource outage probability.
    pub p1: f64,
    /// Probability that the predictor accepts a resource.
    pub fq: f64,
    /// Outage probability conditional on acceptance.
    pub pinf: f64,
    pub resource_count: usize,
}

impl OutageInputs {
    pub fn new(p1: f64, fq: f64, pinf: f64, resource_count: usize) -> Result<Self> {
        for (name, v) in [("p1", p1), ("fq", fq), ("pinf", pinf)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(argument(format!("{name} = {v} is not a probability")));
            }
        }
        if resource_count == 0 {
            return Err(argument("resource_count must be at least 1"));
        }
        Ok(OutageInputs { p1, fq, pinf, resource_count })
    }

    /// Probability that every one of the first `R - 1` resources is rejected.
    pub fn all_rejected(&self) -> f64 {
        (1.0 - self.fq).powi(self.resource_count as i32 - 1)
    }
}

/// `p1 (1 - fq)^(R-1) + pinf (1 - (1 - fq)^(R-1))`.
pub fn theorem1_outage(inputs: &OutageInputs) -> f64 {
    let a = inputs.all_rejected();
    inputs.p1 * a + inputs.pinf * (1.0 - a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateMethod {
    MonteCarlo,
    Theorem1Plugin,
}

impl fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimateMethod::MonteCarlo => "monte_carlo",
            EstimateMethod::Theorem1Plugin => "theorem1_plugin",
        })
    }
}

/// A probability estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutageEstimate {
    pub value: f64,
    pub n_samples: usize,
    pub standard_error: f64,
    pub method: EstimateMethod,
}

impl OutageEstimate {
    /// Binomial proportion `hits / n` with SE `sqrt(p (1 - p) / n)`.
    pub fn proportion(hits: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Degenerate("proportion over zero samples".into()));
        }
        let value = hits as f64 / n as f64;
        Ok(OutageEstimate {
            value,
            n_samples: n,
            standard_error: (value * (1.0 - value) / n as f64).sqrt(),
            method: EstimateMethod::MonteCarlo,
        })
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_se(&self, other: &OutageEstimate) -> f64 {
        self.standard_error.hypot(other.standard_error)
    }

    /// `|a - b|` measured in combined standard errors.
    pub fn z_distance(&self, other: &OutageEstimate) -> f64 {
        let se = self.combined_se(other);
        let d = (self.value - other.value).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }
}

/// Fraction of outage labels.
pub fn empirical_p1(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(argument("no labels"));
    }
    Ok(labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64)
}

/// Fraction of outputs at or below `q_th`.
pub fn empirical_fq(q: &[f64], q_th: f64) -> Result<f64> {
    if q.is_empty() {
        return Err(argument("no outputs"));
    }
    Ok(q.iter().filter(|&&x| x <= q_th).count() as f64 / q.len() as f64)
}

/// Outage fraction among the accepted samples, `|T| / |V|`.
pub fn empirical_pinf(q: &[f64], labels: &[bool], q_th: f64) -> Result<f64> {
    if q.len() != labels.len() {
        return Err(argument(format!("{} outputs but {} labels", q.len(), labels.len())));
    }
    let mut accepted = 0usize;
    let mut accepted_outage = 0usize;
    for (&x, &b) in q.iter().zip(labels) {
        if x <= q_th {
            accepted += 1;
            if b {
                accepted_outage += 1;
            }
        }
    }
    if accepted == 0 {
        return Err(Error::Degenerate(format!("no output is at or below q_th = {q_th}")));
    }
    Ok(accepted_outage as f64 / accepted as f64)
}

/// `sum_{i=1..n_terms} p (1 - fq)^(i-1) fq`, which tends to `p`.
pub fn geometric_series_check(p: f64, fq: f64, n_terms: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(fq > 0.0 && fq <= 1.0) {
        return Err(argument(format!("need p in [0, 1] and fq in (0, 1], got p = {p}, fq = {fq}")));
    }
    let mut sum = 0.0;
    let mut reject = 1.0;
    for _ in 0..n_terms {
        sum += p * reject * fq;
        reject *= 1.0 - fq;
    }
    Ok(sum)
}

/// Closed-form plug-in from step-weighted counts of single-resource samples.
///
/// The standard error comes from the delta method over the multinomial
/// (TN, FN, TP, FP) cell proportions. With no accepted sample `fq = 0`, the
/// `pinf` term has zero weight and is taken as 0.
pub fn theorem1_plugin(counts: &ConfusionTally, resource_count: usize) -> Result<(OutageInputs, OutageEstimate)> {
    if counts.weighting != Weighting::Heaviside {
        return Err(argument("plug-in estimates need step-weighted counts"));
    }
    if counts.n == 0 || resource_count == 0 {
        return Err(argument("plug-in needs samples and at least one resource"));
    }
    let n = counts.n as f64;
    let pi = [counts.tn / n, counts.fn_ / n, counts.tp / n, counts.fp / n];
    let accepted = pi[0] + pi[1];
    let p1 = pi[1] + pi[2];
    let fq = accepted.min(1.0);
    let pinf = if accepted > 0.0 { pi[1] / accepted } else { 0.0 };
    let inputs = OutageInputs::new(p1.min(1.0), fq, pinf, resource_count)?;
    let value = theorem1_outage(&inputs);

    let m = resource_count as i32 - 1;
    let a = inputs.all_rejected();
    let dg_dp1 = a;
    let dg_dpinf = 1.0 - a;
    let dg_dfq = if m == 0 { 0.0 } else { -(m as f64) * (1.0 - fq).powi(m - 1) * (p1 - pinf) };
    let (dpinf_dtn, dpinf_dfn) =
        if accepted > 0.0 { (-pi[1] / (accepted * accepted), pi[0] / (accepted * accepted)) } else { (0.0, 0.0) };
    let grad = [
        dg_dfq + dg_dpinf * dpinf_dtn,
        dg_dp1 + dg_dfq + dg_dpinf * dpinf_dfn,
        dg_dp1,
        0.0,
    ];
    let mean: f64 = pi.iter().zip(&grad).map(|(p, g)| p * g).sum();
    let second: f64 = pi.iter().zip(&grad).map(|(p, g)| p * g * g).sum();
    let var = ((second - mean * mean) / n).max(0.0);
    Ok((
        inputs,
        OutageEstimate {
            value,
            n_samples: counts.n,
            standard_error: var.sqrt(),
            method: EstimateMethod::Theorem1Plugin,
        },
    ))
}
