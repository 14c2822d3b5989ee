//! Greedy resource selection driven by a predictor, and Monte Carlo
//! estimates of the resulting system outage.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{theorem1_plugin, OutageEstimate, OutageInputs};
use crate::channel_sim::{
    label, simulate, simulate_resource_series, CapacityMode, ChannelEpisode, ChannelMode, SimConfig,
};
use crate::error::{argument, Result};
use crate::losses::{ConfusionTally, Weighting};
use crate::predictor::OutagePredictor;
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Selection {
    /// 0-based resource index.
    pub index: usize,
    /// `true` when no resource qualified and the last one was taken.
    pub fallback: bool,
}

/// First index with `q[i] <= q_th`, or the last index if there is none.
pub fn greedy_select(q: &[f64], q_th: f64) -> Result<Selection> {
    if q.is_empty() {
        return Err(argument("no resources to select from"));
    }
    Ok(match q.iter().position(|&x| x <= q_th) {
        Some(index) => Selection { index, fallback: false },
        None => Selection { index: q.len() - 1, fallback: true },
    })
}

/// Greedy selection that asks for `q[i]` only until a resource qualifies.
/// Returns the selection and the outputs that were evaluated.
pub fn greedy_select_lazy<F>(count: usize, q_th: f64, mut eval: F) -> Result<(Selection, Vec<f64>)>
where
    F: FnMut(usize) -> Result<f64>,
{
    if count == 0 {
        return Err(argument("no resources to select from"));
    }
    let mut seen = Vec::with_capacity(count);
    for i in 0..count {
        let q = eval(i)?;
        seen.push(q);
        if q <= q_th {
            return Ok((Selection { index: i, fallback: false }, seen));
        }
    }
    Ok((Selection { index: count - 1, fallback: true }, seen))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AllocationOutcome {
    pub selected: usize,
    /// Outputs of every resource that was scored, in scan order.
    pub predicted_outputs: Vec<f64>,
    pub fallback_used: bool,
    /// Whether the selected resource's future window is in outage.
    pub outage: bool,
}

/// Scans the resources of `episode` in order and reports the outcome.
pub fn run_episode<P: OutagePredictor + ?Sized>(
    episode: &ChannelEpisode,
    predictor: &P,
    q_th: f64,
    gamma_th: f64,
    mode: CapacityMode,
) -> Result<AllocationOutcome> {
    let (sel, predicted_outputs) =
        greedy_select_lazy(episode.resource_count(), q_th, |i| predictor.predict(episode.input(i)))?;
    Ok(AllocationOutcome {
        selected: sel.index,
        predicted_outputs,
        fallback_used: sel.fallback,
        outage: label(episode.future(sel.index), gamma_th, mode)?,
    })
}

/// Summary of a Monte Carlo run at one threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    pub q_th: f64,
    pub resource_count: usize,
    pub n_episodes: usize,
    /// Fraction of episodes whose selected resource was in outage.
    pub outage: OutageEstimate,
    /// Step-weighted counts over the first resource of every episode.
    pub first_resource: ConfusionTally,
    /// Single-resource outage rate from the first resources.
    pub p1: OutageEstimate,
    pub fq: f64,
    /// `None` when no first resource was accepted.
    pub pinf: Option<f64>,
    /// Closed-form outage from `p1`, `fq`, `pinf`, with delta-method SE.
    pub plugin: OutageEstimate,
    pub plugin_inputs: OutageInputs,
    pub fallback_rate: f64,
    pub mean_evaluations: f64,
}

#[derive(Clone, Copy)]
struct EpisodeRecord {
    outage: bool,
    fallback: bool,
    evaluated: usize,
    q_first: f64,
    b_first: bool,
}

struct Summary {
    records: Vec<EpisodeRecord>,
}

impl Summary {
    fn report(&self, q_th: f64, resource_count: usize) -> Result<MonteCarloReport> {
        let n = self.records.len();
        let mut tally =
            ConfusionTally { tn: 0.0, fn_: 0.0, tp: 0.0, fp: 0.0, n, weighting: Weighting::Heaviside, q_th };
        let (mut outages, mut fallbacks, mut evals, mut b1) = (0usize, 0usize, 0usize, 0usize);
        for r in &self.records {
            outages += usize::from(r.outage);
            fallbacks += usize::from(r.fallback);
            evals += r.evaluated;
            b1 += usize::from(r.b_first);
            let accepted = r.q_first <= q_th;
            match (r.b_first, accepted) {
                (true, true) => tally.fn_ += 1.0,
                (true, false) => tally.tp += 1.0,
                (false, true) => tally.tn += 1.0,
                (false, false) => tally.fp += 1.0,
            }
        }
        let (plugin_inputs, plugin) = theorem1_plugin(&tally, resource_count)?;
        let accepted = tally.tn + tally.fn_;
        Ok(MonteCarloReport {
            q_th,
            resource_count,
            n_episodes: n,
            outage: OutageEstimate::proportion(outages, n)?,
            first_resource: tally,
            p1: OutageEstimate::proportion(b1, n)?,
            fq: accepted / n as f64,
            pinf: (accepted > 0.0).then(|| tally.fn_ / accepted),
            plugin,
            plugin_inputs,
            fallback_rate: fallbacks as f64 / n as f64,
            mean_evaluations: evals as f64 / n as f64,
        })
    }
}

fn check_run(cfg: &SimConfig, mode: ChannelMode, n_episodes: usize) -> Result<()> {
    cfg.validate_for(mode)?;
    if n_episodes == 0 {
        return Err(argument("n_episodes must be at least 1"));
    }
    Ok(())
}

type LazyRow = Option<(Vec<Complex64>, bool)>;

fn lazy_resource<'a>(rows: &'a mut [LazyRow], i: usize, cfg: &SimConfig, ek: StreamKey) -> Result<&'a (Vec<Complex64>, bool)> {
    if rows[i].is_none() {
        let s = simulate_resource_series(cfg, &mut ek.child(i as u64).rng())?;
        let b = label(&s[cfg.k..], cfg.gamma_th, cfg.capacity_mode)?;
        rows[i] = Some((s, b));
    }
    Ok(rows[i].as_ref().unwrap())
}

/// Runs `n_episodes` independent allocation episodes at threshold `q_th`.
///
/// Episode `e` uses stream `key.child(e)`. In independent mode resource `i`
/// of that episode uses `key.child(e).child(i)` and is only simulated when
/// the scan reaches it.
pub fn monte_carlo<P: OutagePredictor + ?Sized>(
    cfg: &SimConfig,
    predictor: &P,
    q_th: f64,
    n_episodes: usize,
    mode: ChannelMode,
    key: StreamKey,
) -> Result<MonteCarloReport> {
    Ok(monte_carlo_many(cfg, &[predictor], q_th, n_episodes, mode, key)?.remove(0))
}

/// [`monte_carlo`] for several predictors on the same episodes. Each
/// resource is simulated at most once; report `j` equals what
/// `monte_carlo` gives for `predictors[j]` alone.
pub fn monte_carlo_many<P: OutagePredictor + ?Sized>(
    cfg: &SimConfig,
    predictors: &[&P],
    q_th: f64,
    n_episodes: usize,
    mode: ChannelMode,
    key: StreamKey,
) -> Result<Vec<MonteCarloReport>> {
    check_run(cfg, mode, n_episodes)?;
    if predictors.is_empty() {
        return Err(argument("no predictors to evaluate"));
    }
    let per_episode: Vec<Vec<EpisodeRecord>> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ek = key.child(e);
            match mode {
                ChannelMode::SharedFft => {
                    let ep = simulate(cfg, mode, ek)?;
                    let b_first = label(ep.future(0), cfg.gamma_th, cfg.capacity_mode)?;
                    predictors
                        .iter()
                        .map(|p| {
                            let out = run_episode(&ep, *p, q_th, cfg.gamma_th, cfg.capacity_mode)?;
                            Ok(EpisodeRecord {
                                outage: out.outage,
                                fallback: out.fallback_used,
                                evaluated: out.predicted_outputs.len(),
                                q_first: out.predicted_outputs[0],
                                b_first,
                            })
                        })
                        .collect()
                }
                ChannelMode::IndependentEpisodes => {
                    let mut series: Vec<LazyRow> = vec![None; cfg.resource_count];
                    let mut records = Vec::with_capacity(predictors.len());
                    for p in predictors {
                        let mut outage = false;
                        let (sel, seen) = greedy_select_lazy(cfg.resource_count, q_th, |i| {
                            let (row, b) = lazy_resource(&mut series, i, cfg, ek)?;
                            outage = *b;
                            p.predict(&row[..cfg.k])
                        })?;
                        records.push(EpisodeRecord {
                            outage,
                            fallback: sel.fallback,
                            evaluated: seen.len(),
                            q_first: seen[0],
                            b_first: lazy_resource(&mut series, 0, cfg, ek)?.1,
                        });
                    }
                    Ok(records)
                }
            }
        })
        .collect::<Result<_>>()?;
    (0..predictors.len())
        .map(|j| {
            let records = per_episode.iter().map(|r| r[j]).collect();
            Summary { records }.report(q_th, cfg.resource_count)
        })
        .collect()
}

/// Like [`monte_carlo`] for several thresholds over the same episodes.
/// Every resource is scored once and reused for each threshold.
pub fn monte_carlo_grid<P: OutagePredictor + ?Sized>(
    cfg: &SimConfig,
    predictor: &P,
    q_ths: &[f64],
    n_episodes: usize,
    mode: ChannelMode,
    key: StreamKey,
) -> Result<Vec<MonteCarloReport>> {
    Ok(monte_carlo_grid_many(cfg, &[predictor], q_ths, n_episodes, mode, key)?.remove(0))
}

/// [`monte_carlo_grid`] for several predictors on the same episodes;
/// entry `[j][t]` belongs to `predictors[j]` at `q_ths[t]`.
pub fn monte_carlo_grid_many<P: OutagePredictor + ?Sized>(
    cfg: &SimConfig,
    predictors: &[&P],
    q_ths: &[f64],
    n_episodes: usize,
    mode: ChannelMode,
    key: StreamKey,
) -> Result<Vec<Vec<MonteCarloReport>>> {
    check_run(cfg, mode, n_episodes)?;
    if predictors.is_empty() || q_ths.is_empty() {
        return Err(argument("need at least one predictor and one threshold"));
    }
    // per episode: outage labels, then one row of outputs per predictor
    let scored: Vec<(Vec<bool>, Vec<Vec<f64>>)> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ep = simulate(cfg, mode, key.child(e))?;
            let count = ep.resource_count();
            let b = (0..count).map(|i| label(ep.future(i), cfg.gamma_th, cfg.capacity_mode)).collect::<Result<_>>()?;
            let q = predictors
                .iter()
                .map(|p| (0..count).map(|i| p.predict(ep.input(i))).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            Ok((b, q))
        })
        .collect::<Result<_>>()?;
    (0..predictors.len())
        .map(|j| {
            q_ths
                .iter()
                .map(|&q_th| {
                    let records = scored
                        .iter()
                        .map(|(b, qs)| {
                            let q = &qs[j];
                            let sel = greedy_select(q, q_th)?;
                            Ok(EpisodeRecord {
                                outage: b[sel.index],
                                fallback: sel.fallback,
                                evaluated: sel.index + 1,
                                q_first: q[0],
                                b_first: b[0],
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Summary { records }.report(q_th, cfg.resource_count)
                })
                .collect()
        })
        .collect()
}

/// Simple predictors with known behaviour.
pub mod stubs {
    use super::*;

    /// Always returns the same output.
    #[derive(Clone, Copy, Debug)]
    pub struct Constant(pub f64);

    impl OutagePredictor for Constant {
        fn predict(&self, _window: &[Complex64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    /// `high` when the newest sample's magnitude is below `cutoff`, else `low`.
    #[derive(Clone, Copy, Debug)]
    pub struct LastMagnitude {
        pub cutoff: f64,
        pub high: f64,
        pub low: f64,
    }

    impl OutagePredictor for LastMagnitude {
        fn predict(&self, window: &[Complex64]) -> Result<f64> {
            let last = window.last().ok_or_else(|| argument("empty window"))?;
            Ok(if last.norm() < self.cutoff { self.high } else { self.low })
        }
    }

    /// `exp(-|h|^2)` of the newest sample. For unit-power Rayleigh samples
    /// the output is uniform on `(0, 1)`.
    #[derive(Clone, Copy, Debug)]
    pub struct ExpPower;

    impl OutagePredictor for ExpPower {
        fn predict(&self, window: &[Complex64]) -> Result<f64> {
            let last = window.last().ok_or_else(|| argument("empty window"))?;
            Ok((-last.norm_sqr()).exp())
        }
    }

    /// `high` when the window's mean magnitude is below `cutoff`, else `low`.
    #[derive(Clone, Copy, Debug)]
    pub struct MeanMagnitude {
        pub cutoff: f64,
        pub high: f64,
        pub low: f64,
    }

    impl OutagePredictor for MeanMagnitude {
        fn predict(&self, window: &[Complex64]) -> Result<f64> {
            if window.is_empty() {
                return Err(argument("empty window"));
            }
            let mean = window.iter().map(|h| h.norm()).sum::<f64>() / window.len() as f64;
            Ok(if mean < self.cutoff { self.high } else { self.low })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::stubs::*;
    use super::*;
    use crate::channel_sim::simulate_independent_episode;
    use proptest::prelude::*;

    #[test]
    fn selection_examples() {
        assert_eq!(greedy_select(&[0.8, 0.3, 0.1], 0.5).unwrap(), Selection { index: 1, fallback: false });
        assert_eq!(greedy_select(&[0.9, 0.8, 0.7], 0.5).unwrap(), Selection { index: 2, fallback: true });
        assert_eq!(greedy_select(&[0.5, 0.1], 0.5).unwrap(), Selection { index: 0, fallback: false });
        assert!(greedy_select(&[], 0.5).is_err());
        assert_eq!(greedy_select(&[0.2, 0.9], 0.0).unwrap().index, 1);
        assert_eq!(greedy_select(&[0.9, 1.0], 1.0).unwrap().index, 0);
    }

    proptest! {
        #[test]
        fn selection_matches_prefix_oracle(q in proptest::collection::vec(0.0f64..=1.0, 1..20), q_th in 0.0f64..=1.0) {
            let sel = greedy_select(&q, q_th).unwrap();
            let qualifies: Vec<bool> = q.iter().map(|&x| x <= q_th).collect();
            if qualifies.iter().any(|&x| x) {
                prop_assert!(!sel.fallback);
                prop_assert!(qualifies[sel.index]);
                prop_assert!(qualifies[..sel.index].iter().all(|&x| !x));
            } else {
                prop_assert!(sel.fallback);
                prop_assert_eq!(sel.index, q.len() - 1);
            }
            let (lazy, seen) = greedy_select_lazy(q.len(), q_th, |i| Ok(q[i])).unwrap();
            prop_assert_eq!(lazy, sel);
            prop_assert_eq!(seen.as_slice(), &q[..=sel.index]);
        }
    }

    fn cfg() -> SimConfig {
        SimConfig { n_taps: 64, k: 20, l: 5, resource_count: 5, ..SimConfig::default() }
    }

    #[test]
    fn episode_outcome_is_consistent() {
        let c = cfg();
        let ep = simulate_independent_episode(&c, StreamKey::new(8)).unwrap();
        let p = ExpPower;
        let out = run_episode(&ep, &p, 0.3, c.gamma_th, c.capacity_mode).unwrap();
        let all: Vec<f64> = (0..5).map(|i| p.predict(ep.input(i)).unwrap()).collect();
        let sel = greedy_select(&all, 0.3).unwrap();
        assert_eq!(out.selected, sel.index);
        assert_eq!(out.fallback_used, sel.fallback);
        assert_eq!(out.predicted_outputs.as_slice(), &all[..=sel.index]);
        assert_eq!(out.outage, label(ep.future(sel.index), c.gamma_th, c.capacity_mode).unwrap());
    }

    #[test]
    fn lazy_and_full_runs_agree() {
        let c = SimConfig { resource_count: 4, ..cfg() };
        let p = MeanMagnitude { cutoff: 0.85, high: 0.8, low: 0.2 };
        for mode in [ChannelMode::IndependentEpisodes, ChannelMode::SharedFft] {
            let key = StreamKey::new(17);
            let lazy = monte_carlo(&c, &p, 0.5, 300, mode, key).unwrap();
            let grid = monte_carlo_grid(&c, &p, &[0.5], 300, mode, key).unwrap();
            assert_eq!(lazy, grid[0], "{mode}");
        }
    }

    #[test]
    fn joint_runs_match_single_runs() {
        let c = cfg();
        let a = ExpPower;
        let b = LastMagnitude { cutoff: 0.7, high: 0.9, low: 0.1 };
        let preds: [&dyn OutagePredictor; 2] = [&a, &b];
        for mode in [ChannelMode::IndependentEpisodes, ChannelMode::SharedFft] {
            let c = if mode == ChannelMode::SharedFft { SimConfig { resource_count: 4, ..c.clone() } } else { c.clone() };
            let key = StreamKey::new(23);
            let joint = monte_carlo_many(&c, &preds, 0.4, 250, mode, key).unwrap();
            assert_eq!(joint[0], monte_carlo(&c, &a, 0.4, 250, mode, key).unwrap());
            assert_eq!(joint[1], monte_carlo(&c, &b, 0.4, 250, mode, key).unwrap());
            let grid = monte_carlo_grid_many(&c, &preds, &[0.1, 0.4], 250, mode, key).unwrap();
            assert_eq!(grid[1][1], joint[1]);
            assert_eq!(grid[0][0], monte_carlo(&c, &a, 0.1, 250, mode, key).unwrap());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let c = cfg();
        let a = monte_carlo(&c, &ExpPower, 0.4, 200, ChannelMode::IndependentEpisodes, StreamKey::new(2)).unwrap();
        let b = monte_carlo(&c, &ExpPower, 0.4, 200, ChannelMode::IndependentEpisodes, StreamKey::new(2)).unwrap();
        assert_eq!(a, b);
        let d = monte_carlo(&c, &ExpPower, 0.4, 200, ChannelMode::IndependentEpisodes, StreamKey::new(3)).unwrap();
        assert_ne!(a.outage.value, d.outage.value);
    }

    #[test]
    fn never_accepting_is_single_resource_outage() {
        let c = cfg();
        let r = monte_carlo(&c, &Constant(1.0), 0.5, 400, ChannelMode::IndependentEpisodes, StreamKey::new(1)).unwrap();
        assert_eq!(r.fallback_rate, 1.0);
        assert_eq!(r.pinf, None);
        assert_eq!(r.mean_evaluations, 5.0);
        assert!((r.plugin.value - r.p1.value).abs() < 1e-15);
    }

    #[test]
    fn zero_episodes_is_an_error() {
        assert!(monte_carlo(&cfg(), &ExpPower, 0.5, 0, ChannelMode::IndependentEpisodes, StreamKey::new(1)).is_err());
    }
}
