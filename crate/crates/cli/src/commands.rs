//! The `generate`, `train` and `sweep` subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use outage_core::allocator::{monte_carlo_grid_many, monte_carlo_many, MonteCarloReport};
use outage_core::channel_sim::{build_dataset, read_dataset, write_dataset, Dataset, SimConfig};
use outage_core::losses::LossKind;
use outage_core::predictor::{load_params, save_params, PredictorParams};
use outage_core::rng::StreamKey;
use outage_core::trainer::{train_replicates, Dispersion, TrainedReplicate};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const DATASET_FILE: &str = "dataset.outageds";

fn data_key(cfg: &ExperimentConfig) -> StreamKey {
    StreamKey::new(cfg.seed).named("data")
}

fn eval_key(cfg: &ExperimentConfig) -> StreamKey {
    StreamKey::new(cfg.seed).named("eval")
}

pub fn params_path(out: &Path, kind: LossKind, replicate: usize) -> PathBuf {
    out.join("params").join(format!("{kind}_r{replicate}.outageqp"))
}

pub fn history_path(out: &Path, kind: LossKind, replicate: usize) -> PathBuf {
    out.join("history").join(format!("{kind}_r{replicate}.csv"))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn with_path(path: &Path, e: outage_core::Error) -> CliError {
    match e {
        outage_core::Error::Io(io) => CliError::io(path, io),
        other => CliError::Core(other),
    }
}

#[derive(Clone, Debug)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub records: usize,
    pub label_rate: f64,
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> CliResult<GenerateSummary> {
    cfg.validate()?;
    create_dir(out)?;
    let ds = build_dataset(&cfg.sim_config(), cfg.channel_mode(), cfg.data.n_windows, data_key(cfg))?;
    let path = out.join(DATASET_FILE);
    write_dataset(&ds, &path).map_err(|e| with_path(&path, e))?;
    Ok(GenerateSummary { path, records: ds.len(), label_rate: ds.label_rate() })
}

fn load_matching_dataset(cfg: &ExperimentConfig, out: &Path) -> CliResult<Dataset> {
    let path = out.join(DATASET_FILE);
    if !path.exists() {
        return Err(CliError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found; run `outage generate` first"),
        ));
    }
    let ds = read_dataset(&path).map_err(|e| with_path(&path, e))?;
    let sim = cfg.sim_config();
    let mismatch = |field: &str, file: String, config: String| {
        CliError::Config(format!("{}: generated with {field} = {file} but the config has {config}", path.display()))
    };
    if ds.k != sim.k {
        return Err(mismatch("sim.k", ds.k.to_string(), sim.k.to_string()));
    }
    if ds.l != sim.l {
        return Err(mismatch("sim.l", ds.l.to_string(), sim.l.to_string()));
    }
    if ds.gamma_th != sim.gamma_th {
        return Err(mismatch("sim.gamma_th", ds.gamma_th.to_string(), sim.gamma_th.to_string()));
    }
    if ds.capacity_mode != sim.capacity_mode {
        return Err(mismatch("sim.capacity_mode", ds.capacity_mode.to_string(), sim.capacity_mode.to_string()));
    }
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub kind: LossKind,
    pub replicates: usize,
    /// Mean over replicates of the last step's loss.
    pub final_loss: f64,
    pub seconds: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<TrainSummary>> {
    cfg.validate()?;
    let ds = load_matching_dataset(cfg, out)?;
    create_dir(&out.join("params"))?;
    create_dir(&out.join("history"))?;
    let mut summaries = Vec::new();
    for kind in cfg.train.loss_kind.kinds() {
        let reps = train_replicates(&cfg.train_config(kind), &ds)?;
        for (r, rep) in reps.iter().enumerate() {
            let p = params_path(out, kind, r);
            save_params(&rep.params, &p).map_err(|e| with_path(&p, e))?;
            let h = history_path(out, kind, r);
            let file = fs::File::create(&h).map_err(|e| CliError::io(&h, e))?;
            rep.history.write_csv(std::io::BufWriter::new(file)).map_err(|e| with_path(&h, e))?;
        }
        summaries.push(TrainSummary {
            kind,
            replicates: reps.len(),
            final_loss: reps.iter().map(final_loss).sum::<f64>() / reps.len() as f64,
            seconds: reps.iter().map(|r| r.history.wall_clock.as_secs_f64()).sum(),
        });
    }
    Ok(summaries)
}

fn final_loss(rep: &TrainedReplicate) -> f64 {
    rep.history.steps.last().map_or(f64::NAN, |s| s.loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    QTh,
    Gamma,
    L,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::QTh => "q_th",
            SweepAxis::Gamma => "gamma",
            SweepAxis::L => "l",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "q_th" => Ok(SweepAxis::QTh),
            "gamma" => Ok(SweepAxis::Gamma),
            "l" => Ok(SweepAxis::L),
            other => Err(format!("unknown axis `{other}` (expected q_th, gamma or l)")),
        }
    }
}

/// One grid point for one loss kind, averaged over replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub loss_kind: LossKind,
    pub mean_outage: f64,
    /// Replicate spread over `sqrt(r)` combined with the mean Monte Carlo
    /// standard error. Replicates share evaluation episodes, so the Monte
    /// Carlo part does not shrink with `r`.
    pub stderr: f64,
    pub min: f64,
    pub max: f64,
    pub n_episodes: usize,
    pub theorem1_plugin: f64,
    pub empirical_p1: f64,
}

pub const SWEEP_HEADER: [&str; 9] = [
    "axis_value",
    "loss_kind",
    "mean_outage",
    "stderr",
    "min",
    "max",
    "n_episodes",
    "theorem1_plugin",
    "empirical_p1",
];

fn aggregate(axis_value: f64, kind: LossKind, reports: &[&MonteCarloReport]) -> CliResult<SweepRow> {
    let values: Vec<f64> = reports.iter().map(|r| r.outage.value).collect();
    let d = Dispersion::of(&values)?;
    let r = reports.len() as f64;
    let mc_se = reports.iter().map(|x| x.outage.standard_error).sum::<f64>() / r;
    Ok(SweepRow {
        axis_value,
        loss_kind: kind,
        mean_outage: d.mean,
        stderr: (d.stddev * d.stddev / r + mc_se * mc_se).sqrt(),
        min: d.min,
        max: d.max,
        n_episodes: reports[0].n_episodes,
        theorem1_plugin: reports.iter().map(|x| x.plugin.value).sum::<f64>() / r,
        empirical_p1: reports.iter().map(|x| x.p1.value).sum::<f64>() / r,
    })
}

pub fn sweep_path(out: &Path, axis: SweepAxis) -> PathBuf {
    out.join(format!("sweep_{}.csv", axis.name()))
}

/// Runs a sweep and writes `sweep_<axis>.csv`.
///
/// The `q_th` sweep scores the predictors saved by `train`. The `gamma` and
/// `l` sweeps change the labels or windows, so they regenerate data and
/// retrain at every grid point.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, axis: SweepAxis) -> CliResult<(PathBuf, Vec<SweepRow>)> {
    cfg.validate()?;
    let mut rows = match axis {
        SweepAxis::QTh => sweep_q_th(cfg, out)?,
        SweepAxis::Gamma => {
            let points: Vec<(f64, ExperimentConfig)> = cfg
                .eval
                .gamma_grid
                .iter()
                .map(|&g| {
                    let mut c = cfg.clone();
                    c.sim.gamma_th = g;
                    (g, c)
                })
                .collect();
            retrain_sweep(cfg, &points)?
        }
        SweepAxis::L => {
            let points: Vec<(f64, ExperimentConfig)> = cfg
                .eval
                .l_grid
                .iter()
                .map(|&l| {
                    let mut c = cfg.clone();
                    c.sim.l = l;
                    (l as f64, c)
                })
                .collect();
            retrain_sweep(cfg, &points)?
        }
    };
    rows.sort_by(|a, b| a.axis_value.total_cmp(&b.axis_value).then_with(|| a.loss_kind.name().cmp(b.loss_kind.name())));
    create_dir(out)?;
    let path = sweep_path(out, axis);
    write_sweep_csv(&path, &rows)?;
    Ok((path, rows))
}

fn sweep_q_th(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<SweepRow>> {
    let kinds = cfg.train.loss_kind.kinds();
    let mut predictors: Vec<PredictorParams> = Vec::new();
    for &kind in &kinds {
        for r in 0..cfg.train.replicate_count {
            let p = params_path(out, kind, r);
            if !p.exists() {
                return Err(CliError::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "trained parameters not found; run `outage train` first"),
                ));
            }
            predictors.push(load_params(&p).map_err(|e| with_path(&p, e))?);
        }
    }
    let refs: Vec<&PredictorParams> = predictors.iter().collect();
    let grid = monte_carlo_grid_many(
        &cfg.sim_config(),
        &refs,
        &cfg.eval.q_th_grid,
        cfg.eval.n_episodes,
        cfg.channel_mode(),
        eval_key(cfg),
    )?;
    let reps = cfg.train.replicate_count;
    let mut rows = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        for (ti, &q_th) in cfg.eval.q_th_grid.iter().enumerate() {
            let reports: Vec<&MonteCarloReport> = (0..reps).map(|r| &grid[ki * reps + r][ti]).collect();
            rows.push(aggregate(q_th, kind, &reports)?);
        }
    }
    Ok(rows)
}

fn retrain_sweep(base: &ExperimentConfig, points: &[(f64, ExperimentConfig)]) -> CliResult<Vec<SweepRow>> {
    let kinds = base.train.loss_kind.kinds();
    let per_point: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|(value, cfg)| {
            let sim: SimConfig = cfg.sim_config();
            let ds = build_dataset(&sim, cfg.channel_mode(), cfg.data.n_windows, data_key(base))?;
            let mut trained: Vec<(LossKind, PredictorParams)> = Vec::new();
            for &kind in &kinds {
                for rep in train_replicates(&cfg.train_config(kind), &ds)? {
                    trained.push((kind, rep.params));
                }
            }
            let refs: Vec<&PredictorParams> = trained.iter().map(|t| &t.1).collect();
            let reports =
                monte_carlo_many(&sim, &refs, cfg.eval.q_th, cfg.eval.n_episodes, cfg.channel_mode(), eval_key(base))?;
            kinds
                .iter()
                .map(|&kind| {
                    let mine: Vec<&MonteCarloReport> =
                        trained.iter().zip(&reports).filter(|(t, _)| t.0 == kind).map(|(_, r)| r).collect();
                    aggregate(*value, kind, &mine)
                })
                .collect()
        })
        .collect::<CliResult<_>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(SWEEP_HEADER).map_err(io_err)?;
    for r in rows {
        w.write_record([
            r.axis_value.to_string(),
            r.loss_kind.to_string(),
            r.mean_outage.to_string(),
            r.stderr.to_string(),
            r.min.to_string(),
            r.max.to_string(),
            r.n_episodes.to_string(),
            r.theorem1_plugin.to_string(),
            r.empirical_p1.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let bad = |what: &str| CliError::Config(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(path, e.into()))?;
        let f = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(SWEEP_HEADER[i]));
        rows.push(SweepRow {
            axis_value: f(0)?,
            loss_kind: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("loss_kind"))?,
            mean_outage: f(2)?,
            stderr: f(3)?,
            min: f(4)?,
            max: f(5)?,
            n_episodes: rec.get(6).and_then(|s| s.parse().ok()).ok_or_else(|| bad("n_episodes"))?,
            theorem1_plugin: f(7)?,
            empirical_p1: f(8)?,
        });
    }
    Ok(rows)
}
