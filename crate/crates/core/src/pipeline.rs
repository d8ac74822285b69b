//! End-to-end steps behind the command-line interface: simulate, train,
//! evaluate. Every output lands under one output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, partition, Dataset, Shard};
use crate::error::{Error, Result};
use crate::eval::{build_report, write_comparison, MetricsReport};
use crate::fl::{run_federated, ClientState, TrainHistory};
use crate::nn::{init, ModelKind, ModelParams};

/// Resolved output locations for a run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig, out_dir: &Path) -> Self {
        Self {
            dataset: out_dir.join(&cfg.paths.dataset),
            checkpoints: out_dir.join(&cfg.paths.checkpoints),
            reports: out_dir.join(&cfg.paths.reports),
        }
    }

    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.checkpoints.join(format!("{kind}.bfl"))
    }

    /// Wall-clock training time, kept apart from the reproducible outputs.
    pub fn timing(&self, kind: ModelKind) -> PathBuf {
        self.checkpoints.join(format!("{kind}.timing.toml"))
    }

    pub fn history(&self, kind: ModelKind) -> PathBuf {
        self.reports.join(kind.to_string()).join("history.csv")
    }

    pub fn report_dir(&self, kind: ModelKind) -> PathBuf {
        self.reports.join(kind.to_string())
    }

    pub fn comparison(&self) -> PathBuf {
        self.reports.join("comparison.csv")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub samples: usize,
    /// `(plane_id, sample count)` for every configured plane.
    pub per_plane: Vec<(usize, usize)>,
    pub path: PathBuf,
}

pub fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let layout = Layout::new(cfg, out_dir);
    if let Some(parent) = layout.dataset.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let ds = dataset::generate(&cfg.scenario(), cfg.master_seed)?;
    dataset::save(&ds, &layout.dataset)?;
    let mut per_plane: Vec<(usize, usize)> = (0..ds.meta.num_planes).map(|p| (p, 0)).collect();
    for s in &ds.samples {
        per_plane[s.plane_id].1 += 1;
    }
    Ok(SimulateSummary {
        samples: ds.samples.len(),
        per_plane,
        path: layout.dataset,
    })
}

/// Loads the run's dataset, warning when it was produced by a different
/// configuration or seed.
pub fn load_dataset(cfg: &RunConfig, out_dir: &Path) -> Result<Dataset> {
    let layout = Layout::new(cfg, out_dir);
    let (ds, _) = dataset::load_checked(&layout.dataset, &cfg.scenario(), cfg.master_seed)?;
    Ok(ds)
}

pub fn shards(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<Shard>> {
    Ok(partition(ds, cfg.dataset.test_fraction, cfg.dataset.split)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub train_time_s: f64,
    pub checkpoint: PathBuf,
}

/// Federated training on an already loaded dataset; writes the checkpoint,
/// history CSV and timing file.
pub fn train_on(cfg: &RunConfig, ds: &Dataset, out_dir: &Path, kind: ModelKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    let layout = Layout::new(cfg, out_dir);
    let arch = cfg.arch(kind);
    let shards = shards(cfg, ds)?;
    let start = Instant::now();
    let mut clients: Vec<ClientState> = shards
        .iter()
        .map(|s| ClientState::from_shard(ds, s, &arch, &cfg.fl))
        .collect();
    let result = run_federated(&mut clients, &arch, &cfg.fl);
    let train_time_s = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(layout.report_dir(kind))?;
    let (params, history) = match result {
        Ok(ok) => ok,
        Err(failure) => {
            failure.history.write_csv(&layout.history(kind))?;
            return Err(failure.error);
        }
    };
    history.write_csv(&layout.history(kind))?;
    std::fs::create_dir_all(&layout.checkpoints)?;
    let checkpoint = layout.checkpoint(kind);
    checkpoint::save(&params, &checkpoint)?;
    let timing = toml::to_string(&Timing { train_time_s }).expect("timing serializes");
    std::fs::write(layout.timing(kind), timing)?;
    Ok(TrainOutcome {
        params,
        history,
        train_time_s,
        checkpoint,
    })
}

pub fn train(cfg: &RunConfig, out_dir: &Path, kind: ModelKind) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg, out_dir)?;
    train_on(cfg, &ds, out_dir, kind)
}

fn read_timing(path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    toml::from_str::<Timing>(&text).ok().map(|t| t.train_time_s)
}

/// Evaluates one checkpoint and writes its report CSVs and summary.
pub fn evaluate_checkpoint(cfg: &RunConfig, ds: &Dataset, out_dir: &Path, path: &Path) -> Result<MetricsReport> {
    let layout = Layout::new(cfg, out_dir);
    let params = checkpoint::load(path)?;
    let param_bytes = checkpoint::param_bytes(path)?;
    let kind = params.arch.kind();
    let timing = read_timing(&path.with_extension("timing.toml"));
    let report = build_report(
        &params,
        ds,
        &shards(cfg, ds)?,
        cfg.eval.bin_width_deg,
        timing,
        param_bytes,
    )?;
    let dir = layout.report_dir(kind);
    report.write_csvs(&dir)?;
    report.write_summary(&dir.join("summary.toml"))?;
    Ok(report)
}

/// Report for a freshly initialized (untrained) model of `kind`.
pub fn evaluate_untrained(cfg: &RunConfig, ds: &Dataset, kind: ModelKind) -> Result<MetricsReport> {
    let params = checkpoint::quantize(&init(&cfg.arch(kind), crate::fl::init_seed(&cfg.fl)));
    let bytes = 4 * params.param_count() as u64;
    build_report(&params, ds, &shards(cfg, ds)?, cfg.eval.bin_width_deg, None, bytes)
}

/// Evaluates every given checkpoint; with one MLP and one GNN checkpoint a
/// side-by-side comparison is written as well.
pub fn evaluate(cfg: &RunConfig, out_dir: &Path, checkpoints: &[PathBuf]) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    if checkpoints.is_empty() {
        return Err(Error::validation("no checkpoints to evaluate"));
    }
    let ds = load_dataset(cfg, out_dir)?;
    let reports = checkpoints
        .iter()
        .map(|p| evaluate_checkpoint(cfg, &ds, out_dir, p))
        .collect::<Result<Vec<_>>>()?;
    let find = |k: ModelKind| reports.iter().find(|r| r.model == k);
    if let (Some(m), Some(g)) = (find(ModelKind::Mlp), find(ModelKind::Gnn)) {
        write_comparison(m, g, &Layout::new(cfg, out_dir).comparison())?;
    }
    Ok(reports)
}

/// Checkpoints present in the run's checkpoint directory, MLP first.
pub fn existing_checkpoints(cfg: &RunConfig, out_dir: &Path) -> Vec<PathBuf> {
    let layout = Layout::new(cfg, out_dir);
    [ModelKind::Mlp, ModelKind::Gnn]
        .into_iter()
        .map(|k| layout.checkpoint(k))
        .filter(|p| p.exists())
        .collect()
}
