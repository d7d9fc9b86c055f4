//! Parameter sweeps. Each point is an ordinary training run with a few
//! overrides; finished points are appended to `sweep.csv` so an interrupted
//! sweep picks up where it stopped.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, RunLayout};
use super::plot::{line_chart, Series};
use super::{PipelineError, StageExt};
use crate::eval::Summary;
use crate::text::pairs::par_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    FeedbackIters,
    PretrainEpochs,
    /// Ratio of the prediction weight to the distance weight, with the
    /// distance weight held at its configured value.
    BetaAlpha,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FeedbackIters => "feedback-iters",
            Self::PretrainEpochs => "pretrain-epochs",
            Self::BetaAlpha => "beta-alpha",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::FeedbackIters => vec![1.0, 2.0, 3.0, 4.0, 5.0],
            Self::PretrainEpochs => vec![10.0, 50.0, 100.0, 200.0],
            Self::BetaAlpha => vec![0.2, 0.5, 1.0, 2.0, 5.0],
        }
    }

    /// Overrides for one point of the axis.
    pub fn overrides(self, cfg: &RunConfig, value: f64) -> Vec<String> {
        match self {
            Self::FeedbackIters => vec![format!("feedback.iterations={}", value as usize)],
            Self::PretrainEpochs => vec![format!("pretrain.epochs={}", value as usize)],
            Self::BetaAlpha => vec![format!("ca.beta={:?}", value * cfg.ca.model.alpha)],
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "feedback-iters" | "iterations" => Ok(Self::FeedbackIters),
            "pretrain-epochs" => Ok(Self::PretrainEpochs),
            "beta-alpha" | "ratio" => Ok(Self::BetaAlpha),
            _ => Err(PipelineError::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub run_dir: PathBuf,
    pub validity: f64,
    pub validity_std: f64,
    pub validity_feas: f64,
    pub validity_feas_std: f64,
    pub proximity: Option<f64>,
    pub proximity_feas: Option<f64>,
}

impl SweepRow {
    pub fn new(axis: SweepAxis, value: f64, run_dir: PathBuf, s: &Summary) -> Self {
        Self {
            axis,
            value,
            run_dir,
            validity: s.validity_nofeas.mean,
            validity_std: s.validity_nofeas.std,
            validity_feas: s.validity_feas.mean,
            validity_feas_std: s.validity_feas.std,
            proximity: s.proximity_nofeas.map(|m| m.mean),
            proximity_feas: s.proximity_feas.map(|m| m.mean),
        }
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).stage("sweep")?;
    r.deserialize().collect::<Result<Vec<SweepRow>, _>>().stage("sweep")
}

fn append_row(path: &Path, row: &SweepRow) -> Result<(), PipelineError> {
    let fresh = !path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row).stage("sweep")?;
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// Runs every missing point of `axis` with up to `workers` runs at once.
/// `runner` receives the overrides of a point and returns its run directory.
/// Rows land in `<dir>/sweep.csv` as points finish, sorted by value on
/// return.
pub fn run_sweep(
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[f64],
    dir: &Path,
    workers: usize,
    runner: impl Fn(&[String]) -> Result<PathBuf, PipelineError> + Sync,
) -> Result<Vec<SweepRow>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let csv_path = dir.join("sweep.csv");
    let done = read_rows(&csv_path)?;
    let todo: Vec<f64> = values.iter().copied().filter(|v| !done.iter().any(|r| r.axis == axis && r.value == *v)).collect();
    if todo.len() < values.len() {
        tracing::info!(skipped = values.len() - todo.len(), "resuming sweep");
    }
    let lock = Mutex::new(());
    let results = par_map(&todo, workers.max(1), |&v| -> Result<(), PipelineError> {
        let run_dir = runner(&axis.overrides(cfg, v))?;
        let summary: Summary = {
            let p = RunLayout { dir: run_dir.clone() }.summary_json();
            let body = std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
            serde_json::from_str(&body).stage("sweep")?
        };
        let _g = lock.lock().expect("sweep lock");
        append_row(&csv_path, &SweepRow::new(axis, v, run_dir, &summary))
    });
    results.into_iter().collect::<Result<Vec<()>, _>>()?;
    let mut rows: Vec<SweepRow> = read_rows(&csv_path)?.into_iter().filter(|r| r.axis == axis).collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    plot_rows(&dir.join("sweep.svg"), axis, &rows)?;
    Ok(rows)
}

pub fn plot_rows(path: &Path, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), PipelineError> {
    let pts = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.value, f(r))).collect();
    let series = vec![
        Series { name: "validity".into(), points: pts(|r| r.validity) },
        Series { name: "validity (feasible)".into(), points: pts(|r| r.validity_feas) },
    ];
    line_chart(path, &format!("sweep over {axis}"), axis.as_str(), "validity (%)", &series)
}
