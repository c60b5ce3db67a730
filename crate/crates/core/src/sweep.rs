//! Parameter sweeps: the cross product of axis values, replicated over seeds.
//!
//! ```text
//! base = "beta_overload_30k.toml"   # relative to the sweep file
//! seeds = 5                     # base seed, base seed + 1, ...
//! cap = 1000
//!
//! [[axis]]
//! key = "prach.backoff_indicator_ms"
//! values = [0, 20, 40, 80, 160, 320, 480, 960]
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;
use toml::Value;

use crate::kernel::SimTime;
use crate::report::{write_csv, MetricsReport, ReportSource};
use crate::scenario::{load_scenario, ConfigError, LoadedScenario, Scenario};
use crate::sim::{SimError, Simulation};

pub const DEFAULT_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep has {runs} runs, above the cap of {cap}")]
    CapExceeded { runs: usize, cap: usize },
    #[error("run {point}/seed {seed}: {source}")]
    Run {
        point: usize,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub defaulted: Vec<String>,
    pub axes: Vec<Axis>,
    pub seeds: u32,
    pub cap: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: String,
    #[serde(default = "one")]
    seeds: u32,
    #[serde(default = "default_cap")]
    cap: usize,
    #[serde(default)]
    axis: Vec<Axis>,
}

fn one() -> u32 {
    1
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec, SweepError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let file: SweepFile = toml::from_str(&text).map_err(|e| {
        let offset = e.span().map_or(0, |s| s.start);
        let line = text[..offset.min(text.len())].matches('\n').count() + 1;
        ConfigError::ParseError {
            line,
            column: 1,
            message: e.message().trim().to_string(),
        }
    })?;
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&file.base);
    let LoadedScenario { scenario, defaulted } = load_scenario(&base_path)?;
    if file.seeds == 0 {
        return Err(ConfigError::ValidationError {
            key: "seeds".into(),
            constraint: "must be >= 1".into(),
        }
        .into());
    }
    Ok(SweepSpec {
        base: scenario,
        defaulted,
        axes: file.axis,
        seeds: file.seeds,
        cap: file.cap,
    })
}

/// One grid point: the axis values applied, in axis order.
pub type Point = Vec<(String, Value)>;

impl SweepSpec {
    pub fn points(&self) -> Vec<Point> {
        let mut points: Vec<Point> = vec![Vec::new()];
        for axis in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((axis.key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn run_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product::<usize>() * self.seeds as usize
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..u64::from(self.seeds)).map(|r| self.base.seed.wrapping_add(r)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: usize,
    pub values: Point,
    pub seed: u64,
    pub report: MetricsReport,
}

/// Runs every (point, seed) pair, up to `jobs` at a time. Rows come back
/// grid-major, seed-minor, whatever order the runs finish in.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>, SweepError> {
    let runs = spec.run_count();
    if runs > spec.cap {
        return Err(SweepError::CapExceeded { runs, cap: spec.cap });
    }
    let mut work = Vec::with_capacity(runs);
    for (i, point) in spec.points().into_iter().enumerate() {
        let mut sc = spec.base.clone();
        for (k, v) in &point {
            sc = sc.with_override(k, v.clone())?;
        }
        for seed in spec.seed_list() {
            let mut s = sc.clone();
            s.seed = seed;
            work.push((i, point.clone(), s));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let defaulted = &spec.defaulted;
    pool.install(|| {
        work.into_par_iter()
            .map(|(point, values, sc)| {
                let seed = sc.seed;
                let end = SimTime(sc.duration_sf);
                let report = Simulation::with_defaults(sc, defaulted.clone())
                    .and_then(|mut sim| sim.run_until(end))
                    .map_err(|source| SweepError::Run { point, seed, source })?;
                Ok(SweepRow {
                    point,
                    values,
                    seed,
                    report,
                })
            })
            .collect()
    })
}

/// One CSV for the whole sweep: the base scenario echo, then one row per run.
pub fn render_sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> Vec<u8> {
    let mut header = vec![format!("# sweep runs = {}", spec.run_count())];
    for axis in &spec.axes {
        let vals: Vec<String> = axis.values.iter().map(Value::to_string).collect();
        header.push(format!("# axis {} = [{}]", axis.key, vals.join(", ")));
    }
    header.extend(spec.base.echo_lines(&spec.defaulted).into_iter().map(|l| format!("# {l}")));
    let sample = MetricsReport::empty(ReportSource::Simulation, spec.base.clone(), Vec::new(), 0);
    let mut columns: Vec<String> = vec!["point".into()];
    columns.extend(spec.axes.iter().map(|a| a.key.clone()));
    columns.extend(sample.cells().iter().map(|(k, _)| k.to_string()));
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.point.to_string()];
            row.extend(r.values.iter().map(|(_, v)| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
            row.extend(r.report.cells().iter().map(|(_, c)| c.render()));
            row
        })
        .collect();
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    write_csv(&header, &cols, &rows)
}
