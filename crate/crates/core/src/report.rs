//! Run metrics and their CSV/JSON encodings.
//!
//! Both formats are produced from one ordered list of named cells, so a CSV
//! row and the matching JSON object always carry the same values. Column
//! meanings are listed in `COLUMNS`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::RadioState;
use crate::scenario::Scenario;
use crate::traffic::PriorityClass;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Simulation,
    Analytic,
}

impl ReportSource {
    pub fn key(self) -> &'static str {
        match self {
            ReportSource::Simulation => "simulation",
            ReportSource::Analytic => "analytic",
        }
    }
}

/// Mean and nearest-rank percentiles of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: u64,
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub p99: Option<f64>,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

impl Summary {
    pub fn of(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let n = values.len();
        Self {
            count: n as u64,
            mean: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
            p50: percentile(&values, 0.50),
            p95: percentile(&values, 0.95),
            p99: percentile(&values, 0.99),
        }
    }
}

/// Contention-path statistics, present for COBALT-mode runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CobaltStats {
    pub payloads: u64,
    pub delivered: u64,
    pub delivered_cobalt: u64,
    pub delivered_legacy: u64,
    /// Payloads given up on (legacy path failed or fallback disabled).
    pub dropped: u64,
    pub in_flight: u64,
    pub cobalt_transmissions: u64,
    pub cobalt_collisions: u64,
    pub exhausted: u64,
    pub signaling_messages: u64,
    pub energy_mj: f64,
    pub latency: Summary,
}

impl CobaltStats {
    pub fn signaling_per_delivered(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.signaling_messages as f64 / self.delivered as f64)
    }

    pub fn energy_per_delivered_mj(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.energy_mj / self.delivered as f64)
    }
}

/// Slotted-contention statistics from analytic-compare runs (or the model itself).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub slots: u64,
    pub rounds: u64,
    pub slot_success_probability: f64,
    pub slot_success_std_error: f64,
    pub mean_delay_slots: f64,
    pub mean_drain_slots: f64,
    pub drain_std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceOutcome {
    NotActivated,
    Succeeded,
    Failed,
    Censored,
}

impl DeviceOutcome {
    pub fn key(self) -> &'static str {
        match self {
            DeviceOutcome::NotActivated => "not_activated",
            DeviceOutcome::Succeeded => "succeeded",
            DeviceOutcome::Failed => "failed",
            DeviceOutcome::Censored => "censored",
        }
    }
}

/// Per-device line of a traced run; describes the device's last access.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device: u32,
    pub class: PriorityClass,
    pub accesses: u64,
    pub activation_ms: Option<u64>,
    pub outcome: DeviceOutcome,
    pub completion_ms: Option<u64>,
    pub preambles_sent: u32,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub succeeded: u64,
    pub failed: u64,
}

impl ClassCounts {
    pub fn success_probability(&self) -> Option<f64> {
        let done = self.succeeded + self.failed;
        (done > 0).then(|| self.succeeded as f64 / done as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: ReportSource,
    pub scenario: Scenario,
    /// Parameters that fell back to defaults, marked in the header echo.
    pub defaulted: Vec<String>,
    pub end_sf: u64,
    pub devices: u32,
    /// Access procedures started; each ends succeeded, failed or censored.
    pub accesses: u64,
    pub succeeded: u64,
    pub failed: u64,
    /// Still in progress at the horizon; not counted as failures.
    pub censored: u64,
    pub not_activated: u64,
    /// Data arrivals absorbed by an access already in progress.
    pub merged_arrivals: u64,
    pub barring_events: u64,
    pub high: ClassCounts,
    pub low: ClassCounts,
    pub opportunities: u64,
    pub used_preamble_slots: u64,
    pub collided_preamble_slots: u64,
    /// Access delay in ms, successful accesses only.
    pub delay: Summary,
    /// `preamble_histogram[k]` = completed accesses that sent `k + 1` preambles.
    pub preamble_histogram: Vec<u64>,
    pub msg1_total: u64,
    /// Energy per device in mJ.
    pub energy: Summary,
    pub energy_per_state_mj: [f64; 4],
    pub cobalt: Option<CobaltStats>,
    pub analytic: Option<SlotStats>,
    /// `(time_ms, accesses in progress)` at each measurement tick.
    pub backlog_series: Vec<(u64, u64)>,
    pub trace: Option<Vec<DeviceRecord>>,
}

impl MetricsReport {
    pub fn empty(source: ReportSource, scenario: Scenario, defaulted: Vec<String>, end_sf: u64) -> Self {
        Self {
            source,
            scenario,
            defaulted,
            end_sf,
            devices: 0,
            accesses: 0,
            succeeded: 0,
            failed: 0,
            censored: 0,
            not_activated: 0,
            merged_arrivals: 0,
            barring_events: 0,
            high: ClassCounts::default(),
            low: ClassCounts::default(),
            opportunities: 0,
            used_preamble_slots: 0,
            collided_preamble_slots: 0,
            delay: Summary::default(),
            preamble_histogram: Vec::new(),
            msg1_total: 0,
            energy: Summary::default(),
            energy_per_state_mj: [0.0; 4],
            cobalt: None,
            analytic: None,
            backlog_series: Vec::new(),
            trace: None,
        }
    }

    pub fn success_probability(&self) -> Option<f64> {
        ClassCounts {
            succeeded: self.succeeded,
            failed: self.failed,
        }
        .success_probability()
    }

    pub fn class_success_probability(&self, class: PriorityClass) -> Option<f64> {
        match class {
            PriorityClass::HighPriority => self.high.success_probability(),
            PriorityClass::LowPriority => self.low.success_probability(),
        }
    }

    /// Collided (opportunity, preamble) pairs over used pairs.
    pub fn collision_probability(&self) -> Option<f64> {
        (self.used_preamble_slots > 0).then(|| self.collided_preamble_slots as f64 / self.used_preamble_slots as f64)
    }

    pub fn energy_state_mj(&self, state: RadioState) -> f64 {
        self.energy_per_state_mj[state as usize]
    }

    pub fn energy_total_mj(&self) -> f64 {
        self.energy_per_state_mj.iter().sum()
    }

    pub fn preamble_tx_mean(&self) -> Option<f64> {
        let n: u64 = self.preamble_histogram.iter().sum();
        let weighted: u64 = self
            .preamble_histogram
            .iter()
            .enumerate()
            .map(|(k, &c)| (k as u64 + 1) * c)
            .sum();
        (n > 0).then(|| weighted as f64 / n as f64)
    }

    /// A run with nothing to report produces a header-only CSV.
    pub fn is_empty(&self) -> bool {
        self.devices == 0 && self.analytic.is_none()
    }

    pub fn header_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("# source = \"{}\"", self.source.key())];
        lines.extend(self.scenario.echo_lines(&self.defaulted).into_iter().map(|l| format!("# {l}")));
        lines
    }

    pub fn cells(&self) -> Vec<(&'static str, Cell)> {
        use Cell::*;
        let opt = |v: Option<f64>| v.map_or(Empty, Float);
        let c = self.cobalt.as_ref();
        let a = self.analytic.as_ref();
        let cells = vec![
            ("scenario", Text(self.scenario.name.clone())),
            ("source", Text(self.source.key().into())),
            ("mode", Text(self.scenario.mode.key().into())),
            ("seed", Int(self.scenario.seed)),
            ("end_sf", Int(self.end_sf)),
            ("devices", Int(u64::from(self.devices))),
            ("accesses", Int(self.accesses)),
            ("succeeded", Int(self.succeeded)),
            ("failed", Int(self.failed)),
            ("censored", Int(self.censored)),
            ("not_activated", Int(self.not_activated)),
            ("merged_arrivals", Int(self.merged_arrivals)),
            ("barring_events", Int(self.barring_events)),
            ("success_probability", opt(self.success_probability())),
            ("success_probability_high", opt(self.high.success_probability())),
            ("success_probability_low", opt(self.low.success_probability())),
            ("opportunities", Int(self.opportunities)),
            ("used_preamble_slots", Int(self.used_preamble_slots)),
            ("collided_preamble_slots", Int(self.collided_preamble_slots)),
            ("collision_probability", opt(self.collision_probability())),
            ("delay_mean_ms", opt(self.delay.mean)),
            ("delay_p50_ms", opt(self.delay.p50)),
            ("delay_p95_ms", opt(self.delay.p95)),
            ("delay_p99_ms", opt(self.delay.p99)),
            ("msg1_total", Int(self.msg1_total)),
            ("preamble_tx_mean", opt(self.preamble_tx_mean())),
            (
                "preamble_tx_histogram",
                Text(
                    self.preamble_histogram
                        .iter()
                        .map(u64::to_string)
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
            ),
            ("energy_mean_mj", opt(self.energy.mean)),
            ("energy_p95_mj", opt(self.energy.p95)),
            ("energy_inactive_mj", Float(self.energy_state_mj(RadioState::Inactive))),
            ("energy_idle_mj", Float(self.energy_state_mj(RadioState::Idle))),
            ("energy_rx_mj", Float(self.energy_state_mj(RadioState::Rx))),
            ("energy_tx_mj", Float(self.energy_state_mj(RadioState::Tx))),
            ("energy_total_mj", Float(self.energy_total_mj())),
            ("payloads", c.map_or(Empty, |c| Int(c.payloads))),
            ("delivered", c.map_or(Empty, |c| Int(c.delivered))),
            ("delivered_cobalt", c.map_or(Empty, |c| Int(c.delivered_cobalt))),
            ("delivered_legacy", c.map_or(Empty, |c| Int(c.delivered_legacy))),
            ("dropped", c.map_or(Empty, |c| Int(c.dropped))),
            ("cobalt_transmissions", c.map_or(Empty, |c| Int(c.cobalt_transmissions))),
            ("cobalt_collisions", c.map_or(Empty, |c| Int(c.cobalt_collisions))),
            ("cobalt_exhausted", c.map_or(Empty, |c| Int(c.exhausted))),
            ("signaling_per_delivered", opt(c.and_then(CobaltStats::signaling_per_delivered))),
            ("energy_per_delivered_mj", opt(c.and_then(CobaltStats::energy_per_delivered_mj))),
            ("delivery_latency_mean_ms", opt(c.and_then(|c| c.latency.mean))),
            ("delivery_latency_p95_ms", opt(c.and_then(|c| c.latency.p95))),
            ("slots", a.map_or(Empty, |a| Int(a.slots))),
            ("rounds", a.map_or(Empty, |a| Int(a.rounds))),
            ("slot_success_probability", a.map_or(Empty, |a| Float(a.slot_success_probability))),
            ("slot_success_std_error", a.map_or(Empty, |a| Float(a.slot_success_std_error))),
            ("mean_delay_slots", a.map_or(Empty, |a| Float(a.mean_delay_slots))),
            ("mean_drain_slots", a.map_or(Empty, |a| Float(a.mean_drain_slots))),
            ("drain_std_error", a.map_or(Empty, |a| Float(a.drain_std_error))),
        ];
        debug_assert_eq!(cells.len(), COLUMNS.len());
        cells
    }
}

/// Column names and meanings, in output order.
pub const COLUMNS: &[(&str, &str)] = &[
    ("scenario", "scenario name"),
    ("source", "simulation or analytic"),
    ("mode", "network_entry, connected_mode, cobalt or analytic_compare"),
    ("seed", "master seed"),
    ("end_sf", "horizon in subframes"),
    ("devices", "population size"),
    ("accesses", "access procedures started"),
    ("succeeded", "accesses completed with Msg4"),
    ("failed", "accesses that exhausted max_preamble_tx"),
    ("censored", "accesses still in progress at the horizon"),
    ("not_activated", "devices that never started an access"),
    ("merged_arrivals", "data arrivals absorbed by an access in progress"),
    ("barring_events", "access barring rejections"),
    ("success_probability", "succeeded / (succeeded + failed)"),
    ("success_probability_high", "same, high-priority class"),
    ("success_probability_low", "same, low-priority class"),
    ("opportunities", "RACH opportunities with at least one candidate"),
    ("used_preamble_slots", "(opportunity, preamble) pairs with >= 1 preamble"),
    ("collided_preamble_slots", "(opportunity, preamble) pairs with >= 2 preambles"),
    ("collision_probability", "collided / used pairs"),
    ("delay_mean_ms", "access delay of successful accesses"),
    ("delay_p50_ms", "nearest-rank median access delay"),
    ("delay_p95_ms", "nearest-rank 95th percentile access delay"),
    ("delay_p99_ms", "nearest-rank 99th percentile access delay"),
    ("msg1_total", "preambles transmitted"),
    ("preamble_tx_mean", "mean preambles per completed access"),
    ("preamble_tx_histogram", "completed accesses by preambles sent, 1;2;..."),
    ("energy_mean_mj", "mean energy per device"),
    ("energy_p95_mj", "95th percentile energy per device"),
    ("energy_inactive_mj", "population energy in the inactive state"),
    ("energy_idle_mj", "population energy in the idle state"),
    ("energy_rx_mj", "population energy in the receive state"),
    ("energy_tx_mj", "population energy in the transmit state"),
    ("energy_total_mj", "sum of the four state totals"),
    ("payloads", "small-data payloads generated"),
    ("delivered", "payloads delivered"),
    ("delivered_cobalt", "payloads delivered on the contention region"),
    ("delivered_legacy", "payloads delivered after a random access"),
    ("dropped", "payloads given up"),
    ("cobalt_transmissions", "contention-region transmissions"),
    ("cobalt_collisions", "contention-region transmissions lost to collision"),
    ("cobalt_exhausted", "payloads that ran out of contention retries"),
    ("signaling_per_delivered", "signaling messages per delivered payload"),
    ("energy_per_delivered_mj", "device energy per delivered payload"),
    ("delivery_latency_mean_ms", "arrival to delivery"),
    ("delivery_latency_p95_ms", "nearest-rank 95th percentile delivery latency"),
    ("slots", "contention slots simulated"),
    ("rounds", "completed drains"),
    ("slot_success_probability", "per-device success probability per slot"),
    ("slot_success_std_error", "standard error of the above"),
    ("mean_delay_slots", "mean slots from drain start to a device's success"),
    ("mean_drain_slots", "mean slots to drain the population"),
    ("drain_std_error", "standard error of the mean drain time"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

/// Writes comment lines, the column row, then `rows` as CSV.
pub fn write_csv(header: &[String], columns: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = Vec::new();
    for line in header {
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(columns).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn render_csv(report: &MetricsReport) -> Vec<u8> {
    let cells = report.cells();
    let columns: Vec<&str> = cells.iter().map(|(k, _)| *k).collect();
    let rows = if report.is_empty() {
        Vec::new()
    } else {
        vec![cells.iter().map(|(_, v)| v.render()).collect()]
    };
    write_csv(&report.header_lines(), &columns, &rows)
}

fn params_json(report: &MetricsReport) -> serde_json::Value {
    let mut params = serde_json::Map::new();
    for (k, v) in report.scenario.to_params() {
        let value = serde_json::to_value(&v).unwrap_or(serde_json::Value::Null);
        params.insert(k, value);
    }
    serde_json::Value::Object(params)
}

pub fn render_json(report: &MetricsReport) -> Vec<u8> {
    let mut metrics = serde_json::Map::new();
    for (k, v) in report.cells() {
        metrics.insert(k.to_string(), v.to_json());
    }
    let mut doc = serde_json::Map::new();
    doc.insert("parameters".into(), params_json(report));
    doc.insert("defaulted".into(), report.defaulted.clone().into());
    doc.insert(
        "metrics".into(),
        if report.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::Value::Object(metrics)
        },
    );
    if !report.backlog_series.is_empty() {
        doc.insert("backlog_series".into(), serde_json::to_value(&report.backlog_series).unwrap_or_default());
    }
    if let Some(trace) = &report.trace {
        doc.insert("trace".into(), serde_json::to_value(trace).unwrap_or_default());
    }
    let mut out = serde_json::to_vec_pretty(&serde_json::Value::Object(doc)).expect("json encoding");
    out.push(b'\n');
    out
}

pub fn render_series_csv(report: &MetricsReport) -> Vec<u8> {
    let rows: Vec<Vec<String>> = report
        .backlog_series
        .iter()
        .map(|(t, n)| vec![t.to_string(), n.to_string()])
        .collect();
    write_csv(&[], &["time_ms", "backlog"], &rows)
}

pub fn render_trace_csv(records: &[DeviceRecord]) -> Vec<u8> {
    let opt = |v: Option<u64>| v.map_or(String::new(), |x| x.to_string());
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.device.to_string(),
                r.class.key().to_string(),
                r.accesses.to_string(),
                opt(r.activation_ms),
                r.outcome.key().to_string(),
                opt(r.completion_ms),
                r.preambles_sent.to_string(),
                r.energy_mj.to_string(),
            ]
        })
        .collect();
    write_csv(
        &[],
        &[
            "device",
            "class",
            "accesses",
            "activation_ms",
            "outcome",
            "completion_ms",
            "preambles_sent",
            "energy_mj",
        ],
        &rows,
    )
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Writes the report. CSV output puts the backlog series and per-device trace,
/// when present, in `<stem>.series.csv` and `<stem>.trace.csv` next to `path`.
pub fn emit_report(report: &MetricsReport, format: Format, path: &Path) -> Result<(), ReportError> {
    let write = |p: &Path, bytes: &[u8]| -> Result<(), ReportError> {
        let mut f = fs::File::create(p).map_err(|e| io_err(p, e))?;
        f.write_all(bytes).map_err(|e| io_err(p, e))
    };
    match format {
        Format::Json => write(path, &render_json(report)),
        Format::Csv => {
            write(path, &render_csv(report))?;
            if !report.backlog_series.is_empty() {
                write(&sibling(path, ".series.csv"), &render_series_csv(report))?;
            }
            if let Some(trace) = &report.trace {
                write(&sibling(path, ".trace.csv"), &render_trace_csv(trace))?;
            }
            Ok(())
        }
    }
}
