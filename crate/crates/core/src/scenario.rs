//! Scenario files: dotted `key = value` lines (TOML syntax), validated into a
//! [`Scenario`] with every default made explicit.
//!
//! ```text
//! name = "beta30k"
//! seed = 7
//! population.low.n = 30000
//! population.low.law = "beta"
//! population.low.span_ms = 10000
//! prach.backoff_indicator_ms = 20
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::cobalt::{CobaltConfig, DeliveryPath};
use crate::energy::{DrxConfig, PowerModel};
use crate::rach::{CollisionModel, DetectionModel, EabConfig, PrachConfig, RetxControl};
use crate::traffic::{PriorityClass, TrafficLaw, TrafficModel, DEFAULT_BETA_ALPHA, DEFAULT_BETA_BETA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("invalid `{key}`: {constraint}")]
    ValidationError { key: String, constraint: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(key: impl Into<String>, constraint: impl Into<String>) -> ConfigError {
    ConfigError::ValidationError {
        key: key.into(),
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NetworkEntry,
    ConnectedMode,
    Cobalt,
    AnalyticCompare,
}

impl Mode {
    pub fn key(self) -> &'static str {
        match self {
            Mode::NetworkEntry => "network_entry",
            Mode::ConnectedMode => "connected_mode",
            Mode::Cobalt => "cobalt",
            Mode::AnalyticCompare => "analytic_compare",
        }
    }

    fn from_key(s: &str) -> Option<Self> {
        [Mode::NetworkEntry, Mode::ConnectedMode, Mode::Cobalt, Mode::AnalyticCompare]
            .into_iter()
            .find(|m| m.key() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub class: PriorityClass,
    pub model: TrafficModel,
}

/// Slotted-contention run settings used by the analytic-compare mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSimConfig {
    /// Successful devices immediately rejoin the backlog (fixed `U`).
    pub saturated: bool,
    /// Number of independent drains to run back to back (drain mode).
    pub rounds: u32,
}

impl Default for AnalyticSimConfig {
    fn default() -> Self {
        Self {
            saturated: true,
            rounds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_sf: u64,
    pub mode: Mode,
    pub trace: bool,
    pub measurement_interval_ms: u64,
    pub populations: Vec<Population>,
    pub prach: PrachConfig,
    pub eab: EabConfig,
    pub power: PowerModel,
    pub drx: DrxConfig,
    pub cobalt: Option<CobaltConfig>,
    pub analytic: AnalyticSimConfig,
}

pub const DEFAULT_SEED: u64 = 1;
/// Environment variable consulted for the seed when neither the file nor the CLI sets one.
pub const SEED_ENV: &str = "RACHSIM_SEED";

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: DEFAULT_SEED,
            duration_sf: 70_000,
            mode: Mode::NetworkEntry,
            trace: false,
            measurement_interval_ms: 0,
            populations: Vec::new(),
            prach: PrachConfig::default(),
            eab: EabConfig::default(),
            power: PowerModel::default(),
            drx: DrxConfig::default(),
            cobalt: None,
            analytic: AnalyticSimConfig::default(),
        }
    }
}

impl Scenario {
    pub fn device_count(&self) -> u64 {
        self.populations.iter().map(|p| u64::from(p.model.population)).sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.prach.validate().map_err(|e| invalid(field_of(&e), e))?;
        self.eab.validate().map_err(|e| invalid(field_of(&e), e))?;
        self.power.validate().map_err(|e| invalid(field_of(&e), e))?;
        self.drx.validate().map_err(|e| invalid("drx", e.to_string()))?;
        if let Some(c) = &self.cobalt {
            c.validate(&self.prach).map_err(|e| invalid("cobalt", e.to_string()))?;
        }
        if self.mode == Mode::Cobalt && self.cobalt.is_none() {
            return Err(invalid("cobalt", "cobalt mode needs a cobalt configuration"));
        }
        if self.duration_sf == 0 {
            return Err(invalid("duration_sf", "must be >= 1"));
        }
        for pop in &self.populations {
            let key = format!("population.{}", pop.class.key());
            pop.model.law.validate().map_err(|e| invalid(&key, e.to_string()))?;
            if let Some(span) = pop.model.law.span_ms() {
                if self.duration_sf < span {
                    return Err(invalid(
                        "duration_sf",
                        format!("{} does not cover the {span} ms activation span of {key}", self.duration_sf),
                    ));
                }
            }
        }
        if self.analytic.rounds == 0 {
            return Err(invalid("analytic.rounds", "must be >= 1"));
        }
        if self.mode == Mode::AnalyticCompare {
            let p = &self.prach;
            if p.collision_model != CollisionModel::DestroyedAtMsg1 || p.detection_model != DetectionModel::AlwaysDetected {
                return Err(invalid(
                    "prach.collision_model",
                    "analytic_compare needs destroyed_at_msg1 collisions and always_detected detection",
                ));
            }
            if !p.persistent_mode() {
                return Err(invalid(
                    "prach.msg1_retx_probability",
                    "analytic_compare needs persistent-probability mode",
                ));
            }
        }
        Ok(())
    }
}

fn field_of(msg: &str) -> String {
    msg.split_whitespace().next().unwrap_or("scenario").to_string()
}

/// Flattened dotted-key view of a scenario file.
pub type ParamMap = BTreeMap<String, Value>;

fn flatten(prefix: &str, table: &toml::Table, out: &mut ParamMap) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

pub fn parse_params(text: &str) -> Result<ParamMap, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::ParseError {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    let mut out = ParamMap::new();
    flatten("", &table, &mut out);
    Ok(out)
}

/// Parses a single override value such as `20`, `0.5`, `true` or `"beta"`.
pub fn parse_value(text: &str) -> Result<Value, ConfigError> {
    let table: toml::Table = toml::from_str(&format!("v = {text}"))
        .or_else(|_| toml::from_str(&format!("v = \"{text}\"")))
        .map_err(|e| ConfigError::ParseError {
            line: 1,
            column: 1,
            message: e.message().trim().to_string(),
        })?;
    Ok(table["v"].clone())
}

/// Pops typed values off a [`ParamMap`], remembering which defaults were used.
struct Reader {
    params: ParamMap,
    defaulted: Vec<String>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<Value> {
        self.params.remove(key)
    }

    fn or_default<T>(&mut self, key: &str, default: T, parse: impl Fn(&Value) -> Option<T>, expect: &str) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => {
                self.defaulted.push(key.to_string());
                Ok(default)
            }
            Some(v) => parse(&v).ok_or_else(|| invalid(key, format!("expected {expect}, got {v}"))),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.or_default(key, default, |v| v.as_integer().and_then(|i| u64::try_from(i).ok()), "a non-negative integer")
    }

    fn u32(&mut self, key: &str, default: u32) -> Result<u32, ConfigError> {
        self.or_default(key, default, |v| v.as_integer().and_then(|i| u32::try_from(i).ok()), "a non-negative integer")
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.or_default(
            key,
            default,
            |v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)),
            "a number",
        )
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.or_default(key, default, |v| v.as_bool(), "true or false")
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        self.or_default(key, default.to_string(), |v| v.as_str().map(str::to_string), "a string")
    }

    fn choice<T>(&mut self, key: &str, default: T, table: &[(&str, T)]) -> Result<T, ConfigError>
    where
        T: Copy,
    {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        match self.raw(key) {
            None => {
                self.defaulted.push(key.to_string());
                Ok(default)
            }
            Some(v) => v
                .as_str()
                .and_then(|s| table.iter().find(|(n, _)| *n == s).map(|&(_, t)| t))
                .ok_or_else(|| invalid(key, format!("expected one of {names:?}, got {v}"))),
        }
    }
}

const DETECTION: &[(&str, DetectionModel)] = &[
    ("ramping_exponential", DetectionModel::RampingExponential),
    ("always_detected", DetectionModel::AlwaysDetected),
];
const COLLISION: &[(&str, CollisionModel)] = &[
    ("collide_at_msg3", CollisionModel::CollideAtMsg3),
    ("destroyed_at_msg1", CollisionModel::DestroyedAtMsg1),
];
const RETX: &[(&str, RetxControl)] = &[
    ("fixed", RetxControl::Fixed),
    ("enb_broadcast", RetxControl::EnbBroadcast),
    ("device_estimate", RetxControl::DeviceEstimate),
];
const PATHS: &[(&str, DeliveryPath)] = &[("cobalt", DeliveryPath::Cobalt), ("legacy", DeliveryPath::LegacyRach)];
const LAWS: &[(&str, &str)] = &[
    ("uniform", "uniform"),
    ("beta", "beta"),
    ("poisson", "poisson"),
    ("periodic", "periodic"),
];

fn key_of<T: PartialEq + Copy>(table: &[(&'static str, T)], v: T) -> &'static str {
    table.iter().find(|(_, t)| *t == v).map(|(n, _)| *n).unwrap_or("?")
}

/// A validated scenario plus the keys that fell back to defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub defaulted: Vec<String>,
}

pub fn scenario_from_params(params: ParamMap) -> Result<LoadedScenario, ConfigError> {
    let mut r = Reader {
        params,
        defaulted: Vec::new(),
    };
    let d = Scenario::default();
    let name = r.string("name", &d.name)?;
    let seed = match r.raw("seed") {
        Some(v) => v
            .as_integer()
            .and_then(|i| u64::try_from(i).ok())
            .ok_or_else(|| invalid("seed", "expected a non-negative integer"))?,
        None => {
            r.defaulted.push("seed".into());
            env_seed()?.unwrap_or(DEFAULT_SEED)
        }
    };
    let mode = match r.raw("mode") {
        None => {
            r.defaulted.push("mode".into());
            Mode::NetworkEntry
        }
        Some(v) => v
            .as_str()
            .and_then(Mode::from_key)
            .ok_or_else(|| invalid("mode", format!("unknown mode {v}")))?,
    };
    let trace = r.bool("trace", false)?;
    let measurement_interval_ms = r.u64("metrics.measurement_interval_ms", 0)?;

    let mut populations = Vec::new();
    for class in PriorityClass::ALL {
        let base = format!("population.{}", class.key());
        let present = r.params.keys().any(|k| k.starts_with(&format!("{base}.")));
        if !present {
            continue;
        }
        let n = r.u32(&format!("{base}.n"), 0)?;
        let law_name = r.choice(&format!("{base}.law"), "beta", LAWS)?;
        let k = |s: &str| format!("{base}.{s}");
        let law = match law_name {
            "uniform" => TrafficLaw::Uniform {
                span_ms: r.u64(&k("span_ms"), 60_000)?,
            },
            "beta" => TrafficLaw::Beta {
                alpha: r.f64(&k("alpha"), DEFAULT_BETA_ALPHA)?,
                beta: r.f64(&k("beta"), DEFAULT_BETA_BETA)?,
                span_ms: r.u64(&k("span_ms"), 10_000)?,
            },
            "poisson" => TrafficLaw::Poisson {
                rate_per_s: r.f64(&k("rate_per_s"), 1.0 / 3600.0)?,
            },
            _ => TrafficLaw::Periodic {
                period_ms: r.u64(&k("period_ms"), 3_600_000)?,
                jitter_ms: r.u64(&k("jitter_ms"), 0)?,
            },
        };
        law.validate().map_err(|e| invalid(&base, e.to_string()))?;
        populations.push(Population {
            class,
            model: TrafficModel { law, population: n },
        });
    }

    let pd = PrachConfig::default();
    let retx_p = r.f64("prach.msg1_retx_probability", 0.0)?;
    let cap = r.u32("prach.rar_grant_capacity_per_opportunity", 0)?;
    let prach = PrachConfig {
        num_preambles: r.u32("prach.num_preambles", pd.num_preambles)?,
        prach_period_sf: r.u64("prach.prach_period_sf", pd.prach_period_sf)?,
        backoff_indicator_ms: r.u64("prach.backoff_indicator_ms", pd.backoff_indicator_ms)?,
        pre_backoff_ms: r.u64("prach.pre_backoff_ms", pd.pre_backoff_ms)?,
        max_preamble_tx: r.u32("prach.max_preamble_tx", pd.max_preamble_tx)?,
        rar_window_offset_sf: r.u64("prach.rar_window_offset_sf", pd.rar_window_offset_sf)?,
        rar_window_sf: r.u64("prach.rar_window_sf", pd.rar_window_sf)?,
        msg2_to_msg3_delay_sf: r.u64("prach.msg2_to_msg3_delay_sf", pd.msg2_to_msg3_delay_sf)?,
        msg4_delay_sf: r.u64("prach.msg4_delay_sf", pd.msg4_delay_sf)?,
        contention_resolution_timer_sf: r.u64("prach.contention_resolution_timer_sf", pd.contention_resolution_timer_sf)?,
        power_ramping_step_db: r.f64("prach.power_ramping_step_db", pd.power_ramping_step_db)?,
        preamble_initial_power_dbm: r.f64("prach.preamble_initial_power_dbm", pd.preamble_initial_power_dbm)?,
        max_tx_power_dbm: r.f64("prach.max_tx_power_dbm", pd.max_tx_power_dbm)?,
        detection_model: r.choice("prach.detection_model", pd.detection_model, DETECTION)?,
        collision_model: r.choice("prach.collision_model", pd.collision_model, COLLISION)?,
        msg1_retx_probability: (retx_p != 0.0).then_some(retx_p),
        retx_control: r.choice("prach.retx_control", pd.retx_control, RETX)?,
        retx_scale: r.f64("prach.retx_scale", pd.retx_scale)?,
        rar_grant_capacity_per_opportunity: (cap != 0).then_some(cap),
        preamble_split: r.u32("prach.preamble_split", pd.preamble_split)?,
    };

    let ed = EabConfig::default();
    let applies_to = match r.raw("eab.applies_to") {
        None => {
            r.defaulted.push("eab.applies_to".into());
            ed.applies_to.clone()
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().and_then(PriorityClass::from_key))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| invalid("eab.applies_to", "expected a list of \"high\"/\"low\""))?,
        Some(v) => return Err(invalid("eab.applies_to", format!("expected a list, got {v}"))),
    };
    let eab = EabConfig {
        enabled: r.bool("eab.enabled", ed.enabled)?,
        barring_factor: r.f64("eab.barring_factor", ed.barring_factor)?,
        barring_time_ms: r.u64("eab.barring_time_ms", ed.barring_time_ms)?,
        applies_to,
    };

    let pw = PowerModel::default();
    let power = PowerModel {
        p_inactive_mw: r.f64("power.p_inactive_mw", pw.p_inactive_mw)?,
        p_idle_mw: r.f64("power.p_idle_mw", pw.p_idle_mw)?,
        p_rx_mw: r.f64("power.p_rx_mw", pw.p_rx_mw)?,
        p_tx_base_mw: r.f64("power.p_tx_base_mw", pw.p_tx_base_mw)?,
    };
    let dd = DrxConfig::default();
    let drx = DrxConfig {
        enabled: r.bool("drx.enabled", dd.enabled)?,
        paging_cycle_ms: r.u64("drx.paging_cycle_ms", dd.paging_cycle_ms)?,
        on_duration_ms: r.u64("drx.on_duration_ms", dd.on_duration_ms)?,
        wakeup_overhead_mj: r.f64("drx.wakeup_overhead_mj", dd.wakeup_overhead_mj)?,
    };

    let has_cobalt = mode == Mode::Cobalt || r.params.keys().any(|k| k.starts_with("cobalt."));
    let cobalt = if has_cobalt {
        let cd = CobaltConfig::default();
        Some(CobaltConfig {
            region_rbs_per_tti: r.u32("cobalt.region_rbs_per_tti", cd.region_rbs_per_tti)?,
            tti_period_sf: r.u64("cobalt.tti_period_sf", cd.tti_period_sf)?,
            max_retries: r.u32("cobalt.max_retries", cd.max_retries)?,
            retry_backoff_ms: r.u64("cobalt.retry_backoff_ms", cd.retry_backoff_ms)?,
            payload_fits_one_rb: r.bool("cobalt.payload_fits_one_rb", cd.payload_fits_one_rb)?,
            fallback_to_legacy: r.bool("cobalt.fallback_to_legacy", cd.fallback_to_legacy)?,
            ack_delay_sf: r.u64("cobalt.ack_delay_sf", cd.ack_delay_sf)?,
            bandwidth_rbs: r.u32("cobalt.bandwidth_rbs", cd.bandwidth_rbs)?,
            pucch_rbs_per_edge: r.u32("cobalt.pucch_rbs_per_edge", cd.pucch_rbs_per_edge)?,
            path: r.choice("cobalt.path", cd.path, PATHS)?,
        })
    } else {
        None
    };
    let ad = AnalyticSimConfig::default();
    let analytic = AnalyticSimConfig {
        saturated: r.bool("analytic.saturated", ad.saturated)?,
        rounds: r.u32("analytic.rounds", ad.rounds)?,
    };

    let default_duration = if mode == Mode::AnalyticCompare {
        100_000 * prach.prach_period_sf
    } else {
        populations
            .iter()
            .filter_map(|p| p.model.law.span_ms())
            .max()
            .map_or(3_600_000, |span| span + 60_000)
    };
    let duration_sf = r.u64("duration_sf", default_duration)?;

    if let Some(key) = r.params.keys().next() {
        return Err(invalid(key.clone(), "unknown key"));
    }

    let scenario = Scenario {
        name,
        seed,
        duration_sf,
        mode,
        trace,
        measurement_interval_ms,
        populations,
        prach,
        eab,
        power,
        drx,
        cobalt,
        analytic,
    };
    scenario.validate()?;
    Ok(LoadedScenario {
        scenario,
        defaulted: r.defaulted,
    })
}

fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| invalid(SEED_ENV, format!("expected an unsigned integer, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_scenario(text: &str) -> Result<LoadedScenario, ConfigError> {
    scenario_from_params(parse_params(text)?)
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text)
}

fn int(v: u64) -> Value {
    Value::Integer(v as i64)
}

fn float(v: f64) -> Value {
    Value::Float(v)
}

fn text(v: &str) -> Value {
    Value::String(v.to_string())
}

impl Scenario {
    /// Every effective parameter as dotted keys; loading these back yields the same scenario.
    pub fn to_params(&self) -> ParamMap {
        let mut m = ParamMap::new();
        m.insert("name".into(), text(&self.name));
        m.insert("seed".into(), int(self.seed));
        m.insert("duration_sf".into(), int(self.duration_sf));
        m.insert("mode".into(), text(self.mode.key()));
        m.insert("trace".into(), Value::Boolean(self.trace));
        m.insert("metrics.measurement_interval_ms".into(), int(self.measurement_interval_ms));
        for pop in &self.populations {
            let base = format!("population.{}", pop.class.key());
            m.insert(format!("{base}.n"), int(u64::from(pop.model.population)));
            m.insert(format!("{base}.law"), text(pop.model.law.name()));
            match pop.model.law {
                TrafficLaw::Uniform { span_ms } => {
                    m.insert(format!("{base}.span_ms"), int(span_ms));
                }
                TrafficLaw::Beta { alpha, beta, span_ms } => {
                    m.insert(format!("{base}.alpha"), float(alpha));
                    m.insert(format!("{base}.beta"), float(beta));
                    m.insert(format!("{base}.span_ms"), int(span_ms));
                }
                TrafficLaw::Poisson { rate_per_s } => {
                    m.insert(format!("{base}.rate_per_s"), float(rate_per_s));
                }
                TrafficLaw::Periodic { period_ms, jitter_ms } => {
                    m.insert(format!("{base}.period_ms"), int(period_ms));
                    m.insert(format!("{base}.jitter_ms"), int(jitter_ms));
                }
            }
        }
        let p = &self.prach;
        for (k, v) in [
            ("num_preambles", int(u64::from(p.num_preambles))),
            ("prach_period_sf", int(p.prach_period_sf)),
            ("backoff_indicator_ms", int(p.backoff_indicator_ms)),
            ("pre_backoff_ms", int(p.pre_backoff_ms)),
            ("max_preamble_tx", int(u64::from(p.max_preamble_tx))),
            ("rar_window_offset_sf", int(p.rar_window_offset_sf)),
            ("rar_window_sf", int(p.rar_window_sf)),
            ("msg2_to_msg3_delay_sf", int(p.msg2_to_msg3_delay_sf)),
            ("msg4_delay_sf", int(p.msg4_delay_sf)),
            ("contention_resolution_timer_sf", int(p.contention_resolution_timer_sf)),
            ("power_ramping_step_db", float(p.power_ramping_step_db)),
            ("preamble_initial_power_dbm", float(p.preamble_initial_power_dbm)),
            ("max_tx_power_dbm", float(p.max_tx_power_dbm)),
            ("detection_model", text(key_of(DETECTION, p.detection_model))),
            ("collision_model", text(key_of(COLLISION, p.collision_model))),
            ("msg1_retx_probability", float(p.msg1_retx_probability.unwrap_or(0.0))),
            ("retx_control", text(key_of(RETX, p.retx_control))),
            ("retx_scale", float(p.retx_scale)),
            (
                "rar_grant_capacity_per_opportunity",
                int(u64::from(p.rar_grant_capacity_per_opportunity.unwrap_or(0))),
            ),
            ("preamble_split", int(u64::from(p.preamble_split))),
        ] {
            m.insert(format!("prach.{k}"), v);
        }
        let e = &self.eab;
        m.insert("eab.enabled".into(), Value::Boolean(e.enabled));
        m.insert("eab.barring_factor".into(), float(e.barring_factor));
        m.insert("eab.barring_time_ms".into(), int(e.barring_time_ms));
        m.insert(
            "eab.applies_to".into(),
            Value::Array(e.applies_to.iter().map(|c| text(c.key())).collect()),
        );
        let w = &self.power;
        m.insert("power.p_inactive_mw".into(), float(w.p_inactive_mw));
        m.insert("power.p_idle_mw".into(), float(w.p_idle_mw));
        m.insert("power.p_rx_mw".into(), float(w.p_rx_mw));
        m.insert("power.p_tx_base_mw".into(), float(w.p_tx_base_mw));
        let d = &self.drx;
        m.insert("drx.enabled".into(), Value::Boolean(d.enabled));
        m.insert("drx.paging_cycle_ms".into(), int(d.paging_cycle_ms));
        m.insert("drx.on_duration_ms".into(), int(d.on_duration_ms));
        m.insert("drx.wakeup_overhead_mj".into(), float(d.wakeup_overhead_mj));
        if let Some(c) = &self.cobalt {
            m.insert("cobalt.region_rbs_per_tti".into(), int(u64::from(c.region_rbs_per_tti)));
            m.insert("cobalt.tti_period_sf".into(), int(c.tti_period_sf));
            m.insert("cobalt.max_retries".into(), int(u64::from(c.max_retries)));
            m.insert("cobalt.retry_backoff_ms".into(), int(c.retry_backoff_ms));
            m.insert("cobalt.payload_fits_one_rb".into(), Value::Boolean(c.payload_fits_one_rb));
            m.insert("cobalt.fallback_to_legacy".into(), Value::Boolean(c.fallback_to_legacy));
            m.insert("cobalt.ack_delay_sf".into(), int(c.ack_delay_sf));
            m.insert("cobalt.bandwidth_rbs".into(), int(u64::from(c.bandwidth_rbs)));
            m.insert("cobalt.pucch_rbs_per_edge".into(), int(u64::from(c.pucch_rbs_per_edge)));
            m.insert("cobalt.path".into(), text(key_of(PATHS, c.path)));
        }
        m.insert("analytic.saturated".into(), Value::Boolean(self.analytic.saturated));
        m.insert("analytic.rounds".into(), int(u64::from(self.analytic.rounds)));
        m
    }

    /// `key = value` lines in scenario syntax.
    pub fn echo_lines(&self, defaulted: &[String]) -> Vec<String> {
        self.to_params()
            .iter()
            .map(|(k, v)| {
                if defaulted.iter().any(|d| d == k) {
                    format!("{k} = {v} # default")
                } else {
                    format!("{k} = {v}")
                }
            })
            .collect()
    }

    /// Rebuilds the scenario after setting one dotted key.
    pub fn with_override(&self, key: &str, value: Value) -> Result<Scenario, ConfigError> {
        let mut params = self.to_params();
        params.insert(key.to_string(), value);
        // law-specific keys may no longer apply when the law changes
        if let Some(class_base) = key.strip_suffix(".law") {
            let keep = |k: &str| !k.starts_with(&format!("{class_base}.")) || k.ends_with(".n") || k.ends_with(".law");
            params.retain(|k, _| keep(k));
        }
        Ok(scenario_from_params(params)?.scenario)
    }
}
