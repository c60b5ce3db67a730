//! Four-level device power model, paging-cycle (DRX) energy and battery lifetime.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("negative duration {0} ms")]
    NegativeDuration(f64),
    #[error("invalid DRX configuration: {0}")]
    InvalidConfig(String),
    #[error("daily consumption must be positive")]
    ZeroConsumption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadioState {
    Inactive,
    Idle,
    Rx,
    Tx,
}

impl RadioState {
    pub const ALL: [RadioState; 4] = [RadioState::Inactive, RadioState::Idle, RadioState::Rx, RadioState::Tx];

    fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            RadioState::Inactive => "inactive",
            RadioState::Idle => "idle",
            RadioState::Rx => "rx",
            RadioState::Tx => "tx",
        }
    }
}

/// Power draw per radio state, in mW. Transmit draw is `p_tx_base_mw` plus the
/// radiated power converted from dBm.
///
/// Defaults are illustrative magnitudes; results built on them are compared as
/// ratios, never as absolute numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_inactive_mw: f64,
    pub p_idle_mw: f64,
    pub p_rx_mw: f64,
    pub p_tx_base_mw: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            p_inactive_mw: 0.01,
            p_idle_mw: 1.0,
            p_rx_mw: 50.0,
            p_tx_base_mw: 50.0,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

impl PowerModel {
    /// Returns the violated ordering, if any. Out-of-order levels are allowed
    /// but worth a warning.
    pub fn ordering_warning(&self) -> Option<String> {
        let levels = [self.p_inactive_mw, self.p_idle_mw, self.p_rx_mw, self.p_tx_base_mw];
        let ordered = levels.windows(2).all(|w| w[0] <= w[1]);
        (!ordered).then(|| {
            format!(
                "power levels not ordered inactive <= idle <= rx <= tx: {:?}",
                levels
            )
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("p_inactive_mw", self.p_inactive_mw),
            ("p_idle_mw", self.p_idle_mw),
            ("p_rx_mw", self.p_rx_mw),
            ("p_tx_base_mw", self.p_tx_base_mw),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("power.{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    pub fn power_mw(&self, state: RadioState, tx_power_dbm: Option<f64>) -> f64 {
        match state {
            RadioState::Inactive => self.p_inactive_mw,
            RadioState::Idle => self.p_idle_mw,
            RadioState::Rx => self.p_rx_mw,
            RadioState::Tx => self.p_tx_base_mw + tx_power_dbm.map_or(0.0, dbm_to_mw),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrxConfig {
    /// Track sleep/paging energy between accesses.
    pub enabled: bool,
    pub paging_cycle_ms: u64,
    pub on_duration_ms: u64,
    pub wakeup_overhead_mj: f64,
}

impl Default for DrxConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            paging_cycle_ms: 2560,
            on_duration_ms: 10,
            wakeup_overhead_mj: 1.5,
        }
    }
}

impl DrxConfig {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.paging_cycle_ms == 0 || self.on_duration_ms == 0 {
            return Err(EnergyError::InvalidConfig(
                "paging_cycle_ms and on_duration_ms must be positive".into(),
            ));
        }
        if self.on_duration_ms > self.paging_cycle_ms {
            return Err(EnergyError::InvalidConfig(format!(
                "on_duration_ms {} exceeds paging_cycle_ms {}",
                self.on_duration_ms, self.paging_cycle_ms
            )));
        }
        if !(self.wakeup_overhead_mj.is_finite() && self.wakeup_overhead_mj >= 0.0) {
            return Err(EnergyError::InvalidConfig("wakeup_overhead_mj must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub time: SimTime,
    pub state: RadioState,
    pub duration_ms: f64,
    pub energy_mj: f64,
}

/// Accumulated energy per radio state, in mJ.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    per_state_mj: [f64; 4],
    log: Option<Vec<LedgerEntry>>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        Self {
            per_state_mj: [0.0; 4],
            log: Some(Vec::new()),
        }
    }

    pub fn accrue(
        &mut self,
        power: &PowerModel,
        at: SimTime,
        state: RadioState,
        duration_ms: f64,
        tx_power_dbm: Option<f64>,
    ) -> Result<f64, EnergyError> {
        if duration_ms < 0.0 {
            return Err(EnergyError::NegativeDuration(duration_ms));
        }
        if duration_ms == 0.0 {
            return Ok(0.0);
        }
        // mW * ms = uJ
        let mj = power.power_mw(state, tx_power_dbm) * duration_ms / 1000.0;
        self.add_lump(at, state, duration_ms, mj);
        Ok(mj)
    }

    /// Books a fixed amount of energy against a state (wake-up transients).
    pub fn add_lump(&mut self, at: SimTime, state: RadioState, duration_ms: f64, mj: f64) {
        self.per_state_mj[state.index()] += mj;
        if let Some(log) = &mut self.log {
            log.push(LedgerEntry {
                time: at,
                state,
                duration_ms,
                energy_mj: mj,
            });
        }
    }

    pub fn state_mj(&self, state: RadioState) -> f64 {
        self.per_state_mj[state.index()]
    }

    pub fn total_mj(&self) -> f64 {
        self.per_state_mj.iter().sum()
    }

    pub fn trace(&self) -> Option<&[LedgerEntry]> {
        self.log.as_deref()
    }
}

/// Closed-form idle-mode energy over `horizon_ms`: each paging cycle opens
/// with a wake-up transient and an Rx on-duration, then sleeps inactive.
pub fn idle_cycle_energy(drx: &DrxConfig, power: &PowerModel, horizon_ms: u64) -> Result<f64, EnergyError> {
    drx.validate()?;
    if horizon_ms < drx.paging_cycle_ms {
        return Err(EnergyError::InvalidConfig(format!(
            "horizon {horizon_ms} ms shorter than paging cycle {} ms",
            drx.paging_cycle_ms
        )));
    }
    let cycle = drx.paging_cycle_ms;
    let on = drx.on_duration_ms;
    let per_cycle = on as f64 * power.p_rx_mw / 1000.0
        + (cycle - on) as f64 * power.p_inactive_mw / 1000.0
        + drx.wakeup_overhead_mj;
    let full = horizon_ms / cycle;
    let rem = horizon_ms % cycle;
    let remainder = if rem == 0 {
        0.0
    } else {
        let rx = rem.min(on);
        drx.wakeup_overhead_mj
            + rx as f64 * power.p_rx_mw / 1000.0
            + (rem - rx) as f64 * power.p_inactive_mw / 1000.0
    };
    Ok(full as f64 * per_cycle + remainder)
}

pub fn battery_lifetime(daily_mj: f64, battery_mj: f64) -> Result<f64, EnergyError> {
    if !(daily_mj > 0.0) {
        return Err(EnergyError::ZeroConsumption);
    }
    Ok(battery_mj / daily_mj)
}

pub fn wh_to_mj(wh: f64) -> f64 {
    wh * 3600.0 * 1000.0
}

pub const MS_PER_DAY: u64 = 86_400_000;
