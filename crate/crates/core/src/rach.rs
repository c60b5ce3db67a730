//! PRACH random access: per-device Msg1..Msg4 state machine, eNB preamble
//! detection and collision handling, backoff, power ramping and access barring.
//!
//! Timing of one attempt, relative to the RACH opportunity `t0` where the
//! preamble is sent:
//!
//! ```text
//! t0                 Msg1 (1 sf Tx)
//! t0+offset          RAR received (granted) ... or no RAR by t0+offset+window
//! t_rar+msg3_delay   Msg3 (1 sf Tx)
//! t_msg3+1+msg4      Msg4 received (unique contender)
//! t_msg3+1+cr_timer  contention resolution timeout (colliders)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::RadioState;
use crate::kernel::{DeviceId, EventKind, KernelError, RngStream, SimTime};
use crate::traffic::PriorityClass;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RachError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("preamble {preamble} outside pool of {pool}")]
    InvalidPreamble { preamble: u32, pool: u32 },
    #[error("illegal transition: {input:?} in state {state:?}")]
    IllegalTransition { state: RachState, input: RachInput },
    #[error("persistent-probability mode is not enabled")]
    ModeNotEnabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionModel {
    /// Singleton preamble on attempt `n` is detected with probability `1 - e^-n`.
    RampingExponential,
    AlwaysDetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionModel {
    /// Colliding devices all get a RAR and fail contention resolution at Msg4.
    CollideAtMsg3,
    /// Colliding preambles are lost outright at Msg1.
    DestroyedAtMsg1,
}

/// How the per-opportunity Msg1 transmit probability is chosen when
/// persistent-probability mode is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetxControl {
    /// Use `msg1_retx_probability` as is.
    Fixed,
    /// eNB broadcasts `min(1, scale * M / backlog)` from the true backlog.
    EnbBroadcast,
    /// Devices estimate the backlog from idle preambles seen in the RAR and
    /// apply `min(1, scale * M / estimate)`.
    DeviceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrachConfig {
    pub num_preambles: u32,
    pub prach_period_sf: u64,
    pub backoff_indicator_ms: u64,
    pub pre_backoff_ms: u64,
    pub max_preamble_tx: u32,
    pub rar_window_offset_sf: u64,
    pub rar_window_sf: u64,
    pub msg2_to_msg3_delay_sf: u64,
    pub msg4_delay_sf: u64,
    pub contention_resolution_timer_sf: u64,
    pub power_ramping_step_db: f64,
    pub preamble_initial_power_dbm: f64,
    pub max_tx_power_dbm: f64,
    pub detection_model: DetectionModel,
    pub collision_model: CollisionModel,
    pub msg1_retx_probability: Option<f64>,
    pub retx_control: RetxControl,
    pub retx_scale: f64,
    /// `None` means unlimited RAR grants per opportunity.
    pub rar_grant_capacity_per_opportunity: Option<u32>,
    /// Preambles reserved for high-priority devices at the top of the pool; 0 = shared pool.
    pub preamble_split: u32,
}

impl Default for PrachConfig {
    fn default() -> Self {
        Self {
            num_preambles: 54,
            prach_period_sf: 5,
            backoff_indicator_ms: 20,
            pre_backoff_ms: 0,
            max_preamble_tx: 10,
            rar_window_offset_sf: 3,
            rar_window_sf: 5,
            msg2_to_msg3_delay_sf: 5,
            msg4_delay_sf: 5,
            contention_resolution_timer_sf: 48,
            power_ramping_step_db: 2.0,
            preamble_initial_power_dbm: 13.0,
            max_tx_power_dbm: 23.0,
            detection_model: DetectionModel::RampingExponential,
            collision_model: CollisionModel::CollideAtMsg3,
            msg1_retx_probability: None,
            retx_control: RetxControl::Fixed,
            retx_scale: 1.0,
            rar_grant_capacity_per_opportunity: None,
            preamble_split: 0,
        }
    }
}

impl PrachConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("num_preambles", u64::from(self.num_preambles)),
            ("prach_period_sf", self.prach_period_sf),
            ("max_preamble_tx", u64::from(self.max_preamble_tx)),
            ("rar_window_sf", self.rar_window_sf),
            ("rar_window_offset_sf", self.rar_window_offset_sf),
            ("msg2_to_msg3_delay_sf", self.msg2_to_msg3_delay_sf),
            ("msg4_delay_sf", self.msg4_delay_sf),
            ("contention_resolution_timer_sf", self.contention_resolution_timer_sf),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("prach.{name} must be >= 1"));
            }
        }
        if self.msg4_delay_sf > self.contention_resolution_timer_sf {
            return Err("prach.msg4_delay_sf must not exceed prach.contention_resolution_timer_sf".into());
        }
        if let Some(p) = self.msg1_retx_probability {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("prach.msg1_retx_probability must be in (0, 1], got {p}"));
            }
        }
        if !(self.retx_scale.is_finite() && self.retx_scale > 0.0) {
            return Err("prach.retx_scale must be > 0".into());
        }
        if self.power_ramping_step_db < 0.0 || !self.power_ramping_step_db.is_finite() {
            return Err("prach.power_ramping_step_db must be >= 0".into());
        }
        if self.rar_grant_capacity_per_opportunity == Some(0) {
            return Err("prach.rar_grant_capacity_per_opportunity must be >= 1".into());
        }
        if self.preamble_split >= self.num_preambles {
            return Err("prach.preamble_split must leave at least one shared preamble".into());
        }
        Ok(())
    }

    /// Preamble transmit power for attempt `n` (1-based), capped at the UE maximum.
    pub fn ramped_power_dbm(&self, attempt: u32) -> f64 {
        let steps = attempt.saturating_sub(1) as f64;
        (self.preamble_initial_power_dbm + steps * self.power_ramping_step_db).min(self.max_tx_power_dbm)
    }

    /// Persistent-probability mode is on when any retransmission probability applies.
    pub fn persistent_mode(&self) -> bool {
        self.msg1_retx_probability.is_some() || self.retx_control != RetxControl::Fixed
    }

    /// Preamble sub-pool `[start, start+len)` used by a class.
    pub fn preamble_pool(&self, class: PriorityClass) -> (u32, u32) {
        match (self.preamble_split, class) {
            (0, _) => (0, self.num_preambles),
            (k, PriorityClass::HighPriority) => (self.num_preambles - k, k),
            (k, PriorityClass::LowPriority) => (0, self.num_preambles - k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EabConfig {
    pub enabled: bool,
    /// Probability that an access attempt is admitted.
    pub barring_factor: f64,
    pub barring_time_ms: u64,
    pub applies_to: Vec<PriorityClass>,
}

impl Default for EabConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            barring_factor: 1.0,
            barring_time_ms: 4000,
            applies_to: vec![PriorityClass::LowPriority],
        }
    }
}

impl EabConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.barring_factor) {
            return Err(format!("eab.barring_factor must be in [0, 1], got {}", self.barring_factor));
        }
        if self.barring_time_ms == 0 {
            return Err("eab.barring_time_ms must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EabDecision {
    Admitted,
    BarredFor(u64),
}

/// Access-barring admission check for the first preamble of an access.
/// A barred device waits `barring_time * (0.7 + 0.6 u)` before rechecking.
pub fn eab_gate(class: PriorityClass, cfg: &EabConfig, stream: &mut RngStream) -> EabDecision {
    if !cfg.enabled || !cfg.applies_to.contains(&class) || cfg.barring_factor >= 1.0 {
        return EabDecision::Admitted;
    }
    if stream.unit() < cfg.barring_factor {
        return EabDecision::Admitted;
    }
    let u = stream.unit();
    let delay = (cfg.barring_time_ms as f64 * (0.7 + 0.6 * u)).floor() as u64;
    EabDecision::BarredFor(delay.max(1))
}

pub fn select_preamble(m: u32, stream: &mut RngStream) -> Result<u32, RachError> {
    Ok(stream.draw_uniform(u64::from(m))? as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetxDecision {
    TransmitNow,
    DeferOneOpportunity,
}

pub fn msg1_retx_decision(p: Option<f64>, stream: &mut RngStream) -> Result<RetxDecision, RachError> {
    let p = p.ok_or(RachError::ModeNotEnabled)?;
    if p >= 1.0 || stream.unit() < p {
        Ok(RetxDecision::TransmitNow)
    } else {
        Ok(RetxDecision::DeferOneOpportunity)
    }
}

/// The "M over U" heuristic, clamped to a valid probability.
pub fn m_over_u(m: u32, backlog: f64, scale: f64) -> f64 {
    if backlog <= 0.0 {
        return 1.0;
    }
    (scale * f64::from(m) / backlog).clamp(f64::MIN_POSITIVE, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub device: DeviceId,
    pub preamble: u32,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Msg1Outcome {
    /// `contended` marks grants on a collided preamble; they fail at Msg4.
    RarGranted { contended: bool },
    NotDetected,
    CollisionDestroyed,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpportunityResult {
    /// Same order as the input transmissions.
    pub outcomes: Vec<Msg1Outcome>,
    pub used_preambles: u32,
    pub collided_preambles: u32,
    pub singleton_preambles: u32,
    /// Preambles the eNB answered in the RAR.
    pub granted_preambles: u32,
}

/// eNB side of one RACH opportunity.
pub fn enb_process_opportunity(
    transmissions: &[Transmission],
    cfg: &PrachConfig,
    stream: &mut RngStream,
) -> Result<OpportunityResult, RachError> {
    let m = cfg.num_preambles;
    let mut counts = vec![0u32; m as usize];
    for tx in transmissions {
        if tx.preamble >= m {
            return Err(RachError::InvalidPreamble {
                preamble: tx.preamble,
                pool: m,
            });
        }
        counts[tx.preamble as usize] += 1;
    }
    let mut result = OpportunityResult {
        outcomes: Vec::with_capacity(transmissions.len()),
        ..Default::default()
    };
    for &c in &counts {
        if c >= 1 {
            result.used_preambles += 1;
        }
        if c == 1 {
            result.singleton_preambles += 1;
        }
        if c >= 2 {
            result.collided_preambles += 1;
        }
    }

    // Per-preamble decision: answered in RAR or not. Collided preambles are
    // answered under CollideAtMsg3 (the eNB cannot tell them apart at Msg1).
    let mut answered = vec![false; m as usize];
    for tx in transmissions {
        let p = tx.preamble as usize;
        if counts[p] == 1 {
            answered[p] = match cfg.detection_model {
                DetectionModel::AlwaysDetected => true,
                DetectionModel::RampingExponential => stream.unit() < 1.0 - (-f64::from(tx.attempt.max(1))).exp(),
            };
        } else if cfg.collision_model == CollisionModel::CollideAtMsg3 {
            answered[p] = true;
        }
    }

    if let Some(cap) = cfg.rar_grant_capacity_per_opportunity {
        let mut candidates: Vec<usize> = (0..m as usize).filter(|&p| answered[p]).collect();
        if candidates.len() > cap as usize {
            // Partial Fisher-Yates: the first `cap` entries are a uniform subset.
            for i in 0..cap as usize {
                let j = i + stream.draw_uniform((candidates.len() - i) as u64)? as usize;
                candidates.swap(i, j);
            }
            for &p in &candidates[cap as usize..] {
                answered[p] = false;
            }
        }
    }
    result.granted_preambles = answered.iter().filter(|&&a| a).count() as u32;

    for tx in transmissions {
        let p = tx.preamble as usize;
        let collided = counts[p] >= 2;
        let outcome = if collided && cfg.collision_model == CollisionModel::DestroyedAtMsg1 {
            Msg1Outcome::CollisionDestroyed
        } else if answered[p] {
            Msg1Outcome::RarGranted { contended: collided }
        } else {
            Msg1Outcome::NotDetected
        };
        result.outcomes.push(outcome);
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RachState {
    Inactive,
    Barred,
    PreBackoff,
    AwaitingOpportunity,
    WaitingRar,
    SendingMsg3,
    WaitingMsg4,
    Succeeded,
    Failed,
}

impl RachState {
    pub fn in_progress(self) -> bool {
        !matches!(self, RachState::Inactive | RachState::Succeeded | RachState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRachState {
    pub state: RachState,
    pub attempt_n: u32,
    pub chosen_preamble: Option<u32>,
    pub backoff_until: Option<SimTime>,
    pub activation_time: SimTime,
    pub success_time: Option<SimTime>,
}

impl Default for DeviceRachState {
    fn default() -> Self {
        Self {
            state: RachState::Inactive,
            attempt_n: 0,
            chosen_preamble: None,
            backoff_until: None,
            activation_time: SimTime::ZERO,
            success_time: None,
        }
    }
}

/// Signaling exchanged during one access, for message accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalingCounts {
    pub msg1: u32,
    pub msg2: u32,
    pub msg3: u32,
    pub msg4: u32,
}

impl SignalingCounts {
    pub fn total(&self) -> u32 {
        self.msg1 + self.msg2 + self.msg3 + self.msg4
    }
}

/// One device as seen by the random access procedure.
#[derive(Debug, Clone)]
pub struct RachDevice {
    pub id: DeviceId,
    pub class: PriorityClass,
    pub rach: DeviceRachState,
    /// Current radio state and when it began; energy is booked lazily on change.
    pub radio: RadioState,
    pub radio_since: SimTime,
    pub signaling: SignalingCounts,
    admitted: bool,
    contended: bool,
}

impl RachDevice {
    pub fn new(id: DeviceId, class: PriorityClass) -> Self {
        Self {
            id,
            class,
            rach: DeviceRachState::default(),
            radio: RadioState::Inactive,
            radio_since: SimTime::ZERO,
            signaling: SignalingCounts::default(),
            admitted: false,
            contended: false,
        }
    }

    /// Ends the current radio segment at `now` and starts `next`.
    pub fn close_segment(&mut self, now: SimTime, next: RadioState, energy: &mut Vec<EnergyDelta>) {
        if now > self.radio_since {
            energy.push(EnergyDelta {
                at: self.radio_since,
                state: self.radio,
                duration_ms: now.0 - self.radio_since.0,
                tx_power_dbm: None,
            });
        }
        self.radio = next;
        self.radio_since = now;
    }

    /// Books a one-subframe transmission starting at `now`; the radio listens afterwards.
    pub fn transmit(&mut self, now: SimTime, power_dbm: f64, energy: &mut Vec<EnergyDelta>) {
        self.close_segment(now, RadioState::Tx, energy);
        energy.push(EnergyDelta {
            at: now,
            state: RadioState::Tx,
            duration_ms: 1,
            tx_power_dbm: Some(power_dbm),
        });
        self.radio = RadioState::Rx;
        self.radio_since = now.after(1);
    }
}

/// Inputs that drive a device's procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RachInput {
    /// Data arrived / device woke: start an access procedure.
    Activate,
    BackoffExpiry,
    BarringExpiry,
    /// A RACH opportunity the device was waiting for. `retx_p` is the
    /// effective Msg1 probability when persistent mode is on.
    Opportunity { retx_p: Option<f64> },
    Msg1Result(Msg1Outcome),
    RarDeadline { granted: bool },
    Msg3Tx,
    Msg4Deadline { resolved: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyDelta {
    pub at: SimTime,
    pub state: RadioState,
    pub duration_ms: u64,
    pub tx_power_dbm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FollowUp {
    At(SimTime, EventKind),
    /// Register for the first RACH opportunity at or after this time.
    NextOpportunity(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessOutcome {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Step {
    pub follow_ups: Vec<FollowUp>,
    pub energy: Vec<EnergyDelta>,
    /// Preamble sent at this opportunity.
    pub transmitted: Option<Transmission>,
    pub barred: bool,
    pub deferred: bool,
    pub completed: Option<AccessOutcome>,
}

/// Everything the state machine reads besides the device itself.
#[derive(Debug, Clone, Copy)]
pub struct RachContext<'a> {
    pub prach: &'a PrachConfig,
    pub eab: &'a EabConfig,
}

/// Advances one device's procedure by one input at time `now`.
pub fn advance_device(
    dev: &mut RachDevice,
    input: RachInput,
    ctx: RachContext<'_>,
    stream: &mut RngStream,
    now: SimTime,
) -> Result<Step, RachError> {
    let cfg = ctx.prach;
    let mut step = Step::default();
    let illegal = |dev: &RachDevice| RachError::IllegalTransition {
        state: dev.rach.state,
        input,
    };
    match (dev.rach.state, input) {
        (RachState::Inactive | RachState::Succeeded | RachState::Failed, RachInput::Activate) => {
            dev.rach = DeviceRachState {
                activation_time: now,
                ..DeviceRachState::default()
            };
            dev.signaling = SignalingCounts::default();
            dev.admitted = false;
            dev.contended = false;
            dev.radio = RadioState::Idle;
            dev.radio_since = now;
            let delay = if cfg.pre_backoff_ms > 0 {
                stream.draw_inclusive(cfg.pre_backoff_ms)
            } else {
                0
            };
            if delay > 0 {
                dev.rach.state = RachState::PreBackoff;
                dev.rach.backoff_until = Some(now.after(delay));
                step.follow_ups
                    .push(FollowUp::At(now.after(delay), EventKind::BackoffExpiry { device: dev.id }));
            } else {
                dev.rach.state = RachState::AwaitingOpportunity;
                step.follow_ups.push(FollowUp::NextOpportunity(now));
            }
        }
        (RachState::PreBackoff, RachInput::BackoffExpiry) | (RachState::Barred, RachInput::BarringExpiry) => {
            dev.rach.state = RachState::AwaitingOpportunity;
            dev.rach.backoff_until = None;
            step.follow_ups.push(FollowUp::NextOpportunity(now));
        }
        (RachState::AwaitingOpportunity, RachInput::Opportunity { retx_p }) => {
            if dev.rach.attempt_n == 0 && !dev.admitted {
                match eab_gate(dev.class, ctx.eab, stream) {
                    EabDecision::Admitted => dev.admitted = true,
                    EabDecision::BarredFor(ms) => {
                        dev.rach.state = RachState::Barred;
                        dev.rach.backoff_until = Some(now.after(ms));
                        step.barred = true;
                        step.follow_ups
                            .push(FollowUp::At(now.after(ms), EventKind::BarringExpiry { device: dev.id }));
                        return Ok(step);
                    }
                }
            }
            if cfg.persistent_mode()
                && msg1_retx_decision(retx_p.or(cfg.msg1_retx_probability), stream)?
                    == RetxDecision::DeferOneOpportunity
            {
                step.deferred = true;
                step.follow_ups.push(FollowUp::NextOpportunity(now.after(1)));
                return Ok(step);
            }
            let (start, len) = cfg.preamble_pool(dev.class);
            let preamble = start + select_preamble(len, stream)?;
            dev.rach.attempt_n += 1;
            dev.rach.chosen_preamble = Some(preamble);
            dev.rach.backoff_until = None;
            dev.rach.state = RachState::WaitingRar;
            dev.signaling.msg1 += 1;
            let power = cfg.ramped_power_dbm(dev.rach.attempt_n);
            dev.transmit(now, power, &mut step.energy);
            step.transmitted = Some(Transmission {
                device: dev.id,
                preamble,
                attempt: dev.rach.attempt_n,
            });
        }
        (RachState::WaitingRar, RachInput::Msg1Result(outcome)) => {
            // `now` is the opportunity time t0.
            let window_start = now.after(cfg.rar_window_offset_sf);
            match outcome {
                Msg1Outcome::RarGranted { contended } => {
                    dev.contended = contended;
                    step.follow_ups.push(FollowUp::At(
                        window_start,
                        EventKind::RarDeadline {
                            device: dev.id,
                            granted: true,
                        },
                    ));
                }
                Msg1Outcome::NotDetected | Msg1Outcome::CollisionDestroyed => {
                    step.follow_ups.push(FollowUp::At(
                        window_start.after(cfg.rar_window_sf),
                        EventKind::RarDeadline {
                            device: dev.id,
                            granted: false,
                        },
                    ));
                }
            }
        }
        (RachState::WaitingRar, RachInput::RarDeadline { granted: true }) => {
            dev.close_segment(now, RadioState::Idle, &mut step.energy);
            dev.signaling.msg2 += 1;
            dev.rach.state = RachState::SendingMsg3;
            step.follow_ups.push(FollowUp::At(
                now.after(cfg.msg2_to_msg3_delay_sf),
                EventKind::Msg3Tx { device: dev.id },
            ));
        }
        (RachState::WaitingRar, RachInput::RarDeadline { granted: false }) => {
            dev.close_segment(now, RadioState::Idle, &mut step.energy);
            retry_or_fail(dev, cfg, stream, now, &mut step);
        }
        (RachState::SendingMsg3, RachInput::Msg3Tx) => {
            dev.signaling.msg3 += 1;
            let power = cfg.ramped_power_dbm(dev.rach.attempt_n);
            dev.transmit(now, power, &mut step.energy);
            dev.rach.state = RachState::WaitingMsg4;
            let (delay, resolved) = if dev.contended {
                (cfg.contention_resolution_timer_sf, false)
            } else {
                (cfg.msg4_delay_sf, true)
            };
            step.follow_ups.push(FollowUp::At(
                now.after(1 + delay),
                EventKind::Msg4Deadline {
                    device: dev.id,
                    resolved,
                },
            ));
        }
        (RachState::WaitingMsg4, RachInput::Msg4Deadline { resolved: true }) => {
            dev.close_segment(now, RadioState::Inactive, &mut step.energy);
            dev.signaling.msg4 += 1;
            dev.rach.state = RachState::Succeeded;
            dev.rach.chosen_preamble = None;
            dev.rach.success_time = Some(now);
            step.completed = Some(AccessOutcome::Succeeded);
        }
        (RachState::WaitingMsg4, RachInput::Msg4Deadline { resolved: false }) => {
            dev.close_segment(now, RadioState::Idle, &mut step.energy);
            retry_or_fail(dev, cfg, stream, now, &mut step);
        }
        _ => return Err(illegal(dev)),
    }
    Ok(step)
}

fn retry_or_fail(dev: &mut RachDevice, cfg: &PrachConfig, stream: &mut RngStream, now: SimTime, step: &mut Step) {
    dev.rach.chosen_preamble = None;
    dev.contended = false;
    if dev.rach.attempt_n >= cfg.max_preamble_tx {
        dev.rach.state = RachState::Failed;
        dev.radio = RadioState::Inactive;
        step.completed = Some(AccessOutcome::Failed);
        return;
    }
    let backoff = if cfg.backoff_indicator_ms > 0 {
        stream.draw_inclusive(cfg.backoff_indicator_ms)
    } else {
        0
    };
    let until = now.after(backoff);
    dev.rach.state = RachState::AwaitingOpportunity;
    dev.rach.backoff_until = Some(until);
    step.follow_ups.push(FollowUp::NextOpportunity(until));
}

/// Access delay of an uncontended first-attempt success, from activation to Msg4.
pub fn clean_access_delay(cfg: &PrachConfig, activation: SimTime) -> u64 {
    let t0 = activation.align_up(cfg.prach_period_sf);
    (t0.0 - activation.0) + cfg.rar_window_offset_sf + cfg.msg2_to_msg3_delay_sf + 1 + cfg.msg4_delay_sf
}
