//! Scenario driver: owns the kernel, the devices and the eNB, dispatches
//! events and aggregates the metrics report.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cobalt::{
    cobalt_transmit, resolve_tti, signaling_message_count, CobaltDevice, CobaltError, CobaltOutcome, DeliveryPath,
    DeliveryRecord, LEGACY_DATA_AFTER_GRANT_SF, LEGACY_GRANT_AFTER_MSG4_SF,
};
use crate::energy::{EnergyLedger, RadioState};
use crate::kernel::{device_stream_id, DeviceId, Event, EventKind, Kernel, KernelError, RngStream, SimTime, CELL_STREAM};
use crate::rach::{
    advance_device, enb_process_opportunity, m_over_u, msg1_retx_decision, select_preamble, AccessOutcome,
    EnergyDelta, FollowUp, Msg1Outcome, RachContext, RachDevice, RachError, RachInput, RetxControl, RetxDecision,
    Step, Transmission,
};
use crate::report::{
    ClassCounts, CobaltStats, DeviceOutcome, DeviceRecord, MetricsReport, ReportSource, SlotStats, Summary,
};
use crate::scenario::{ConfigError, Mode, Scenario};
use crate::traffic::{next_data_arrival, sample_activation_time, PriorityClass, TrafficError, TrafficLaw};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Rach(#[from] RachError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Cobalt(#[from] CobaltError),
}

fn class_rank(class: PriorityClass) -> u32 {
    match class {
        PriorityClass::LowPriority => 0,
        PriorityClass::HighPriority => 1,
    }
}

#[derive(Debug, Clone)]
struct Payload {
    arrival: SimTime,
    record: DeliveryRecord,
}

#[derive(Debug)]
struct Node {
    dev: RachDevice,
    stream: RngStream,
    ledger: EnergyLedger,
    law: TrafficLaw,
    arrivals: u64,
    accesses: u64,
    last_outcome: DeviceOutcome,
    completion: Option<SimTime>,
    cobalt: CobaltDevice,
    cobalt_outcome: Option<CobaltOutcome>,
    payload: Option<Payload>,
    /// End of a legacy data tail booked ahead of the clock.
    busy_until: SimTime,
}

#[derive(Debug, Default)]
struct Tally {
    accesses: u64,
    succeeded: u64,
    failed: u64,
    in_progress: u64,
    high: ClassCounts,
    low: ClassCounts,
    delays: Vec<f64>,
    histogram: Vec<u64>,
    msg1_total: u64,
    opportunities: u64,
    used: u64,
    collided: u64,
    barring: u64,
    merged: u64,
    series: Vec<(u64, u64)>,
    cobalt: CobaltStats,
    latencies: Vec<f64>,
}

/// Slotted saturated/drain bookkeeping for the analytic-compare mode.
#[derive(Debug, Default)]
struct SlotRun {
    backlog: Vec<DeviceId>,
    slot_in_round: u64,
    slots: u64,
    rounds_done: u64,
    successes: u64,
    device_slots: u64,
    fraction_sum: f64,
    fraction_sq: f64,
    /// Success-slot sum of completed rounds.
    delay_sum: f64,
    round_delay: f64,
    drain_times: Vec<f64>,
}

pub struct Simulation {
    sc: Scenario,
    defaulted: Vec<String>,
    kernel: Kernel,
    cell: RngStream,
    nodes: Vec<Node>,
    rach_waiting: BTreeMap<u64, Vec<DeviceId>>,
    last_rach: Option<u64>,
    cobalt_waiting: BTreeMap<u64, Vec<DeviceId>>,
    last_cobalt: Option<u64>,
    backlog_estimate: f64,
    tally: Tally,
    slots: Option<SlotRun>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::with_defaults(scenario, Vec::new())
    }

    /// `defaulted` lists keys that fell back to defaults, for the report header.
    pub fn with_defaults(scenario: Scenario, defaulted: Vec<String>) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut sim = Simulation {
            kernel: Kernel::new(),
            cell: RngStream::new(scenario.seed, CELL_STREAM),
            nodes: Vec::with_capacity(scenario.device_count() as usize),
            rach_waiting: BTreeMap::new(),
            last_rach: None,
            cobalt_waiting: BTreeMap::new(),
            last_cobalt: None,
            backlog_estimate: f64::from(scenario.prach.num_preambles),
            tally: Tally {
                histogram: vec![0; scenario.prach.max_preamble_tx as usize],
                ..Tally::default()
            },
            slots: None,
            sc: scenario,
            defaulted,
        };
        for pop in sim.sc.populations.clone() {
            for index in 0..pop.model.population {
                let id = sim.nodes.len() as DeviceId;
                let stream = RngStream::new(sim.sc.seed, device_stream_id(class_rank(pop.class), index));
                sim.nodes.push(Node {
                    dev: RachDevice::new(id, pop.class),
                    stream,
                    ledger: if sim.sc.trace { EnergyLedger::with_trace() } else { EnergyLedger::new() },
                    law: pop.model.law.clone(),
                    arrivals: 0,
                    accesses: 0,
                    last_outcome: DeviceOutcome::NotActivated,
                    completion: None,
                    cobalt: CobaltDevice::default(),
                    cobalt_outcome: None,
                    payload: None,
                    busy_until: SimTime::ZERO,
                });
            }
        }
        if sim.sc.mode == Mode::AnalyticCompare {
            if !sim.nodes.is_empty() {
                sim.slots = Some(SlotRun {
                    backlog: (0..sim.nodes.len() as DeviceId).collect(),
                    ..SlotRun::default()
                });
                sim.kernel.schedule(SimTime::ZERO, EventKind::RachOpportunity)?;
            }
        } else {
            for id in 0..sim.nodes.len() {
                let node = &mut sim.nodes[id];
                let first = sample_activation_time(&node.law, &mut node.stream)?;
                sim.kernel.schedule(first, EventKind::DeviceActivation { device: id as DeviceId })?;
                if sim.sc.drx.enabled {
                    let phase = node.stream.draw_uniform(sim.sc.drx.paging_cycle_ms)?;
                    sim.kernel.schedule(
                        SimTime(phase),
                        EventKind::PagingOccasion {
                            device: id as DeviceId,
                            wake: true,
                        },
                    )?;
                }
            }
        }
        if sim.sc.measurement_interval_ms > 0 {
            sim.kernel.schedule(SimTime::ZERO, EventKind::MeasurementTick)?;
        }
        Ok(sim)
    }

    /// Builds and runs a scenario over its configured duration.
    pub fn run(scenario: Scenario) -> Result<MetricsReport, SimError> {
        let end = SimTime(scenario.duration_sf);
        Simulation::new(scenario)?.run_until(end)
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn pending_events(&self) -> usize {
        self.kernel.pending()
    }

    pub fn processed_events(&self) -> u64 {
        self.kernel.processed()
    }

    pub fn scheduled_events(&self) -> u64 {
        self.kernel.scheduled()
    }

    /// Processes every event with fire time `<= end` and reports the state at `end`.
    pub fn run_until(&mut self, end: SimTime) -> Result<MetricsReport, SimError> {
        while let Some(ev) = self.kernel.pop_until(end) {
            self.dispatch(ev)?;
        }
        self.kernel.advance_to(end);
        Ok(self.report(end))
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), SimError> {
        let now = ev.fire_time;
        match ev.kind {
            EventKind::DeviceActivation { device } => self.on_arrival(device, now),
            EventKind::RachOpportunity if self.slots.is_some() => self.on_slot(now),
            EventKind::RachOpportunity => self.on_rach_opportunity(now),
            EventKind::RarDeadline { device, granted } => self.drive(device, RachInput::RarDeadline { granted }, now),
            EventKind::Msg3Tx { device } => self.drive(device, RachInput::Msg3Tx, now),
            EventKind::Msg4Deadline { device, resolved } => {
                self.drive(device, RachInput::Msg4Deadline { resolved }, now)
            }
            EventKind::BackoffExpiry { device } => self.drive(device, RachInput::BackoffExpiry, now),
            EventKind::BarringExpiry { device } => self.drive(device, RachInput::BarringExpiry, now),
            EventKind::PagingOccasion { device, wake } => self.on_paging(device, wake, now),
            EventKind::CobaltOpportunity => self.on_cobalt_tti(now),
            EventKind::CobaltFeedback { device, .. } => self.on_cobalt_feedback(device, now),
            EventKind::MeasurementTick => {
                let in_flight = self.tally.in_progress + self.nodes.iter().filter(|n| n.payload.is_some()).count() as u64
                    - self
                        .nodes
                        .iter()
                        .filter(|n| n.payload.is_some() && n.dev.rach.state.in_progress())
                        .count() as u64;
                self.tally.series.push((now.ms(), in_flight));
                self.kernel
                    .schedule(now.after(self.sc.measurement_interval_ms), EventKind::MeasurementTick)?;
                Ok(())
            }
        }
    }

    fn book(&mut self, device: DeviceId, deltas: &[EnergyDelta]) -> Result<(), SimError> {
        let track_inactive = self.sc.drx.enabled;
        let node = &mut self.nodes[device as usize];
        for d in deltas {
            if d.state == RadioState::Inactive && !track_inactive {
                continue;
            }
            node.ledger
                .accrue(&self.sc.power, d.at, d.state, d.duration_ms as f64, d.tx_power_dbm)
                .expect("segment durations are non-negative");
        }
        Ok(())
    }

    fn switch_radio(&mut self, device: DeviceId, now: SimTime, next: RadioState) -> Result<(), SimError> {
        let mut deltas = Vec::new();
        self.nodes[device as usize].dev.close_segment(now, next, &mut deltas);
        self.book(device, &deltas)
    }

    fn drive(&mut self, device: DeviceId, input: RachInput, now: SimTime) -> Result<(), SimError> {
        let node = &mut self.nodes[device as usize];
        let ctx = RachContext {
            prach: &self.sc.prach,
            eab: &self.sc.eab,
        };
        let step = advance_device(&mut node.dev, input, ctx, &mut node.stream, now)?;
        self.apply(device, step, now)
    }

    fn apply(&mut self, device: DeviceId, step: Step, now: SimTime) -> Result<(), SimError> {
        self.book(device, &step.energy)?;
        if step.barred {
            self.tally.barring += 1;
        }
        for f in step.follow_ups {
            match f {
                FollowUp::At(at, kind) => self.kernel.schedule(at, kind)?,
                FollowUp::NextOpportunity(at) => self.register_rach(device, at)?,
            }
        }
        if let Some(outcome) = step.completed {
            self.on_access_complete(device, outcome, now)?;
        }
        Ok(())
    }

    fn register(
        kernel: &mut Kernel,
        waiting: &mut BTreeMap<u64, Vec<DeviceId>>,
        last: Option<u64>,
        period: u64,
        device: DeviceId,
        not_before: SimTime,
        kind: EventKind,
    ) -> Result<(), SimError> {
        let mut at = not_before.align_up(period).0;
        if let Some(last) = last {
            if at <= last {
                at = last + period;
            }
        }
        let entry = waiting.entry(at).or_default();
        if entry.is_empty() {
            kernel.schedule(SimTime(at), kind)?;
        }
        entry.push(device);
        Ok(())
    }

    fn register_rach(&mut self, device: DeviceId, not_before: SimTime) -> Result<(), SimError> {
        Self::register(
            &mut self.kernel,
            &mut self.rach_waiting,
            self.last_rach,
            self.sc.prach.prach_period_sf,
            device,
            not_before,
            EventKind::RachOpportunity,
        )
    }

    fn register_cobalt(&mut self, device: DeviceId, not_before: SimTime) -> Result<(), SimError> {
        let period = self.sc.cobalt.as_ref().map_or(1, |c| c.tti_period_sf);
        Self::register(
            &mut self.kernel,
            &mut self.cobalt_waiting,
            self.last_cobalt,
            period,
            device,
            not_before,
            EventKind::CobaltOpportunity,
        )
    }

    /// Msg1 probability handed to devices at an opportunity with `backlog` candidates.
    fn broadcast_probability(&self, backlog: usize) -> Option<f64> {
        let p = &self.sc.prach;
        match p.retx_control {
            RetxControl::Fixed => p.msg1_retx_probability,
            RetxControl::EnbBroadcast => Some(m_over_u(p.num_preambles, backlog as f64, p.retx_scale)),
            RetxControl::DeviceEstimate => Some(m_over_u(p.num_preambles, self.backlog_estimate, p.retx_scale)),
        }
    }

    /// Backlog estimate from the idle preambles of the last opportunity.
    fn update_estimate(&mut self, p: f64, idle: u32, successes: u32) {
        let m = f64::from(self.sc.prach.num_preambles);
        let observed = if idle == 0 {
            2.0 * self.backlog_estimate.max(m)
        } else if p >= m {
            self.backlog_estimate
        } else {
            (f64::from(idle) / m).ln() / (1.0 - p / m).ln()
        };
        self.backlog_estimate = (0.5 * self.backlog_estimate + 0.5 * observed - f64::from(successes)).max(1.0);
    }

    fn on_arrival(&mut self, device: DeviceId, now: SimTime) -> Result<(), SimError> {
        let repeat = matches!(self.sc.mode, Mode::ConnectedMode | Mode::Cobalt);
        {
            let node = &mut self.nodes[device as usize];
            node.arrivals += 1;
            if repeat && !node.law.is_one_shot() {
                let next = next_data_arrival(&node.law, now, &mut node.stream)?;
                self.kernel.schedule(next, EventKind::DeviceActivation { device })?;
            }
        }
        if self.sc.mode == Mode::Cobalt {
            return self.cobalt_arrival(device, now);
        }
        if self.nodes[device as usize].dev.rach.state.in_progress() {
            self.tally.merged += 1;
            return Ok(());
        }
        self.start_access(device, now)
    }

    fn start_access(&mut self, device: DeviceId, now: SimTime) -> Result<(), SimError> {
        if self.sc.drx.enabled {
            self.switch_radio(device, now, RadioState::Idle)?;
        }
        self.tally.accesses += 1;
        self.tally.in_progress += 1;
        let node = &mut self.nodes[device as usize];
        node.accesses += 1;
        node.last_outcome = DeviceOutcome::Censored;
        node.completion = None;
        self.drive(device, RachInput::Activate, now)
    }

    fn on_access_complete(&mut self, device: DeviceId, outcome: AccessOutcome, now: SimTime) -> Result<(), SimError> {
        self.tally.in_progress -= 1;
        let node = &mut self.nodes[device as usize];
        let attempts = node.dev.rach.attempt_n;
        if attempts >= 1 {
            self.tally.histogram[attempts as usize - 1] += 1;
        }
        let class = match node.dev.class {
            PriorityClass::HighPriority => &mut self.tally.high,
            PriorityClass::LowPriority => &mut self.tally.low,
        };
        node.completion = Some(now);
        match outcome {
            AccessOutcome::Succeeded => {
                self.tally.succeeded += 1;
                class.succeeded += 1;
                node.last_outcome = DeviceOutcome::Succeeded;
                self.tally.delays.push((now.0 - node.dev.rach.activation_time.0) as f64);
            }
            AccessOutcome::Failed => {
                self.tally.failed += 1;
                class.failed += 1;
                node.last_outcome = DeviceOutcome::Failed;
            }
        }
        if let Some(payload) = node.payload.as_mut() {
            payload.record.rach = node.dev.signaling;
            if outcome == AccessOutcome::Succeeded {
                self.legacy_data_tail(device, now)?;
            } else {
                self.finish_payload(device, None);
            }
        }
        Ok(())
    }

    /// Uplink grant and data transmission after a successful access.
    fn legacy_data_tail(&mut self, device: DeviceId, now: SimTime) -> Result<(), SimError> {
        let grant = now.after(LEGACY_GRANT_AFTER_MSG4_SF);
        let data = grant.after(LEGACY_DATA_AFTER_GRANT_SF);
        let max_dbm = self.sc.prach.max_tx_power_dbm;
        let deltas = [
            EnergyDelta {
                at: now,
                state: RadioState::Rx,
                duration_ms: LEGACY_GRANT_AFTER_MSG4_SF,
                tx_power_dbm: None,
            },
            EnergyDelta {
                at: grant,
                state: RadioState::Idle,
                duration_ms: LEGACY_DATA_AFTER_GRANT_SF,
                tx_power_dbm: None,
            },
            EnergyDelta {
                at: data,
                state: RadioState::Tx,
                duration_ms: 1,
                tx_power_dbm: Some(max_dbm),
            },
        ];
        self.book(device, &deltas)?;
        let done = data.after(1);
        let node = &mut self.nodes[device as usize];
        node.dev.radio = RadioState::Inactive;
        node.dev.radio_since = done;
        node.busy_until = done;
        if let Some(p) = node.payload.as_mut() {
            p.record.delivered_via = Some(DeliveryPath::LegacyRach);
        }
        self.finish_payload(device, Some(done));
        Ok(())
    }

    fn finish_payload(&mut self, device: DeviceId, delivered_at: Option<SimTime>) {
        let Some(p) = self.nodes[device as usize].payload.take() else {
            return;
        };
        let c = &mut self.tally.cobalt;
        c.signaling_messages += u64::from(signaling_message_count(&p.record));
        match (delivered_at, p.record.delivered_via) {
            (Some(t), via) => {
                c.delivered += 1;
                match via {
                    Some(DeliveryPath::Cobalt) => c.delivered_cobalt += 1,
                    _ => c.delivered_legacy += 1,
                }
                self.tally.latencies.push((t.0 - p.arrival.0) as f64);
            }
            (None, _) => c.dropped += 1,
        }
    }

    fn on_paging(&mut self, device: DeviceId, wake: bool, now: SimTime) -> Result<(), SimError> {
        let drx = self.sc.drx.clone();
        if wake {
            self.kernel.schedule(now.after(drx.paging_cycle_ms), EventKind::PagingOccasion { device, wake: true })?;
        }
        let node = &self.nodes[device as usize];
        let busy = node.dev.rach.state.in_progress() || node.payload.is_some() || now < node.busy_until;
        if busy {
            return Ok(());
        }
        if wake {
            self.switch_radio(device, now, RadioState::Rx)?;
            self.nodes[device as usize]
                .ledger
                .add_lump(now, RadioState::Rx, 0.0, drx.wakeup_overhead_mj);
            self.kernel
                .schedule(now.after(drx.on_duration_ms), EventKind::PagingOccasion { device, wake: false })?;
        } else if node.dev.radio == RadioState::Rx {
            self.switch_radio(device, now, RadioState::Inactive)?;
        }
        Ok(())
    }

    fn on_rach_opportunity(&mut self, now: SimTime) -> Result<(), SimError> {
        self.last_rach = Some(now.0);
        let candidates = self.rach_waiting.remove(&now.0).unwrap_or_default();
        let retx_p = if self.sc.prach.persistent_mode() {
            self.broadcast_probability(candidates.len())
        } else {
            None
        };
        let mut txs: Vec<Transmission> = Vec::new();
        for &device in &candidates {
            let node = &mut self.nodes[device as usize];
            let ctx = RachContext {
                prach: &self.sc.prach,
                eab: &self.sc.eab,
            };
            let step = advance_device(&mut node.dev, RachInput::Opportunity { retx_p }, ctx, &mut node.stream, now)?;
            if let Some(tx) = step.transmitted {
                txs.push(tx);
            }
            self.apply(device, step, now)?;
        }
        if txs.is_empty() {
            return Ok(());
        }
        let result = enb_process_opportunity(&txs, &self.sc.prach, &mut self.cell)?;
        self.tally.opportunities += 1;
        self.tally.used += u64::from(result.used_preambles);
        self.tally.collided += u64::from(result.collided_preambles);
        self.tally.msg1_total += txs.len() as u64;
        if self.sc.prach.retx_control == RetxControl::DeviceEstimate {
            let idle = self.sc.prach.num_preambles - result.used_preambles;
            self.update_estimate(retx_p.unwrap_or(1.0), idle, result.singleton_preambles);
        }
        for (tx, outcome) in txs.iter().zip(result.outcomes) {
            self.drive(tx.device, RachInput::Msg1Result(outcome), now)?;
        }
        Ok(())
    }

    fn cobalt_arrival(&mut self, device: DeviceId, now: SimTime) -> Result<(), SimError> {
        let node = &mut self.nodes[device as usize];
        if node.payload.is_some() || now < node.busy_until {
            self.tally.merged += 1;
            return Ok(());
        }
        self.tally.cobalt.payloads += 1;
        node.payload = Some(Payload {
            arrival: now,
            record: DeliveryRecord::default(),
        });
        let path = self.sc.cobalt.as_ref().map_or(DeliveryPath::LegacyRach, |c| c.path);
        match path {
            DeliveryPath::Cobalt => {
                node.cobalt = CobaltDevice {
                    pending: true,
                    attempts: 0,
                };
                self.switch_radio(device, now, RadioState::Idle)?;
                self.register_cobalt(device, now)
            }
            DeliveryPath::LegacyRach => self.start_access(device, now),
        }
    }

    fn on_cobalt_tti(&mut self, now: SimTime) -> Result<(), SimError> {
        self.last_cobalt = Some(now.0);
        let cfg = self.sc.cobalt.clone().expect("cobalt mode has a cobalt config");
        let devices = self.cobalt_waiting.remove(&now.0).unwrap_or_default();
        let mut attempts = Vec::with_capacity(devices.len());
        for &device in &devices {
            let node = &mut self.nodes[device as usize];
            attempts.push(cobalt_transmit(device, &mut node.cobalt, &cfg, &mut node.stream)?);
            let mut deltas = Vec::new();
            node.dev.transmit(now, self.sc.prach.max_tx_power_dbm, &mut deltas);
            self.book(device, &deltas)?;
        }
        let outcomes = resolve_tti(&attempts, &cfg, now);
        self.tally.cobalt.cobalt_transmissions += attempts.len() as u64;
        for (a, outcome) in attempts.iter().zip(outcomes) {
            let delivered = matches!(outcome, CobaltOutcome::Delivered(_));
            if !delivered {
                self.tally.cobalt.cobalt_collisions += 1;
            }
            self.nodes[a.device as usize].cobalt_outcome = Some(outcome);
            self.kernel.schedule(
                now.after(cfg.ack_delay_sf),
                EventKind::CobaltFeedback {
                    device: a.device,
                    delivered,
                },
            )?;
        }
        Ok(())
    }

    fn on_cobalt_feedback(&mut self, device: DeviceId, now: SimTime) -> Result<(), SimError> {
        let cfg = self.sc.cobalt.clone().expect("cobalt mode has a cobalt config");
        let outcome = self.nodes[device as usize]
            .cobalt_outcome
            .take()
            .expect("feedback follows a transmission");
        match outcome {
            CobaltOutcome::Delivered(at) => {
                self.switch_radio(device, now, RadioState::Inactive)?;
                let node = &mut self.nodes[device as usize];
                node.cobalt.pending = false;
                if let Some(p) = node.payload.as_mut() {
                    p.record.cobalt_attempts = node.cobalt.attempts;
                    p.record.delivered_via = Some(DeliveryPath::Cobalt);
                }
                self.finish_payload(device, Some(at));
            }
            CobaltOutcome::CollisionRetry => {
                self.switch_radio(device, now, RadioState::Idle)?;
                let wait = self.nodes[device as usize].stream.draw_inclusive(cfg.retry_backoff_ms);
                self.register_cobalt(device, now.after(wait))?;
            }
            CobaltOutcome::Exhausted => {
                self.switch_radio(device, now, RadioState::Idle)?;
                self.tally.cobalt.exhausted += 1;
                let node = &mut self.nodes[device as usize];
                node.cobalt.pending = false;
                if let Some(p) = node.payload.as_mut() {
                    p.record.cobalt_attempts = node.cobalt.attempts;
                }
                if cfg.fallback_to_legacy {
                    self.start_access(device, now)?;
                } else {
                    self.switch_radio(device, now, RadioState::Inactive)?;
                    self.finish_payload(device, None);
                }
            }
        }
        Ok(())
    }

    /// One slot of the slotted contention abstraction: feedback is immediate,
    /// so every backlogged device contends in every slot.
    fn on_slot(&mut self, now: SimTime) -> Result<(), SimError> {
        let mut run = self.slots.take().expect("slot mode");
        let backlog = run.backlog.len();
        let p = self.broadcast_probability(backlog);
        let m = self.sc.prach.num_preambles;
        let mut txs = Vec::new();
        for &device in &run.backlog {
            let stream = &mut self.nodes[device as usize].stream;
            if msg1_retx_decision(p, stream)? == RetxDecision::TransmitNow {
                txs.push(Transmission {
                    device,
                    preamble: select_preamble(m, stream)?,
                    attempt: 1,
                });
            }
        }
        let result = enb_process_opportunity(&txs, &self.sc.prach, &mut self.cell)?;
        let winners: Vec<DeviceId> = txs
            .iter()
            .zip(&result.outcomes)
            .filter(|(_, o)| matches!(o, Msg1Outcome::RarGranted { contended: false }))
            .map(|(t, _)| t.device)
            .collect();
        self.tally.opportunities += 1;
        self.tally.used += u64::from(result.used_preambles);
        self.tally.collided += u64::from(result.collided_preambles);
        self.tally.msg1_total += txs.len() as u64;
        if self.sc.prach.retx_control == RetxControl::DeviceEstimate {
            self.update_estimate(p.unwrap_or(1.0), m - result.used_preambles, result.singleton_preambles);
        }

        run.slots += 1;
        run.slot_in_round += 1;
        run.successes += winners.len() as u64;
        run.device_slots += backlog as u64;
        let frac = winners.len() as f64 / backlog as f64;
        run.fraction_sum += frac;
        run.fraction_sq += frac * frac;
        let mut more = true;
        if !self.sc.analytic.saturated {
            run.round_delay += winners.len() as f64 * run.slot_in_round as f64;
            run.backlog.retain(|d| !winners.contains(d));
            if run.backlog.is_empty() {
                run.drain_times.push(run.slot_in_round as f64);
                run.delay_sum += run.round_delay;
                run.round_delay = 0.0;
                run.rounds_done += 1;
                run.slot_in_round = 0;
                if run.rounds_done < u64::from(self.sc.analytic.rounds) {
                    run.backlog = (0..self.nodes.len() as DeviceId).collect();
                } else {
                    more = false;
                }
            }
        }
        self.slots = Some(run);
        if more {
            self.kernel
                .schedule(now.after(self.sc.prach.prach_period_sf), EventKind::RachOpportunity)?;
        }
        Ok(())
    }

    fn slot_stats(&self) -> Option<SlotStats> {
        let run = self.slots.as_ref()?;
        let n = run.slots as f64;
        let (p, se) = if self.sc.analytic.saturated {
            let mean = if n > 0.0 { run.fraction_sum / n } else { 0.0 };
            let var = if n > 1.0 {
                ((run.fraction_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            (mean, (var / n.max(1.0)).sqrt())
        } else {
            let trials = run.device_slots as f64;
            let p = if trials > 0.0 { run.successes as f64 / trials } else { 0.0 };
            (p, (p * (1.0 - p) / trials.max(1.0)).sqrt())
        };
        let rounds = run.drain_times.len() as f64;
        let mean_drain = if rounds > 0.0 { run.drain_times.iter().sum::<f64>() / rounds } else { 0.0 };
        let drain_se = if rounds > 1.0 {
            let var = run.drain_times.iter().map(|d| (d - mean_drain).powi(2)).sum::<f64>() / (rounds - 1.0);
            (var / rounds).sqrt()
        } else {
            0.0
        };
        let completed_devices = rounds * self.nodes.len() as f64;
        Some(SlotStats {
            slots: run.slots,
            rounds: run.rounds_done,
            slot_success_probability: p,
            slot_success_std_error: se,
            mean_delay_slots: if completed_devices > 0.0 {
                run.delay_sum / completed_devices
            } else {
                0.0
            },
            mean_drain_slots: mean_drain,
            drain_std_error: drain_se,
        })
    }

    /// Energy of `node` at `end`, including the open radio segment.
    fn open_segment(&self, node: &Node, end: SimTime) -> (RadioState, f64) {
        let state = node.dev.radio;
        if end <= node.dev.radio_since || (state == RadioState::Inactive && !self.sc.drx.enabled) {
            return (state, 0.0);
        }
        let ms = (end.0 - node.dev.radio_since.0) as f64;
        (state, self.sc.power.power_mw(state, None) * ms / 1000.0)
    }

    fn report(&self, end: SimTime) -> MetricsReport {
        let mut r = MetricsReport::empty(ReportSource::Simulation, self.sc.clone(), self.defaulted.clone(), end.0);
        r.devices = self.nodes.len() as u32;
        if let Some(stats) = self.slot_stats() {
            r.analytic = Some(stats);
        }
        let t = &self.tally;
        r.accesses = t.accesses;
        r.succeeded = t.succeeded;
        r.failed = t.failed;
        r.censored = t.in_progress;
        r.merged_arrivals = t.merged;
        r.barring_events = t.barring;
        r.high = t.high;
        r.low = t.low;
        r.opportunities = t.opportunities;
        r.used_preamble_slots = t.used;
        r.collided_preamble_slots = t.collided;
        r.delay = Summary::of(t.delays.clone());
        r.preamble_histogram = t.histogram.clone();
        r.msg1_total = t.msg1_total;

        let mut per_device = Vec::with_capacity(self.nodes.len());
        let mut per_state = [0.0f64; 4];
        for node in &self.nodes {
            let mut total = 0.0;
            for s in RadioState::ALL {
                per_state[s as usize] += node.ledger.state_mj(s);
            }
            total += node.ledger.total_mj();
            let (state, open) = self.open_segment(node, end);
            per_state[state as usize] += open;
            total += open;
            per_device.push(total);
        }
        r.not_activated = self.nodes.iter().filter(|n| n.arrivals == 0).count() as u64;
        r.energy_per_state_mj = per_state;
        if self.sc.mode != Mode::AnalyticCompare {
            r.energy = Summary::of(per_device.clone());
        }
        if self.sc.mode == Mode::Cobalt {
            let mut c = t.cobalt.clone();
            c.in_flight = c.payloads - c.delivered - c.dropped;
            c.energy_mj = per_device.iter().sum();
            c.latency = Summary::of(t.latencies.clone());
            r.cobalt = Some(c);
        }
        r.backlog_series = t.series.clone();
        if self.sc.trace {
            r.trace = Some(
                self.nodes
                    .iter()
                    .zip(&per_device)
                    .map(|(n, &e)| DeviceRecord {
                        device: n.dev.id,
                        class: n.dev.class,
                        accesses: n.accesses,
                        activation_ms: (n.accesses > 0).then(|| n.dev.rach.activation_time.ms()),
                        outcome: n.last_outcome,
                        completion_ms: n.completion.map(SimTime::ms),
                        preambles_sent: n.dev.signaling.msg1,
                        energy_mj: e,
                    })
                    .collect(),
            );
        }
        r
    }

    /// Energy ledgers of every device, for tests and tracing.
    pub fn device_ledgers(&self) -> impl Iterator<Item = &EnergyLedger> {
        self.nodes.iter().map(|n| &n.ledger)
    }
}
