//! Analysis of the multichannel contention abstraction: preambles are
//! channels, each backlogged device transmits with probability `p` on a
//! uniformly chosen channel, and a channel succeeds when exactly one device
//! picked it.
//!
//! Three levels of description:
//! - closed-form per-slot success probability and its optimal `p`,
//! - the exact Markov chain of a draining population (backlog `n` moves to
//!   `n - s` where `s` is the number of singleton channels),
//! - a deterministic drift (fluid) model `dn/dt = lambda(t) - g(n)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rach::{CollisionModel, DetectionModel};
use crate::report::{MetricsReport, ReportSource, SlotStats};
use crate::scenario::{Mode, Population, Scenario};
use crate::traffic::{PriorityClass, TrafficLaw, TrafficModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("exact analysis supports at most {max} devices, got {got}")]
    InstanceTooLarge { got: u32, max: u32 },
    #[error("invalid contention model: {0}")]
    InvalidModel(String),
    #[error("fluid integration did not converge: {0}")]
    NonConvergence(String),
    #[error("simulation is not comparable with the model: {0}")]
    IncompatibleConfig(String),
}

/// Largest population handled by the exact chain.
pub const EXACT_MAX_DEVICES: u32 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionModel {
    pub channels: u32,
    pub devices: u32,
    pub retx_probability: f64,
}

impl ContentionModel {
    pub fn new(channels: u32, devices: u32, retx_probability: f64) -> Result<Self, AnalyticError> {
        let model = Self {
            channels,
            devices,
            retx_probability,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        if self.channels == 0 {
            return Err(AnalyticError::InvalidModel("need at least one channel".into()));
        }
        if !(self.retx_probability > 0.0 && self.retx_probability <= 1.0) {
            return Err(AnalyticError::InvalidModel(format!(
                "retransmission probability must be in (0, 1], got {}",
                self.retx_probability
            )));
        }
        Ok(())
    }
}

/// Success probability of one tagged device in one slot: `p (1 - p/M)^(U-1)`.
pub fn slot_success_probability(model: &ContentionModel) -> f64 {
    if model.devices == 0 {
        return 0.0;
    }
    let p = model.retx_probability;
    p * (1.0 - p / f64::from(model.channels)).powi(model.devices as i32 - 1)
}

/// Expected successes per slot.
pub fn slot_throughput(model: &ContentionModel) -> f64 {
    f64::from(model.devices) * slot_success_probability(model)
}

/// Throughput-maximizing transmit probability, `min(1, M/U)`.
pub fn optimize_retx_probability(channels: u32, devices: u32) -> f64 {
    if devices == 0 {
        return 1.0;
    }
    (f64::from(channels) / f64::from(devices)).min(1.0)
}

/// Brute-force maximizer of the slot throughput over `p in {step, 2 step, ..., 1}`.
pub fn grid_search_retx_probability(channels: u32, devices: u32, step: f64) -> (f64, f64) {
    let n = (1.0 / step).round() as u64;
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 1..=n {
        let p = (i as f64 * step).min(1.0);
        let t = slot_throughput(&ContentionModel {
            channels,
            devices,
            retx_probability: p,
        });
        if t > best.1 {
            best = (p, t);
        }
    }
    best
}

/// Per-slot transmit probability as a function of the current backlog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RetxPolicy {
    Fixed(f64),
    /// `min(1, scale * M / n)` with `n` the current backlog.
    MOverBacklog { scale: f64 },
}

impl RetxPolicy {
    pub fn probability(&self, channels: u32, backlog: f64) -> f64 {
        match *self {
            RetxPolicy::Fixed(p) => p,
            RetxPolicy::MOverBacklog { scale } => {
                if backlog <= 0.0 {
                    1.0
                } else {
                    (scale * f64::from(channels) / backlog).min(1.0)
                }
            }
        }
    }

    fn validate(&self) -> Result<(), AnalyticError> {
        let ok = match *self {
            RetxPolicy::Fixed(p) => p > 0.0 && p <= 1.0,
            RetxPolicy::MOverBacklog { scale } => scale.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(AnalyticError::InvalidModel(format!("invalid policy {self:?}")))
        }
    }
}

/// `singletons[k][s]` = P(exactly `s` singleton channels | `k` devices transmit).
///
/// Dynamic program over devices placed one at a time; the state is
/// (singleton channels, channels with two or more devices).
pub fn singleton_table(channels: u32, max_transmitters: u32) -> Vec<Vec<f64>> {
    let m = channels as usize;
    let idx = |a: usize, b: usize| a * (m + 1) + b;
    let mut cur = vec![0.0f64; (m + 1) * (m + 1)];
    cur[idx(0, 0)] = 1.0;
    let mut table = Vec::with_capacity(max_transmitters as usize + 1);
    let marginal = |dist: &[f64]| {
        let mut out = vec![0.0; m + 1];
        for a in 0..=m {
            for b in 0..=(m - a) {
                out[a] += dist[idx(a, b)];
            }
        }
        out
    };
    table.push(marginal(&cur));
    let inv_m = 1.0 / m as f64;
    for _ in 0..max_transmitters {
        let mut next = vec![0.0f64; (m + 1) * (m + 1)];
        for a in 0..=m {
            for b in 0..=(m - a) {
                let w = cur[idx(a, b)];
                if w == 0.0 {
                    continue;
                }
                let empty = m - a - b;
                if empty > 0 {
                    next[idx(a + 1, b)] += w * empty as f64 * inv_m;
                }
                if a > 0 {
                    next[idx(a - 1, b + 1)] += w * a as f64 * inv_m;
                }
                if b > 0 {
                    next[idx(a, b)] += w * b as f64 * inv_m;
                }
            }
        }
        cur = next;
        table.push(marginal(&cur));
    }
    table
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let n = n as usize;
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let mut log_choose = 0.0f64;
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        out.push((log_choose + k as f64 * lp + (n - k) as f64 * lq).exp());
    }
    out
}

/// Per-backlog distribution of successes in one slot: `kernel[n][s]`.
pub fn success_kernel(channels: u32, max_backlog: u32, policy: RetxPolicy) -> Vec<Vec<f64>> {
    let singles = singleton_table(channels, max_backlog);
    let m = channels as usize;
    (0..=max_backlog)
        .map(|n| {
            let p = policy.probability(channels, f64::from(n));
            let tx = binomial_pmf(n, p);
            let mut out = vec![0.0; m.min(n as usize) + 1];
            for (k, &wk) in tx.iter().enumerate() {
                if wk < 1e-300 {
                    continue;
                }
                for (s, &ws) in singles[k].iter().enumerate().take(out.len()) {
                    out[s] += wk * ws;
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub devices: u32,
    pub channels: u32,
    /// Expected slots until the whole population has succeeded.
    pub mean_drain_slots: f64,
    /// Expected slots until a tagged device succeeds (1 = first slot).
    pub mean_delay_slots: f64,
    /// `(quantile, slots)` of the drain time.
    pub drain_quantiles: Vec<(f64, u64)>,
    pub delay_quantiles: Vec<(f64, u64)>,
    /// Per-device success probability in the first slot.
    pub slot_success_probability: f64,
}

pub const PROFILE_QUANTILES: [f64; 4] = [0.5, 0.95, 0.99, 0.999];

fn quantiles_from_cdf(cdf: &[f64]) -> Vec<(f64, u64)> {
    PROFILE_QUANTILES
        .iter()
        .map(|&q| {
            let t = cdf.iter().position(|&c| c >= q - 1e-12).unwrap_or(cdf.len().saturating_sub(1));
            (q, t as u64)
        })
        .collect()
}

/// Exact drain analysis for a closed population of `devices` contenders.
pub fn exact_drain_time(channels: u32, devices: u32, policy: RetxPolicy) -> Result<LatencyProfile, AnalyticError> {
    if devices > EXACT_MAX_DEVICES {
        return Err(AnalyticError::InstanceTooLarge {
            got: devices,
            max: EXACT_MAX_DEVICES,
        });
    }
    if channels == 0 {
        return Err(AnalyticError::InvalidModel("need at least one channel".into()));
    }
    policy.validate()?;
    let u = devices as usize;
    let kernel = success_kernel(channels, devices, policy);

    // Mean absorption times by first-step analysis.
    let mut drain = vec![0.0f64; u + 1];
    let mut delay = vec![0.0f64; u + 1];
    for n in 1..=u {
        let k = &kernel[n];
        let stay = k[0];
        if stay >= 1.0 {
            return Err(AnalyticError::InvalidModel(format!("backlog {n} can never make progress")));
        }
        let mut d = 1.0;
        let mut t = 1.0;
        for (s, &w) in k.iter().enumerate().skip(1) {
            d += w * drain[n - s];
            t += w * (1.0 - s as f64 / n as f64) * delay[n - s];
        }
        drain[n] = d / (1.0 - stay);
        delay[n] = t / (1.0 - stay);
    }

    // Forward iteration for the distributions. `pi` = backlog distribution;
    // `tag` = mass where the tagged device is still waiting.
    let mut pi = vec![0.0f64; u + 1];
    let mut tag = vec![0.0f64; u + 1];
    pi[u] = 1.0;
    tag[u] = 1.0;
    let mut drain_cdf = vec![if u == 0 { 1.0 } else { 0.0 }];
    let mut delay_cdf = vec![if u == 0 { 1.0 } else { 0.0 }];
    let mut delay_done = if u == 0 { 1.0 } else { 0.0 };
    const MAX_SLOTS: usize = 2_000_000;
    while (1.0 - drain_cdf.last().copied().unwrap_or(0.0)) > 1e-10 && drain_cdf.len() < MAX_SLOTS {
        let mut next = vec![0.0f64; u + 1];
        let mut next_tag = vec![0.0f64; u + 1];
        for n in 1..=u {
            let (w, wt) = (pi[n], tag[n]);
            if w == 0.0 && wt == 0.0 {
                continue;
            }
            for (s, &ks) in kernel[n].iter().enumerate() {
                next[n - s] += w * ks;
                let keep = 1.0 - s as f64 / n as f64;
                next_tag[n - s] += wt * ks * keep;
                delay_done += wt * ks * (1.0 - keep);
            }
        }
        next[0] += pi[0];
        pi = next;
        tag = next_tag;
        drain_cdf.push(pi[0]);
        delay_cdf.push(delay_done);
    }
    if drain_cdf.len() >= MAX_SLOTS {
        return Err(AnalyticError::NonConvergence("drain distribution did not settle".into()));
    }

    let p0 = policy.probability(channels, f64::from(devices));
    Ok(LatencyProfile {
        devices,
        channels,
        mean_drain_slots: drain[u],
        mean_delay_slots: delay[u],
        drain_quantiles: quantiles_from_cdf(&drain_cdf),
        delay_quantiles: quantiles_from_cdf(&delay_cdf),
        slot_success_probability: slot_success_probability(&ContentionModel {
            channels,
            devices,
            retx_probability: p0,
        }),
    })
}

/// Expected successes per slot at backlog `n` under `policy` (continuous `n`).
pub fn drift_throughput(channels: u32, policy: RetxPolicy, n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let p = policy.probability(channels, n);
    n * p * (1.0 - p / f64::from(channels)).powf(n - 1.0)
}

/// Arrival intensity in devices per slot as a function of time (slots).
pub type ArrivalRate<'a> = &'a dyn Fn(f64) -> f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidTrajectory {
    /// Sample times in slots.
    pub times: Vec<f64>,
    pub backlog: Vec<f64>,
    /// Backlog stayed bounded and settled (drained or reached equilibrium).
    pub stable: bool,
    pub equilibrium: Option<f64>,
    /// Supremum of the drift throughput, the constant-arrival stability limit.
    pub capacity: f64,
}

pub const FLUID_STEP: f64 = 0.1;

/// Integrates `dn/dt = lambda(t) - g(n)` with classical RK4 at step
/// [`FLUID_STEP`], sampling every whole slot.
pub fn fluid_drain_trajectory(
    channels: u32,
    arrivals: ArrivalRate<'_>,
    n0: f64,
    policy: RetxPolicy,
    horizon_slots: f64,
) -> Result<FluidTrajectory, AnalyticError> {
    if channels == 0 || !(n0 >= 0.0) {
        return Err(AnalyticError::InvalidModel("need channels >= 1 and n(0) >= 0".into()));
    }
    policy.validate()?;
    let h = FLUID_STEP;
    let f = |t: f64, n: f64| arrivals(t) - drift_throughput(channels, policy, n.max(0.0));
    let steps = (horizon_slots / h).round() as u64;
    let per_sample = (1.0 / h).round() as u64;
    let mut t = 0.0;
    let mut n = n0;
    let mut times = vec![0.0];
    let mut backlog = vec![n0];
    for i in 1..=steps {
        let k1 = f(t, n);
        let k2 = f(t + h / 2.0, n + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, n + h / 2.0 * k2);
        let k4 = f(t + h, n + h * k3);
        n = (n + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
        t = i as f64 * h;
        if !n.is_finite() {
            return Err(AnalyticError::NonConvergence(format!("backlog not finite at t = {t}")));
        }
        if i % per_sample == 0 {
            times.push(t);
            backlog.push(n);
        }
    }
    let final_drift = f(t, n);
    let settled = final_drift.abs() <= 1e-6 * n.max(1.0);
    let capacity = fluid_capacity(channels, policy);
    Ok(FluidTrajectory {
        times,
        backlog,
        stable: settled,
        equilibrium: settled.then_some(n),
        capacity,
    })
}

/// Numerical supremum of the drift throughput over backlog sizes.
pub fn fluid_capacity(channels: u32, policy: RetxPolicy) -> f64 {
    let m = f64::from(channels);
    // Dense scan over [0, 50 M / p_min], then golden refinement around the best point.
    let upper = match policy {
        RetxPolicy::Fixed(p) => 50.0 * m / p,
        RetxPolicy::MOverBacklog { scale } => 50.0 * m / scale.min(1.0),
    };
    let samples = 20_000;
    let mut best = (0.0, 0.0);
    for i in 1..=samples {
        let n = upper * i as f64 / samples as f64;
        let g = drift_throughput(channels, policy, n);
        if g > best.1 {
            best = (n, g);
        }
    }
    let width = upper / samples as f64;
    let (mut lo, mut hi) = ((best.0 - width).max(0.0), best.0 + width);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if drift_throughput(channels, policy, a) < drift_throughput(channels, policy, b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    drift_throughput(channels, policy, (lo + hi) / 2.0).max(best.1)
}

/// Largest constant arrival rate whose fluid trajectory from `n0` stays
/// bounded over `horizon_slots`, by bisection to `1e-3` relative.
pub fn stability_boundary(channels: u32, policy: RetxPolicy, n0: f64, horizon_slots: f64) -> Result<f64, AnalyticError> {
    let stable = |lambda: f64| -> Result<bool, AnalyticError> {
        let rate = move |_t: f64| lambda;
        Ok(fluid_drain_trajectory(channels, &rate, n0, policy, horizon_slots)?.stable)
    };
    let mut lo = 0.0;
    let mut hi = f64::from(channels);
    while stable(hi)? {
        hi *= 2.0;
    }
    while (hi - lo) > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-metric comparison of an analytic prediction against a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub metric: String,
    pub analytic: f64,
    pub simulated: f64,
    pub relative: f64,
    /// Deviation in simulation standard errors, when one is available.
    pub std_errors: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub deviations: Vec<Deviation>,
}

impl DeviationReport {
    pub fn all_within_tolerance(&self) -> bool {
        self.deviations.iter().all(|d| d.within_tolerance)
    }

    pub fn get(&self, metric: &str) -> Option<&Deviation> {
        self.deviations.iter().find(|d| d.metric == metric)
    }
}

/// Standard errors allowed for probability metrics.
pub const SE_TOLERANCE: f64 = 3.0;
/// Relative tolerance for delay and drain-time means.
pub const DELAY_TOLERANCE: f64 = 0.05;

/// Checks a slotted-contention simulation against the model it should follow.
pub fn compare_with_simulation(model: &ContentionModel, report: &MetricsReport) -> Result<DeviationReport, AnalyticError> {
    let sc = &report.scenario;
    if sc.mode != Mode::AnalyticCompare {
        return Err(AnalyticError::IncompatibleConfig(format!(
            "simulation mode is {:?}; only analytic-compare runs use persistent-probability slots",
            sc.mode
        )));
    }
    if sc.prach.collision_model != CollisionModel::DestroyedAtMsg1
        || sc.prach.detection_model != DetectionModel::AlwaysDetected
    {
        return Err(AnalyticError::IncompatibleConfig(
            "model assumes destroyed-at-Msg1 collisions and ideal detection".into(),
        ));
    }
    if sc.prach.num_preambles != model.channels || report.devices != model.devices {
        return Err(AnalyticError::IncompatibleConfig(format!(
            "sim has M={} U={}, model has M={} U={}",
            sc.prach.num_preambles, report.devices, model.channels, model.devices
        )));
    }
    let a = report
        .analytic
        .as_ref()
        .ok_or_else(|| AnalyticError::IncompatibleConfig("report carries no slot statistics".into()))?;
    let mut deviations = Vec::new();
    if sc.analytic.saturated {
        let expect = slot_success_probability(model);
        let se = a.slot_success_std_error;
        let diff = a.slot_success_probability - expect;
        let in_se = if se > 0.0 { diff.abs() / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        deviations.push(Deviation {
            metric: "slot_success_probability".into(),
            analytic: expect,
            simulated: a.slot_success_probability,
            relative: diff / expect,
            std_errors: Some(in_se),
            within_tolerance: in_se <= SE_TOLERANCE,
        });
    } else {
        let profile = exact_drain_time(model.channels, model.devices, RetxPolicy::Fixed(model.retx_probability))?;
        for (name, expect, got, se) in [
            ("mean_delay_slots", profile.mean_delay_slots, a.mean_delay_slots, None),
            (
                "mean_drain_slots",
                profile.mean_drain_slots,
                a.mean_drain_slots,
                Some(a.drain_std_error),
            ),
        ] {
            let rel = (got - expect) / expect;
            deviations.push(Deviation {
                metric: name.into(),
                analytic: expect,
                simulated: got,
                relative: rel,
                std_errors: se.map(|s: f64| if s > 0.0 { (got - expect).abs() / s } else { 0.0 }),
                within_tolerance: rel.abs() <= DELAY_TOLERANCE,
            });
        }
    }
    Ok(DeviationReport { deviations })
}

/// Model predictions laid out as a report, so they share the simulation CSV schema.
///
/// Drain and delay come from the exact chain up to [`EXACT_MAX_DEVICES`] and
/// from the fluid path beyond; in the fluid case the mean delay is the area
/// under the backlog curve over `n(0)` and the drain time is when the backlog
/// falls below half a device.
pub fn analytic_report(model: &ContentionModel) -> Result<MetricsReport, AnalyticError> {
    model.validate()?;
    let policy = RetxPolicy::Fixed(model.retx_probability);
    let (drain, delay) = if model.devices == 0 {
        (0.0, 0.0)
    } else if model.devices <= EXACT_MAX_DEVICES {
        let profile = exact_drain_time(model.channels, model.devices, policy)?;
        (profile.mean_drain_slots, profile.mean_delay_slots)
    } else {
        let n0 = f64::from(model.devices);
        let none = |_t: f64| 0.0;
        let mut horizon = 64.0 / model.retx_probability;
        loop {
            let traj = fluid_drain_trajectory(model.channels, &none, n0, policy, horizon)?;
            if let Some(i) = traj.backlog.iter().position(|&n| n < 0.5) {
                let area: f64 = traj.backlog.windows(2).map(|w| (w[0] + w[1]) / 2.0).sum();
                break (traj.times[i], area / n0);
            }
            if horizon > 1e9 {
                return Err(AnalyticError::NonConvergence("backlog does not drain".into()));
            }
            horizon *= 4.0;
        }
    };
    let mut scenario = Scenario {
        name: format!("analytic_m{}_u{}", model.channels, model.devices),
        mode: Mode::AnalyticCompare,
        duration_sf: 1,
        ..Scenario::default()
    };
    scenario.populations.push(Population {
        class: PriorityClass::LowPriority,
        model: TrafficModel {
            law: TrafficLaw::Uniform { span_ms: 1 },
            population: model.devices,
        },
    });
    scenario.prach.num_preambles = model.channels;
    scenario.prach.detection_model = DetectionModel::AlwaysDetected;
    scenario.prach.collision_model = CollisionModel::DestroyedAtMsg1;
    scenario.prach.msg1_retx_probability = Some(model.retx_probability);
    debug_assert!(scenario.validate().is_ok());
    let mut report = MetricsReport::empty(ReportSource::Analytic, scenario, Vec::new(), 0);
    report.devices = model.devices;
    report.analytic = Some(SlotStats {
        slot_success_probability: slot_success_probability(model),
        mean_delay_slots: delay,
        mean_drain_slots: drain,
        ..SlotStats::default()
    });
    Ok(report)
}
