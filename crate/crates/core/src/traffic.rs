//! Activation-time laws and recurring data arrivals for device populations.

use rand_distr::{Beta, Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{RngStream, SimTime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("invalid traffic parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("law `{0}` is a one-shot activation law and has no recurring arrivals")]
    UnsupportedLaw(&'static str),
}

/// Shape parameters of the bursty activation law (traffic model 2).
pub const DEFAULT_BETA_ALPHA: f64 = 3.0;
pub const DEFAULT_BETA_BETA: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum TrafficLaw {
    Uniform { span_ms: u64 },
    Beta { alpha: f64, beta: f64, span_ms: u64 },
    Poisson { rate_per_s: f64 },
    Periodic { period_ms: u64, jitter_ms: u64 },
}

impl TrafficLaw {
    pub fn name(&self) -> &'static str {
        match self {
            TrafficLaw::Uniform { .. } => "uniform",
            TrafficLaw::Beta { .. } => "beta",
            TrafficLaw::Poisson { .. } => "poisson",
            TrafficLaw::Periodic { .. } => "periodic",
        }
    }

    /// One-shot laws activate each device exactly once inside a finite span.
    pub fn is_one_shot(&self) -> bool {
        matches!(self, TrafficLaw::Uniform { .. } | TrafficLaw::Beta { .. })
    }

    pub fn span_ms(&self) -> Option<u64> {
        match *self {
            TrafficLaw::Uniform { span_ms } | TrafficLaw::Beta { span_ms, .. } => Some(span_ms),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        fn positive(name: &'static str, v: f64) -> Result<(), TrafficError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(TrafficError::InvalidParameter {
                    name,
                    reason: format!("must be > 0, got {v}"),
                })
            }
        }
        match *self {
            TrafficLaw::Uniform { span_ms } => positive("span_ms", span_ms as f64),
            TrafficLaw::Beta {
                alpha,
                beta,
                span_ms,
            } => {
                positive("alpha", alpha)?;
                positive("beta", beta)?;
                positive("span_ms", span_ms as f64)
            }
            TrafficLaw::Poisson { rate_per_s } => positive("rate_per_s", rate_per_s),
            TrafficLaw::Periodic { period_ms, .. } => positive("period_ms", period_ms as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityClass {
    HighPriority,
    LowPriority,
}

impl PriorityClass {
    pub const ALL: [PriorityClass; 2] = [PriorityClass::HighPriority, PriorityClass::LowPriority];

    pub fn key(self) -> &'static str {
        match self {
            PriorityClass::HighPriority => "high",
            PriorityClass::LowPriority => "low",
        }
    }

    pub fn from_key(s: &str) -> Option<Self> {
        match s {
            "high" => Some(PriorityClass::HighPriority),
            "low" => Some(PriorityClass::LowPriority),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub law: TrafficLaw,
    pub population: u32,
}

/// Population share of each class; shares sum to 1 when the total is non-zero.
pub fn class_shares(pops: &[(PriorityClass, u32)]) -> Vec<(PriorityClass, f64)> {
    let total: u64 = pops.iter().map(|&(_, n)| u64::from(n)).sum();
    PriorityClass::ALL
        .iter()
        .filter_map(|&class| {
            let n: u64 = pops
                .iter()
                .filter(|&&(c, _)| c == class)
                .map(|&(_, n)| u64::from(n))
                .sum();
            (n > 0).then(|| (class, n as f64 / total as f64))
        })
        .collect()
}

pub fn sample_beta(alpha: f64, beta: f64, stream: &mut RngStream) -> Result<f64, TrafficError> {
    let dist = Beta::new(alpha, beta).map_err(|e| TrafficError::InvalidParameter {
        name: "alpha/beta",
        reason: e.to_string(),
    })?;
    Ok(dist.sample(stream))
}

/// Continuous instant to subframe, by floor: activation never precedes the draw.
fn quantize(ms: f64) -> SimTime {
    SimTime(ms.max(0.0).floor() as u64)
}

/// Draws one device's first activation. One-shot laws stay inside `[0, span]`;
/// periodic devices get a uniform phase and Poisson devices an exponential first gap.
pub fn sample_activation_time(law: &TrafficLaw, stream: &mut RngStream) -> Result<SimTime, TrafficError> {
    law.validate()?;
    Ok(match *law {
        TrafficLaw::Uniform { span_ms } => quantize(stream.unit() * span_ms as f64),
        TrafficLaw::Beta {
            alpha,
            beta,
            span_ms,
        } => quantize(sample_beta(alpha, beta, stream)? * span_ms as f64),
        TrafficLaw::Poisson { .. } => next_data_arrival(law, SimTime::ZERO, stream)?,
        TrafficLaw::Periodic { period_ms, .. } => SimTime(stream.draw_inclusive(period_ms - 1)),
    })
}

/// Activation times for a whole population, sorted ascending.
pub fn sample_activation_times(model: &TrafficModel, stream: &mut RngStream) -> Result<Vec<SimTime>, TrafficError> {
    model.law.validate()?;
    let mut times = (0..model.population)
        .map(|_| sample_activation_time(&model.law, stream))
        .collect::<Result<Vec<_>, _>>()?;
    times.sort_unstable();
    Ok(times)
}

/// Next data arrival strictly after `now` for recurring laws.
pub fn next_data_arrival(law: &TrafficLaw, now: SimTime, stream: &mut RngStream) -> Result<SimTime, TrafficError> {
    law.validate()?;
    match *law {
        TrafficLaw::Poisson { rate_per_s } => {
            let exp = Exp::new(rate_per_s / 1000.0).map_err(|e| TrafficError::InvalidParameter {
                name: "rate_per_s",
                reason: e.to_string(),
            })?;
            let gap: f64 = exp.sample(stream);
            Ok(now.after((gap.ceil() as u64).max(1)))
        }
        TrafficLaw::Periodic {
            period_ms,
            jitter_ms,
        } => {
            let offset = if jitter_ms == 0 {
                0
            } else {
                stream.draw_inclusive(2 * jitter_ms) as i64 - jitter_ms as i64
            };
            let next = (now.0 + period_ms) as i64 + offset;
            Ok(SimTime(next.max(now.0 as i64 + 1) as u64))
        }
        ref one_shot => Err(TrafficError::UnsupportedLaw(one_shot.name())),
    }
}
