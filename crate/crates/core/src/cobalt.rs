//! Contention-based small-data transmission on a reserved PUSCH region, and
//! the uplink frame map that carves that region out of the cell grid.
//!
//! The variant implemented here: each pending device picks one resource block
//! of the region uniformly at the next contention TTI. A block used by exactly
//! one device delivers and is acknowledged; blocks used by two or more devices
//! lose every transmission (no capture). Losers back off uniformly in
//! `[0, retry_backoff_ms]` and try again, up to `max_retries` retries, after
//! which the payload is exhausted and may fall back to the legacy RACH path.
//!
//! Message accounting used for comparisons:
//! legacy = Msg1 + Msg2 + Msg3 + Msg4 + uplink grant + data (6 when clean),
//! contention path = one data transmission per attempt + one ack (2 when clean).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{DeviceId, RngStream, SimTime};
use crate::rach::{PrachConfig, SignalingCounts};

/// Resource blocks occupied by one PRACH allocation.
pub const PRACH_RBS: u32 = 6;

/// Legacy small-data tail after Msg4: uplink grant, then data on PUSCH.
pub const LEGACY_GRANT_AFTER_MSG4_SF: u64 = 1;
pub const LEGACY_DATA_AFTER_GRANT_SF: u64 = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CobaltError {
    #[error("requested {requested} contention RBs but only {free} are free after PUCCH/PRACH")]
    RegionOverflow { requested: u32, free: u32 },
    #[error("device {0} has no pending payload")]
    NoPendingData(DeviceId),
    #[error("invalid contention config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryPath {
    LegacyRach,
    Cobalt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CobaltConfig {
    pub region_rbs_per_tti: u32,
    pub tti_period_sf: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub payload_fits_one_rb: bool,
    pub fallback_to_legacy: bool,
    pub ack_delay_sf: u64,
    pub bandwidth_rbs: u32,
    pub pucch_rbs_per_edge: u32,
    /// Which path the scenario's payloads take.
    pub path: DeliveryPath,
}

impl Default for CobaltConfig {
    fn default() -> Self {
        Self {
            region_rbs_per_tti: 4,
            tti_period_sf: 1,
            max_retries: 5,
            retry_backoff_ms: 10,
            payload_fits_one_rb: true,
            fallback_to_legacy: true,
            ack_delay_sf: 4,
            bandwidth_rbs: 25,
            pucch_rbs_per_edge: 2,
            path: DeliveryPath::Cobalt,
        }
    }
}

impl CobaltConfig {
    pub fn validate(&self, prach: &PrachConfig) -> Result<(), CobaltError> {
        if self.region_rbs_per_tti == 0 {
            return Err(CobaltError::InvalidConfig("cobalt.region_rbs_per_tti must be >= 1".into()));
        }
        if self.tti_period_sf == 0 || self.max_retries == 0 || self.ack_delay_sf == 0 {
            return Err(CobaltError::InvalidConfig(
                "cobalt.tti_period_sf, cobalt.max_retries and cobalt.ack_delay_sf must be >= 1".into(),
            ));
        }
        if !self.payload_fits_one_rb {
            return Err(CobaltError::InvalidConfig(
                "multi-RB payloads are not supported (cobalt.payload_fits_one_rb must be true)".into(),
            ));
        }
        build_frame_map(self.bandwidth_rbs, prach, Some(self)).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellTag {
    Prach,
    Pucch,
    PuschH2h,
    PuschCobalt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellCounts {
    pub prach: u64,
    pub pucch: u64,
    pub h2h: u64,
    pub cobalt: u64,
}

impl CellCounts {
    pub fn total(&self) -> u64 {
        self.prach + self.pucch + self.h2h + self.cobalt
    }
}

/// Subframe x resource-block grid over one repetition window of the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMap {
    pub bandwidth_rbs: u32,
    pub window_sf: u64,
    /// `cells[sf][rb]`.
    pub cells: Vec<Vec<CellTag>>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Lays out PUCCH at both band edges in every subframe, PRACH next to the
/// lower PUCCH edge every `prach_period_sf`, the contention region next to the
/// upper PUCCH edge every `tti_period_sf`; everything else is H2H PUSCH.
pub fn build_frame_map(
    bandwidth_rbs: u32,
    prach: &PrachConfig,
    cobalt: Option<&CobaltConfig>,
) -> Result<FrameMap, CobaltError> {
    let pucch = cobalt.map_or(2, |c| c.pucch_rbs_per_edge);
    let region = cobalt.map_or(0, |c| c.region_rbs_per_tti);
    let tti = cobalt.map_or(1, |c| c.tti_period_sf);
    let free = bandwidth_rbs.saturating_sub(2 * pucch + PRACH_RBS);
    if 2 * pucch + PRACH_RBS > bandwidth_rbs || region > free {
        return Err(CobaltError::RegionOverflow {
            requested: region,
            free,
        });
    }
    let period = prach.prach_period_sf;
    let window = period / gcd(period, tti) * tti;
    let cells = (0..window)
        .map(|sf| {
            (0..bandwidth_rbs)
                .map(|rb| {
                    if rb < pucch || rb >= bandwidth_rbs - pucch {
                        CellTag::Pucch
                    } else if sf % period == 0 && rb < pucch + PRACH_RBS {
                        CellTag::Prach
                    } else if sf % tti == 0 && rb >= bandwidth_rbs - pucch - region {
                        CellTag::PuschCobalt
                    } else {
                        CellTag::PuschH2h
                    }
                })
                .collect()
        })
        .collect();
    Ok(FrameMap {
        bandwidth_rbs,
        window_sf: window,
        cells,
    })
}

impl FrameMap {
    pub fn counts(&self) -> CellCounts {
        let mut c = CellCounts::default();
        for tag in self.cells.iter().flatten() {
            match tag {
                CellTag::Prach => c.prach += 1,
                CellTag::Pucch => c.pucch += 1,
                CellTag::PuschH2h => c.h2h += 1,
                CellTag::PuschCobalt => c.cobalt += 1,
            }
        }
        c
    }

    /// Cell usage over `subframes` starting at subframe 0.
    pub fn counts_over(&self, subframes: u64) -> CellCounts {
        let per_sf: Vec<CellCounts> = self
            .cells
            .iter()
            .map(|row| {
                let mut c = CellCounts::default();
                for tag in row {
                    match tag {
                        CellTag::Prach => c.prach += 1,
                        CellTag::Pucch => c.pucch += 1,
                        CellTag::PuschH2h => c.h2h += 1,
                        CellTag::PuschCobalt => c.cobalt += 1,
                    }
                }
                c
            })
            .collect();
        let window = self.window_sf;
        let full = subframes / window;
        let window_counts = self.counts();
        let mut total = CellCounts {
            prach: window_counts.prach * full,
            pucch: window_counts.pucch * full,
            h2h: window_counts.h2h * full,
            cobalt: window_counts.cobalt * full,
        };
        for c in &per_sf[..(subframes % window) as usize] {
            total.prach += c.prach;
            total.pucch += c.pucch;
            total.h2h += c.h2h;
            total.cobalt += c.cobalt;
        }
        total
    }
}

/// Per-device contention-path state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CobaltDevice {
    pub pending: bool,
    /// Transmissions made for the current payload.
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CobaltAttempt {
    pub device: DeviceId,
    pub rb: u32,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CobaltOutcome {
    Delivered(SimTime),
    CollisionRetry,
    Exhausted,
}

/// Device side of one contention TTI: picks a resource block for its payload.
pub fn cobalt_transmit(
    id: DeviceId,
    dev: &mut CobaltDevice,
    cfg: &CobaltConfig,
    stream: &mut RngStream,
) -> Result<CobaltAttempt, CobaltError> {
    if !dev.pending {
        return Err(CobaltError::NoPendingData(id));
    }
    let rb = stream
        .draw_uniform(u64::from(cfg.region_rbs_per_tti))
        .map_err(|_| CobaltError::InvalidConfig("empty contention region".into()))? as u32;
    dev.attempts += 1;
    Ok(CobaltAttempt {
        device: id,
        rb,
        attempt: dev.attempts,
    })
}

/// Receiver side of one contention TTI at `now`. Outcomes follow input order;
/// devices sharing a resource block are either all delivered or none is.
pub fn resolve_tti(attempts: &[CobaltAttempt], cfg: &CobaltConfig, now: SimTime) -> Vec<CobaltOutcome> {
    let mut per_rb = vec![0u32; cfg.region_rbs_per_tti as usize];
    for a in attempts {
        per_rb[a.rb as usize] += 1;
    }
    attempts
        .iter()
        .map(|a| {
            if per_rb[a.rb as usize] == 1 {
                CobaltOutcome::Delivered(now.after(1))
            } else if a.attempt > cfg.max_retries {
                CobaltOutcome::Exhausted
            } else {
                CobaltOutcome::CollisionRetry
            }
        })
        .collect()
}

/// Messages exchanged for one payload.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub rach: SignalingCounts,
    pub cobalt_attempts: u32,
    /// Path that finally delivered the payload, if any.
    pub delivered_via: Option<DeliveryPath>,
}

pub fn signaling_message_count(record: &DeliveryRecord) -> u32 {
    let legacy_data = if record.delivered_via == Some(DeliveryPath::LegacyRach) {
        2
    } else {
        0
    };
    let ack = u32::from(record.delivered_via == Some(DeliveryPath::Cobalt));
    record.rach.total() + legacy_data + record.cobalt_attempts + ack
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legacy_only_map() {
        let map = build_frame_map(25, &PrachConfig::default(), None).unwrap();
        let c = map.counts();
        assert_eq!(c.cobalt, 0);
        assert_eq!(c.total(), 5 * 25);
    }

    #[test]
    fn overflow_rejected() {
        let cfg = CobaltConfig {
            region_rbs_per_tti: 16,
            ..CobaltConfig::default()
        };
        assert_eq!(
            build_frame_map(25, &PrachConfig::default(), Some(&cfg)),
            Err(CobaltError::RegionOverflow { requested: 16, free: 15 })
        );
    }

    #[test]
    fn pucch_is_continuous_at_edges() {
        let cfg = CobaltConfig::default();
        let map = build_frame_map(25, &PrachConfig::default(), Some(&cfg)).unwrap();
        for row in &map.cells {
            assert_eq!(row[0], CellTag::Pucch);
            assert_eq!(row[1], CellTag::Pucch);
            assert_eq!(row[23], CellTag::Pucch);
            assert_eq!(row[24], CellTag::Pucch);
        }
    }

    #[test]
    fn messages_for_clean_paths() {
        let legacy = DeliveryRecord {
            rach: SignalingCounts {
                msg1: 1,
                msg2: 1,
                msg3: 1,
                msg4: 1,
            },
            cobalt_attempts: 0,
            delivered_via: Some(DeliveryPath::LegacyRach),
        };
        assert_eq!(signaling_message_count(&legacy), 6);
        let cobalt = DeliveryRecord {
            cobalt_attempts: 1,
            delivered_via: Some(DeliveryPath::Cobalt),
            ..Default::default()
        };
        assert_eq!(signaling_message_count(&cobalt), 2);
        for k in 0..5 {
            let r = DeliveryRecord {
                cobalt_attempts: 1 + k,
                ..cobalt
            };
            assert_eq!(signaling_message_count(&r), 2 + k);
        }
    }

    #[test]
    fn lone_device_delivers_and_pair_in_one_rb_collides() {
        let mut s = RngStream::new(1, 1);
        let cfg = CobaltConfig::default();
        let mut dev = CobaltDevice {
            pending: true,
            attempts: 0,
        };
        let a = cobalt_transmit(1, &mut dev, &cfg, &mut s).unwrap();
        assert_eq!(resolve_tti(&[a], &cfg, SimTime(3)), vec![CobaltOutcome::Delivered(SimTime(4))]);

        let one = CobaltConfig {
            region_rbs_per_tti: 1,
            ..cfg
        };
        let mut d1 = CobaltDevice {
            pending: true,
            attempts: 0,
        };
        let mut d2 = d1.clone();
        let a1 = cobalt_transmit(1, &mut d1, &one, &mut s).unwrap();
        let a2 = cobalt_transmit(2, &mut d2, &one, &mut s).unwrap();
        assert_eq!(
            resolve_tti(&[a1, a2], &one, SimTime(0)),
            vec![CobaltOutcome::CollisionRetry; 2]
        );
    }

    #[test]
    fn retries_exhaust() {
        let cfg = CobaltConfig {
            region_rbs_per_tti: 1,
            max_retries: 2,
            ..CobaltConfig::default()
        };
        let a = CobaltAttempt {
            device: 1,
            rb: 0,
            attempt: 3,
        };
        let b = CobaltAttempt {
            device: 2,
            rb: 0,
            attempt: 1,
        };
        assert_eq!(
            resolve_tti(&[a, b], &cfg, SimTime(0)),
            vec![CobaltOutcome::Exhausted, CobaltOutcome::CollisionRetry]
        );
    }

    #[test]
    fn no_pending_payload() {
        let mut s = RngStream::new(1, 1);
        let mut dev = CobaltDevice::default();
        assert_eq!(
            cobalt_transmit(9, &mut dev, &CobaltConfig::default(), &mut s),
            Err(CobaltError::NoPendingData(9))
        );
    }
}
