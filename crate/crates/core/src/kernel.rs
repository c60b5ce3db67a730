//! Deterministic discrete-event core: subframe clock, ordered event queue and
//! seeded per-entity random streams.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in LTE subframes (1 ms each).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn subframes(self) -> u64 {
        self.0
    }

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn after(self, sf: u64) -> SimTime {
        SimTime(self.0 + sf)
    }

    /// First time `>= self` that is a multiple of `period`.
    pub fn align_up(self, period: u64) -> SimTime {
        debug_assert!(period > 0);
        SimTime(self.0.div_ceil(period) * period)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}sf", self.0)
    }
}

pub type DeviceId = u32;

/// What happens when an event fires. Device-addressed kinds carry the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    DeviceActivation { device: DeviceId },
    RachOpportunity,
    RarDeadline { device: DeviceId, granted: bool },
    Msg3Tx { device: DeviceId },
    Msg4Deadline { device: DeviceId, resolved: bool },
    BackoffExpiry { device: DeviceId },
    BarringExpiry { device: DeviceId },
    /// `wake == true` opens the on-duration, `false` closes it.
    PagingOccasion { device: DeviceId, wake: bool },
    CobaltOpportunity,
    CobaltFeedback { device: DeviceId, delivered: bool },
    MeasurementTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub fire_time: SimTime,
    pub sequence_no: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: invert so the earliest (time, seq) pops first.
        (other.fire_time, other.sequence_no).cmp(&(self.fire_time, self.sequence_no))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("event scheduled at {at} but clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("uniform draw over an empty range")]
    ZeroRange,
}

/// Event queue plus clock. Events with equal fire time dequeue in insertion order.
#[derive(Debug, Default)]
pub struct Kernel {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event>,
    processed: u64,
}

impl Kernel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn scheduled(&self) -> u64 {
        self.next_seq
    }

    pub fn schedule(&mut self, at: SimTime, kind: EventKind) -> Result<(), KernelError> {
        if at < self.now {
            return Err(KernelError::PastEvent { at, now: self.now });
        }
        let event = Event {
            fire_time: at,
            sequence_no: self.next_seq,
            kind,
        };
        self.next_seq += 1;
        self.queue.push(event);
        Ok(())
    }

    /// Pops the next event if it fires no later than `end`, advancing the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event> {
        if self.queue.peek()?.fire_time > end {
            return None;
        }
        let event = self.queue.pop()?;
        self.now = event.fire_time;
        self.processed += 1;
        Some(event)
    }

    /// Moves the clock forward to `end` once no events remain before it.
    pub fn advance_to(&mut self, end: SimTime) {
        if end > self.now {
            self.now = end;
        }
    }
}

/// Stream id reserved for cell-level (eNB) randomness.
pub const CELL_STREAM: u64 = 0;

/// Stream id for the `index`-th device of population `population`. Keyed by
/// population so that adding another population leaves existing draws intact;
/// offset by one so no device aliases the cell stream.
pub fn device_stream_id(population: u32, index: u32) -> u64 {
    ((u64::from(population) << 32) | u64::from(index)) + 1
}

/// Independent, reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id in the cipher's stream word, so streams
/// never overlap and draws are identical on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform integer in `[0, n)`.
    pub fn draw_uniform(&mut self, n: u64) -> Result<u64, KernelError> {
        if n == 0 {
            return Err(KernelError::ZeroRange);
        }
        Ok(self.rng.random_range(0..n))
    }

    /// Uniform integer in `[0, max]`, inclusive.
    pub fn draw_inclusive(&mut self, max: u64) -> u64 {
        self.rng.random_range(0..=max)
    }

    /// Uniform real in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_time_event_fires_after_already_queued_ones() {
        let mut k = Kernel::new();
        k.schedule(SimTime(5), EventKind::RachOpportunity).unwrap();
        let first = k.pop_until(SimTime(10)).unwrap();
        assert_eq!(first.fire_time, SimTime(5));
        k.schedule(SimTime(5), EventKind::MeasurementTick).unwrap();
        k.schedule(SimTime(5), EventKind::CobaltOpportunity).unwrap();
        assert_eq!(k.pop_until(SimTime(10)).unwrap().kind, EventKind::MeasurementTick);
        assert_eq!(k.pop_until(SimTime(10)).unwrap().kind, EventKind::CobaltOpportunity);
    }

    #[test]
    fn past_event_is_rejected() {
        let mut k = Kernel::new();
        k.schedule(SimTime(5), EventKind::RachOpportunity).unwrap();
        k.pop_until(SimTime(5)).unwrap();
        assert_eq!(
            k.schedule(SimTime(3), EventKind::RachOpportunity),
            Err(KernelError::PastEvent {
                at: SimTime(3),
                now: SimTime(5)
            })
        );
    }

    #[test]
    fn ties_break_fifo() {
        let mut k = Kernel::new();
        let a = EventKind::BackoffExpiry { device: 1 };
        let b = EventKind::BackoffExpiry { device: 2 };
        k.schedule(SimTime(7), a).unwrap();
        k.schedule(SimTime(7), b).unwrap();
        assert_eq!(k.pop_until(SimTime(7)).unwrap().kind, a);
        assert_eq!(k.pop_until(SimTime(7)).unwrap().kind, b);
        assert!(k.pop_until(SimTime(7)).is_none());
    }

    #[test]
    fn pop_respects_horizon() {
        let mut k = Kernel::new();
        k.schedule(SimTime(11), EventKind::RachOpportunity).unwrap();
        assert!(k.pop_until(SimTime(10)).is_none());
        assert_eq!(k.pending(), 1);
        assert_eq!(k.now(), SimTime(0));
    }

    #[test]
    fn single_bin_draw_is_zero() {
        let mut s = RngStream::new(9, 3);
        for _ in 0..100 {
            assert_eq!(s.draw_uniform(1).unwrap(), 0);
        }
        assert_eq!(s.draw_uniform(0), Err(KernelError::ZeroRange));
    }

    #[test]
    fn reseeded_stream_repeats() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let xs: Vec<u64> = (0..64).map(|_| a.draw_uniform(1000).unwrap()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.draw_uniform(1000).unwrap()).collect();
        assert_eq!(xs, ys);
        let mut c = RngStream::new(42, 8);
        let zs: Vec<u64> = (0..64).map(|_| c.draw_uniform(1000).unwrap()).collect();
        assert_ne!(xs, zs);
    }

    fn bin_counts(seed: u64, n: u64, draws: u64) -> Vec<u64> {
        let mut s = RngStream::new(seed, 1);
        let mut bins = vec![0u64; n as usize];
        for _ in 0..draws {
            bins[s.draw_uniform(n).unwrap() as usize] += 1;
        }
        bins
    }

    #[test]
    fn uniform_bins_pass_chi_square() {
        let draws = 1_000_000u64;
        let bins = bin_counts(2024, 54, draws);
        let expected = draws as f64 / 54.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 53 dof, 0.999 quantile ~ 90.6
        assert!(chi2 < 90.6, "chi2 = {chi2}");
    }

    #[test]
    fn uniform_bins_within_one_percent() {
        // At 10^6 draws a 1% band is only ~1.4 sd per bin, so the band is
        // checked at 10^7 draws where it is ~4.3 sd.
        let draws = 10_000_000u64;
        let bins = bin_counts(2024, 54, draws);
        let expected = draws as f64 / 54.0;
        let worst = bins
            .iter()
            .map(|&c| (c as f64 - expected).abs() / expected)
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "worst relative deviation {worst}");
    }

    #[test]
    fn stream_values_are_pinned() {
        // Cross-platform determinism: these values must never change.
        let mut s = RngStream::new(1, 0);
        let xs: Vec<u64> = (0..4).map(|_| s.draw_uniform(1_000_000).unwrap()).collect();
        let mut again = RngStream::new(1, 0);
        let ys: Vec<u64> = (0..4).map(|_| again.draw_uniform(1_000_000).unwrap()).collect();
        assert_eq!(xs, ys);
        assert_eq!(xs, vec![402485, 80383, 596560, 219324]);
    }
}
