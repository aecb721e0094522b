//! Rate-controlled replay of a record stream with a bursty schedule and a
//! burn-in ramp.
//!
//! Time is cut into ticks (10 ms by default). Each tick emits a random number
//! of records whose mean tracks the target rate; a small feedback term on the
//! running deficit keeps the long-run rate on target. During burn-in the
//! target rate climbs in one-second steps from `start_fraction` of the full
//! rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::Clock;
use crate::update::StreamRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurnIn {
    pub duration_ms: u64,
    pub start_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurstModel {
    /// Geometric per-tick counts: many quiet ticks, occasional bursts.
    Geometric,
    /// Evenly spread counts; no randomness.
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySpec {
    /// Target mean records per second after burn-in.
    pub rate: f64,
    pub burn_in: Option<BurnIn>,
    pub tick_ms: u64,
    pub burst: BurstModel,
    /// Fraction of the running deficit (expected minus emitted) added to the next tick's mean.
    pub feedback: f64,
    pub seed: u64,
}

impl ReplaySpec {
    pub fn new(rate: f64, seed: u64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        ReplaySpec {
            rate,
            burn_in: None,
            tick_ms: 10,
            burst: BurstModel::Geometric,
            feedback: 0.05,
            seed,
        }
    }

    pub fn with_burn_in(mut self, duration_ms: u64, start_fraction: f64) -> Self {
        assert!((0.0..=1.0).contains(&start_fraction));
        self.burn_in = Some(BurnIn {
            duration_ms,
            start_fraction,
        });
        self
    }

    pub fn with_burst(mut self, burst: BurstModel) -> Self {
        self.burst = burst;
        self
    }

    /// Target rate (records/s) at time `t_ms`.
    pub fn rate_at(&self, t_ms: u64) -> f64 {
        match self.burn_in {
            Some(b) if t_ms < b.duration_ms => {
                let steps = b.duration_ms.div_ceil(1000).max(1);
                let step = t_ms / 1000;
                self.rate * (b.start_fraction + (1.0 - b.start_fraction) * step as f64 / steps as f64)
            }
            _ => self.rate,
        }
    }

    pub fn in_burn_in(&self, t_ms: u64) -> bool {
        self.burn_in.is_some_and(|b| t_ms < b.duration_ms)
    }
}

/// Emission time of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub time_ms: u64,
    pub burn_in: bool,
}

/// Lazily yields emission slots.
#[derive(Debug, Clone)]
pub struct Scheduler {
    spec: ReplaySpec,
    rng: ChaCha8Rng,
    tick: u64,
    left_in_tick: u64,
    expected: f64,
    emitted: u64,
}

impl Scheduler {
    pub fn new(spec: ReplaySpec) -> Self {
        Scheduler {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            spec,
            tick: 0,
            left_in_tick: 0,
            expected: 0.0,
            emitted: 0,
        }
    }

    fn draw(&mut self, t_ms: u64) -> u64 {
        let lambda = self.spec.rate_at(t_ms) * self.spec.tick_ms as f64 / 1000.0;
        self.expected += lambda;
        let deficit = self.expected - self.emitted as f64;
        let mean = (lambda + self.spec.feedback * (deficit - lambda)).max(0.0);
        let n = match self.spec.burst {
            BurstModel::Steady => deficit.floor().max(0.0) as u64,
            BurstModel::Geometric if mean <= 0.0 => 0,
            BurstModel::Geometric => Geometric::new(1.0 / (1.0 + mean))
                .expect("valid probability")
                .sample(&mut self.rng),
        };
        self.emitted += n;
        n
    }
}

impl Iterator for Scheduler {
    type Item = Slot;

    fn next(&mut self) -> Option<Slot> {
        while self.left_in_tick == 0 {
            let t = self.tick * self.spec.tick_ms;
            self.tick += 1;
            self.left_in_tick = self.draw(t);
        }
        self.left_in_tick -= 1;
        let t = (self.tick - 1) * self.spec.tick_ms;
        Some(Slot {
            time_ms: t,
            burn_in: self.spec.in_burn_in(t),
        })
    }
}

/// Emission schedule of the first `n` records.
pub fn schedule(n: usize, spec: ReplaySpec) -> Vec<Slot> {
    Scheduler::new(spec).take(n).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampedRecord {
    pub record: StreamRecord,
    /// Admission time on the replay clock.
    pub ingress_ms: u64,
    pub burn_in: bool,
}

/// Replays `records` in order, waiting on `clock` until each record's slot.
/// Commit records pass through immediately and take no slot.
pub struct Replay<I, C> {
    records: I,
    slots: Scheduler,
    clock: C,
}

pub fn replay<I, C>(records: I, spec: ReplaySpec, clock: C) -> Replay<I::IntoIter, C>
where
    I: IntoIterator<Item = StreamRecord>,
    C: Clock,
{
    Replay {
        records: records.into_iter(),
        slots: Scheduler::new(spec),
        clock,
    }
}

impl<I: Iterator<Item = StreamRecord>, C: Clock> Iterator for Replay<I, C> {
    type Item = TimestampedRecord;

    fn next(&mut self) -> Option<TimestampedRecord> {
        let record = self.records.next()?;
        if record.is_commit() {
            let now = self.clock.now_ms();
            return Some(TimestampedRecord {
                record,
                ingress_ms: now,
                burn_in: self.slots.spec.in_burn_in(now),
            });
        }
        let slot = self.slots.next().expect("schedule is endless");
        self.clock.sleep_until(slot.time_ms);
        Some(TimestampedRecord {
            record,
            ingress_ms: self.clock.now_ms(),
            burn_in: slot.burn_in,
        })
    }
}
