//! Deterministic discrete-event core.
//!
//! One global clock drives both the radio timeline (message attempts and
//! arrivals) and the ledger timeline (block wins and receptions). Time is kept
//! in integer microseconds so ordering never depends on float comparison; ties
//! at equal timestamps resolve in insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in whole microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> SimTime {
        SimTime((secs * 1e6).round().max(0.0) as u64)
    }

    /// Duration conversion that never collapses a positive span to zero.
    pub fn span_ceil(secs: f64) -> SimTime {
        if secs <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime(((secs * 1e6).ceil() as u64).max(1))
    }

    pub fn from_micros(us: u64) -> SimTime {
        SimTime(us)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    MessageAttempt,
    MessageArrival,
    BlockWon,
    BlockReceived,
    MetricTick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<P> {
    pub time: SimTime,
    pub kind: EventKind,
    pub payload: P,
    pub seq: u64,
}

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.time == other.0.time && self.0.seq == other.0.seq
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("event scheduled at {event} but the clock is already at {clock}")]
    PastEvent { event: SimTime, clock: SimTime },
    #[error("exponential rate must be positive, got {0}")]
    NonPositiveRate(f64),
}

/// Event queue plus clock. Handlers receive it mutably so they can schedule
/// follow-up events.
pub struct Scheduler<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    logging: bool,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler { clock: SimTime::ZERO, next_seq: 0, queue: BinaryHeap::new(), logging: true }
    }

    /// With logging off, `run_until` returns an empty log.
    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind, payload: P) -> Result<u64, EngineError> {
        if time < self.clock {
            return Err(EngineError::PastEvent { event: time, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(SimEvent { time, kind, payload, seq }));
        Ok(seq)
    }

    /// Schedules `delay` after the current clock.
    pub fn schedule_in(&mut self, delay: SimTime, kind: EventKind, payload: P) -> u64 {
        let t = self.clock + delay;
        self.schedule(t, kind, payload).expect("future event")
    }

    fn pop_due(&mut self, end: SimTime) -> Option<SimEvent<P>> {
        match self.queue.peek() {
            Some(q) if q.0.time <= end => self.queue.pop().map(|q| q.0),
            _ => None,
        }
    }
}

/// Handlers may rewrite the payload; the rewritten payload is what gets logged.
pub trait EventHandler<P> {
    fn handle(&mut self, event: &mut SimEvent<P>, sched: &mut Scheduler<P>);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord<P> {
    pub time_us: u64,
    pub kind: EventKind,
    pub payload: P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog<P> {
    pub records: Vec<LogRecord<P>>,
}

impl<P> Default for EventLog<P> {
    fn default() -> Self {
        EventLog { records: Vec::new() }
    }
}

impl<P: Serialize> EventLog<P> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Newline-delimited JSON, one `{time_us, kind, payload}` object per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<P> Scheduler<P> {
    /// Processes every event with `time <= end`, in order. The clock finishes
    /// at `end` when the queue drains early, otherwise at the last event time.
    pub fn run_until<H: EventHandler<P>>(&mut self, end: SimTime, handler: &mut H) -> EventLog<P> {
        let mut log = EventLog::default();
        while let Some(mut ev) = self.pop_due(end) {
            debug_assert!(ev.time >= self.clock);
            self.clock = ev.time;
            handler.handle(&mut ev, self);
            if self.logging {
                log.records.push(LogRecord { time_us: ev.time.0, kind: ev.kind, payload: ev.payload });
            }
        }
        if self.clock < end {
            self.clock = end;
        }
        log
    }
}

/// Independent random sub-streams, one per stochastic subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamId {
    Shadowing = 1,
    Fading = 2,
    BlockTimes = 3,
    BroadcastTimes = 4,
    Strategy = 5,
    HashPower = 6,
    Mobility = 7,
    Phases = 8,
}

const KEY_BITS: u32 = 56;

/// Derives reproducible generators from one 64-bit seed. Each named stream is
/// a separate ChaCha stream, so drawing more from one never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

pub type StreamRng = ChaCha8Rng;

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, id: StreamId) -> StreamRng {
        self.keyed(id, 0)
    }

    /// Generator for one `(stream, key)` cell. Used for draws that must stay
    /// aligned across runs whose decisions differ (e.g. fading per vehicle per
    /// round), so that paired-seed comparisons see common random numbers.
    pub fn keyed(&self, id: StreamId, key: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let key = key & ((1u64 << KEY_BITS) - 1);
        rng.set_stream(((id as u64) << KEY_BITS) | key);
        rng
    }
}

/// Uniform draw on the half-open interval (0, 1].
pub fn uniform_open0<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Exponential variate `-ln(u)/rate`. A draw of exactly `u = 1` would give a
/// zero duration and is redrawn.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, EngineError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(EngineError::NonPositiveRate(rate));
    }
    loop {
        let u = uniform_open0(rng);
        if let Some(x) = exponential_from_uniform(u, rate) {
            return Ok(x);
        }
    }
}

/// Maps a uniform `u` in (0, 1] to an exponential variate; `None` for `u = 1`.
pub fn exponential_from_uniform(u: f64, rate: f64) -> Option<f64> {
    let x = -u.ln() / rate;
    if x > 0.0 {
        Some(x)
    } else {
        None
    }
}
