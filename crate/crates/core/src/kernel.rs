//! Discrete-event kernel: virtual clock, ordered event queue and delayed
//! delivery between registered entities.
//!
//! Time is counted in whole virtual seconds. Events fire in `(fire_at, seq)`
//! order where `seq` is a global monotone counter assigned at scheduling time,
//! so simultaneous events always run in the order they were scheduled.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One simulated year.
pub const YEAR_S: u64 = 31_536_000;
pub const DAY_S: u64 = 86_400;

/// Virtual seconds since simulation start.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn secs(self) -> u64 {
        self.0
    }

    pub fn plus(self, delay_s: u64) -> SimTime {
        SimTime(self.0 + delay_s)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    SensorNode,
    LocalBaseStation,
    RemoteBaseStation,
    Environment,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::SensorNode => "sensor",
            EntityKind::LocalBaseStation => "local_bs",
            EntityKind::RemoteBaseStation => "remote_bs",
            EntityKind::Environment => "environment",
        }
    }
}

/// Stable handle for a simulated entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u32,
}

impl EntityId {
    pub const fn sensor(index: u32) -> Self {
        Self {
            kind: EntityKind::SensorNode,
            index,
        }
    }

    pub const fn local_bs(index: u32) -> Self {
        Self {
            kind: EntityKind::LocalBaseStation,
            index,
        }
    }

    pub const fn remote_bs(index: u32) -> Self {
        Self {
            kind: EntityKind::RemoteBaseStation,
            index,
        }
    }

    pub const fn environment() -> Self {
        Self {
            kind: EntityKind::Environment,
            index: 0,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.index)
    }
}

/// Short label written into the event trace for each payload.
pub trait PayloadTag {
    fn tag(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: EntityId,
    /// Sender, for messages delivered through [`Kernel::send_delayed`].
    pub from: Option<EntityId>,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.fire_at, self.0.seq)
    }
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled at t={fire_at} but clock is already at t={now}")]
    SchedulingInPast { fire_at: SimTime, now: SimTime },
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
}

/// Receives events popped by [`Kernel::run_until`].
pub trait Handler<P> {
    fn handle(&mut self, kernel: &mut Kernel<P>, event: Event<P>);
}

impl<P, F> Handler<P> for F
where
    F: FnMut(&mut Kernel<P>, Event<P>),
{
    fn handle(&mut self, kernel: &mut Kernel<P>, event: Event<P>) {
        self(kernel, event)
    }
}

/// Tab-separated trace of processed events, with a running SHA-256 of
/// everything written.
pub struct TraceSink {
    writer: Option<Box<dyn Write>>,
    hasher: Sha256,
    lines: u64,
    io_error: Option<std::io::Error>,
}

impl TraceSink {
    /// Digest only; nothing is written.
    pub fn digest_only() -> Self {
        Self {
            writer: None,
            hasher: Sha256::new(),
            lines: 0,
            io_error: None,
        }
    }

    pub fn to_writer(writer: Box<dyn Write>) -> Self {
        Self {
            writer: Some(writer),
            ..Self::digest_only()
        }
    }

    fn record(&mut self, line: &str) {
        self.hasher.update(line.as_bytes());
        self.lines += 1;
        if let Some(w) = self.writer.as_mut() {
            if self.io_error.is_none() {
                if let Err(e) = w.write_all(line.as_bytes()) {
                    self.io_error = Some(e);
                }
            }
        }
    }

    /// Flushes the writer and returns `(lines, hex digest)`.
    pub fn finish(mut self) -> std::io::Result<(u64, String)> {
        if let Some(e) = self.io_error.take() {
            return Err(e);
        }
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok((self.lines, hex::encode(self.hasher.finalize())))
    }
}

pub fn trace_line(time: SimTime, seq: u64, target: EntityId, tag: &str) -> String {
    format!("{}\t{}\t{}\t{}\n", time, seq, target, tag)
}

pub struct Kernel<P> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    entities: HashSet<EntityId>,
    trace: Option<TraceSink>,
    processed: u64,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Self {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            entities: HashSet::new(),
            trace: None,
            processed: 0,
        }
    }

    pub fn register(&mut self, id: EntityId) {
        self.entities.insert(id);
    }

    pub fn is_registered(&self, id: EntityId) -> bool {
        self.entities.contains(&id)
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Queued events in no particular order.
    pub fn pending_events(&self) -> impl Iterator<Item = &Event<P>> {
        self.queue.iter().map(|Reverse(q)| &q.0)
    }

    /// Total events processed over the kernel's lifetime.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn set_trace(&mut self, sink: TraceSink) {
        self.trace = Some(sink);
    }

    pub fn take_trace(&mut self) -> Option<TraceSink> {
        self.trace.take()
    }

    /// Queues `payload` for `target` at `fire_at`; returns the assigned seq.
    pub fn schedule(
        &mut self,
        fire_at: SimTime,
        target: EntityId,
        payload: P,
    ) -> Result<u64, KernelError> {
        self.push(fire_at, target, None, payload)
    }

    /// Delivers `payload` to `to` after `delay_s` seconds.
    pub fn send_delayed(
        &mut self,
        from: EntityId,
        to: EntityId,
        payload: P,
        delay_s: u64,
    ) -> Result<u64, KernelError> {
        if !self.entities.contains(&from) {
            return Err(KernelError::UnknownEntity(from));
        }
        let at = self.clock.plus(delay_s);
        self.push(at, to, Some(from), payload)
    }

    fn push(
        &mut self,
        fire_at: SimTime,
        target: EntityId,
        from: Option<EntityId>,
        payload: P,
    ) -> Result<u64, KernelError> {
        if fire_at < self.clock {
            return Err(KernelError::SchedulingInPast {
                fire_at,
                now: self.clock,
            });
        }
        if !self.entities.contains(&target) {
            return Err(KernelError::UnknownEntity(target));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued(Event {
            fire_at,
            seq,
            target,
            from,
            payload,
        })));
        Ok(seq)
    }

    /// Time of the next queued event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(q)| q.0.fire_at)
    }

    /// Pops the next event if it fires at or before `horizon`, advancing the
    /// clock to it.
    pub fn pop_until(&mut self, horizon: SimTime) -> Option<Event<P>>
    where
        P: PayloadTag,
    {
        match self.queue.peek() {
            Some(Reverse(q)) if q.0.fire_at <= horizon => {}
            _ => return None,
        }
        let Reverse(Queued(ev)) = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.clock);
        self.clock = ev.fire_at;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.record(&trace_line(ev.fire_at, ev.seq, ev.target, &ev.payload.tag()));
        }
        Some(ev)
    }

    /// Processes every event with `fire_at <= horizon` in `(fire_at, seq)`
    /// order. Returns the number of events processed by this call.
    pub fn run_until<H: Handler<P>>(&mut self, horizon: SimTime, handler: &mut H) -> u64
    where
        P: PayloadTag,
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(horizon) {
            handler.handle(self, ev);
            count += 1;
        }
        count
    }
}
