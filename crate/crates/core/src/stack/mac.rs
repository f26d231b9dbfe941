//! MAC layer: fragmentation into frames, a bounded transmit queue and
//! carrier sensing on a shared per-region channel with random backoff.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::SimTime;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LinkDest {
    Unicast(u32),
    /// One transmission addressed to several listed neighbours.
    Multicast(Vec<u32>),
    Broadcast,
}

impl LinkDest {
    /// Unicast for a single target, multicast otherwise.
    pub fn to_all(targets: Vec<u32>) -> Self {
        if targets.len() == 1 {
            LinkDest::Unicast(targets[0])
        } else {
            LinkDest::Multicast(targets)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacFrame {
    pub sender: u32,
    pub dest: LinkDest,
    pub packet_id: u32,
    /// Packet kind byte, repeated in every fragment header.
    pub kind: u8,
    pub fragment_index: u8,
    pub fragment_total: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub max_frame_bytes: usize,
    /// Queue capacity in frames.
    pub queue_cap: usize,
    /// Backoff is uniform in `[1, backoff_slots]` slots.
    pub backoff_slots: u64,
    pub slot_s: u64,
    /// Channel occupancy per frame.
    pub frame_airtime_s: u64,
    /// Upper bound of the random delay before a node's first access attempt
    /// after its queue becomes non-empty.
    pub access_jitter_s: u64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self {
            max_frame_bytes: 40,
            queue_cap: 32,
            backoff_slots: 16,
            slot_s: 1,
            frame_airtime_s: 1,
            access_jitter_s: 30,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_frame_bytes == 0 || self.max_frame_bytes > 255 * 255 {
            return Err("max_frame_bytes must be positive".into());
        }
        if self.queue_cap == 0 {
            return Err("MAC queue capacity must be positive".into());
        }
        if self.backoff_slots == 0 || self.slot_s == 0 || self.frame_airtime_s == 0 {
            return Err("backoff slots, slot time and airtime must be positive".into());
        }
        Ok(())
    }

    pub fn frames_for(&self, bytes: usize) -> usize {
        bytes.div_ceil(self.max_frame_bytes).max(1)
    }
}

pub fn fragment(
    sender: u32,
    dest: LinkDest,
    packet_id: u32,
    packet: &[u8],
    max_frame_bytes: usize,
) -> Vec<MacFrame> {
    let chunks: Vec<&[u8]> = if packet.is_empty() {
        vec![&[][..]]
    } else {
        packet.chunks(max_frame_bytes).collect()
    };
    let total = chunks.len() as u8;
    let kind = packet.first().copied().unwrap_or(0);
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, c)| MacFrame {
            sender,
            dest: dest.clone(),
            packet_id,
            kind,
            fragment_index: i as u8,
            fragment_total: total,
            payload: c.to_vec(),
        })
        .collect()
}

/// Per-receiver reassembly buffers keyed by `(sender, packet_id)`.
#[derive(Debug, Default)]
pub struct Reassembler {
    partial: BTreeMap<(u32, u32), Vec<Option<Vec<u8>>>>,
}

impl Reassembler {
    /// Stores a frame; returns the full packet once every fragment arrived.
    pub fn accept(&mut self, frame: &MacFrame) -> Option<Vec<u8>> {
        if frame.fragment_total <= 1 {
            return Some(frame.payload.clone());
        }
        let key = (frame.sender, frame.packet_id);
        let slots = self
            .partial
            .entry(key)
            .or_insert_with(|| vec![None; frame.fragment_total as usize]);
        let idx = frame.fragment_index as usize;
        if idx >= slots.len() {
            return None;
        }
        slots[idx] = Some(frame.payload.clone());
        if slots.iter().all(Option::is_some) {
            let slots = self.partial.remove(&key).unwrap();
            Some(slots.into_iter().flatten().flatten().collect())
        } else {
            None
        }
    }

    pub fn discard(&mut self, sender: u32, packet_id: u32) {
        self.partial.remove(&(sender, packet_id));
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}

/// Shared medium for one region: at most one frame on the air at a time.
#[derive(Debug, Default, Clone)]
pub struct Channel {
    busy_until: SimTime,
    pub transmissions: u64,
    pub deferrals: u64,
}

impl Channel {
    pub fn is_idle(&self, now: SimTime) -> bool {
        self.busy_until <= now
    }

    fn occupy(&mut self, now: SimTime, airtime_s: u64) {
        self.busy_until = now.plus(airtime_s);
        self.transmissions += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedFrame {
    pub frame: MacFrame,
    /// Distance the radio must reach, for the amplifier energy term.
    pub distance_km: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("MAC queue overflow: {dropped} frame(s) dropped")]
    QueueOverflow { dropped: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacStats {
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub packets_dropped: u64,
    pub backoffs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MacOutcome {
    /// The head frame went on the air. `next_attempt` is set when more
    /// frames are waiting.
    Transmitted {
        frame: QueuedFrame,
        next_attempt: Option<SimTime>,
    },
    /// Channel busy; try again at `retry_at`.
    Deferred { retry_at: SimTime },
    Empty,
}

#[derive(Debug, Default)]
pub struct Mac {
    queue: VecDeque<QueuedFrame>,
    next_packet_id: u32,
    /// An access attempt is already scheduled.
    pub attempt_scheduled: bool,
    pub stats: MacStats,
}

impl Mac {
    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn queued_frames(&self) -> impl Iterator<Item = &QueuedFrame> {
        self.queue.iter()
    }

    /// Fragments `packet` and queues all of its frames. A packet that does not
    /// fit is dropped whole, since a partial packet can never be reassembled.
    pub fn enqueue(
        &mut self,
        sender: u32,
        dest: LinkDest,
        packet: &[u8],
        distance_km: f64,
        params: &MacParams,
    ) -> Result<usize, MacError> {
        let frames = fragment(sender, dest, self.next_packet_id, packet, params.max_frame_bytes);
        self.next_packet_id = self.next_packet_id.wrapping_add(1);
        let n = frames.len();
        if self.queue.len() + n > params.queue_cap {
            self.stats.frames_dropped += n as u64;
            self.stats.packets_dropped += 1;
            return Err(MacError::QueueOverflow { dropped: n });
        }
        self.queue
            .extend(frames.into_iter().map(|frame| QueuedFrame { frame, distance_km }));
        Ok(n)
    }

    /// One carrier-sense attempt for the head-of-line frame.
    pub fn attempt(
        &mut self,
        now: SimTime,
        channel: &mut Channel,
        params: &MacParams,
        rng: &mut RngStream,
    ) -> MacOutcome {
        if self.queue.is_empty() {
            return MacOutcome::Empty;
        }
        if !channel.is_idle(now) {
            let slots = rng.range_inclusive(1, params.backoff_slots);
            self.stats.backoffs += 1;
            channel.deferrals += 1;
            return MacOutcome::Deferred {
                retry_at: now.plus(slots * params.slot_s),
            };
        }
        channel.occupy(now, params.frame_airtime_s);
        let frame = self.queue.pop_front().unwrap();
        self.stats.frames_sent += 1;
        let next_attempt = (!self.queue.is_empty()).then(|| now.plus(params.frame_airtime_s));
        MacOutcome::Transmitted { frame, next_attempt }
    }
}
