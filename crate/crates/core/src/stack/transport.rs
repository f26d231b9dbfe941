//! Transport semantics: single-shot datagrams on sensor links and
//! acknowledged, retransmitted delivery on the base-station backbone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Unreliable,
    Reliable,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("delivery abandoned after {attempts} attempts")]
    DeliveryAbandoned { attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransportOutcome {
    pub delivered: bool,
    pub attempts: u32,
}

/// Plays out one send, drawing one loss trial per attempt from `rng`.
/// Unreliable sends make one attempt; reliable sends retry up to
/// `max_retries` times.
pub fn transport_send(
    mode: TransportMode,
    loss_prob: f64,
    max_retries: u32,
    rng: &mut RngStream,
) -> Result<TransportOutcome, TransportError> {
    match mode {
        TransportMode::Unreliable => Ok(TransportOutcome {
            delivered: !rng.chance(loss_prob),
            attempts: 1,
        }),
        TransportMode::Reliable => {
            for attempt in 1..=max_retries + 1 {
                if !rng.chance(loss_prob) {
                    return Ok(TransportOutcome {
                        delivered: true,
                        attempts: attempt,
                    });
                }
            }
            Err(TransportError::DeliveryAbandoned {
                attempts: max_retries + 1,
            })
        }
    }
}

#[derive(Debug, Clone)]
struct Outstanding<T> {
    payload: T,
    attempts: u32,
}

#[derive(Debug, PartialEq)]
pub enum TimeoutAction<'a, T> {
    /// Already acknowledged; nothing to do.
    Settled,
    Retransmit { payload: &'a T, attempt: u32 },
    Abandon(T),
}

/// Sender half of an acknowledged channel, driven by event-loop timers.
#[derive(Debug, Clone)]
pub struct ReliableSender<T> {
    next_seq: u64,
    outstanding: BTreeMap<u64, Outstanding<T>>,
    max_retries: u32,
    pub retransmissions: u64,
    pub abandoned: u64,
}

impl<T> ReliableSender<T> {
    pub fn new(max_retries: u32) -> Self {
        Self {
            next_seq: 0,
            outstanding: BTreeMap::new(),
            max_retries,
            retransmissions: 0,
            abandoned: 0,
        }
    }

    /// Registers a first transmission and returns its sequence number.
    pub fn send(&mut self, payload: T) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.outstanding.insert(seq, Outstanding { payload, attempts: 1 });
        seq
    }

    pub fn payload(&self, seq: u64) -> Option<&T> {
        self.outstanding.get(&seq).map(|o| &o.payload)
    }

    pub fn on_ack(&mut self, seq: u64) -> Option<T> {
        self.outstanding.remove(&seq).map(|o| o.payload)
    }

    pub fn on_timeout(&mut self, seq: u64) -> TimeoutAction<'_, T> {
        let Some(o) = self.outstanding.get(&seq) else {
            return TimeoutAction::Settled;
        };
        if o.attempts > self.max_retries {
            self.abandoned += 1;
            let o = self.outstanding.remove(&seq).unwrap();
            return TimeoutAction::Abandon(o.payload);
        }
        self.retransmissions += 1;
        let o = self.outstanding.get_mut(&seq).unwrap();
        o.attempts += 1;
        TimeoutAction::Retransmit {
            payload: &o.payload,
            attempt: o.attempts,
        }
    }

    /// Payloads sent but not yet acknowledged or abandoned.
    pub fn outstanding(&self) -> impl Iterator<Item = &T> {
        self.outstanding.values().map(|o| &o.payload)
    }

    pub fn in_flight(&self) -> usize {
        self.outstanding.len()
    }
}
