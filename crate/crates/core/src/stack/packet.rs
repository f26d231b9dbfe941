//! Network-layer packets and their fixed binary encodings.
//!
//! A data report always encodes to [`DATA_PACKET_BYTES`] bytes. Interests
//! grow by nine bytes per attribute filter; reinforcements are twelve bytes.
//! Node identifiers travel as `u16`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Attribute, SensorReading};
use crate::kernel::SimTime;
use crate::rng::stable_hash;

pub const DATA_PACKET_BYTES: usize = 64;
pub const REINFORCE_PACKET_BYTES: usize = 12;
const INTEREST_HEADER_BYTES: usize = 20;
const NO_HOP: u16 = u16::MAX;

pub const KIND_DATA: u8 = 0x01;
pub const KIND_INTEREST: u8 = 0x02;
pub const KIND_REINFORCE: u8 = 0x03;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("packet truncated: {0} bytes")]
    Truncated(usize),
    #[error("unknown packet kind {0:#04x}")]
    UnknownKind(u8),
    #[error("unknown attribute code {0}")]
    BadAttribute(u8),
    #[error("unknown data route tag {0}")]
    BadRoute(u8),
}

/// How a data report is being routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataRoute {
    /// Periodic report up the binary collection tree.
    Tree,
    /// Response to a directed-diffusion interest.
    Diffusion { interest_id: u32 },
    /// Flooded with a hop limit.
    Flood,
}

impl DataRoute {
    pub fn interest_id(&self) -> u32 {
        match self {
            DataRoute::Diffusion { interest_id } => *interest_id,
            _ => 0,
        }
    }
}

/// Inclusive value filter on one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f32,
    pub hi: f32,
}

impl ValueRange {
    pub const ANY: ValueRange = ValueRange {
        lo: f32::NEG_INFINITY,
        hi: f32::INFINITY,
    };

    pub fn contains(&self, v: f32) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// A directed-diffusion task: attribute filters plus rate, lifetime and scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interest {
    pub interest_id: u32,
    pub attributes: BTreeMap<Attribute, ValueRange>,
    pub interval_s: u32,
    pub duration_s: u32,
    pub hop_limit: u8,
    /// Sink node that issued the interest.
    pub origin: u32,
    /// Requested reports per interval; raised by reinforcement.
    pub data_rate: u8,
}

impl Interest {
    pub fn is_valid(&self) -> bool {
        self.interval_s > 0 && self.duration_s > 0 && self.hop_limit >= 1 && !self.attributes.is_empty()
    }

    pub fn matches(&self, reading: &SensorReading) -> bool {
        self.attributes
            .iter()
            .all(|(attr, range)| range.contains(reading.value(*attr)))
    }

    pub fn encoded_len(&self) -> usize {
        INTEREST_HEADER_BYTES + 9 * self.attributes.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; self.encoded_len()];
        b[0] = KIND_INTEREST;
        b[1] = self.hop_limit;
        b[2] = self.attributes.len() as u8;
        b[3] = self.data_rate;
        b[4..8].copy_from_slice(&self.interest_id.to_le_bytes());
        b[8..10].copy_from_slice(&(self.origin as u16).to_le_bytes());
        b[12..16].copy_from_slice(&self.interval_s.to_le_bytes());
        b[16..20].copy_from_slice(&self.duration_s.to_le_bytes());
        for (i, (attr, range)) in self.attributes.iter().enumerate() {
            let o = INTEREST_HEADER_BYTES + 9 * i;
            b[o] = attr.code();
            b[o + 1..o + 5].copy_from_slice(&range.lo.to_le_bytes());
            b[o + 5..o + 9].copy_from_slice(&range.hi.to_le_bytes());
        }
        b
    }

    fn decode(b: &[u8]) -> Result<Self, PacketError> {
        if b.len() < INTEREST_HEADER_BYTES {
            return Err(PacketError::Truncated(b.len()));
        }
        let n = b[2] as usize;
        if b.len() < INTEREST_HEADER_BYTES + 9 * n {
            return Err(PacketError::Truncated(b.len()));
        }
        let mut attributes = BTreeMap::new();
        for i in 0..n {
            let o = INTEREST_HEADER_BYTES + 9 * i;
            let attr = Attribute::from_code(b[o]).ok_or(PacketError::BadAttribute(b[o]))?;
            attributes.insert(
                attr,
                ValueRange {
                    lo: f32_at(b, o + 1),
                    hi: f32_at(b, o + 5),
                },
            );
        }
        Ok(Interest {
            interest_id: u32_at(b, 4),
            attributes,
            interval_s: u32_at(b, 12),
            duration_s: u32_at(b, 16),
            hop_limit: b[1],
            origin: u32::from(u16_at(b, 8)),
            data_rate: b[3],
        })
    }
}

/// Battery and MAC drop counter piggybacked on every report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeHealth {
    pub battery_mj_remaining: f32,
    pub frames_dropped: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataMessage {
    pub route: DataRoute,
    pub source: u32,
    pub reading: SensorReading,
    pub hop_count: u8,
    pub hop_limit: u8,
    pub health: NodeHealth,
    /// The source's first hop at emission time, kept as a routing snapshot.
    pub first_hop: Option<u32>,
    pub signature: u64,
}

/// Identity of one report: (source, reading timestamp, interest id).
pub fn report_signature(source: u32, timestamp: SimTime, interest_id: u32) -> u64 {
    let mut b = [0u8; 16];
    b[0..4].copy_from_slice(&source.to_le_bytes());
    b[4..12].copy_from_slice(&timestamp.secs().to_le_bytes());
    b[12..16].copy_from_slice(&interest_id.to_le_bytes());
    stable_hash(&b)
}

impl DataMessage {
    pub fn new(
        route: DataRoute,
        reading: SensorReading,
        hop_limit: u8,
        health: NodeHealth,
        first_hop: Option<u32>,
    ) -> Self {
        let source = reading.node_id;
        Self {
            route,
            source,
            reading,
            hop_count: 0,
            hop_limit,
            health,
            first_hop,
            signature: report_signature(source, reading.timestamp, route.interest_id()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; DATA_PACKET_BYTES];
        b[0] = KIND_DATA;
        b[1] = match self.route {
            DataRoute::Tree => 0,
            DataRoute::Diffusion { .. } => 1,
            DataRoute::Flood => 2,
        };
        b[2] = self.hop_count;
        b[3] = self.hop_limit;
        b[4..8].copy_from_slice(&self.route.interest_id().to_le_bytes());
        b[8..10].copy_from_slice(&(self.source as u16).to_le_bytes());
        let hop = self.first_hop.map_or(NO_HOP, |h| h as u16);
        b[10..12].copy_from_slice(&hop.to_le_bytes());
        b[12] = self.reading.region_id;
        b[13..15].copy_from_slice(&self.health.frames_dropped.to_le_bytes());
        b[16..24].copy_from_slice(&self.reading.timestamp.secs().to_le_bytes());
        for (i, attr) in Attribute::ALL.iter().enumerate() {
            let o = 24 + 4 * i;
            b[o..o + 4].copy_from_slice(&self.reading.value(*attr).to_le_bytes());
        }
        b[52..56].copy_from_slice(&self.health.battery_mj_remaining.to_le_bytes());
        b[56..64].copy_from_slice(&self.signature.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self, PacketError> {
        if b.len() < DATA_PACKET_BYTES {
            return Err(PacketError::Truncated(b.len()));
        }
        let interest_id = u32_at(b, 4);
        let route = match b[1] {
            0 => DataRoute::Tree,
            1 => DataRoute::Diffusion { interest_id },
            2 => DataRoute::Flood,
            other => return Err(PacketError::BadRoute(other)),
        };
        let source = u32::from(u16_at(b, 8));
        let mut reading = SensorReading {
            node_id: source,
            region_id: b[12],
            timestamp: SimTime(u64::from_le_bytes(b[16..24].try_into().unwrap())),
            temperature_c: 0.0,
            precipitation_mm: 0.0,
            humidity_pct: 0.0,
            pressure_hpa: 0.0,
            wind_speed_ms: 0.0,
            wind_dir_deg: 0.0,
            groundwater_m: 0.0,
        };
        for (i, attr) in Attribute::ALL.iter().enumerate() {
            *reading.value_mut(*attr) = f32_at(b, 24 + 4 * i);
        }
        let hop = u16_at(b, 10);
        Ok(DataMessage {
            route,
            source,
            reading,
            hop_count: b[2],
            hop_limit: b[3],
            health: NodeHealth {
                battery_mj_remaining: f32_at(b, 52),
                frames_dropped: u16_at(b, 13),
            },
            first_hop: (hop != NO_HOP).then_some(u32::from(hop)),
            signature: u64::from_le_bytes(b[56..64].try_into().unwrap()),
        })
    }
}

/// Sent toward a source along the path its first data arrived on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reinforcement {
    pub interest_id: u32,
    pub source: u32,
    pub origin: u32,
    pub data_rate: u8,
}

impl Reinforcement {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = vec![0u8; REINFORCE_PACKET_BYTES];
        b[0] = KIND_REINFORCE;
        b[1] = self.data_rate;
        b[4..8].copy_from_slice(&self.interest_id.to_le_bytes());
        b[8..10].copy_from_slice(&(self.source as u16).to_le_bytes());
        b[10..12].copy_from_slice(&(self.origin as u16).to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self, PacketError> {
        if b.len() < REINFORCE_PACKET_BYTES {
            return Err(PacketError::Truncated(b.len()));
        }
        Ok(Reinforcement {
            interest_id: u32_at(b, 4),
            source: u32::from(u16_at(b, 8)),
            origin: u32::from(u16_at(b, 10)),
            data_rate: b[1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Data(DataMessage),
    Interest(Interest),
    Reinforce(Reinforcement),
}

impl Packet {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Packet::Data(m) => m.encode(),
            Packet::Interest(i) => i.encode(),
            Packet::Reinforce(r) => r.encode(),
        }
    }

    pub fn decode(b: &[u8]) -> Result<Self, PacketError> {
        match b.first() {
            None => Err(PacketError::Truncated(0)),
            Some(&KIND_DATA) => DataMessage::decode(b).map(Packet::Data),
            Some(&KIND_INTEREST) => Interest::decode(b).map(Packet::Interest),
            Some(&KIND_REINFORCE) => Reinforcement::decode(b).map(Packet::Reinforce),
            Some(&k) => Err(PacketError::UnknownKind(k)),
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Packet::Data(_) => "data",
            Packet::Interest(_) => "interest",
            Packet::Reinforce(_) => "reinforce",
        }
    }
}

fn u16_at(b: &[u8], o: usize) -> u16 {
    u16::from_le_bytes([b[o], b[o + 1]])
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], o: usize) -> f32 {
    f32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn reading(node: u32, t: u64) -> SensorReading {
        SensorReading {
            node_id: node,
            region_id: 2,
            timestamp: SimTime(t),
            temperature_c: 27.25,
            precipitation_mm: 1.5,
            humidity_pct: 55.0,
            pressure_hpa: 1009.5,
            wind_speed_ms: 3.25,
            wind_dir_deg: 140.0,
            groundwater_m: 11.75,
        }
    }

    #[test]
    fn data_report_is_fixed_size() {
        let m = DataMessage::new(DataRoute::Tree, reading(7, 1800), 8, NodeHealth::default(), Some(3));
        assert_eq!(m.encode().len(), DATA_PACKET_BYTES);
    }

    #[test]
    fn signature_distinguishes_timestamps_and_interests() {
        let a = report_signature(4, SimTime(1800), 0);
        assert_ne!(a, report_signature(4, SimTime(3600), 0));
        assert_ne!(a, report_signature(4, SimTime(1800), 1));
        assert_ne!(a, report_signature(5, SimTime(1800), 0));
        assert_eq!(a, report_signature(4, SimTime(1800), 0));
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(Packet::decode(&[]), Err(PacketError::Truncated(0)));
        assert_eq!(Packet::decode(&[0x7f, 0, 0]), Err(PacketError::UnknownKind(0x7f)));
        assert_eq!(Packet::decode(&[KIND_DATA, 0, 0]), Err(PacketError::Truncated(3)));
    }

    #[test]
    fn interest_matching() {
        let mut attrs = BTreeMap::new();
        attrs.insert(Attribute::Precipitation, ValueRange::ANY);
        let mut i = Interest {
            interest_id: 1,
            attributes: attrs,
            interval_s: 1800,
            duration_s: 86_400,
            hop_limit: 5,
            origin: 0,
            data_rate: 1,
        };
        assert!(i.is_valid());
        assert!(i.matches(&reading(1, 0)));
        i.attributes.insert(Attribute::Temperature, ValueRange { lo: 30.0, hi: 50.0 });
        assert!(!i.matches(&reading(1, 0)));
        i.attributes.clear();
        assert!(!i.is_valid());
    }

    fn any_attr() -> impl Strategy<Value = Attribute> {
        (0u8..7).prop_map(|c| Attribute::from_code(c).unwrap())
    }

    proptest! {
        #[test]
        fn packets_round_trip(
            node in 0u32..60_000, t in 0u64..100_000_000, iid in 0u32..1000,
            route in 0u8..3, hops in 0u8..20, temp in -40f32..60.0,
            attrs in proptest::collection::btree_map(any_attr(), (-100f32..0.0, 0f32..100.0), 1..7),
            rate in 1u8..10,
        ) {
            let route = match route { 0 => DataRoute::Tree, 1 => DataRoute::Diffusion { interest_id: iid }, _ => DataRoute::Flood };
            let mut r = reading(node, t);
            r.temperature_c = temp;
            let mut m = DataMessage::new(route, r, 9, NodeHealth { battery_mj_remaining: 123.5, frames_dropped: 7 }, None);
            m.hop_count = hops;
            prop_assert_eq!(Packet::decode(&m.encode()).unwrap(), Packet::Data(m.clone()));

            let interest = Interest {
                interest_id: iid,
                attributes: attrs.into_iter().map(|(a, (lo, hi))| (a, ValueRange { lo, hi })).collect(),
                interval_s: 1800, duration_s: 7 * 86_400, hop_limit: hops.max(1), origin: node % 60_000, data_rate: rate,
            };
            prop_assert_eq!(Packet::decode(&interest.encode()).unwrap(), Packet::Interest(interest.clone()));

            let re = Reinforcement { interest_id: iid, source: node, origin: 3, data_rate: rate };
            prop_assert_eq!(Packet::decode(&re.encode()).unwrap(), Packet::Reinforce(re));
        }
    }
}
