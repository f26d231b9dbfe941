//! Base stations and the central observational database.
//!
//! Each sub-network's sink hands reports to its local base station, which
//! calibrates them, keeps a bounded local copy and forwards every record on
//! a reliable uplink to the remote base station. The remote station holds
//! the append-only central database.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::GeoPoint;
use crate::environment::{Attribute, SensorReading};
use crate::kernel::SimTime;
use crate::stack::packet::{DataMessage, NodeHealth};

/// `(region, node, timestamp)`; unique in the central database.
pub type RecordKey = (u8, u32, SimTime);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackboneError {
    #[error("duplicate record for region {}, node {}, t={}", .0.0, .0.1, .0.2)]
    DuplicateKey(RecordKey),
    #[error("invalid backbone configuration: {0}")]
    Invalid(String),
}

/// `calibrated = gain * raw + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Affine {
    pub gain: f64,
    pub offset: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Self { gain: 1.0, offset: 0.0 }
    }
}

/// Per-attribute affine calibration; attributes without an entry pass
/// through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Calibration(pub BTreeMap<Attribute, Affine>);

impl Calibration {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn apply(&self, raw: &SensorReading) -> SensorReading {
        let mut out = *raw;
        for (attr, map) in &self.0 {
            let v = f64::from(raw.value(*attr));
            *out.value_mut(*attr) = (map.gain * v + map.offset) as f32;
        }
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.0.values().any(|a| !a.gain.is_finite() || !a.offset.is_finite()) {
            return Err("calibration gains and offsets must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub timestamp: SimTime,
    pub node_id: u32,
    pub region_id: u8,
    pub raw: SensorReading,
    pub calibrated: SensorReading,
    pub node_health: NodeHealth,
    pub location: GeoPoint,
    /// Node ids from the source to the sink.
    pub route_snapshot: Vec<u32>,
}

impl StoredRecord {
    pub fn key(&self) -> RecordKey {
        (self.region_id, self.node_id, self.timestamp)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationCounters {
    pub ingested: u64,
    pub duplicates: u64,
    pub evicted: u64,
    /// Evictions of records the central database had not yet acknowledged.
    pub unacked_evictions: u64,
    pub acked: u64,
}

#[derive(Debug)]
pub struct LocalBaseStation {
    pub region_id: u8,
    pub position: GeoPoint,
    capacity: usize,
    local_db: VecDeque<StoredRecord>,
    seen: HashSet<(u32, SimTime)>,
    acked: HashSet<RecordKey>,
    pub counters: StationCounters,
}

impl LocalBaseStation {
    pub fn new(region_id: u8, position: GeoPoint, capacity: usize) -> Self {
        Self {
            region_id,
            position,
            capacity: capacity.max(1),
            local_db: VecDeque::new(),
            seen: HashSet::new(),
            acked: HashSet::new(),
            counters: StationCounters::default(),
        }
    }

    pub fn local_len(&self) -> usize {
        self.local_db.len()
    }

    pub fn local_records(&self) -> impl Iterator<Item = &StoredRecord> {
        self.local_db.iter()
    }

    /// Calibrates and stores a delivered report. The caller forwards the
    /// returned record on the uplink.
    pub fn ingest(
        &mut self,
        msg: &DataMessage,
        location: GeoPoint,
        route_snapshot: Vec<u32>,
        calibration: &Calibration,
    ) -> Result<StoredRecord, BackboneError> {
        let raw = msg.reading;
        let key = (self.region_id, raw.node_id, raw.timestamp);
        if !self.seen.insert((raw.node_id, raw.timestamp)) {
            self.counters.duplicates += 1;
            return Err(BackboneError::DuplicateKey(key));
        }
        let record = StoredRecord {
            timestamp: raw.timestamp,
            node_id: raw.node_id,
            region_id: self.region_id,
            raw,
            calibrated: calibration.apply(&raw),
            node_health: msg.health,
            location,
            route_snapshot,
        };
        if self.local_db.len() == self.capacity {
            self.evict_one();
        }
        self.local_db.push_back(record.clone());
        self.counters.ingested += 1;
        Ok(record)
    }

    /// Evicts the oldest record the central database has acknowledged. If
    /// none is acknowledged yet the oldest record goes and the eviction is
    /// counted as unsafe.
    fn evict_one(&mut self) {
        let pos = self
            .local_db
            .iter()
            .position(|r| self.acked.contains(&r.key()));
        let victim = match pos {
            Some(i) => self.local_db.remove(i).unwrap(),
            None => {
                self.counters.unacked_evictions += 1;
                self.local_db.pop_front().unwrap()
            }
        };
        self.acked.remove(&victim.key());
        self.counters.evicted += 1;
    }

    pub fn mark_acked(&mut self, key: RecordKey) {
        if self.acked.insert(key) {
            self.counters.acked += 1;
        }
    }

    pub fn is_acked(&self, key: &RecordKey) -> bool {
        self.acked.contains(key)
    }
}

/// Append-only record store keyed by `(region, node, timestamp)`.
#[derive(Debug, Default, Clone)]
pub struct CentralDatabase {
    records: Vec<StoredRecord>,
    index: BTreeMap<RecordKey, usize>,
    pub duplicates: u64,
}

impl CentralDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: StoredRecord) -> Result<(), BackboneError> {
        let key = record.key();
        if self.index.contains_key(&key) {
            self.duplicates += 1;
            return Err(BackboneError::DuplicateKey(key));
        }
        self.index.insert(key, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&StoredRecord> {
        self.index.get(key).map(|&i| &self.records[i])
    }

    /// Records in arrival order.
    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    /// Records in key order: region, node, timestamp.
    pub fn sorted(&self) -> impl Iterator<Item = &StoredRecord> {
        self.index.values().map(|&i| &self.records[i])
    }

    pub fn region_records(&self, region_id: u8) -> impl Iterator<Item = &StoredRecord> {
        self.index
            .range((region_id, 0, SimTime::ZERO)..=(region_id, u32::MAX, SimTime(u64::MAX)))
            .map(|(_, &i)| &self.records[i])
    }

    pub fn count_by_region(&self) -> BTreeMap<u8, u64> {
        let mut out = BTreeMap::new();
        for k in self.index.keys() {
            *out.entry(k.0).or_insert(0) += 1;
        }
        out
    }

    /// First and last timestamp in the database.
    pub fn span(&self) -> Option<(SimTime, SimTime)> {
        let lo = self.records.iter().map(|r| r.timestamp).min()?;
        let hi = self.records.iter().map(|r| r.timestamp).max()?;
        Some((lo, hi))
    }

    /// Region-average calibrated `field` per timestamp in `[start, end)`,
    /// ordered by time.
    pub fn query_window(&self, region_id: u8, field: Attribute, window: (SimTime, SimTime)) -> Vec<(SimTime, f64)> {
        let mut acc: BTreeMap<SimTime, (f64, u32)> = BTreeMap::new();
        for r in self.region_records(region_id) {
            if r.timestamp >= window.0 && r.timestamp < window.1 {
                let e = acc.entry(r.timestamp).or_insert((0.0, 0));
                e.0 += f64::from(r.calibrated.value(field));
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(t, (sum, n))| (t, sum / f64::from(n)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBudget {
    pub in_range: bool,
    pub distance_km: f64,
}

pub fn backbone_link_budget(a: &GeoPoint, b: &GeoPoint, range_km: f64) -> LinkBudget {
    let distance_km = a.distance(b);
    LinkBudget {
        in_range: distance_km <= range_km,
        distance_km,
    }
}

/// Fewest-hop station path from `from` to `to` over in-range links, both
/// ends included. `None` when the stations cannot reach each other.
pub fn backbone_route(stations: &[GeoPoint], from: usize, to: usize, range_km: f64) -> Option<Vec<usize>> {
    let n = stations.len();
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(i) = queue.pop_front() {
        if i == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = prev[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        for j in 0..n {
            if !seen[j] && backbone_link_budget(&stations[i], &stations[j], range_km).in_range {
                seen[j] = true;
                prev[j] = i;
                queue.push_back(j);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::packet::DataRoute;

    fn reading(node: u32, t: u64, temp: f32) -> SensorReading {
        SensorReading {
            node_id: node,
            region_id: 2,
            timestamp: SimTime(t),
            temperature_c: temp,
            precipitation_mm: 0.5,
            humidity_pct: 55.0,
            pressure_hpa: 1009.0,
            wind_speed_ms: 2.0,
            wind_dir_deg: 90.0,
            groundwater_m: 11.0,
        }
    }

    fn msg(node: u32, t: u64, temp: f32) -> DataMessage {
        DataMessage::new(DataRoute::Tree, reading(node, t, temp), 255, NodeHealth::default(), None)
    }

    fn station(cap: usize) -> LocalBaseStation {
        LocalBaseStation::new(2, GeoPoint::new(95.0, 95.0), cap)
    }

    #[test]
    fn identity_calibration_is_a_no_op() {
        let r = reading(1, 0, 21.5);
        assert_eq!(Calibration::identity().apply(&r), r);
    }

    #[test]
    fn affine_calibration_is_deterministic() {
        let mut c = Calibration::identity();
        c.0.insert(Attribute::Temperature, Affine { gain: 1.01, offset: -0.2 });
        let r = reading(1, 0, 20.0);
        let a = c.apply(&r);
        assert_eq!(a, c.apply(&r));
        assert_eq!(a.temperature_c, (1.01f64 * 20.0 - 0.2) as f32);
        assert_eq!(a.precipitation_mm, r.precipitation_mm);
    }

    #[test]
    fn duplicate_ingest_counts_once() {
        let mut bs = station(10);
        let cal = Calibration::identity();
        bs.ingest(&msg(3, 1800, 20.0), GeoPoint::new(0.0, 0.0), vec![3, 0], &cal)
            .unwrap();
        let err = bs
            .ingest(&msg(3, 1800, 20.0), GeoPoint::new(0.0, 0.0), vec![3, 0], &cal)
            .unwrap_err();
        assert_eq!(err, BackboneError::DuplicateKey((2, 3, SimTime(1800))));
        assert_eq!(bs.local_len(), 1);
        assert_eq!(bs.counters.duplicates, 1);
    }

    #[test]
    fn eviction_prefers_acknowledged_records() {
        let mut bs = station(2);
        let cal = Calibration::identity();
        let p = GeoPoint::new(0.0, 0.0);
        let a = bs.ingest(&msg(1, 0, 20.0), p, vec![], &cal).unwrap();
        let b = bs.ingest(&msg(1, 1800, 20.0), p, vec![], &cal).unwrap();
        bs.mark_acked(b.key());
        bs.ingest(&msg(1, 3600, 20.0), p, vec![], &cal).unwrap();
        let left: Vec<SimTime> = bs.local_records().map(|r| r.timestamp).collect();
        assert_eq!(left, vec![a.timestamp, SimTime(3600)]);
        assert_eq!(bs.counters.unacked_evictions, 0);
        // nothing acknowledged: the oldest goes and the eviction is flagged
        bs.ingest(&msg(1, 5400, 20.0), p, vec![], &cal).unwrap();
        assert_eq!(bs.counters.unacked_evictions, 1);
    }

    #[test]
    fn central_rejects_duplicate_keys() {
        let mut db = CentralDatabase::new();
        let mut bs = station(10);
        let cal = Calibration::identity();
        let r = bs.ingest(&msg(1, 0, 20.0), GeoPoint::new(0.0, 0.0), vec![], &cal).unwrap();
        db.insert(r.clone()).unwrap();
        assert!(db.insert(r).is_err());
        assert_eq!((db.len(), db.duplicates), (1, 1));
    }

    #[test]
    fn query_window_averages_nodes_per_timestamp() {
        let mut db = CentralDatabase::new();
        let mut bs = station(100);
        let cal = Calibration::identity();
        let p = GeoPoint::new(0.0, 0.0);
        for (node, t, temp) in [(1, 0, 20.0), (2, 0, 22.0), (3, 0, 27.0), (1, 1800, 21.0), (1, 3600, 30.0)] {
            db.insert(bs.ingest(&msg(node, t, temp), p, vec![], &cal).unwrap()).unwrap();
        }
        let s = db.query_window(2, Attribute::Temperature, (SimTime(0), SimTime(3600)));
        assert_eq!(s, vec![(SimTime(0), 23.0), (SimTime(1800), 21.0)]);
        assert!(db
            .query_window(2, Attribute::Temperature, (SimTime(10), SimTime(20)))
            .is_empty());
        assert!(db
            .query_window(9, Attribute::Temperature, (SimTime(0), SimTime(9999)))
            .is_empty());
    }

    #[test]
    fn single_record_window() {
        let mut db = CentralDatabase::new();
        let mut bs = station(10);
        let r = bs
            .ingest(&msg(4, 900, 19.5), GeoPoint::new(0.0, 0.0), vec![], &Calibration::identity())
            .unwrap();
        db.insert(r).unwrap();
        assert_eq!(
            db.query_window(2, Attribute::Temperature, (SimTime(0), SimTime(1000))),
            vec![(SimTime(900), 19.5)]
        );
    }

    #[test]
    fn link_budget_examples() {
        let o = GeoPoint::new(0.0, 0.0);
        assert!(backbone_link_budget(&o, &GeoPoint::new(100.0, 0.0), 120.0).in_range);
        assert!(!backbone_link_budget(&o, &GeoPoint::new(130.0, 0.0), 120.0).in_range);
        let self_link = backbone_link_budget(&o, &o, 120.0);
        assert!(self_link.in_range && self_link.distance_km == 0.0);
    }

    #[test]
    fn out_of_range_routes_through_relay() {
        let stations = vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(100.0, 0.0),
            GeoPoint::new(200.0, 0.0),
        ];
        assert_eq!(backbone_route(&stations, 0, 2, 120.0), Some(vec![0, 1, 2]));
        assert_eq!(backbone_route(&stations, 0, 1, 120.0), Some(vec![0, 1]));
        assert_eq!(backbone_route(&stations, 0, 2, 50.0), None);
    }
}
