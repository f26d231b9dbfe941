//! Per-node protocol stack: energy accounting, packet formats, MAC,
//! transport, the collection tree and directed diffusion.

pub mod diffusion;
pub mod energy;
pub mod mac;
pub mod packet;
pub mod transport;
pub mod tree;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::GeoPoint;
use crate::kernel::SimTime;
use energy::EnergyLedger;
use mac::LinkDest;
use packet::{DataMessage, Interest, Packet};

/// How sensing data reaches the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Periodic reports up the binary tree.
    Tree,
    /// Reports drawn along interest gradients, pruned by reinforcement.
    #[serde(alias = "diffusion")]
    DirectedDiffusion,
    /// Tree for periodic reports; diffusion only for ad-hoc queries.
    Combined,
    /// Every report broadcast network-wide under a hop limit.
    Flooding,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::Tree => "tree",
            RoutingMode::DirectedDiffusion => "diffusion",
            RoutingMode::Combined => "combined",
            RoutingMode::Flooding => "flooding",
        }
    }
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tree" => Ok(RoutingMode::Tree),
            "diffusion" | "directed_diffusion" => Ok(RoutingMode::DirectedDiffusion),
            "combined" => Ok(RoutingMode::Combined),
            "flooding" | "flood" => Ok(RoutingMode::Flooding),
            other => Err(format!(
                "unknown routing mode '{other}' (expected tree, diffusion, combined or flooding)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeMode {
    Sleeping,
    Active,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StackError {
    #[error("node {0} has no tree parent")]
    OrphanNode(u32),
    #[error("interest {0} is not known at this sink")]
    UnknownInterest(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GradientEntry {
    pub interest_id: u32,
    /// Neighbour the interest arrived from.
    pub toward: u32,
    pub data_rate: u8,
    pub expires_at: SimTime,
    pub reinforced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedInterest {
    pub interest: Interest,
    pub arrived_at: SimTime,
    pub expires_at: SimTime,
}

/// Bounded FIFO set of report signatures.
#[derive(Debug, Clone)]
pub struct DataCache {
    capacity: usize,
    order: VecDeque<u64>,
    members: HashSet<u64>,
}

impl DataCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            order: VecDeque::new(),
            members: HashSet::new(),
        }
    }

    pub fn contains(&self, sig: u64) -> bool {
        self.members.contains(&sig)
    }

    /// Inserts `sig`, evicting the oldest entry when full. Returns false if it
    /// was already present.
    pub fn insert(&mut self, sig: u64) -> bool {
        if self.members.contains(&sig) {
            return false;
        }
        if self.order.len() == self.capacity {
            let old = self.order.pop_front().unwrap();
            self.members.remove(&old);
        }
        self.order.push_back(sig);
        self.members.insert(sig);
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &u64> {
        self.order.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub reports_originated: u64,
    pub reports_forwarded: u64,
    pub duplicates_suppressed: u64,
    pub interests_received: u64,
    pub interests_rebroadcast: u64,
    pub hop_limit_drops: u64,
    pub reinforcements_sent: u64,
}

/// What the stack asks the node's lower layers or host to do.
#[derive(Debug, Clone, PartialEq)]
pub enum StackAction {
    Transmit { dest: LinkDest, packet: Packet },
    /// A report reached this sink; `from` is the delivering neighbour.
    Deliver { msg: DataMessage, from: u32 },
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: u32,
    pub region_id: u8,
    pub position: GeoPoint,
    pub is_sink: bool,
    pub mode: NodeMode,
    pub energy: EnergyLedger,
    pub neighbors: Vec<Neighbor>,
    pub interests: BTreeMap<u32, CachedInterest>,
    pub gradients: Vec<GradientEntry>,
    pub data_cache: DataCache,
    pub tree_parent: Option<u32>,
    /// Interests this node issued as a sink.
    pub issued: BTreeMap<u32, Interest>,
    /// Neighbour that first delivered each `(interest, source)`.
    pub first_delivery: BTreeMap<(u32, u32), u32>,
    /// `(interest, source)` pairs the sink already reinforced.
    pub reinforced_sources: BTreeSet<(u32, u32)>,
    pub counters: NodeCounters,
}

impl NodeState {
    pub fn new(id: u32, region_id: u8, position: GeoPoint, is_sink: bool, data_cache_cap: usize) -> Self {
        Self {
            id,
            region_id,
            position,
            is_sink,
            mode: NodeMode::Sleeping,
            energy: EnergyLedger::default(),
            neighbors: Vec::new(),
            interests: BTreeMap::new(),
            gradients: Vec::new(),
            data_cache: DataCache::new(data_cache_cap),
            tree_parent: None,
            issued: BTreeMap::new(),
            first_delivery: BTreeMap::new(),
            reinforced_sources: BTreeSet::new(),
            counters: NodeCounters::default(),
        }
    }

    pub fn neighbor_distance(&self, id: u32) -> Option<f64> {
        self.neighbors.iter().find(|n| n.id == id).map(|n| n.distance_km)
    }

    /// Radius a transmission to `dest` must reach.
    pub fn reach_km(&self, dest: &LinkDest) -> f64 {
        match dest {
            LinkDest::Unicast(id) => self.neighbor_distance(*id).unwrap_or(0.0),
            LinkDest::Multicast(ids) => ids
                .iter()
                .filter_map(|id| self.neighbor_distance(*id))
                .fold(0.0, f64::max),
            LinkDest::Broadcast => self.neighbors.iter().map(|n| n.distance_km).fold(0.0, f64::max),
        }
    }

    /// Neighbour ids a transmission to `dest` reaches.
    pub fn recipients(&self, dest: &LinkDest) -> Vec<u32> {
        match dest {
            LinkDest::Unicast(id) => vec![*id],
            LinkDest::Multicast(ids) => ids.clone(),
            LinkDest::Broadcast => self.neighbors.iter().map(|n| n.id).collect(),
        }
    }

    pub fn gradients_for(&self, interest_id: u32) -> impl Iterator<Item = &GradientEntry> {
        self.gradients.iter().filter(move |g| g.interest_id == interest_id)
    }

    pub fn reinforced_gradient(&self, interest_id: u32) -> Option<&GradientEntry> {
        self.gradients_for(interest_id).find(|g| g.reinforced)
    }

    /// Drops gradients and interests whose lifetime has ended.
    pub fn expire(&mut self, now: SimTime) {
        self.gradients.retain(|g| g.expires_at > now);
        self.interests.retain(|_, c| c.expires_at > now);
    }
}

/// Builds the neighbour table of node `i`: every other node within
/// `link_range_km`, nearest first.
pub fn neighbor_table(ids: &[u32], points: &[GeoPoint], i: usize, link_range_km: f64) -> Vec<Neighbor> {
    let mut out: Vec<Neighbor> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| Neighbor {
            id: ids[j],
            distance_km: points[i].distance(&points[j]),
        })
        .filter(|n| n.distance_km <= link_range_km + 1e-9)
        .collect();
    out.sort_by(|a, b| a.distance_km.partial_cmp(&b.distance_km).unwrap().then(a.id.cmp(&b.id)));
    out
}
