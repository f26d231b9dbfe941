//! Event-driven network run: sensor nodes sharing one radio channel per
//! region, sinks handing reports to their local base station, and the
//! acknowledged backbone uplink into the central database.
//!
//! Each node wakes every reporting period, samples, reports and stays awake
//! until the whole region has gone quiet, then sleeps until the next period.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{backbone_route, BackboneError, CentralDatabase, LocalBaseStation, StoredRecord};
use crate::config::{ConfigError, ResolvedRegion, ScenarioConfig};
use crate::coverage::{estimate_node_count, tile_region, CoverageError, GeoPoint, PlacementPlan};
use crate::environment::{Attribute, EnvironmentError, EnvironmentModel};
use crate::kernel::{EntityId, EntityKind, Event, Kernel, KernelError, PayloadTag, SimTime, TraceSink};
use crate::rng::RngStream;
use crate::stack::energy::{charge_energy, EnergyEvent};
use crate::stack::mac::{Channel, Mac, MacFrame, MacOutcome, QueuedFrame, Reassembler};
use crate::stack::packet::{DataMessage, DataRoute, Interest, NodeHealth, Packet, PacketError, ValueRange, KIND_DATA};
use crate::stack::transport::{ReliableSender, TimeoutAction};
use crate::stack::tree::{build_binary_tree, RoutingTree, TreeError};
use crate::stack::{neighbor_table, NodeMode, NodeState, RoutingMode, StackAction, StackError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("region {region}: {source}")]
    Tree {
        region: u8,
        #[source]
        source: TreeError,
    },
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error("local base station of region {0} has no backbone route to the remote station")]
    BackboneUnreachable(u8),
    #[error("no placement plan for region {0}")]
    MissingPlan(u8),
}

/// Event payloads.
#[derive(Debug, Clone)]
pub enum Msg {
    Wake,
    MacAttempt,
    Frame { frame: MacFrame, lost: bool },
    SleepCheck,
    Handoff { msg: DataMessage, last_hop: u32 },
    Uplink { origin: usize, seq: u64, hop: usize, record: Box<StoredRecord> },
    Ack { seq: u64 },
    UplinkTimeout { seq: u64 },
}

impl Msg {
    fn name(&self) -> &'static str {
        match self {
            Msg::Wake => "wake",
            Msg::MacAttempt => "mac_attempt",
            Msg::Frame { .. } => "frame",
            Msg::SleepCheck => "sleep_check",
            Msg::Handoff { .. } => "handoff",
            Msg::Uplink { .. } => "uplink",
            Msg::Ack { .. } => "ack",
            Msg::UplinkTimeout { .. } => "uplink_timeout",
        }
    }
}

impl PayloadTag for Msg {
    fn tag(&self) -> String {
        match self {
            Msg::Frame { frame, lost } => format!(
                "frame:{}:{}/{}{}",
                frame.sender,
                frame.fragment_index + 1,
                frame.fragment_total,
                if *lost { ":lost" } else { "" }
            ),
            Msg::Uplink { seq, hop, .. } => format!("uplink:{seq}:{hop}"),
            Msg::Ack { seq } => format!("ack:{seq}"),
            Msg::UplinkTimeout { seq } => format!("uplink_timeout:{seq}"),
            other => other.name().to_string(),
        }
    }
}

/// Delivery accounting for one run. Loss, drop and sleep counters count
/// data packets; the `control_` counters count interests and
/// reinforcements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryCounters {
    /// Periodic reports originated by sensing nodes.
    pub reports_emitted: u64,
    pub records_stored: u64,
    pub link_losses: u64,
    pub queue_drops: u64,
    pub sleep_drops: u64,
    pub relay_duplicates: u64,
    pub station_duplicates: u64,
    pub central_duplicates: u64,
    pub uplink_retransmissions: u64,
    pub uplink_abandoned: u64,
    /// Reports still travelling when the horizon was reached.
    pub reports_in_flight: u64,
    pub sink_deliveries: u64,
    /// Combined mode: reports answering ad-hoc queries.
    pub query_reports: u64,
    pub control_losses: u64,
    pub control_queue_drops: u64,
    pub control_sleep_drops: u64,
    pub mac_deferrals: u64,
    pub sleep_postponements: u64,
    pub unacked_evictions: u64,
}

impl DeliveryCounters {
    /// Every emitted report is stored, lost, dropped, abandoned or still in
    /// flight. Holds exactly for tree routing, where each report travels a
    /// single path.
    pub fn conserved(&self) -> bool {
        self.reports_emitted
            == self.records_stored
                + self.link_losses
                + self.queue_drops
                + self.sleep_drops
                + self.uplink_abandoned
                + self.reports_in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub node_id: u32,
    pub region_id: u8,
    pub is_sink: bool,
    pub tx_mj: f64,
    pub rx_mj: f64,
    pub idle_mj: f64,
    pub sensing_mj: f64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub reports_originated: u64,
    pub reports_forwarded: u64,
}

impl EnergyRow {
    pub fn radio_mj(&self) -> f64 {
        self.tx_mj + self.rx_mj
    }

    pub fn total_mj(&self) -> f64 {
        self.tx_mj + self.rx_mj + self.idle_mj + self.sensing_mj
    }
}

/// Protocol observations kept for property checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEntry {
    InterestHeard {
        t: SimTime,
        node: u32,
        from: u32,
        interest_id: u32,
    },
    DataTransmitted {
        t: SimTime,
        node: u32,
        signature: u64,
    },
}

struct SensorRt {
    state: NodeState,
    region: usize,
    mac: Mac,
    reasm: Reassembler,
    /// `(sender, packet_id)` of packets already lost or dropped here.
    dropped: BTreeSet<(u32, u32)>,
    rng_mac: RngStream,
    rng_link: RngStream,
    rng_jitter: RngStream,
    inbound: u32,
    awake_since: Option<SimTime>,
    active_until: SimTime,
    sleep_check_pending: bool,
}

struct RegionRt {
    id: u8,
    first_id: u32,
    len: u32,
    plan: PlacementPlan,
    tree: RoutingTree,
    channel: Channel,
}

impl RegionRt {
    fn sink(&self) -> u32 {
        self.first_id
    }

    fn ids(&self) -> std::ops::Range<u32> {
        self.first_id..self.first_id + self.len
    }
}

struct StationRt {
    bs: LocalBaseStation,
    sender: ReliableSender<StoredRecord>,
    rng: RngStream,
    /// Station indices from this station to the remote one.
    route: Vec<usize>,
}

/// Places every region: coverage count (or the configured count) of
/// sensing cells plus the sink.
pub fn plan_regions(cfg: &ScenarioConfig) -> Result<Vec<(ResolvedRegion, PlacementPlan)>, SimError> {
    cfg.resolved_regions()
        .into_iter()
        .map(|r| {
            let sensing = match cfg.nodes_per_region {
                Some(n) => n,
                None => estimate_node_count(r.area.area_km2(), cfg.cell_shape, cfg.radio_range_km)?,
            };
            let plan = tile_region(&r.area, cfg.cell_shape, cfg.radio_range_km, sensing + 1)?;
            Ok((r, plan))
        })
        .collect()
}

pub struct Simulation {
    cfg: ScenarioConfig,
    kernel: Kernel<Msg>,
    env: EnvironmentModel,
    regions: Vec<RegionRt>,
    nodes: Vec<SensorRt>,
    stations: Vec<StationRt>,
    central: CentralDatabase,
    counters: DeliveryCounters,
    tag_counts: BTreeMap<&'static str, u64>,
    audit: Option<Vec<AuditEntry>>,
    first_sample_cycle: u64,
    error: Option<SimError>,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let planned = plan_regions(cfg)?;
        let plans = planned.into_iter().map(|(_, p)| p).collect();
        Self::with_plans(cfg, plans)
    }

    /// Builds a run over explicit placements, one per configured region.
    pub fn with_plans(cfg: &ScenarioConfig, plans: Vec<PlacementPlan>) -> Result<Self, SimError> {
        cfg.validate()?;
        let resolved = cfg.resolved_regions();
        let horizon = SimTime(cfg.horizon_s);
        let climates: Vec<_> = resolved.iter().map(|r| r.climate.clone()).collect();
        let env = EnvironmentModel::new(
            &climates,
            cfg.environment.clone(),
            cfg.seed,
            horizon,
            cfg.reporting_period_s,
        )?;
        let mut kernel = Kernel::new();
        let mut regions = Vec::new();
        let mut nodes = Vec::new();
        for (ri, r) in resolved.iter().enumerate() {
            let plan = plans
                .iter()
                .find(|p| p.region_id == r.area.id)
                .cloned()
                .ok_or(SimError::MissingPlan(r.area.id))?;
            let range = plan.link_range_km();
            let tree = build_binary_tree(&plan.node_positions, plan.sink_index(), range)
                .map_err(|source| SimError::Tree {
                    region: r.area.id,
                    source,
                })?;
            let first_id = nodes.len() as u32;
            let ids: Vec<u32> = (0..plan.len() as u32).map(|i| first_id + i).collect();
            for (i, &pos) in plan.node_positions.iter().enumerate() {
                let id = ids[i];
                let mut state = NodeState::new(id, r.area.id, pos, i == plan.sink_index(), cfg.node.data_cache_cap);
                state.neighbors = neighbor_table(&ids, &plan.node_positions, i, range);
                state.tree_parent = tree.parent[i].map(|p| ids[p]);
                let label = |s: &str| format!("sensor:{id}/{s}");
                nodes.push(SensorRt {
                    state,
                    region: ri,
                    mac: Mac::default(),
                    reasm: Reassembler::default(),
                    dropped: BTreeSet::new(),
                    rng_mac: RngStream::new(cfg.seed, &label("mac")),
                    rng_link: RngStream::new(cfg.seed, &label("link")),
                    rng_jitter: RngStream::new(cfg.seed, &label("jitter")),
                    inbound: 0,
                    awake_since: None,
                    active_until: SimTime::ZERO,
                    sleep_check_pending: false,
                });
                kernel.register(EntityId::sensor(id));
            }
            kernel.register(EntityId::local_bs(ri as u32));
            regions.push(RegionRt {
                id: r.area.id,
                first_id,
                len: plan.len() as u32,
                plan,
                tree,
                channel: Channel::default(),
            });
        }
        kernel.register(EntityId::remote_bs(0));
        kernel.register(EntityId::environment());

        let mut positions: Vec<GeoPoint> = resolved.iter().map(|r| r.area.center).collect();
        positions.push(cfg.backbone.remote_position);
        let remote = positions.len() - 1;
        let mut stations = Vec::new();
        for (i, r) in resolved.iter().enumerate() {
            let route = backbone_route(&positions, i, remote, cfg.backbone.range_km)
                .ok_or(SimError::BackboneUnreachable(r.area.id))?;
            stations.push(StationRt {
                bs: LocalBaseStation::new(r.area.id, r.area.center, cfg.backbone.local_db_capacity),
                sender: ReliableSender::new(cfg.backbone.max_retries),
                rng: RngStream::new(cfg.seed, &format!("local_bs:{i}/uplink")),
                route,
            });
        }

        let first_sample_cycle = match cfg.routing_mode {
            RoutingMode::Tree | RoutingMode::Combined => 0,
            RoutingMode::DirectedDiffusion | RoutingMode::Flooding => 1,
        };
        for n in &nodes {
            kernel.schedule(SimTime::ZERO, EntityId::sensor(n.state.id), Msg::Wake)?;
        }
        Ok(Self {
            cfg: cfg.clone(),
            kernel,
            env,
            regions,
            nodes,
            stations,
            central: CentralDatabase::new(),
            counters: DeliveryCounters::default(),
            tag_counts: BTreeMap::new(),
            audit: None,
            first_sample_cycle,
            error: None,
        })
    }

    pub fn enable_audit(&mut self) {
        self.audit = Some(Vec::new());
    }

    pub fn set_trace(&mut self, sink: TraceSink) {
        self.kernel.set_trace(sink);
    }

    pub fn take_trace(&mut self) -> Option<TraceSink> {
        self.kernel.take_trace()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn environment(&self) -> &EnvironmentModel {
        &self.env
    }

    pub fn central(&self) -> &CentralDatabase {
        &self.central
    }

    pub fn node_states(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().map(|n| &n.state)
    }

    pub fn plans(&self) -> Vec<&PlacementPlan> {
        self.regions.iter().map(|r| &r.plan).collect()
    }

    pub fn region_ids(&self) -> Vec<u8> {
        self.regions.iter().map(|r| r.id).collect()
    }

    pub fn trees(&self) -> Vec<&RoutingTree> {
        self.regions.iter().map(|r| &r.tree).collect()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        self.audit.as_deref().unwrap_or(&[])
    }

    /// Network-wide transmit plus receive energy so far.
    pub fn radio_energy_mj(&self) -> f64 {
        self.nodes.iter().map(|n| n.state.energy.radio_mj()).sum()
    }

    pub fn events_processed(&self) -> u64 {
        self.kernel.processed()
    }

    pub fn events_by_tag(&self) -> BTreeMap<String, u64> {
        self.tag_counts.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Processes events up to `until` (capped at the horizon).
    pub fn run_until(&mut self, until: SimTime) -> Result<u64, SimError> {
        let until = until.min(SimTime(self.cfg.horizon_s));
        let mut count = 0;
        while let Some(ev) = self.kernel.pop_until(until) {
            *self.tag_counts.entry(ev.payload.name()).or_default() += 1;
            self.handle(ev);
            count += 1;
            if let Some(e) = self.error.take() {
                return Err(e);
            }
        }
        Ok(count)
    }

    /// Runs to the horizon and closes the books.
    pub fn run(&mut self) -> Result<(), SimError> {
        self.run_until(SimTime(self.cfg.horizon_s))?;
        self.close();
        Ok(())
    }

    /// Charges idle time of nodes still awake at the horizon and counts the
    /// reports still in transit.
    fn close(&mut self) {
        let horizon = SimTime(self.cfg.horizon_s);
        for n in &mut self.nodes {
            if let Some(since) = n.awake_since.take() {
                let secs = horizon.secs().saturating_sub(since.secs());
                charge_energy(&mut n.state.energy, &self.cfg.energy, EnergyEvent::Idle { seconds: secs });
            }
        }
        self.counters.reports_in_flight = self.count_in_flight();
        self.counters.records_stored = self.central.len() as u64;
        self.counters.central_duplicates = self.central.duplicates;
        self.counters.mac_deferrals = self.regions.iter().map(|r| r.channel.deferrals).sum();
        self.counters.uplink_retransmissions = self.stations.iter().map(|s| s.sender.retransmissions).sum();
        self.counters.uplink_abandoned = self.stations.iter().map(|s| s.sender.abandoned).sum();
        self.counters.unacked_evictions = self.stations.iter().map(|s| s.bs.counters.unacked_evictions).sum();
    }

    /// Data packets still queued or on the air, plus records handed off or
    /// uplinked but not yet in the central database.
    fn count_in_flight(&self) -> u64 {
        let mut n = 0u64;
        for node in &self.nodes {
            n += node
                .mac
                .queued_frames()
                .filter(|q| q.frame.kind == KIND_DATA && q.frame.fragment_index + 1 == q.frame.fragment_total)
                .count() as u64;
        }
        let mut uplinked = BTreeSet::new();
        for ev in self.kernel.pending_events() {
            match &ev.payload {
                Msg::Frame { frame, .. } if frame.kind == KIND_DATA && frame.fragment_index + 1 == frame.fragment_total => {
                    let rcpt = &self.nodes[ev.target.index as usize];
                    if !rcpt.dropped.contains(&(frame.sender, frame.packet_id)) {
                        n += 1;
                    }
                }
                Msg::Handoff { .. } => n += 1,
                Msg::Uplink { record, .. } => {
                    uplinked.insert(record.key());
                }
                _ => {}
            }
        }
        for s in &self.stations {
            for r in s.sender.outstanding() {
                uplinked.insert(r.key());
            }
        }
        n + uplinked.iter().filter(|k| self.central.get(k).is_none()).count() as u64
    }

    pub fn counters(&self) -> &DeliveryCounters {
        &self.counters
    }

    pub fn energy_rows(&self) -> Vec<EnergyRow> {
        self.nodes
            .iter()
            .map(|n| EnergyRow {
                node_id: n.state.id,
                region_id: n.state.region_id,
                is_sink: n.state.is_sink,
                tx_mj: n.state.energy.tx_mj,
                rx_mj: n.state.energy.rx_mj,
                idle_mj: n.state.energy.idle_mj,
                sensing_mj: n.state.energy.sensing_mj,
                frames_sent: n.mac.stats.frames_sent,
                frames_dropped: n.mac.stats.frames_dropped,
                reports_originated: n.state.counters.reports_originated,
                reports_forwarded: n.state.counters.reports_forwarded,
            })
            .collect()
    }

    pub fn into_central(self) -> CentralDatabase {
        self.central
    }

    fn fail(&mut self, e: impl Into<SimError>) {
        if self.error.is_none() {
            self.error = Some(e.into());
        }
    }

    fn handle(&mut self, ev: Event<Msg>) {
        let from = ev.from;
        let idx = ev.target.index as usize;
        match (ev.target.kind, ev.payload) {
            (EntityKind::SensorNode, Msg::Wake) => self.on_wake(idx),
            (EntityKind::SensorNode, Msg::MacAttempt) => self.on_mac_attempt(idx),
            (EntityKind::SensorNode, Msg::Frame { frame, lost }) => self.on_frame(idx, frame, lost),
            (EntityKind::SensorNode, Msg::SleepCheck) => self.on_sleep_check(idx),
            (EntityKind::LocalBaseStation, Msg::Handoff { msg, last_hop }) => self.on_handoff(idx, msg, last_hop),
            (EntityKind::LocalBaseStation | EntityKind::RemoteBaseStation, Msg::Uplink { origin, seq, hop, record }) => {
                self.on_uplink(origin, seq, hop, record)
            }
            (EntityKind::LocalBaseStation, Msg::Ack { seq }) => self.on_ack(idx, seq),
            (EntityKind::LocalBaseStation, Msg::UplinkTimeout { seq }) => self.on_uplink_timeout(idx, seq),
            (kind, payload) => unreachable!("{kind:?} cannot handle {} (from {from:?})", payload.name()),
        }
    }

    fn on_wake(&mut self, n: usize) {
        let now = self.kernel.now();
        let period = self.cfg.reporting_period_s;
        let node = &mut self.nodes[n];
        if node.state.mode == NodeMode::Sleeping {
            node.state.mode = NodeMode::Active;
            node.awake_since = Some(now);
        }
        node.active_until = now.plus(self.cfg.node.active_window_s);
        let id = EntityId::sensor(node.state.id);
        let active_until = node.active_until;
        if !node.sleep_check_pending {
            node.sleep_check_pending = true;
            self.schedule(active_until, id, Msg::SleepCheck);
        }
        let next = now.plus(period);
        if next.secs() < self.cfg.horizon_s {
            self.schedule(next, id, Msg::Wake);
        }
        let cycle = now.secs() / period;
        if self.nodes[n].state.is_sink {
            self.sink_tick(n, now);
            return;
        }
        if cycle < self.first_sample_cycle {
            return;
        }
        let node = &mut self.nodes[n];
        let reading = match self
            .env
            .sample_truth(node.state.region_id, node.state.id, node.state.position, now)
        {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        charge_energy(&mut node.state.energy, &self.cfg.energy, EnergyEvent::Sense);
        let health = NodeHealth {
            battery_mj_remaining: (self.cfg.energy.battery_mj - node.state.energy.total_mj()) as f32,
            frames_dropped: node.mac.stats.frames_dropped.min(u64::from(u16::MAX)) as u16,
        };
        let mut actions = Vec::new();
        match self.cfg.routing_mode {
            RoutingMode::Tree | RoutingMode::Combined => {
                match node.state.tree_report(&reading, health) {
                    Ok(a) => actions.extend(a),
                    Err(e) => return self.fail(e),
                }
                self.counters.reports_emitted += 1;
                if self.cfg.routing_mode == RoutingMode::Combined {
                    actions.extend(node.state.send_matching_data(&reading, health, now));
                }
            }
            RoutingMode::DirectedDiffusion => {
                let before = node.state.counters.reports_originated;
                actions.extend(node.state.send_matching_data(&reading, health, now));
                self.counters.reports_emitted += node.state.counters.reports_originated - before;
            }
            RoutingMode::Flooding => {
                node.state.expire(now);
                let wanted = node.state.interests.values().any(|c| c.interest.matches(&reading));
                if wanted {
                    let limit = self.cfg.node.flood_hop_limit;
                    if let Some(a) = node.state.flood_data(&reading, health, limit) {
                        actions.push(a);
                        self.counters.reports_emitted += 1;
                    }
                }
            }
        }
        self.perform(n, actions);
    }

    /// Sinks issue the standing interest at the first wake-up (diffusion and
    /// flooding) or a fresh query every `query.every_s` (combined).
    fn sink_tick(&mut self, n: usize, now: SimTime) {
        let issue = match self.cfg.routing_mode {
            RoutingMode::Tree => None,
            RoutingMode::DirectedDiffusion | RoutingMode::Flooding => (now == SimTime::ZERO).then(|| {
                let duration = self.cfg.horizon_s.min(u64::from(u32::MAX)) as u32;
                (1, duration)
            }),
            RoutingMode::Combined => now.secs().is_multiple_of(self.cfg.query.every_s).then(|| {
                let q = now.secs() / self.cfg.query.every_s;
                (1 + q as u32, self.cfg.query.duration_s)
            }),
        };
        let Some((serial, duration_s)) = issue else { return };
        let node = &mut self.nodes[n];
        let region_id = node.state.region_id;
        let attributes = BTreeMap::from([
            (Attribute::Temperature, ValueRange::ANY),
            (Attribute::Precipitation, ValueRange::ANY),
        ]);
        let interest = Interest {
            interest_id: u32::from(region_id) * 1000 + serial,
            attributes,
            interval_s: self.cfg.reporting_period_s.min(u64::from(u32::MAX)) as u32,
            duration_s,
            hop_limit: self.cfg.node.interest_hop_limit,
            origin: node.state.id,
            data_rate: 1,
        };
        let action = node.state.issue_interest(interest);
        self.perform(n, vec![action]);
    }

    fn schedule(&mut self, at: SimTime, target: EntityId, msg: Msg) {
        if let Err(e) = self.kernel.schedule(at, target, msg) {
            self.fail(e);
        }
    }

    fn send(&mut self, from: EntityId, to: EntityId, msg: Msg, delay_s: u64) {
        if let Err(e) = self.kernel.send_delayed(from, to, msg, delay_s) {
            self.fail(e);
        }
    }

    fn perform(&mut self, n: usize, actions: Vec<StackAction>) {
        let now = self.kernel.now();
        for action in actions {
            match action {
                StackAction::Transmit { dest, packet } => {
                    let is_data = matches!(packet, Packet::Data(_));
                    if let (Some(audit), Packet::Data(m)) = (self.audit.as_mut(), &packet) {
                        audit.push(AuditEntry::DataTransmitted {
                            t: now,
                            node: self.nodes[n].state.id,
                            signature: m.signature,
                        });
                    }
                    let node = &mut self.nodes[n];
                    let distance = node.state.reach_km(&dest);
                    let bytes = packet.encode();
                    if node
                        .mac
                        .enqueue(node.state.id, dest, &bytes, distance, &self.cfg.mac)
                        .is_err()
                    {
                        if is_data {
                            self.counters.queue_drops += 1;
                        } else {
                            self.counters.control_queue_drops += 1;
                        }
                    }
                    self.kick_mac(n);
                }
                StackAction::Deliver { msg, from } => {
                    self.counters.sink_deliveries += 1;
                    if self.cfg.routing_mode == RoutingMode::Combined && matches!(msg.route, DataRoute::Diffusion { .. }) {
                        self.counters.query_reports += 1;
                        continue;
                    }
                    let sink = self.nodes[n].state.id;
                    let station = self.nodes[n].region as u32;
                    self.send(
                        EntityId::sensor(sink),
                        EntityId::local_bs(station),
                        Msg::Handoff { msg, last_hop: from },
                        0,
                    );
                }
            }
        }
    }

    fn kick_mac(&mut self, n: usize) {
        let node = &mut self.nodes[n];
        if node.mac.attempt_scheduled || node.mac.is_empty() {
            return;
        }
        node.mac.attempt_scheduled = true;
        let jitter = node.rng_jitter.range_inclusive(0, self.cfg.mac.access_jitter_s);
        let at = self.kernel.now().plus(jitter);
        let id = EntityId::sensor(node.state.id);
        self.schedule(at, id, Msg::MacAttempt);
    }

    fn on_mac_attempt(&mut self, n: usize) {
        let now = self.kernel.now();
        let r = self.nodes[n].region;
        let node = &mut self.nodes[n];
        node.mac.attempt_scheduled = false;
        let outcome = node
            .mac
            .attempt(now, &mut self.regions[r].channel, &self.cfg.mac, &mut node.rng_mac);
        let id = EntityId::sensor(node.state.id);
        match outcome {
            MacOutcome::Transmitted { frame, next_attempt } => {
                if let Some(at) = next_attempt {
                    self.nodes[n].mac.attempt_scheduled = true;
                    self.schedule(at, id, Msg::MacAttempt);
                }
                self.radiate(n, frame);
            }
            MacOutcome::Deferred { retry_at } => {
                self.nodes[n].mac.attempt_scheduled = true;
                self.schedule(retry_at, id, Msg::MacAttempt);
            }
            MacOutcome::Empty => {}
        }
    }

    /// Puts a frame on the air: transmit energy once, one delivery event per
    /// addressed neighbour with an independent loss trial.
    fn radiate(&mut self, n: usize, q: QueuedFrame) {
        let node = &mut self.nodes[n];
        charge_energy(
            &mut node.state.energy,
            &self.cfg.energy,
            EnergyEvent::Tx {
                bytes: q.frame.payload.len(),
                distance_km: q.distance_km,
            },
        );
        let recipients = node.state.recipients(&q.frame.dest);
        let from = EntityId::sensor(node.state.id);
        for r in recipients {
            let lost = self.nodes[n].rng_link.chance(self.cfg.link.loss_prob);
            self.nodes[r as usize].inbound += 1;
            self.send(
                from,
                EntityId::sensor(r),
                Msg::Frame {
                    frame: q.frame.clone(),
                    lost,
                },
                self.cfg.link.delay_s,
            );
        }
    }

    fn on_frame(&mut self, n: usize, frame: MacFrame, lost: bool) {
        let now = self.kernel.now();
        let is_data = frame.kind == KIND_DATA;
        let key = (frame.sender, frame.packet_id);
        let last = frame.fragment_index + 1 == frame.fragment_total;
        let node = &mut self.nodes[n];
        node.inbound -= 1;
        let asleep = node.state.mode == NodeMode::Sleeping;
        if !asleep {
            charge_energy(
                &mut node.state.energy,
                &self.cfg.energy,
                EnergyEvent::Rx {
                    bytes: frame.payload.len(),
                },
            );
        }
        if asleep || lost {
            if node.dropped.insert(key) {
                node.reasm.discard(key.0, key.1);
                let c = &mut self.counters;
                match (asleep, is_data) {
                    (true, true) => c.sleep_drops += 1,
                    (true, false) => c.control_sleep_drops += 1,
                    (false, true) => c.link_losses += 1,
                    (false, false) => c.control_losses += 1,
                }
            }
            if last {
                node.dropped.remove(&key);
            }
            return;
        }
        if node.dropped.contains(&key) {
            if last {
                node.dropped.remove(&key);
            }
            return;
        }
        let Some(bytes) = node.reasm.accept(&frame) else {
            return;
        };
        let packet = match Packet::decode(&bytes) {
            Ok(p) => p,
            Err(e) => return self.fail(e),
        };
        let result = match packet {
            Packet::Data(msg) => {
                let before = node.state.counters.duplicates_suppressed;
                let r = node.state.on_data(msg, frame.sender, now);
                self.counters.relay_duplicates += node.state.counters.duplicates_suppressed - before;
                r
            }
            Packet::Interest(i) => {
                if let Some(audit) = self.audit.as_mut() {
                    audit.push(AuditEntry::InterestHeard {
                        t: now,
                        node: node.state.id,
                        from: frame.sender,
                        interest_id: i.interest_id,
                    });
                }
                Ok(node.state.propagate_interest(&i, frame.sender, now))
            }
            Packet::Reinforce(r) => Ok(node.state.on_reinforce(&r, frame.sender, now)),
        };
        match result {
            Ok(actions) => self.perform(n, actions),
            Err(e) => self.fail(e),
        }
    }

    fn region_busy(&self, r: usize) -> bool {
        self.regions[r]
            .ids()
            .any(|id| {
                let n = &self.nodes[id as usize];
                !n.mac.is_empty() || n.inbound > 0
            })
    }

    fn on_sleep_check(&mut self, n: usize) {
        let now = self.kernel.now();
        let r = self.nodes[n].region;
        self.nodes[n].sleep_check_pending = false;
        let id = EntityId::sensor(self.nodes[n].state.id);
        if now < self.nodes[n].active_until {
            self.nodes[n].sleep_check_pending = true;
            let at = self.nodes[n].active_until;
            self.schedule(at, id, Msg::SleepCheck);
            return;
        }
        if self.region_busy(r) {
            self.counters.sleep_postponements += 1;
            self.nodes[n].sleep_check_pending = true;
            self.schedule(now.plus(self.cfg.node.sleep_recheck_s), id, Msg::SleepCheck);
            return;
        }
        let node = &mut self.nodes[n];
        if let Some(since) = node.awake_since.take() {
            charge_energy(
                &mut node.state.energy,
                &self.cfg.energy,
                EnergyEvent::Idle {
                    seconds: now.secs() - since.secs(),
                },
            );
        }
        node.state.mode = NodeMode::Sleeping;
    }

    fn route_snapshot(&self, r: usize, msg: &DataMessage, last_hop: u32) -> Vec<u32> {
        let region = &self.regions[r];
        match msg.route {
            DataRoute::Tree => {
                let local = (msg.source - region.first_id) as usize;
                region
                    .tree
                    .path_to_sink(local)
                    .into_iter()
                    .map(|i| region.first_id + i as u32)
                    .collect()
            }
            _ => {
                let mut out: Vec<u32> = Vec::new();
                for id in [Some(msg.source), msg.first_hop, Some(last_hop), Some(region.sink())]
                    .into_iter()
                    .flatten()
                {
                    if !out.contains(&id) {
                        out.push(id);
                    }
                }
                out
            }
        }
    }

    fn on_handoff(&mut self, s: usize, msg: DataMessage, last_hop: u32) {
        let route = self.route_snapshot(s, &msg, last_hop);
        let location = self.nodes[msg.source as usize].state.position;
        let station = &mut self.stations[s];
        match station.bs.ingest(&msg, location, route, &self.cfg.calibration) {
            Ok(record) => {
                let seq = station.sender.send(record.clone());
                self.uplink(s, seq, record);
            }
            Err(BackboneError::DuplicateKey(_)) => self.counters.station_duplicates += 1,
            Err(e) => unreachable!("ingest failed: {e}"),
        }
    }

    /// One uplink attempt: a single loss trial for the whole station path and
    /// a retransmission timer.
    fn uplink(&mut self, s: usize, seq: u64, record: StoredRecord) {
        let station = &mut self.stations[s];
        let lost = station.rng.chance(self.cfg.backbone.loss_prob);
        let hops = (station.route.len() - 1) as u64;
        let lat = self.cfg.backbone.latency_s();
        let from = EntityId::local_bs(s as u32);
        if !lost {
            let to = self.station_entity(self.stations[s].route[1]);
            self.send(
                from,
                to,
                Msg::Uplink {
                    origin: s,
                    seq,
                    hop: 1,
                    record: Box::new(record),
                },
                lat,
            );
        }
        let rto = 2 * hops * lat + 1;
        self.send(from, from, Msg::UplinkTimeout { seq }, rto);
    }

    fn station_entity(&self, idx: usize) -> EntityId {
        if idx < self.stations.len() {
            EntityId::local_bs(idx as u32)
        } else {
            EntityId::remote_bs(0)
        }
    }

    fn on_uplink(&mut self, origin: usize, seq: u64, hop: usize, record: Box<StoredRecord>) {
        let route = &self.stations[origin].route;
        let here = self.station_entity(route[hop]);
        let lat = self.cfg.backbone.latency_s();
        if hop + 1 < route.len() {
            let next = self.station_entity(route[hop + 1]);
            self.send(
                here,
                next,
                Msg::Uplink {
                    origin,
                    seq,
                    hop: hop + 1,
                    record,
                },
                lat,
            );
            return;
        }
        let hops = (route.len() - 1) as u64;
        // a duplicate still gets acknowledged so the sender stops retrying
        let _ = self.central.insert(*record);
        self.send(here, EntityId::local_bs(origin as u32), Msg::Ack { seq }, hops * lat);
    }

    fn on_ack(&mut self, s: usize, seq: u64) {
        let station = &mut self.stations[s];
        if let Some(record) = station.sender.on_ack(seq) {
            station.bs.mark_acked(record.key());
        }
    }

    fn on_uplink_timeout(&mut self, s: usize, seq: u64) {
        let record = match self.stations[s].sender.on_timeout(seq) {
            TimeoutAction::Settled | TimeoutAction::Abandon(_) => return,
            TimeoutAction::Retransmit { payload, .. } => payload.clone(),
        };
        self.uplink(s, seq, record);
    }
}
