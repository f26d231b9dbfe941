//! Checks shared by the integration tests and the acceptance runner. Each
//! returns a one-line summary on success and a description of the first
//! violation on failure.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};

use droughtnet::analytics::{classify_values, SeverityClass, Thresholds};
use droughtnet::backbone::CentralDatabase;
use droughtnet::config::{RegionConfig, ScenarioConfig};
use droughtnet::coverage::{estimate_node_count, footprint_area, CellShape, GeoPoint, PlacementPlan};
use droughtnet::kernel::{EntityId, Event, Kernel, PayloadTag, SimTime, YEAR_S};
use droughtnet::rng::RngStream;
use droughtnet::scenario::{analyze, compare_runs, replay, run_scenario, Analysis};
use droughtnet::sim::{AuditEntry, DeliveryCounters, Simulation};
use droughtnet::stack::tree::{validate_tree, RoutingTree, MAX_CHILDREN};
use droughtnet::stack::RoutingMode;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- kernel

#[derive(Debug, Clone, Copy, PartialEq)]
struct Token(u32);

impl PayloadTag for Token {
    fn tag(&self) -> String {
        format!("tok:{}", self.0)
    }
}

/// Schedules `n` events with heavily duplicated timestamps, partly from
/// inside handlers, and checks processing order against a sort of
/// everything that was scheduled.
pub fn kernel_ordering(n: u32, seed: u64) -> Check {
    let mut rng = RngStream::new(seed, "kernel-ordering");
    let mut k: Kernel<Token> = Kernel::new();
    let targets = 16;
    for i in 0..targets {
        k.register(EntityId::sensor(i));
    }
    let mut scheduled: Vec<(SimTime, u64)> = Vec::with_capacity(n as usize);
    let initial = n / 2;
    for i in 0..initial {
        let at = SimTime(rng.range_inclusive(0, 500));
        let target = EntityId::sensor(rng.range_inclusive(0, targets as u64 - 1) as u32);
        let seq = k.schedule(at, target, Token(i)).map_err(|e| e.to_string())?;
        scheduled.push((at, seq));
    }
    let mut remaining = n - initial;
    let mut processed: Vec<(SimTime, u64)> = Vec::with_capacity(n as usize);
    let mut followups: Vec<(SimTime, u64)> = Vec::new();
    let mut handler = |kernel: &mut Kernel<Token>, ev: Event<Token>| {
        processed.push((ev.fire_at, ev.seq));
        if remaining > 0 {
            // delay 0 lands on the current timestamp behind what is queued
            let delay = rng.range_inclusive(0, 3) * rng.range_inclusive(0, 1);
            let at = kernel.now().plus(delay);
            let seq = kernel.schedule(at, ev.target, Token(n - remaining)).unwrap();
            followups.push((at, seq));
            remaining -= 1;
        }
    };
    k.run_until(SimTime(u64::MAX), &mut handler);
    scheduled.extend(followups);
    ensure(scheduled.len() == n as usize, || format!("scheduled {} of {n}", scheduled.len()))?;
    let mut oracle = scheduled.clone();
    oracle.sort();
    ensure(processed.len() == oracle.len(), || {
        format!("processed {} events, {} scheduled", processed.len(), oracle.len())
    })?;
    if let Some(i) = (0..oracle.len()).find(|&i| processed[i] != oracle[i]) {
        return Err(format!("position {i}: got {:?}, sort oracle says {:?}", processed[i], oracle[i]));
    }
    let distinct: BTreeSet<SimTime> = oracle.iter().map(|e| e.0).collect();
    Ok(format!(
        "{} events over {} distinct timestamps match the sort oracle",
        oracle.len(),
        distinct.len()
    ))
}

// ------------------------------------------------------------ classifier

fn rank(c: SeverityClass) -> u8 {
    c as u8
}

/// Monotonicity on a randomized grid, strict low-side boundaries and
/// rejection of non-monotone threshold sets.
pub fn classifier_properties(points: usize, seed: u64) -> Check {
    let th = Thresholds::default();
    let mut rng = RngStream::new(seed, "classifier-grid");
    // warmer or drier never lowers the class
    for i in 0..points {
        let t = rng.unit() * 8.0 - 3.0;
        let p = rng.unit() * 150.0;
        let dt = rng.unit() * 3.0;
        let dp = rng.unit() * 60.0;
        let base = classify_values(t, p, &th);
        let warmer = classify_values(t + dt, p, &th);
        let drier = classify_values(t, (p - dp).max(0.0), &th);
        ensure(rank(warmer) >= rank(base), || {
            format!("point {i}: anomaly {t} -> {} lowered {base} to {warmer}", t + dt)
        })?;
        ensure(rank(drier) >= rank(base), || {
            format!("point {i}: precip {p} -> {} lowered {base} to {drier}", p - dp)
        })?;
    }
    // values exactly on a threshold take the milder side
    let boundaries = [
        (th.t_serious_c, th.p_serious_mm - 1.0, SeverityClass::Moderate),
        (th.t_serious_c + 1.0, th.p_serious_mm, SeverityClass::Moderate),
        (th.t_moderate_c, th.p_moderate_mm - 1.0, SeverityClass::Slight),
        (th.t_moderate_c + 0.5, th.p_moderate_mm, SeverityClass::Slight),
        (th.t_slight_c, th.p_slight_mm, SeverityClass::NonDrought),
        (th.t_slight_c, th.p_slight_mm + 10.0, SeverityClass::NonDrought),
        (0.0, th.p_slight_mm, SeverityClass::NonDrought),
    ];
    for (t, p, want) in boundaries {
        let got = classify_values(t, p, &th);
        ensure(got == want, || format!("boundary ({t}, {p}) gave {got}, expected {want}"))?;
    }
    // just across each boundary moves up
    let eps = 1e-9;
    let across = [
        (th.t_serious_c + eps, th.p_serious_mm - eps, SeverityClass::Serious),
        (th.t_moderate_c + eps, th.p_moderate_mm - eps, SeverityClass::Moderate),
        (th.t_slight_c + eps, th.p_slight_mm + 10.0, SeverityClass::Slight),
        (0.0, th.p_slight_mm - eps, SeverityClass::Slight),
    ];
    for (t, p, want) in across {
        let got = classify_values(t, p, &th);
        ensure(got == want, || format!("({t}, {p}) gave {got}, expected {want}"))?;
    }
    let bad = [
        Thresholds { p_serious_mm: 30.0, ..th },
        Thresholds { p_moderate_mm: 60.0, ..th },
        Thresholds { t_serious_c: 0.8, ..th },
        Thresholds { t_slight_c: 1.5, ..th },
        Thresholds { p_serious_mm: f64::NAN, ..th },
    ];
    for (i, b) in bad.iter().enumerate() {
        ensure(b.validate().is_err(), || format!("non-monotone set {i} accepted: {b:?}"))?;
    }
    ensure(th.validate().is_ok(), || "default thresholds rejected".into())?;
    Ok(format!(
        "{points} grid points monotone, {} boundaries low-side, {} bad threshold sets rejected",
        boundaries.len() + across.len(),
        bad.len()
    ))
}

// -------------------------------------------------------------- coverage

pub fn coverage_arithmetic() -> Check {
    let circle = footprint_area(CellShape::Circle, 1.80).map_err(|e| e.to_string())?;
    let hexagon = footprint_area(CellShape::Hexagon, 2.074).map_err(|e| e.to_string())?;
    let within = |got: f64, want: f64| ((got - want) / want).abs() <= 0.005;
    ensure(within(circle, 10.18), || format!("circle r=1.80 gave {circle:.4} km2"))?;
    ensure(within(hexagon, 11.17), || format!("hexagon R=2.074 gave {hexagon:.4} km2"))?;
    // independent formulas
    ensure((circle - PI * 1.8 * 1.8).abs() < 1e-9, || "circle formula".into())?;
    ensure((hexagon - 1.5 * 3f64.sqrt() * 2.074 * 2.074).abs() < 1e-9, || "hexagon formula".into())?;
    let sensing = estimate_node_count(100.0, CellShape::Hexagon, 2.074).map_err(|e| e.to_string())?;
    ensure(sensing + 1 == 10, || format!("100 km2 hexagon needs {sensing} cells plus the sink"))?;
    // each shape at the radio range that yields its reference footprint
    let circle_100 = estimate_node_count(100.0, CellShape::Circle, 1.80).map_err(|e| e.to_string())?;
    for area in [10.0, 50.0, 100.0, 250.0, 400.0, 1000.0] {
        let hex = estimate_node_count(area, CellShape::Hexagon, 2.074).map_err(|e| e.to_string())?;
        let circ = estimate_node_count(area, CellShape::Circle, 1.80).map_err(|e| e.to_string())?;
        ensure(hex <= circ, || format!("area {area}: hexagon {hex} > circle {circ}"))?;
    }
    Ok(format!(
        "circle {circle:.3} km2, hexagon {hexagon:.3} km2, 100 km2 needs {sensing}+1 hexagon nodes vs {circle_100}+1 circle"
    ))
}

// ---------------------------------------------------------- conservation

pub fn year_config(loss: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.link.loss_prob = loss;
    cfg
}

/// Reports lost somewhere in the network or the backbone.
pub fn recorded_losses(c: &DeliveryCounters) -> u64 {
    c.link_losses + c.queue_drops + c.sleep_drops + c.uplink_abandoned
}

/// Tree-mode run; `expected` reports must be fully accounted for by stored
/// records and recorded losses.
pub fn conservation(cfg: &ScenarioConfig, expected: u64) -> Result<(DeliveryCounters, CentralDatabase), String> {
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let c = sim.counters().clone();
    let db_len = sim.central().len() as u64;
    ensure(db_len == c.records_stored, || format!("db holds {db_len}, counter says {}", c.records_stored))?;
    ensure(c.reports_emitted == expected, || format!("{} reports emitted, expected {expected}", c.reports_emitted))?;
    ensure(c.reports_in_flight == 0, || format!("{} reports still in flight", c.reports_in_flight))?;
    ensure(db_len + recorded_losses(&c) == expected, || {
        format!("{db_len} records + {} losses != {expected}", recorded_losses(&c))
    })?;
    Ok((c, sim.into_central()))
}

// ------------------------------------------------ diffusion vs flooding

pub struct EnergyComparison {
    pub diffusion_mj: f64,
    pub flooding_mj: f64,
    pub delivered: usize,
}

/// Radio energy from the first post-reinforcement cycle to the horizon,
/// with the delivered record sets of both runs.
fn post_reinforcement_energy(mode: RoutingMode, days: u64, seed: u64) -> Result<(f64, CentralDatabase), String> {
    let cfg = ScenarioConfig {
        routing_mode: mode,
        horizon_s: days * 86_400,
        seed,
        ..ScenarioConfig::default()
    };
    let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
    // cycle 1 carries the exploratory data that triggers reinforcement
    sim.run_until(SimTime(2 * cfg.reporting_period_s - 1)).map_err(|e| e.to_string())?;
    if mode == RoutingMode::DirectedDiffusion {
        for n in sim.node_states().filter(|n| !n.is_sink) {
            let interest = n.region_id as u32 * 1000 + 1;
            ensure(n.reinforced_gradient(interest).is_some(), || {
                format!("node {} not reinforced before the measurement window", n.id)
            })?;
        }
    }
    let before = sim.radio_energy_mj();
    sim.run().map_err(|e| e.to_string())?;
    Ok((sim.radio_energy_mj() - before, sim.into_central()))
}

fn keys(db: &CentralDatabase) -> BTreeSet<(u8, u32, u64)> {
    db.records().iter().map(|r| (r.region_id, r.node_id, r.timestamp.0)).collect()
}

pub fn diffusion_vs_flooding(days: u64, seed: u64) -> Result<EnergyComparison, String> {
    let (dd, dd_db) = post_reinforcement_energy(RoutingMode::DirectedDiffusion, days, seed)?;
    let (fl, fl_db) = post_reinforcement_energy(RoutingMode::Flooding, days, seed)?;
    let (dk, fk) = (keys(&dd_db), keys(&fl_db));
    ensure(dk == fk, || {
        format!(
            "delivered sets differ: {} diffusion vs {} flooding records",
            dk.len(),
            fk.len()
        )
    })?;
    Ok(EnergyComparison {
        diffusion_mj: dd,
        flooding_mj: fl,
        delivered: dk.len(),
    })
}

// ------------------------------------------------------------ protocol

#[derive(Debug, Clone)]
pub struct Topology {
    pub positions: Vec<GeoPoint>,
    pub mode: RoutingMode,
    pub loss: f64,
    pub seed: u64,
}

pub const TOPOLOGY_RADIO_KM: f64 = 1.0;

/// Random connected layouts of 2..=12 nodes: each node lands within link
/// range of an earlier one.
pub fn topology_strategy() -> impl Strategy<Value = Topology> {
    let link = 2.0 * TOPOLOGY_RADIO_KM;
    (2usize..=12)
        .prop_flat_map(move |n| {
            (
                proptest::collection::vec((any::<prop::sample::Index>(), 0.0..2.0 * PI, 0.25 * link..0.98 * link), n - 1),
                prop_oneof![
                    Just(RoutingMode::DirectedDiffusion),
                    Just(RoutingMode::Flooding),
                    Just(RoutingMode::Combined),
                    Just(RoutingMode::Tree),
                ],
                prop_oneof![Just(0.0), Just(0.1), Just(0.3)],
                any::<u64>(),
            )
        })
        .prop_map(|(steps, mode, loss, seed)| {
            let mut positions = vec![GeoPoint::new(50.0, 50.0)];
            for (pick, angle, dist) in steps {
                let base = positions[pick.index(positions.len())];
                positions.push(GeoPoint::new(base.x_km + dist * angle.cos(), base.y_km + dist * angle.sin()));
            }
            Topology {
                positions,
                mode,
                loss,
                seed,
            }
        })
}

fn topology_config(t: &Topology) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed: t.seed,
        routing_mode: t.mode,
        horizon_s: 4 * 1800,
        regions: vec![RegionConfig::default()],
        ..ScenarioConfig::default()
    };
    cfg.link.loss_prob = t.loss;
    cfg.query.every_s = 1800;
    cfg.query.duration_s = 3600;
    cfg
}

fn check_tree(tree: &RoutingTree, points: &[GeoPoint], link: f64) -> Result<(), String> {
    validate_tree(tree, points, link).map_err(|e| e.to_string())?;
    // independent re-check of the same structure
    let n = points.len();
    let mut kids = vec![0usize; n];
    for (i, p) in tree.parent.iter().enumerate() {
        match (i == tree.sink, p) {
            (true, Some(_)) => return Err("sink has a parent".into()),
            (false, None) => return Err(format!("node {i} has no parent")),
            (false, Some(p)) => {
                kids[*p] += 1;
                ensure(points[i].distance(&points[*p]) <= link + 1e-9, || format!("link {i}->{p} out of range"))?;
            }
            _ => {}
        }
    }
    ensure(kids.iter().all(|&k| k <= MAX_CHILDREN), || format!("child counts {kids:?}"))?;
    for i in 0..n {
        let mut cur = i;
        for _ in 0..=n {
            if cur == tree.sink {
                break;
            }
            cur = tree.parent[cur].unwrap();
        }
        ensure(cur == tree.sink, || format!("node {i} does not reach the sink"))?;
    }
    Ok(())
}

/// Runs one topology and checks every protocol invariant against the audit
/// log and the final node state.
pub fn check_topology(t: &Topology) -> Result<(), TestCaseError> {
    let cfg = topology_config(t);
    let plan = PlacementPlan::from_positions(1, CellShape::Hexagon, TOPOLOGY_RADIO_KM, t.positions.clone());
    let link = plan.link_range_km();
    let mut sim = match Simulation::with_plans(&cfg, vec![plan]) {
        Ok(s) => s,
        // a layout with no spanning tree of out-degree two is not a protocol case
        Err(droughtnet::sim::SimError::Tree { .. }) => return Err(TestCaseError::reject("no binary tree")),
        Err(e) => return Err(TestCaseError::fail(e.to_string())),
    };
    sim.enable_audit();
    sim.run().map_err(|e| TestCaseError::fail(e.to_string()))?;
    let fail = |m: String| TestCaseError::fail(format!("{:?} loss {} n {}: {m}", t.mode, t.loss, t.positions.len()));

    check_tree(sim.trees()[0], &t.positions, link).map_err(fail)?;
    if t.loss == 0.0 && sim.central().is_empty() {
        return Err(fail("nothing reached the central database".into()));
    }
    if t.loss == 0.0 && t.mode == RoutingMode::Tree && !sim.counters().conserved() {
        return Err(fail(format!("lossless tree run not conserved: {:?}", sim.counters())));
    }

    let mut sent = BTreeSet::new();
    let mut heard: BTreeSet<(u32, u32, u32)> = BTreeSet::new();
    for e in sim.audit() {
        match *e {
            AuditEntry::DataTransmitted { node, signature, t } => {
                if !sent.insert((node, signature)) {
                    return Err(fail(format!("node {node} retransmitted signature {signature:x} at t={t}")));
                }
            }
            AuditEntry::InterestHeard {
                node,
                from,
                interest_id,
                ..
            } => {
                heard.insert((node, interest_id, from));
            }
        }
    }

    for n in sim.node_states() {
        let mut per_pair = BTreeSet::new();
        let mut reinforced: BTreeMap<u32, u32> = BTreeMap::new();
        for g in &n.gradients {
            if !heard.contains(&(n.id, g.interest_id, g.toward)) {
                return Err(fail(format!(
                    "node {} holds a gradient toward {} for interest {} it never heard from there",
                    n.id, g.toward, g.interest_id
                )));
            }
            if n.neighbor_distance(g.toward).is_none() {
                return Err(fail(format!("node {} gradient toward non-neighbour {}", n.id, g.toward)));
            }
            if !per_pair.insert((g.interest_id, g.toward)) {
                return Err(fail(format!(
                    "node {} has duplicate gradients for ({}, {})",
                    n.id, g.interest_id, g.toward
                )));
            }
            if g.reinforced {
                *reinforced.entry(g.interest_id).or_default() += 1;
            }
        }
        if let Some((i, c)) = reinforced.iter().find(|(_, c)| **c > 1) {
            return Err(fail(format!("node {} has {c} reinforced gradients for interest {i}", n.id)));
        }
        let heard_ids: BTreeSet<u32> = heard.iter().filter(|h| h.0 == n.id).map(|h| h.1).collect();
        if n.counters.interests_rebroadcast > heard_ids.len() as u64 {
            return Err(fail(format!(
                "node {} rebroadcast {} interests but heard only {} distinct",
                n.id,
                n.counters.interests_rebroadcast,
                heard_ids.len()
            )));
        }
        for id in n.interests.keys() {
            if !heard_ids.contains(id) && !n.issued.contains_key(id) {
                return Err(fail(format!("node {} caches interest {id} it never heard", n.id)));
            }
        }
    }

    // reinforced chains lead to the sink without revisiting a node
    let states: BTreeMap<u32, _> = sim.node_states().map(|n| (n.id, n)).collect();
    for n in states.values() {
        for g in n.gradients.iter().filter(|g| g.reinforced) {
            let mut seen = BTreeSet::from([n.id]);
            let mut cur = g.toward;
            loop {
                if !seen.insert(cur) {
                    return Err(fail(format!("reinforced chain from {} revisits {cur}", n.id)));
                }
                let s = states[&cur];
                if s.is_sink {
                    break;
                }
                match s.reinforced_gradient(g.interest_id) {
                    Some(next) => cur = next.toward,
                    None => break,
                }
            }
        }
    }
    Ok(())
}

pub fn protocol_properties(cases: u32) -> Check {
    let mut runner = TestRunner::new(PropConfig {
        cases,
        max_global_rejects: cases * 4,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = topology_strategy();
    let modes: RefCell<BTreeMap<&'static str, u32>> = RefCell::default();
    let outcome = runner.run(&strategy, |t| {
        let r = check_topology(&t);
        if r.is_ok() {
            *modes.borrow_mut().entry(t.mode.as_str()).or_default() += 1;
        }
        r
    });
    outcome.map_err(|e| e.to_string())?;
    let modes = modes.into_inner();
    let counted: u32 = modes.values().sum();
    ensure(counted >= cases, || format!("only {counted} topologies checked"))?;
    let mix: Vec<String> = modes.iter().map(|(m, c)| format!("{m} {c}")).collect();
    Ok(format!("{counted} topologies of <=12 nodes ({})", mix.join(", ")))
}

// ---------------------------------------------------------- determinism

pub fn determinism(days: u64) -> Check {
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ScenarioConfig {
        horizon_s: days * 86_400,
        seed: 77,
        ..ScenarioConfig::default()
    };
    cfg.link.loss_prob = 0.2;
    cfg.output.trace = true;
    cfg.output.truth_dump = true;
    let mut summary = Vec::new();
    for mode in [RoutingMode::Tree, RoutingMode::DirectedDiffusion] {
        cfg.routing_mode = mode;
        let a = base.path().join(format!("{}-a", mode.as_str()));
        let b = base.path().join(format!("{}-b", mode.as_str()));
        let c = base.path().join(format!("{}-replay", mode.as_str()));
        cfg.output.dir = a.clone();
        run_scenario(&cfg).map_err(|e| e.to_string())?;
        cfg.output.dir = b.clone();
        run_scenario(&cfg).map_err(|e| e.to_string())?;
        let fresh = compare_runs(&a, &b).map_err(|e| e.to_string())?;
        ensure(fresh.identical(), || format!("{mode:?}: fresh runs differ in {:?}", fresh.mismatched))?;
        let replayed = replay(&a, &c).map_err(|e| e.to_string())?;
        ensure(replayed.identical(), || format!("{mode:?}: replay differs in {:?}", replayed.mismatched))?;
        summary.push(format!("{} {} files", mode.as_str(), replayed.compared.len()));
    }
    Ok(format!("replay and fresh reruns byte-identical ({})", summary.join(", ")))
}

// --------------------------------------------------------------- golden

pub const REFERENCE_CLASSES: [(u8, SeverityClass); 5] = [
    (1, SeverityClass::NonDrought),
    (2, SeverityClass::Slight),
    (3, SeverityClass::Serious),
    (4, SeverityClass::Moderate),
    (5, SeverityClass::NonDrought),
];

pub fn year_end_classes(a: &Analysis) -> Check {
    ensure(a.issues.is_empty(), || format!("analytics issues {:?}", a.issues))?;
    for (region, want) in REFERENCE_CLASSES {
        let got = a.year_end.get(&region).copied();
        ensure(got == Some(want), || format!("region {region}: {got:?}, expected {want}"))?;
    }
    let s: Vec<String> = a.year_end.iter().map(|(r, c)| format!("{r}:{c}")).collect();
    Ok(s.join(" "))
}

pub fn advection_forecast(a: &Analysis) -> Check {
    let r4 = a.forecasts.get(&4).ok_or("no forecast for region 4")?;
    ensure(r4.forecast == SeverityClass::Serious, || format!("region 4 forecast {}", r4.forecast))?;
    for (region, f) in &a.forecasts {
        ensure(f.forecast >= f.current, || format!("region {region} forecast {} below {}", f.forecast, f.current))?;
    }
    let changed: Vec<String> = a
        .forecasts
        .iter()
        .filter(|(_, f)| f.forecast != f.current)
        .map(|(r, f)| format!("{r}:{}->{}", f.current, f.forecast))
        .collect();
    Ok(format!("escalations {}", changed.join(" ")))
}

pub fn analyze_year(db: &CentralDatabase) -> Analysis {
    analyze(db, &ScenarioConfig::default())
}

pub const YEAR_REPORTS: u64 = 5 * 9 * (YEAR_S / 1800);
