//! Footprint arithmetic and region placement.

mod common;

use droughtnet::config::ScenarioConfig;
use droughtnet::coverage::connectivity_check;
use droughtnet::sim::plan_regions;

#[test]
fn footprint_and_node_count_arithmetic() {
    let summary = common::coverage_arithmetic().unwrap_or_else(|e| panic!("{e}"));
    println!("{summary}");
}

#[test]
fn default_scenario_places_fifty_connected_nodes() {
    let planned = plan_regions(&ScenarioConfig::default()).unwrap();
    assert_eq!(planned.len(), 5);
    let mut total = 0;
    for (region, plan) in &planned {
        assert_eq!(plan.len(), 10, "region {}", region.area.id);
        assert!(region.area.contains(&plan.sink_position));
        assert!(connectivity_check(plan).all_reach_sink(), "region {}", region.area.id);
        // sink is the node nearest the centre
        let d0 = plan.node_positions[0].distance(&region.area.center);
        assert!(plan.node_positions.iter().all(|p| p.distance(&region.area.center) >= d0 - 1e-9));
        total += plan.len();
    }
    assert_eq!(total, 50);
}
