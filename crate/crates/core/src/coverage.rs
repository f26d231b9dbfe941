//! Cell-shape geometry, lattice tiling of square regions and node placement.
//!
//! `radio_range_km` is the circumradius of the cell polygon (the radius for
//! circles), so every shape is inscribed in the node's radio disc.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellShape {
    Circle,
    Square,
    EquilateralTriangle,
    Hexagon,
}

impl CellShape {
    pub const ALL: [CellShape; 4] = [
        CellShape::Circle,
        CellShape::Square,
        CellShape::EquilateralTriangle,
        CellShape::Hexagon,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CellShape::Circle => "circle",
            CellShape::Square => "square",
            CellShape::EquilateralTriangle => "equilateral_triangle",
            CellShape::Hexagon => "hexagon",
        }
    }
}

impl fmt::Display for CellShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Planar point in kilometres on the 100 km x 100 km map.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x_km: f64,
    pub y_km: f64,
}

impl GeoPoint {
    pub const fn new(x_km: f64, y_km: f64) -> Self {
        Self { x_km, y_km }
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x_km - other.x_km).hypot(self.y_km - other.y_km)
    }

    /// Compass bearing toward `other`: 0 = north (+y), 90 = east (+x).
    pub fn bearing_to(&self, other: &GeoPoint) -> f64 {
        let deg = (other.x_km - self.x_km)
            .atan2(other.y_km - self.y_km)
            .to_degrees();
        deg.rem_euclid(360.0)
    }
}

/// An axis-aligned square sub-network area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionArea {
    pub id: u8,
    pub center: GeoPoint,
    pub side_km: f64,
}

impl RegionArea {
    pub fn area_km2(&self) -> f64 {
        self.side_km * self.side_km
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        let h = self.side_km / 2.0 + 1e-9;
        (p.x_km - self.center.x_km).abs() <= h && (p.y_km - self.center.y_km).abs() <= h
    }

    fn distance_to(&self, p: &GeoPoint) -> f64 {
        let h = self.side_km / 2.0;
        let dx = ((p.x_km - self.center.x_km).abs() - h).max(0.0);
        let dy = ((p.y_km - self.center.y_km).abs() - h).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("radio range must be positive, got {0} km")]
    NonPositiveRange(f64),
    #[error("region area must be positive, got {0} km2")]
    NonPositiveArea(f64),
    #[error("{0} cells cannot tile the plane without gaps or overlap")]
    UntileableShape(CellShape),
    #[error("{requested} nodes cannot cover the region, at least {required} needed")]
    InsufficientNodes { requested: usize, required: usize },
    #[error("only {capacity} cell centres fit inside the region, {requested} requested")]
    RegionCapacityExceeded { requested: usize, capacity: usize },
}

pub fn footprint_area(shape: CellShape, radio_range_km: f64) -> Result<f64, CoverageError> {
    if !(radio_range_km > 0.0) {
        return Err(CoverageError::NonPositiveRange(radio_range_km));
    }
    let r2 = radio_range_km * radio_range_km;
    Ok(match shape {
        CellShape::Circle => PI * r2,
        CellShape::Square => 2.0 * r2,
        CellShape::EquilateralTriangle => 3.0 * SQRT3 / 4.0 * r2,
        CellShape::Hexagon => 3.0 * SQRT3 / 2.0 * r2,
    })
}

/// Number of sensing cells needed to cover `region_area_km2`; the sink is
/// not included.
pub fn estimate_node_count(
    region_area_km2: f64,
    shape: CellShape,
    radio_range_km: f64,
) -> Result<usize, CoverageError> {
    if !(region_area_km2 > 0.0) {
        return Err(CoverageError::NonPositiveArea(region_area_km2));
    }
    let cell = footprint_area(shape, radio_range_km)?;
    // relative slack so an area equal to k footprints does not round up to k+1
    Ok(((region_area_km2 / cell) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Periodic set of cell centres: `offsets + i*basis[0] + j*basis[1]`.
#[derive(Debug, Clone)]
struct Lattice {
    basis: [(f64, f64); 2],
    offsets: Vec<(f64, f64)>,
}

impl Lattice {
    fn for_shape(shape: CellShape, r: f64) -> Result<Self, CoverageError> {
        Ok(match shape {
            CellShape::Circle => return Err(CoverageError::UntileableShape(shape)),
            CellShape::Hexagon => {
                let a = SQRT3 * r;
                Lattice {
                    basis: [(a, 0.0), (a / 2.0, a * SQRT3 / 2.0)],
                    offsets: vec![(0.0, 0.0)],
                }
            }
            CellShape::Square => {
                let s = r * std::f64::consts::SQRT_2;
                Lattice {
                    basis: [(s, 0.0), (0.0, s)],
                    offsets: vec![(0.0, 0.0)],
                }
            }
            CellShape::EquilateralTriangle => {
                let side = SQRT3 * r;
                let h = 1.5 * r;
                // centroids of the upward and downward triangles, relative to
                // the up-triangle centroid
                Lattice {
                    basis: [(side, 0.0), (side / 2.0, h)],
                    offsets: vec![(0.0, 0.0), (side / 2.0, h / 3.0)],
                }
            }
        })
    }

    /// All centres within `reach` km of the region, with the lattice origin
    /// shifted to `origin`.
    fn points_near(&self, origin: GeoPoint, region: &RegionArea, reach: f64) -> Vec<GeoPoint> {
        let [(ax, ay), (bx, by)] = self.basis;
        let min_step = ay.hypot(ax).min(bx.hypot(by)).min(by.abs().max(1e-9));
        let span = region.side_km / 2.0 + reach + ax.hypot(ay) + bx.hypot(by);
        let n = (2.0 * span / min_step).ceil() as i64 + 2;
        let mut out = Vec::new();
        for j in -n..=n {
            for i in -n..=n {
                for &(ox, oy) in &self.offsets {
                    let p = GeoPoint::new(
                        origin.x_km + ox + i as f64 * ax + j as f64 * bx,
                        origin.y_km + oy + i as f64 * ay + j as f64 * by,
                    );
                    if region.distance_to(&p) <= reach + 1e-9 {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// Every lattice centre whose cell can reach into the region: the full tiling
/// of `region`, not truncated to a node budget.
pub fn covering_centers(
    shape: CellShape,
    radio_range_km: f64,
    region: &RegionArea,
) -> Result<Vec<GeoPoint>, CoverageError> {
    footprint_area(shape, radio_range_km)?;
    let lattice = Lattice::for_shape(shape, radio_range_km)?;
    Ok(lattice.points_near(region.center, region, radio_range_km))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementPlan {
    pub region_id: u8,
    pub cell_shape: CellShape,
    pub radio_range_km: f64,
    /// Ordered by distance to the region centroid; index 0 is the sink.
    pub node_positions: Vec<GeoPoint>,
    pub sink_position: GeoPoint,
}

impl PlacementPlan {
    pub fn sink_index(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.node_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_positions.is_empty()
    }

    /// Builds a plan from explicit positions; the first position is the sink.
    pub fn from_positions(
        region_id: u8,
        cell_shape: CellShape,
        radio_range_km: f64,
        node_positions: Vec<GeoPoint>,
    ) -> Self {
        let sink_position = node_positions[0];
        Self {
            region_id,
            cell_shape,
            radio_range_km,
            node_positions,
            sink_position,
        }
    }

    /// Link range used for neighbour reachability (adjacent cell centres).
    pub fn link_range_km(&self) -> f64 {
        2.0 * self.radio_range_km
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanNodeJson {
    node_index: usize,
    x_km: f64,
    y_km: f64,
    is_sink: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanJson {
    region_id: u8,
    shape: CellShape,
    range_km: f64,
    nodes: Vec<PlanNodeJson>,
}

impl Serialize for PlacementPlan {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PlanJson {
            region_id: self.region_id,
            shape: self.cell_shape,
            range_km: self.radio_range_km,
            nodes: self
                .node_positions
                .iter()
                .enumerate()
                .map(|(i, p)| PlanNodeJson {
                    node_index: i,
                    x_km: p.x_km,
                    y_km: p.y_km,
                    is_sink: i == self.sink_index(),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PlacementPlan {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = PlanJson::deserialize(deserializer)?;
        let sink = raw
            .nodes
            .iter()
            .position(|n| n.is_sink)
            .ok_or_else(|| serde::de::Error::custom("plan has no sink node"))?;
        let mut positions: Vec<GeoPoint> = raw
            .nodes
            .iter()
            .map(|n| GeoPoint::new(n.x_km, n.y_km))
            .collect();
        positions.swap(0, sink);
        Ok(PlacementPlan::from_positions(
            raw.region_id,
            raw.shape,
            raw.range_km,
            positions,
        ))
    }
}

const PHASE_STEPS: usize = 24;

/// Places `node_count` cell centres (sink included) on the shape's lattice
/// inside `region`, choosing the lattice phase that keeps the chosen cells
/// most compact around the centroid. The sink is the centre closest to the
/// centroid.
pub fn tile_region(
    region: &RegionArea,
    shape: CellShape,
    radio_range_km: f64,
    node_count: usize,
) -> Result<PlacementPlan, CoverageError> {
    footprint_area(shape, radio_range_km)?;
    let lattice = Lattice::for_shape(shape, radio_range_km)?;
    let required = estimate_node_count(region.area_km2(), shape, radio_range_km)?;
    // a lone sink is the degenerate single-node network
    if node_count == 0 || (node_count > 1 && node_count < required) {
        return Err(CoverageError::InsufficientNodes {
            requested: node_count,
            required,
        });
    }

    let [(ax, ay), (bx, by)] = lattice.basis;
    let centroid = region.center;
    let mut best: Option<(f64, Vec<GeoPoint>)> = None;
    let mut capacity = 0;
    for v in 0..PHASE_STEPS {
        for u in 0..PHASE_STEPS {
            let fu = u as f64 / PHASE_STEPS as f64;
            let fv = v as f64 / PHASE_STEPS as f64;
            let origin = GeoPoint::new(
                centroid.x_km + fu * ax + fv * bx,
                centroid.y_km + fu * ay + fv * by,
            );
            let mut inside: Vec<GeoPoint> = lattice
                .points_near(origin, region, 0.0)
                .into_iter()
                .filter(|p| region.contains(p))
                .collect();
            capacity = capacity.max(inside.len());
            if inside.len() < node_count {
                continue;
            }
            sort_by_centroid_distance(&mut inside, &centroid);
            inside.truncate(node_count);
            let spread: f64 = inside.iter().map(|p| p.distance(&centroid)).sum();
            let better = match &best {
                None => true,
                Some((s, _)) => spread < s - 1e-9,
            };
            if better {
                best = Some((spread, inside));
            }
        }
    }
    let (_, positions) = best.ok_or(CoverageError::RegionCapacityExceeded {
        requested: node_count,
        capacity,
    })?;
    Ok(PlacementPlan::from_positions(
        region.id,
        shape,
        radio_range_km,
        positions,
    ))
}

fn sort_by_centroid_distance(points: &mut [GeoPoint], centroid: &GeoPoint) {
    points.sort_by(|a, b| {
        let da = a.distance(centroid);
        let db = b.distance(centroid);
        da.partial_cmp(&db)
            .unwrap()
            .then(a.y_km.partial_cmp(&b.y_km).unwrap())
            .then(a.x_km.partial_cmp(&b.x_km).unwrap())
    });
}

/// Index pairs `(i, j)`, `i < j`, whose distance is within `range_km`.
pub fn disc_graph_edges(points: &[GeoPoint], range_km: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i].distance(&points[j]) <= range_km + 1e-9 {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub components: usize,
    /// Per node: whether a multi-hop path to the sink exists.
    pub reaches_sink: Vec<bool>,
}

impl ConnectivityReport {
    pub fn all_reach_sink(&self) -> bool {
        self.reaches_sink.iter().all(|r| *r)
    }
}

pub fn connectivity_check(plan: &PlacementPlan) -> ConnectivityReport {
    let n = plan.node_positions.len();
    let mut adj = vec![Vec::new(); n];
    for (i, j) in disc_graph_edges(&plan.node_positions, plan.link_range_km()) {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut component = vec![usize::MAX; n];
    let mut components = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = components;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if component[v] == usize::MAX {
                    component[v] = components;
                    queue.push_back(v);
                }
            }
        }
        components += 1;
    }
    let sink_comp = component.get(plan.sink_index()).copied();
    ConnectivityReport {
        connected: components <= 1,
        components,
        reaches_sink: component.iter().map(|c| Some(*c) == sink_comp).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn region1() -> RegionArea {
        RegionArea {
            id: 1,
            center: GeoPoint::new(5.0, 95.0),
            side_km: 10.0,
        }
    }

    #[test]
    fn unit_circle_area_is_pi() {
        assert_relative_eq!(footprint_area(CellShape::Circle, 1.0).unwrap(), PI);
    }

    #[test]
    fn closed_forms() {
        let r = 2.3_f64;
        assert_relative_eq!(
            footprint_area(CellShape::Hexagon, r).unwrap(),
            1.5 * 3f64.sqrt() * r * r,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            footprint_area(CellShape::Square, r).unwrap(),
            (r * 2f64.sqrt()).powi(2),
            max_relative = 1e-9
        );
        let side = r * 3f64.sqrt();
        assert_relative_eq!(
            footprint_area(CellShape::EquilateralTriangle, r).unwrap(),
            3f64.sqrt() / 4.0 * side * side,
            max_relative = 1e-9
        );
    }

    #[test]
    fn non_positive_range_rejected() {
        for r in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                footprint_area(CellShape::Hexagon, r),
                Err(CoverageError::NonPositiveRange(_))
            ));
        }
        assert!(estimate_node_count(100.0, CellShape::Circle, 0.0).is_err());
    }

    #[test]
    fn node_counts_for_reference_ranges() {
        assert_eq!(estimate_node_count(100.0, CellShape::Hexagon, 2.074).unwrap(), 9);
        assert_eq!(estimate_node_count(100.0, CellShape::Circle, 1.80).unwrap(), 10);
        assert_eq!(estimate_node_count(11.17, CellShape::Hexagon, 2.074).unwrap(), 1);
    }

    #[test]
    fn circle_cannot_tile() {
        assert_eq!(
            tile_region(&region1(), CellShape::Circle, 1.8, 10),
            Err(CoverageError::UntileableShape(CellShape::Circle))
        );
    }

    #[test]
    fn single_node_sits_at_centroid() {
        let plan = tile_region(&region1(), CellShape::Hexagon, 2.074, 1).unwrap();
        assert_eq!(plan.node_positions.len(), 1);
        assert!(plan.sink_position.distance(&region1().center) < 1e-9);
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert_eq!(
            tile_region(&region1(), CellShape::Hexagon, 2.074, 5),
            Err(CoverageError::InsufficientNodes {
                requested: 5,
                required: 9
            })
        );
    }

    #[test]
    fn region_capacity_reported() {
        let err = tile_region(&region1(), CellShape::Hexagon, 2.074, 40).unwrap_err();
        assert!(matches!(err, CoverageError::RegionCapacityExceeded { requested: 40, .. }));
    }

    #[test]
    fn hex_plan_of_ten_is_inside_and_on_lattice() {
        let region = region1();
        let plan = tile_region(&region, CellShape::Hexagon, 2.074, 10).unwrap();
        assert_eq!(plan.node_positions.len(), 10);
        assert!(plan.node_positions.iter().all(|p| region.contains(p)));
        let spacing = 3f64.sqrt() * 2.074;
        // brute force: every pair sits at a hex-lattice distance a*sqrt(i^2+ij+j^2)
        let mut nearest = f64::INFINITY;
        for (i, p) in plan.node_positions.iter().enumerate() {
            for q in &plan.node_positions[i + 1..] {
                let d = p.distance(q) / spacing;
                nearest = nearest.min(d);
                let ok = (0..6).any(|a: i32| {
                    (0..6).any(|b: i32| (((a * a + a * b + b * b) as f64).sqrt() - d).abs() < 1e-6)
                });
                assert!(ok, "distance {d} is not a lattice distance");
            }
        }
        assert_relative_eq!(nearest, 1.0, max_relative = 1e-9);
        let report = connectivity_check(&plan);
        assert!(report.connected);
        assert!(report.all_reach_sink());
    }

    #[test]
    fn far_apart_nodes_disconnected() {
        let plan = PlacementPlan::from_positions(
            1,
            CellShape::Hexagon,
            2.0,
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(100.0, 0.0)],
        );
        let r = connectivity_check(&plan);
        assert!(!r.connected);
        assert_eq!(r.components, 2);
        assert_eq!(r.reaches_sink, vec![true, false]);
    }

    #[test]
    fn single_node_connected() {
        let plan = PlacementPlan::from_positions(
            1,
            CellShape::Hexagon,
            2.0,
            vec![GeoPoint::new(3.0, 3.0)],
        );
        let r = connectivity_check(&plan);
        assert!(r.connected && r.all_reach_sink());
    }

    #[test]
    fn square_and_triangle_plans() {
        for shape in [CellShape::Square, CellShape::EquilateralTriangle] {
            let need = estimate_node_count(100.0, shape, 2.074).unwrap();
            let plan = tile_region(&region1(), shape, 2.074, need + 1).unwrap();
            assert_eq!(plan.len(), need + 1);
            assert!(plan.node_positions.iter().all(|p| region1().contains(p)));
        }
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = tile_region(&region1(), CellShape::Hexagon, 2.074, 10).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        assert!(json.contains("\"is_sink\":true"));
        let back: PlacementPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn bearings() {
        let o = GeoPoint::new(50.0, 50.0);
        assert_relative_eq!(o.bearing_to(&GeoPoint::new(50.0, 60.0)), 0.0);
        assert_relative_eq!(o.bearing_to(&GeoPoint::new(60.0, 50.0)), 90.0);
        assert_relative_eq!(o.bearing_to(&GeoPoint::new(95.0, 5.0)), 135.0, epsilon = 1e-9);
        assert_relative_eq!(o.bearing_to(&GeoPoint::new(40.0, 50.0)), 270.0);
    }
}
