//! Scenario configuration: a TOML file with nested sections, every field
//! defaulted so an empty file describes the reference five-region scenario.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::AnalyticsParams;
use crate::backbone::Calibration;
use crate::coverage::{CellShape, GeoPoint, RegionArea};
use crate::environment::{reference_scenario, Climatology, DroughtScenario, EnvironmentParams, RegionClimate};
use crate::kernel::{DAY_S, YEAR_S};
use crate::stack::energy::EnergyParams;
use crate::stack::mac::MacParams;
use crate::stack::RoutingMode;

/// Environment variable that overrides `output.dir`.
pub const OUT_DIR_ENV: &str = "DROUGHTNET_OUT";

/// Shortest reporting period accepted without `allow_short_period`.
pub const MIN_REPORTING_PERIOD_S: u64 = 1800;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub id: u8,
    /// Centre of the square region.
    pub anchor: GeoPoint,
    pub climatology: Climatology,
    /// Falls back to the reference drought setting for this id when unset.
    pub drought: Option<DroughtScenario>,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            id: 1,
            anchor: GeoPoint::new(50.0, 50.0),
            climatology: Climatology::default(),
            drought: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub delay_s: u64,
    pub loss_prob: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            delay_s: 1,
            loss_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeParams {
    /// Time a node stays awake after each periodic wake-up.
    pub active_window_s: u64,
    /// Delay before re-checking whether the region has gone quiet.
    pub sleep_recheck_s: u64,
    pub data_cache_cap: usize,
    pub interest_hop_limit: u8,
    pub flood_hop_limit: u8,
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            active_window_s: 300,
            sleep_recheck_s: 10,
            data_cache_cap: 64,
            interest_hop_limit: 8,
            flood_hop_limit: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneParams {
    pub range_km: f64,
    pub latency_ms: u64,
    pub loss_prob: f64,
    pub max_retries: u32,
    pub local_db_capacity: usize,
    pub remote_position: GeoPoint,
}

impl Default for BackboneParams {
    fn default() -> Self {
        Self {
            range_km: 120.0,
            latency_ms: 50,
            loss_prob: 0.0,
            max_retries: 8,
            local_db_capacity: 20_000,
            remote_position: GeoPoint::new(50.0, 50.0),
        }
    }
}

impl BackboneParams {
    /// Per-hop latency in whole seconds, rounded up.
    pub fn latency_s(&self) -> u64 {
        self.latency_ms.div_ceil(1000)
    }
}

/// Ad-hoc diffusion queries issued by each sink in combined mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryParams {
    pub every_s: u64,
    pub duration_s: u32,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            every_s: 30 * DAY_S,
            duration_s: DAY_S as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: PathBuf,
    pub trace: bool,
    /// Also write the per-day ground-truth summary.
    pub truth_dump: bool,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trace: false,
            truth_dump: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub horizon_s: u64,
    pub reporting_period_s: u64,
    /// Permits reporting periods below the 1800 s floor.
    pub allow_short_period: bool,
    pub routing_mode: RoutingMode,
    pub cell_shape: CellShape,
    pub radio_range_km: f64,
    /// Sensing nodes per region; derived from coverage when unset.
    pub nodes_per_region: Option<usize>,
    pub region_side_km: f64,
    pub map_side_km: f64,
    /// Empty means the five default regions.
    pub regions: Vec<RegionConfig>,
    pub link: LinkParams,
    pub energy: EnergyParams,
    pub mac: MacParams,
    pub node: NodeParams,
    pub backbone: BackboneParams,
    pub calibration: Calibration,
    pub analytics: AnalyticsParams,
    pub environment: EnvironmentParams,
    pub query: QueryParams,
    pub output: OutputParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            horizon_s: YEAR_S,
            reporting_period_s: 1800,
            allow_short_period: false,
            routing_mode: RoutingMode::Tree,
            cell_shape: CellShape::Hexagon,
            radio_range_km: 2.074,
            nodes_per_region: None,
            region_side_km: 10.0,
            map_side_km: 100.0,
            regions: Vec::new(),
            link: LinkParams::default(),
            energy: EnergyParams::default(),
            mac: MacParams::default(),
            node: NodeParams::default(),
            backbone: BackboneParams::default(),
            calibration: Calibration::identity(),
            analytics: AnalyticsParams::default(),
            environment: EnvironmentParams::default(),
            query: QueryParams::default(),
            output: OutputParams::default(),
        }
    }
}

/// The five default anchors: four corners and the centre of the map.
pub fn default_anchors(map_side_km: f64, region_side_km: f64) -> BTreeMap<u8, GeoPoint> {
    let lo = region_side_km / 2.0;
    let hi = map_side_km - lo;
    let mid = map_side_km / 2.0;
    BTreeMap::from([
        (1, GeoPoint::new(lo, hi)),
        (2, GeoPoint::new(hi, hi)),
        (3, GeoPoint::new(mid, mid)),
        (4, GeoPoint::new(hi, lo)),
        (5, GeoPoint::new(lo, lo)),
    ])
}

/// A region with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRegion {
    pub area: RegionArea,
    pub climate: RegionClimate,
}

impl ScenarioConfig {
    /// Region blocks in effect: the configured ones, or the five defaults.
    pub fn region_blocks(&self) -> Vec<RegionConfig> {
        if !self.regions.is_empty() {
            return self.regions.clone();
        }
        default_anchors(self.map_side_km, self.region_side_km)
            .into_iter()
            .map(|(id, anchor)| RegionConfig {
                id,
                anchor,
                ..RegionConfig::default()
            })
            .collect()
    }

    /// Regions with areas and drought scenarios resolved, in id order.
    pub fn resolved_regions(&self) -> Vec<ResolvedRegion> {
        let mut blocks = self.region_blocks();
        blocks.sort_by_key(|b| b.id);
        let anchors: BTreeMap<u8, GeoPoint> = blocks.iter().map(|b| (b.id, b.anchor)).collect();
        let r4_normals = blocks
            .iter()
            .find(|b| b.id == 4)
            .map_or([80.0; 12], |b| b.climatology.monthly_precip_mm);
        let reference = reference_scenario(&anchors, &r4_normals);
        blocks
            .into_iter()
            .map(|b| {
                let scenario = b
                    .drought
                    .clone()
                    .or_else(|| reference.get(&b.id).cloned())
                    .unwrap_or_else(DroughtScenario::none);
                ResolvedRegion {
                    area: RegionArea {
                        id: b.id,
                        center: b.anchor,
                        side_km: self.region_side_km,
                    },
                    climate: RegionClimate {
                        region_id: b.id,
                        center: b.anchor,
                        climatology: b.climatology,
                        scenario,
                    },
                }
            })
            .collect()
    }

    /// Number of reporting cycles that start inside the horizon.
    pub fn cycles(&self) -> u64 {
        self.horizon_s.div_ceil(self.reporting_period_s)
    }

    /// Checks every invariant up front and names the first one violated.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Validation(m));
        if self.horizon_s == 0 {
            return fail("horizon_s must be positive".into());
        }
        if self.reporting_period_s == 0 {
            return fail("reporting_period_s must be positive".into());
        }
        if self.reporting_period_s < MIN_REPORTING_PERIOD_S && !self.allow_short_period {
            return fail(format!(
                "reporting_period_s = {} is below the {MIN_REPORTING_PERIOD_S} s floor (set allow_short_period = true to override)",
                self.reporting_period_s
            ));
        }
        if !(self.radio_range_km > 0.0 && self.radio_range_km.is_finite()) {
            return fail("radio_range_km must be positive".into());
        }
        if self.nodes_per_region == Some(0) {
            return fail("nodes_per_region must be at least 1".into());
        }
        if !(self.region_side_km > 0.0 && self.map_side_km >= self.region_side_km) {
            return fail("region_side_km must be positive and no larger than map_side_km".into());
        }
        let blocks = self.region_blocks();
        let mut ids = BTreeSet::new();
        for b in &blocks {
            if !ids.insert(b.id) {
                return fail(format!("region id {} appears twice", b.id));
            }
            let h = self.region_side_km / 2.0;
            let inside = b.anchor.x_km - h >= -1e-9
                && b.anchor.y_km - h >= -1e-9
                && b.anchor.x_km + h <= self.map_side_km + 1e-9
                && b.anchor.y_km + h <= self.map_side_km + 1e-9;
            if !inside {
                return fail(format!("region {} does not fit inside the map", b.id));
            }
            b.climatology
                .validate()
                .map_err(|e| ConfigError::Validation(format!("region {}: {e}", b.id)))?;
            if let Some(d) = &b.drought {
                d.validate()
                    .map_err(|e| ConfigError::Validation(format!("region {}: {e}", b.id)))?;
            }
        }
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                let dx = (a.anchor.x_km - b.anchor.x_km).abs();
                let dy = (a.anchor.y_km - b.anchor.y_km).abs();
                if dx < self.region_side_km && dy < self.region_side_km {
                    return fail(format!("regions {} and {} overlap", a.id, b.id));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.link.loss_prob) {
            return fail("link.loss_prob must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.backbone.loss_prob) {
            return fail("backbone.loss_prob must lie in [0, 1)".into());
        }
        if !(self.backbone.range_km > 0.0) {
            return fail("backbone.range_km must be positive".into());
        }
        if self.backbone.local_db_capacity == 0 {
            return fail("backbone.local_db_capacity must be positive".into());
        }
        if self.node.active_window_s == 0 || self.node.active_window_s > self.reporting_period_s {
            return fail("node.active_window_s must lie in [1, reporting_period_s]".into());
        }
        if self.node.sleep_recheck_s == 0 {
            return fail("node.sleep_recheck_s must be positive".into());
        }
        if self.node.data_cache_cap == 0 {
            return fail("node.data_cache_cap must be positive".into());
        }
        if self.node.interest_hop_limit == 0 || self.node.flood_hop_limit == 0 {
            return fail("hop limits must be at least 1".into());
        }
        if self.query.every_s == 0 || !self.query.every_s.is_multiple_of(self.reporting_period_s) {
            return fail("query.every_s must be a positive multiple of reporting_period_s".into());
        }
        if self.query.duration_s == 0 {
            return fail("query.duration_s must be positive".into());
        }
        let v = |r: Result<(), String>, section: &str| {
            r.map_err(|e| ConfigError::Validation(format!("{section}: {e}")))
        };
        v(self.energy.validate(), "energy")?;
        v(self.mac.validate(), "mac")?;
        v(self.calibration.validate(), "calibration")?;
        v(self.analytics.validate(), "analytics")?;
        v(self.environment.validate(), "environment")?;
        Ok(())
    }

    /// Parses TOML text, fills defaults and validates.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads and validates a scenario file. `DROUGHTNET_OUT`, when set,
/// replaces the output directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = ScenarioConfig::from_toml_str(&text, &path.display().to_string())?;
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output.dir = PathBuf::from(dir);
        }
    }
    Ok(cfg)
}
