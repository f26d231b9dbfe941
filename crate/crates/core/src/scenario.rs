//! End-to-end pipeline: plan, place, simulate, ingest, classify, forecast,
//! then write every export. Also re-runs a stored run to check that it
//! reproduces byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::{
    advect_forecast, evolve_pattern, monthly_series, EvolutionPattern, Forecast, MonthlyPoint, SeverityClass,
};
use crate::backbone::CentralDatabase;
use crate::config::ScenarioConfig;
use crate::coverage::GeoPoint;
use crate::export::{self, ExportError};
use crate::kernel::TraceSink;
use crate::sim::{DeliveryCounters, EnergyRow, SimError, Simulation};
use crate::stack::RoutingMode;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionNodes {
    pub region_id: u8,
    pub sensing: usize,
    /// Sensing nodes plus the sink.
    pub total: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkEnergy {
    pub tx_mj: f64,
    pub rx_mj: f64,
    pub idle_mj: f64,
    pub sensing_mj: f64,
}

impl NetworkEnergy {
    pub fn from_rows(rows: &[EnergyRow]) -> Self {
        rows.iter().fold(Self::default(), |a, r| Self {
            tx_mj: a.tx_mj + r.tx_mj,
            rx_mj: a.rx_mj + r.rx_mj,
            idle_mj: a.idle_mj + r.idle_mj,
            sensing_mj: a.sensing_mj + r.sensing_mj,
        })
    }

    pub fn radio_mj(&self) -> f64 {
        self.tx_mj + self.rx_mj
    }
}

/// Analytics results over one central database.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub patterns: Vec<EvolutionPattern>,
    /// Class of each region's last window.
    pub year_end: BTreeMap<u8, SeverityClass>,
    pub forecasts: BTreeMap<u8, Forecast>,
    pub monthly: Vec<MonthlyPoint>,
    /// Regions whose pattern could not be computed, with the reason.
    pub issues: BTreeMap<u8, String>,
}

/// Evolution patterns, year-end classes, the advection forecast and the
/// monthly series for every configured region.
pub fn analyze(db: &CentralDatabase, cfg: &ScenarioConfig) -> Analysis {
    let regions = cfg.resolved_regions();
    let anchors: BTreeMap<u8, GeoPoint> = regions.iter().map(|r| (r.area.id, r.area.center)).collect();
    let mut out = Analysis::default();
    let mut latest = BTreeMap::new();
    for r in &regions {
        let id = r.area.id;
        match evolve_pattern(
            db,
            id,
            cfg.analytics.window_days,
            &r.climate.climatology,
            &cfg.analytics,
        ) {
            Ok(p) => {
                if let Some(w) = p.latest() {
                    out.year_end.insert(id, w.class);
                    latest.insert(id, w.clone());
                }
                out.patterns.push(p);
            }
            Err(e) => {
                out.issues.insert(id, e.to_string());
            }
        }
        out.monthly.extend(monthly_series(db, id));
    }
    out.forecasts = advect_forecast(&latest, &anchors, cfg.analytics.cone_half_angle_deg);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub routing_mode: RoutingMode,
    pub horizon_s: u64,
    /// False when the run aborted; `error` then says why.
    pub complete: bool,
    pub error: Option<String>,
    pub node_counts: Vec<RegionNodes>,
    pub counters: DeliveryCounters,
    /// Report conservation; only defined for tree routing, where each report
    /// travels one path.
    pub conserved: Option<bool>,
    pub network_energy: NetworkEnergy,
    pub energy: Vec<EnergyRow>,
    pub analysis: Analysis,
    pub events_processed: u64,
    pub events_by_tag: BTreeMap<String, u64>,
    pub trace_lines: u64,
    /// SHA-256 of the event trace.
    pub trace_digest: String,
    pub wall_clock_ms: u64,
    pub config: ScenarioConfig,
}

/// Everything one run produced, before it is written out.
pub struct RunArtifacts {
    pub report: RunReport,
    pub central: CentralDatabase,
}

fn incomplete(cfg: &ScenarioConfig, error: String) -> RunReport {
    RunReport {
        seed: cfg.seed,
        routing_mode: cfg.routing_mode,
        horizon_s: cfg.horizon_s,
        complete: false,
        error: Some(error),
        node_counts: Vec::new(),
        counters: DeliveryCounters::default(),
        conserved: None,
        network_energy: NetworkEnergy::default(),
        energy: Vec::new(),
        analysis: Analysis::default(),
        events_processed: 0,
        events_by_tag: BTreeMap::new(),
        trace_lines: 0,
        trace_digest: String::new(),
        wall_clock_ms: 0,
        config: cfg.clone(),
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs the full pipeline and writes every export into `cfg.output.dir`.
/// If the simulation fails, a run report flagged incomplete is still
/// written before the error is returned.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    let started = Instant::now();
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let result = simulate(cfg, &dir);
    let mut arts = match result {
        Ok(a) => a,
        Err(e) => {
            let report = incomplete(cfg, e.to_string());
            export::write_json(&dir.join(export::RUN_REPORT_JSON), &report)?;
            return Err(e);
        }
    };
    write_outputs(&arts, &dir)?;
    arts.report.wall_clock_ms = started.elapsed().as_millis() as u64;
    export::write_json(&dir.join(export::RUN_REPORT_JSON), &arts.report)?;
    Ok(arts.report)
}

/// Simulates and analyses without writing anything except the placement,
/// the optional trace and the optional truth dump.
fn simulate(cfg: &ScenarioConfig, dir: &Path) -> Result<RunArtifacts, RunError> {
    let mut sim = Simulation::new(cfg)?;
    export::write_placement(&dir.join(export::PLACEMENT_JSON), &sim.plans())?;
    let trace_path = dir.join(export::TRACE_TSV);
    if cfg.output.trace {
        let f = File::create(&trace_path).map_err(io(&trace_path))?;
        sim.set_trace(TraceSink::to_writer(Box::new(BufWriter::new(f))));
    } else {
        sim.set_trace(TraceSink::digest_only());
    }
    sim.run()?;
    let (trace_lines, trace_digest) = sim
        .take_trace()
        .expect("trace sink installed")
        .finish()
        .map_err(io(&trace_path))?;
    if cfg.output.truth_dump {
        let sinks: Vec<(u8, u32, GeoPoint)> = sim
            .node_states()
            .filter(|n| n.is_sink)
            .map(|n| (n.region_id, n.id, n.position))
            .collect();
        export::write_truth_daily(
            &dir.join(export::TRUTH_DAILY_CSV),
            sim.environment(),
            &sinks,
            cfg.horizon_s,
            cfg.reporting_period_s,
        )?;
    }
    let node_counts = sim
        .plans()
        .iter()
        .map(|p| RegionNodes {
            region_id: p.region_id,
            sensing: p.len() - 1,
            total: p.len(),
        })
        .collect();
    let energy = sim.energy_rows();
    let counters = sim.counters().clone();
    let report = RunReport {
        seed: cfg.seed,
        routing_mode: cfg.routing_mode,
        horizon_s: cfg.horizon_s,
        complete: true,
        error: None,
        node_counts,
        conserved: (cfg.routing_mode == RoutingMode::Tree).then(|| counters.conserved()),
        counters,
        network_energy: NetworkEnergy::from_rows(&energy),
        energy,
        analysis: Analysis::default(),
        events_processed: sim.events_processed(),
        events_by_tag: sim.events_by_tag(),
        trace_lines,
        trace_digest,
        wall_clock_ms: 0,
        config: cfg.clone(),
    };
    let central = sim.into_central();
    let mut arts = RunArtifacts { report, central };
    arts.report.analysis = analyze(&arts.central, cfg);
    Ok(arts)
}

fn write_outputs(arts: &RunArtifacts, dir: &Path) -> Result<(), RunError> {
    let r = &arts.report;
    export::write_central_db(&dir.join(export::CENTRAL_DB_CSV), &arts.central)?;
    export::write_energy(&dir.join(export::ENERGY_CSV), &r.energy)?;
    export::write_patterns(&dir.join(export::PATTERNS_CSV), &r.analysis.patterns)?;
    export::write_forecast(&dir.join(export::FORECAST_JSON), &r.analysis.forecasts)?;
    emit_plots(r, dir)?;
    Ok(())
}

/// Plot-ready CSVs: per-region monthly temperature and precipitation, and
/// the per-node energy table.
pub fn emit_plots(report: &RunReport, dir: &Path) -> Result<(), ExportError> {
    export::write_monthly(dir, &report.analysis.monthly)?;
    export::write_energy_table(&dir.join(export::ENERGY_TABLE_CSV), &report.energy)
}

/// Re-runs analytics over an exported database and writes the pattern and
/// forecast files into `out`.
pub fn classify_export(db_csv: &Path, cfg: &ScenarioConfig, out: &Path) -> Result<Analysis, RunError> {
    let db = export::read_central_db(db_csv)?;
    let analysis = analyze(&db, cfg);
    fs::create_dir_all(out).map_err(io(out))?;
    export::write_patterns(&out.join(export::PATTERNS_CSV), &analysis.patterns)?;
    export::write_forecast(&out.join(export::FORECAST_JSON), &analysis.forecasts)?;
    Ok(analysis)
}

/// Run report JSON with the fields that legitimately differ between two
/// runs of the same configuration removed.
pub fn comparable_report(json: &str) -> Result<Value, serde_json::Error> {
    let mut v: Value = serde_json::from_str(json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("wall_clock_ms");
        if let Some(out) = obj.get_mut("config").and_then(|c| c.get_mut("output")).and_then(Value::as_object_mut) {
            out.remove("dir");
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayOutcome {
    pub compared: Vec<String>,
    pub mismatched: Vec<String>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty() && !self.compared.is_empty()
    }
}

/// Compares the exports two run directories have in common.
pub fn compare_runs(stored: &Path, fresh: &Path) -> Result<ReplayOutcome, RunError> {
    let mut out = ReplayOutcome::default();
    for name in export::EXPORT_FILES {
        let a = stored.join(name);
        if !a.exists() {
            continue;
        }
        let b = fresh.join(name);
        let left = fs::read(&a).map_err(io(&a))?;
        let right = match fs::read(&b) {
            Ok(bytes) => bytes,
            Err(_) => {
                out.compared.push(name.to_string());
                out.mismatched.push(name.to_string());
                continue;
            }
        };
        let same = if name == export::RUN_REPORT_JSON {
            let l = comparable_report(&String::from_utf8_lossy(&left));
            let r = comparable_report(&String::from_utf8_lossy(&right));
            matches!((l, r), (Ok(l), Ok(r)) if l == r)
        } else {
            left == right
        };
        out.compared.push(name.to_string());
        if !same {
            out.mismatched.push(name.to_string());
        }
    }
    Ok(out)
}

/// Re-runs the configuration echoed in `stored`/run_report.json into
/// `work_dir` and compares every export byte for byte.
pub fn replay(stored: &Path, work_dir: &Path) -> Result<ReplayOutcome, RunError> {
    let report: RunReport = export::read_json(&stored.join(export::RUN_REPORT_JSON))?;
    let mut cfg = report.config;
    cfg.output.dir = work_dir.to_path_buf();
    cfg.output.trace = stored.join(export::TRACE_TSV).exists();
    cfg.output.truth_dump = stored.join(export::TRUTH_DAILY_CSV).exists();
    run_scenario(&cfg)?;
    compare_runs(stored, work_dir)
}
