//! Output files: placement JSON, central-database CSV, energy, pattern and
//! monthly CSVs, forecast JSON, and readers for the CSVs that downstream
//! commands consume again.
//!
//! Floats are written in shortest round-trip form, so re-reading a file
//! reproduces the written values bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analytics::{EvolutionPattern, Forecast, MonthlyPoint, SeverityClass};
use crate::backbone::{CentralDatabase, StoredRecord};
use crate::coverage::{GeoPoint, PlacementPlan};
use crate::environment::{Attribute, EnvironmentModel, SensorReading};
use crate::kernel::{SimTime, DAY_S};
use crate::sim::EnergyRow;
use crate::stack::packet::NodeHealth;

pub const PLACEMENT_JSON: &str = "placement.json";
pub const CENTRAL_DB_CSV: &str = "central_db.csv";
pub const ENERGY_CSV: &str = "energy.csv";
pub const PATTERNS_CSV: &str = "patterns.csv";
pub const FORECAST_JSON: &str = "forecast.json";
pub const RUN_REPORT_JSON: &str = "run_report.json";
pub const MONTHLY_TEMPERATURE_CSV: &str = "monthly_temperature.csv";
pub const MONTHLY_PRECIPITATION_CSV: &str = "monthly_precipitation.csv";
pub const ENERGY_TABLE_CSV: &str = "energy_table.csv";
pub const TRACE_TSV: &str = "trace.tsv";
pub const TRUTH_DAILY_CSV: &str = "truth_daily.csv";

/// Every file a run may write, in a fixed order.
pub const EXPORT_FILES: [&str; 11] = [
    PLACEMENT_JSON,
    CENTRAL_DB_CSV,
    ENERGY_CSV,
    PATTERNS_CSV,
    FORECAST_JSON,
    RUN_REPORT_JSON,
    MONTHLY_TEMPERATURE_CSV,
    MONTHLY_PRECIPITATION_CSV,
    ENERGY_TABLE_CSV,
    TRACE_TSV,
    TRUTH_DAILY_CSV,
];

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} line {line}: {message}")]
    Format { path: PathBuf, line: u64, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ExportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, ExportError> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().from_writer(BufWriter::new(f)))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, ExportError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().from_reader(f))
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<(), ExportError> {
    let mut inner = w.into_inner().map_err(|e| ExportError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    inner.flush().map_err(io_err(path))
}

pub fn write_placement(path: &Path, plans: &[&PlacementPlan]) -> Result<(), ExportError> {
    write_json(path, plans)
}

pub fn read_placement(path: &Path) -> Result<Vec<PlacementPlan>, ExportError> {
    read_json(path)
}

fn reading_header(prefix: &str) -> impl Iterator<Item = String> + '_ {
    Attribute::ALL.into_iter().map(move |a| format!("{prefix}{}", a.as_str()))
}

pub fn central_db_header() -> Vec<String> {
    let mut h: Vec<String> = ["region_id", "node_id", "timestamp_s", "x_km", "y_km"]
        .into_iter()
        .map(String::from)
        .collect();
    h.extend(reading_header("raw_"));
    h.extend(reading_header("cal_"));
    h.extend(["battery_mj_remaining", "frames_dropped", "route"].map(String::from));
    h
}

/// One row per record in `(region, node, timestamp)` order. `route` lists
/// node ids from source to sink separated by spaces.
pub fn write_central_db(path: &Path, db: &CentralDatabase) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record(central_db_header()).map_err(csv_err(path))?;
    let mut row: Vec<String> = Vec::with_capacity(24);
    for r in db.sorted() {
        row.clear();
        row.push(r.region_id.to_string());
        row.push(r.node_id.to_string());
        row.push(r.timestamp.secs().to_string());
        row.push(r.location.x_km.to_string());
        row.push(r.location.y_km.to_string());
        for a in Attribute::ALL {
            row.push(r.raw.value(a).to_string());
        }
        for a in Attribute::ALL {
            row.push(r.calibrated.value(a).to_string());
        }
        row.push(r.node_health.battery_mj_remaining.to_string());
        row.push(r.node_health.frames_dropped.to_string());
        row.push(
            r.route_snapshot
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        );
        w.write_record(&row).map_err(csv_err(path))?;
    }
    finish(path, w)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, ExportError> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| ExportError::Format {
        path: path.to_path_buf(),
        line,
        message: format!("missing column {name}"),
    })?;
    raw.parse().map_err(|_| ExportError::Format {
        path: path.to_path_buf(),
        line,
        message: format!("bad {name} value '{raw}'"),
    })
}

pub fn read_central_db(path: &Path) -> Result<CentralDatabase, ExportError> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != central_db_header() {
        return Err(ExportError::Format {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut db = CentralDatabase::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let region_id: u8 = field(path, &rec, 0, "region_id")?;
        let node_id: u32 = field(path, &rec, 1, "node_id")?;
        let timestamp = SimTime(field(path, &rec, 2, "timestamp_s")?);
        let location = GeoPoint::new(field(path, &rec, 3, "x_km")?, field(path, &rec, 4, "y_km")?);
        let reading = |base: usize| -> Result<SensorReading, ExportError> {
            let mut r = SensorReading {
                node_id,
                region_id,
                timestamp,
                temperature_c: 0.0,
                precipitation_mm: 0.0,
                humidity_pct: 0.0,
                pressure_hpa: 0.0,
                wind_speed_ms: 0.0,
                wind_dir_deg: 0.0,
                groundwater_m: 0.0,
            };
            for (k, a) in Attribute::ALL.into_iter().enumerate() {
                *r.value_mut(a) = field(path, &rec, base + k, a.as_str())?;
            }
            Ok(r)
        };
        let raw = reading(5)?;
        let calibrated = reading(12)?;
        let node_health = NodeHealth {
            battery_mj_remaining: field(path, &rec, 19, "battery_mj_remaining")?,
            frames_dropped: field(path, &rec, 20, "frames_dropped")?,
        };
        let route_text: String = field(path, &rec, 21, "route")?;
        let route_snapshot = route_text
            .split_whitespace()
            .map(|s| s.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ExportError::Format {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                message: format!("bad route '{route_text}'"),
            })?;
        let record = StoredRecord {
            timestamp,
            node_id,
            region_id,
            raw,
            calibrated,
            node_health,
            location,
            route_snapshot,
        };
        db.insert(record).map_err(|e| ExportError::Format {
            path: path.to_path_buf(),
            line: rec.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
    }
    Ok(db)
}

pub fn write_energy(path: &Path, rows: &[EnergyRow]) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "node_id",
        "region",
        "tx_mJ",
        "rx_mJ",
        "idle_mJ",
        "sensing_mJ",
        "frames_sent",
        "frames_dropped",
        "reports_originated",
        "reports_forwarded",
    ])
    .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.node_id.to_string(),
            r.region_id.to_string(),
            r.tx_mj.to_string(),
            r.rx_mj.to_string(),
            r.idle_mj.to_string(),
            r.sensing_mj.to_string(),
            r.frames_sent.to_string(),
            r.frames_dropped.to_string(),
            r.reports_originated.to_string(),
            r.reports_forwarded.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// Bar-table of energy per node.
pub fn write_energy_table(path: &Path, rows: &[EnergyRow]) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["node_id", "region", "radio_mJ", "total_mJ"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.node_id.to_string(),
            r.region_id.to_string(),
            r.radio_mj().to_string(),
            r.total_mj().to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// One row of `patterns.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternRow {
    pub region: u8,
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub class: SeverityClass,
    pub anomaly_c: f64,
    pub precip_mm: f64,
    pub wind_dir_deg: f64,
    pub wind_speed_ms: f64,
}

pub fn write_patterns(path: &Path, patterns: &[EvolutionPattern]) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "region",
        "window_start",
        "window_end",
        "class",
        "anomaly_C",
        "precip_mm",
        "wind_dir_deg",
        "wind_speed_ms",
    ])
    .map_err(csv_err(path))?;
    for p in patterns {
        for win in &p.windows {
            let i = &win.indicators;
            w.write_record([
                p.region_id.to_string(),
                i.window_start.secs().to_string(),
                i.window_end.secs().to_string(),
                win.class.as_str().to_string(),
                i.mean_temp_anomaly_c.to_string(),
                i.mean_monthly_precip_mm.to_string(),
                i.wind_mean_dir_deg.to_string(),
                i.wind_mean_speed_ms.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    finish(path, w)
}

pub fn read_patterns(path: &Path) -> Result<Vec<PatternRow>, ExportError> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let class: String = field(path, &rec, 3, "class")?;
        out.push(PatternRow {
            region: field(path, &rec, 0, "region")?,
            window_start: SimTime(field(path, &rec, 1, "window_start")?),
            window_end: SimTime(field(path, &rec, 2, "window_end")?),
            class: class.parse().map_err(|m| ExportError::Format {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                message: m,
            })?,
            anomaly_c: field(path, &rec, 4, "anomaly_C")?,
            precip_mm: field(path, &rec, 5, "precip_mm")?,
            wind_dir_deg: field(path, &rec, 6, "wind_dir_deg")?,
            wind_speed_ms: field(path, &rec, 7, "wind_speed_ms")?,
        });
    }
    Ok(out)
}

pub fn write_forecast(path: &Path, forecasts: &BTreeMap<u8, Forecast>) -> Result<(), ExportError> {
    write_json(path, forecasts)
}

/// Monthly series, temperature and precipitation in separate files.
pub fn write_monthly(dir: &Path, series: &[MonthlyPoint]) -> Result<(), ExportError> {
    let tpath = dir.join(MONTHLY_TEMPERATURE_CSV);
    let ppath = dir.join(MONTHLY_PRECIPITATION_CSV);
    let mut t = csv_writer(&tpath)?;
    let mut p = csv_writer(&ppath)?;
    t.write_record(["region", "month", "mean_temp_C"]).map_err(csv_err(&tpath))?;
    p.write_record(["region", "month", "precip_mm"]).map_err(csv_err(&ppath))?;
    for m in series {
        t.write_record([m.region_id.to_string(), m.month.to_string(), m.mean_temp_c.to_string()])
            .map_err(csv_err(&tpath))?;
        p.write_record([m.region_id.to_string(), m.month.to_string(), m.precip_mm.to_string()])
            .map_err(csv_err(&ppath))?;
    }
    finish(&tpath, t)?;
    finish(&ppath, p)
}

/// Re-reads both monthly files into points.
pub fn read_monthly(dir: &Path) -> Result<Vec<MonthlyPoint>, ExportError> {
    let tpath = dir.join(MONTHLY_TEMPERATURE_CSV);
    let ppath = dir.join(MONTHLY_PRECIPITATION_CSV);
    let mut t = csv_reader(&tpath)?;
    let mut p = csv_reader(&ppath)?;
    let mut out = Vec::new();
    for (tr, pr) in t.records().zip(p.records()) {
        let tr = tr.map_err(csv_err(&tpath))?;
        let pr = pr.map_err(csv_err(&ppath))?;
        out.push(MonthlyPoint {
            region_id: field(&tpath, &tr, 0, "region")?,
            month: field(&tpath, &tr, 1, "month")?,
            mean_temp_c: field(&tpath, &tr, 2, "mean_temp_C")?,
            precip_mm: field(&ppath, &pr, 2, "precip_mm")?,
        });
    }
    Ok(out)
}

/// Per region and day: min, max and mean true temperature at the region's
/// sink over the reporting ticks, and the day's total rain.
pub fn write_truth_daily(
    path: &Path,
    env: &EnvironmentModel,
    sinks: &[(u8, u32, GeoPoint)],
    horizon_s: u64,
    period_s: u64,
) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record(["region", "day", "min_temp_C", "max_temp_C", "mean_temp_C", "precip_mm"])
        .map_err(csv_err(path))?;
    let days = horizon_s.div_ceil(DAY_S);
    for &(region, sink, pos) in sinks {
        for d in 0..days {
            let start = d * DAY_S;
            let end = ((d + 1) * DAY_S).min(horizon_s);
            let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0u32);
            let mut t = start.div_ceil(period_s) * period_s;
            while t < end {
                let r = env
                    .sample_truth(region, sink, pos, SimTime(t))
                    .map_err(|e| ExportError::Format {
                        path: path.to_path_buf(),
                        line: 0,
                        message: e.to_string(),
                    })?;
                let v = f64::from(r.temperature_c);
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
                n += 1;
                t += period_s;
            }
            if n == 0 {
                continue;
            }
            let rain = env
                .region_rain(region, start as i64 - 1, SimTime(end - 1))
                .unwrap_or(0.0);
            w.write_record([
                region.to_string(),
                d.to_string(),
                lo.to_string(),
                hi.to_string(),
                (sum / f64::from(n)).to_string(),
                rain.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    finish(path, w)
}
