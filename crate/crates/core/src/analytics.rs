//! Drought analytics over the central database: windowed indicators, the
//! four-class severity classifier, evolution patterns and the wind-advection
//! forecast.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::CentralDatabase;
use crate::coverage::GeoPoint;
use crate::environment::{Climatology, MONTH_DAYS};
use crate::kernel::{SimTime, DAY_S, YEAR_S};

const MONTH_S: f64 = 30.0 * DAY_S as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityClass {
    NonDrought,
    Slight,
    Moderate,
    Serious,
}

impl SeverityClass {
    pub const ALL: [SeverityClass; 4] = [
        SeverityClass::NonDrought,
        SeverityClass::Slight,
        SeverityClass::Moderate,
        SeverityClass::Serious,
    ];

    /// One class step more severe, saturating at Serious.
    pub fn escalate(self) -> Self {
        match self {
            SeverityClass::NonDrought => SeverityClass::Slight,
            SeverityClass::Slight => SeverityClass::Moderate,
            _ => SeverityClass::Serious,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityClass::NonDrought => "NonDrought",
            SeverityClass::Slight => "Slight",
            SeverityClass::Moderate => "Moderate",
            SeverityClass::Serious => "Serious",
        }
    }
}

impl fmt::Display for SeverityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown severity class '{s}'"))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no records for region {region_id} in [{start}, {end})")]
    NoData { region_id: u8, start: SimTime, end: SimTime },
    #[error("invalid classifier thresholds: {0}")]
    InvalidThresholds(String),
    #[error("record span of {span_s} s holds fewer than two {window_s} s windows")]
    InsufficientSpan { span_s: u64, window_s: u64 },
    #[error("window of {window_s} s is shorter than the {min_s} s minimum")]
    WindowTooShort { window_s: u64, min_s: u64 },
}

/// Severity thresholds. Precipitation in mm per 30-day month, temperature as
/// anomaly over the climatological normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub p_serious_mm: f64,
    pub t_serious_c: f64,
    pub p_moderate_mm: f64,
    pub t_moderate_c: f64,
    pub p_slight_mm: f64,
    pub t_slight_c: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            p_serious_mm: 5.0,
            t_serious_c: 2.0,
            p_moderate_mm: 25.0,
            t_moderate_c: 1.0,
            p_slight_mm: 50.0,
            t_slight_c: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let all = [
            self.p_serious_mm,
            self.t_serious_c,
            self.p_moderate_mm,
            self.t_moderate_c,
            self.p_slight_mm,
            self.t_slight_c,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(AnalyticsError::InvalidThresholds("thresholds must be finite".into()));
        }
        if !(self.p_serious_mm < self.p_moderate_mm && self.p_moderate_mm < self.p_slight_mm) {
            return Err(AnalyticsError::InvalidThresholds(format!(
                "precipitation thresholds must increase serious < moderate < slight, got {} / {} / {}",
                self.p_serious_mm, self.p_moderate_mm, self.p_slight_mm
            )));
        }
        if !(self.t_serious_c > self.t_moderate_c && self.t_moderate_c > self.t_slight_c) {
            return Err(AnalyticsError::InvalidThresholds(format!(
                "temperature thresholds must decrease serious > moderate > slight, got {} / {} / {}",
                self.t_serious_c, self.t_moderate_c, self.t_slight_c
            )));
        }
        Ok(())
    }
}

/// Analytics settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsParams {
    pub thresholds: Thresholds,
    pub window_days: u64,
    /// Shortest window indicators may be computed over.
    pub min_window_days: u64,
    pub cone_half_angle_deg: f64,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            window_days: 30,
            min_window_days: 30,
            cone_half_angle_deg: 45.0,
        }
    }
}

impl AnalyticsParams {
    pub fn validate(&self) -> Result<(), String> {
        self.thresholds.validate().map_err(|e| e.to_string())?;
        if self.window_days == 0 || self.min_window_days == 0 {
            return Err("analytics window lengths must be positive".into());
        }
        if self.window_days < self.min_window_days {
            return Err("window_days must be at least min_window_days".into());
        }
        if !(0.0..=180.0).contains(&self.cone_half_angle_deg) {
            return Err("cone_half_angle_deg must lie in [0, 180]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroughtIndicators {
    pub region_id: u8,
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub mean_temp_anomaly_c: f64,
    pub mean_monthly_precip_mm: f64,
    pub wind_mean_dir_deg: f64,
    pub wind_mean_speed_ms: f64,
    pub records: u64,
}

/// Mean of unit vectors, as a compass bearing in `[0, 360)`. Zero when the
/// vectors cancel.
pub fn circular_mean_deg(bearings: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for b in bearings {
        let r = b.to_radians();
        s += r.sin();
        c += r.cos();
    }
    if s.hypot(c) < 1e-12 {
        return 0.0;
    }
    let mut d = s.atan2(c).to_degrees();
    if d < 0.0 {
        d += 360.0;
    }
    // -1e-15 rounds up to exactly 360
    if d >= 360.0 {
        d -= 360.0;
    }
    d
}

/// Smallest absolute difference between two bearings, degrees.
pub fn angular_difference_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Indicators for one region over `[start, end)`, from calibrated records.
pub fn compute_indicators(
    db: &CentralDatabase,
    region_id: u8,
    window: (SimTime, SimTime),
    climatology: &Climatology,
    min_window_s: u64,
) -> Result<DroughtIndicators, AnalyticsError> {
    let (start, end) = window;
    let window_s = end.secs().saturating_sub(start.secs());
    if window_s < min_window_s {
        return Err(AnalyticsError::WindowTooShort {
            window_s,
            min_s: min_window_s,
        });
    }
    let mut anomaly_sum = 0.0;
    let mut speed_sum = 0.0;
    let mut dirs = Vec::new();
    let mut rain_at: BTreeMap<SimTime, (f64, u32)> = BTreeMap::new();
    let mut n = 0u64;
    for r in db.region_records(region_id) {
        if r.timestamp < start || r.timestamp >= end {
            continue;
        }
        let c = &r.calibrated;
        anomaly_sum += f64::from(c.temperature_c) - climatology.normal_temperature(r.timestamp);
        speed_sum += f64::from(c.wind_speed_ms);
        dirs.push(f64::from(c.wind_dir_deg));
        let e = rain_at.entry(r.timestamp).or_insert((0.0, 0));
        e.0 += f64::from(c.precipitation_mm);
        e.1 += 1;
        n += 1;
    }
    if n == 0 {
        return Err(AnalyticsError::NoData { region_id, start, end });
    }
    let rain_total: f64 = rain_at.values().map(|(s, k)| s / f64::from(*k)).sum();
    Ok(DroughtIndicators {
        region_id,
        window_start: start,
        window_end: end,
        mean_temp_anomaly_c: anomaly_sum / n as f64,
        mean_monthly_precip_mm: rain_total * MONTH_S / window_s as f64,
        wind_mean_dir_deg: circular_mean_deg(dirs),
        wind_mean_speed_ms: speed_sum / n as f64,
        records: n,
    })
}

/// Class for an anomaly / monthly precipitation pair. Comparisons are strict,
/// so a value exactly on a threshold falls to the milder class.
pub fn classify_values(anomaly_c: f64, monthly_precip_mm: f64, th: &Thresholds) -> SeverityClass {
    if monthly_precip_mm < th.p_serious_mm && anomaly_c > th.t_serious_c {
        SeverityClass::Serious
    } else if monthly_precip_mm < th.p_moderate_mm && anomaly_c > th.t_moderate_c {
        SeverityClass::Moderate
    } else if monthly_precip_mm < th.p_slight_mm || anomaly_c > th.t_slight_c {
        SeverityClass::Slight
    } else {
        SeverityClass::NonDrought
    }
}

pub fn classify(ind: &DroughtIndicators, th: &Thresholds) -> Result<SeverityClass, AnalyticsError> {
    th.validate()?;
    Ok(classify_values(ind.mean_temp_anomaly_c, ind.mean_monthly_precip_mm, th))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedWindow {
    pub class: SeverityClass,
    pub indicators: DroughtIndicators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionPattern {
    pub region_id: u8,
    pub windows: Vec<ClassifiedWindow>,
}

impl EvolutionPattern {
    pub fn latest(&self) -> Option<&ClassifiedWindow> {
        self.windows.last()
    }
}

/// `[first record, last record]` for one region, as a half-open span.
pub fn region_span(db: &CentralDatabase, region_id: u8) -> Option<(SimTime, SimTime)> {
    let mut lo: Option<SimTime> = None;
    let mut hi: Option<SimTime> = None;
    for r in db.region_records(region_id) {
        lo = Some(lo.map_or(r.timestamp, |l| l.min(r.timestamp)));
        hi = Some(hi.map_or(r.timestamp, |h| h.max(r.timestamp)));
    }
    Some((lo?, hi?.plus(1)))
}

/// Splits `[start, end)` into consecutive windows of `window_s`; a tail
/// shorter than one window is merged into the last window.
pub fn window_bounds(start: SimTime, end: SimTime, window_s: u64) -> Vec<(SimTime, SimTime)> {
    let span = end.secs().saturating_sub(start.secs());
    let n = span / window_s.max(1);
    (0..n)
        .map(|i| {
            let a = start.plus(i * window_s);
            let b = if i + 1 == n { end } else { a.plus(window_s) };
            (a, b)
        })
        .collect()
}

/// Classifies consecutive windows of `window_len_days` over the region's
/// record span.
pub fn evolve_pattern(
    db: &CentralDatabase,
    region_id: u8,
    window_len_days: u64,
    climatology: &Climatology,
    params: &AnalyticsParams,
) -> Result<EvolutionPattern, AnalyticsError> {
    params.thresholds.validate()?;
    let window_s = window_len_days * DAY_S;
    let (start, end) = region_span(db, region_id).ok_or(AnalyticsError::NoData {
        region_id,
        start: SimTime::ZERO,
        end: SimTime::ZERO,
    })?;
    let bounds = window_bounds(start, end, window_s);
    if bounds.len() < 2 {
        return Err(AnalyticsError::InsufficientSpan {
            span_s: end.secs() - start.secs(),
            window_s,
        });
    }
    let min_s = params.min_window_days * DAY_S;
    let mut windows = Vec::with_capacity(bounds.len());
    for w in bounds {
        let indicators = compute_indicators(db, region_id, w, climatology, min_s)?;
        let class = classify_values(
            indicators.mean_temp_anomaly_c,
            indicators.mean_monthly_precip_mm,
            &params.thresholds,
        );
        windows.push(ClassifiedWindow { class, indicators });
    }
    Ok(EvolutionPattern { region_id, windows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forecast {
    pub current: SeverityClass,
    pub forecast: SeverityClass,
}

/// Region whose anchor lies within `cone_half_angle_deg` of `wind_dir_deg`
/// as seen from `from`; the nearest one if several do.
pub fn downwind_neighbor(
    from: u8,
    wind_dir_deg: f64,
    anchors: &BTreeMap<u8, GeoPoint>,
    cone_half_angle_deg: f64,
) -> Option<u8> {
    let origin = anchors.get(&from)?;
    anchors
        .iter()
        .filter(|(id, _)| **id != from)
        .filter(|(_, p)| angular_difference_deg(origin.bearing_to(p), wind_dir_deg) <= cone_half_angle_deg)
        .min_by(|a, b| {
            origin
                .distance(a.1)
                .partial_cmp(&origin.distance(b.1))
                .unwrap()
                .then(a.0.cmp(b.0))
        })
        .map(|(id, _)| *id)
}

/// Each region at Moderate or worse pushes its downwind neighbour's forecast
/// up to one class above that neighbour's current class. Calm regions push
/// nothing. No forecast is below its region's current class.
pub fn advect_forecast(
    latest: &BTreeMap<u8, ClassifiedWindow>,
    anchors: &BTreeMap<u8, GeoPoint>,
    cone_half_angle_deg: f64,
) -> BTreeMap<u8, Forecast> {
    let mut out: BTreeMap<u8, Forecast> = latest
        .iter()
        .map(|(id, w)| {
            (
                *id,
                Forecast {
                    current: w.class,
                    forecast: w.class,
                },
            )
        })
        .collect();
    for (id, w) in latest {
        if w.class < SeverityClass::Moderate || w.indicators.wind_mean_speed_ms <= 0.0 {
            continue;
        }
        let Some(down) = downwind_neighbor(*id, w.indicators.wind_mean_dir_deg, anchors, cone_half_angle_deg)
        else {
            continue;
        };
        if let Some(f) = out.get_mut(&down) {
            f.forecast = f.forecast.max(f.current.escalate());
        }
    }
    out
}

/// Calendar month (0 = January) and year index of `t`.
pub fn calendar_month(t: SimTime) -> (u64, usize) {
    let year = t.secs() / YEAR_S;
    let mut day = (t.secs() % YEAR_S) / DAY_S;
    for (m, len) in MONTH_DAYS.iter().enumerate() {
        if day < *len {
            return (year, m);
        }
        day -= len;
    }
    (year, 11)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPoint {
    pub region_id: u8,
    /// 1-based month index counted from the start of the run.
    pub month: u32,
    pub mean_temp_c: f64,
    pub precip_mm: f64,
}

/// Per calendar month: mean of the region-average temperature and total of
/// the region-average precipitation.
pub fn monthly_series(db: &CentralDatabase, region_id: u8) -> Vec<MonthlyPoint> {
    let mut per_ts: BTreeMap<SimTime, (f64, f64, u32)> = BTreeMap::new();
    for r in db.region_records(region_id) {
        let e = per_ts.entry(r.timestamp).or_insert((0.0, 0.0, 0));
        e.0 += f64::from(r.calibrated.temperature_c);
        e.1 += f64::from(r.calibrated.precipitation_mm);
        e.2 += 1;
    }
    let mut months: BTreeMap<(u64, usize), (f64, f64, u32)> = BTreeMap::new();
    for (t, (temp, rain, k)) in per_ts {
        let e = months.entry(calendar_month(t)).or_insert((0.0, 0.0, 0));
        e.0 += temp / f64::from(k);
        e.1 += rain / f64::from(k);
        e.2 += 1;
    }
    months
        .into_iter()
        .enumerate()
        .map(|(i, (_, (temp, rain, k)))| MonthlyPoint {
            region_id,
            month: i as u32 + 1,
            mean_temp_c: temp / f64::from(k),
            precip_mm: rain,
        })
        .collect()
}
