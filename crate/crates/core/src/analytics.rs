//! Server-side activity analytics over decoded frames.

use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::TelemetryFrame;
use crate::fusion::{classify_grazing, GrazingLabel, GrazingState};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("input is not time-ordered at index {0}")]
    Unsorted(usize),
    #[error("interval must be positive")]
    BadInterval,
    #[error("records from more than one device ({0} and {1})")]
    MixedDevices(u16, u16),
    #[error("overlap of {overlap_s} s is shorter than 4 x max lag ({max_lag_s} s)")]
    InsufficientOverlap { overlap_s: f64, max_lag_s: f64 },
    #[error("series are not on a common grid")]
    GridMismatch,
    #[error("no defined correlation coefficient")]
    NoCoefficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(p1: LatLon, p2: LatLon) -> f64 {
    let (phi1, phi2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (p2.lon - p1.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// A position estimate from the GNSS receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub lat: f64,
    pub lon: f64,
    /// Unix seconds.
    pub t: f64,
    pub accuracy_m: f64,
}

impl GnssFix {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalDistance {
    pub interval_start: f64,
    pub distance_m: f64,
    pub cumulative_m: f64,
}

fn bucket_start(t: f64, interval_s: f64) -> f64 {
    (t / interval_s).floor() * interval_s
}

/// Sums consecutive fix-to-fix distances per interval bucket. Each hop is
/// attributed to the bucket of its later fix; only buckets holding a fix
/// are returned.
pub fn interval_distances(fixes: &[GnssFix], interval_s: f64) -> Result<Vec<IntervalDistance>, AnalyticsError> {
    if !(interval_s > 0.0) {
        return Err(AnalyticsError::BadInterval);
    }
    if let Some(i) = fixes.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(AnalyticsError::Unsorted(i + 1));
    }
    let mut out: Vec<IntervalDistance> = Vec::new();
    let mut cumulative = 0.0;
    let mut prev: Option<&GnssFix> = None;
    for fix in fixes {
        let hop = prev.map_or(0.0, |p| haversine_m(p.position(), fix.position()));
        cumulative += hop;
        let start = bucket_start(fix.t, interval_s);
        match out.last_mut() {
            Some(last) if last.interval_start == start => {
                last.distance_m += hop;
                last.cumulative_m = cumulative;
            }
            _ => out.push(IntervalDistance {
                interval_start: start,
                distance_m: hop,
                cumulative_m: cumulative,
            }),
        }
        prev = Some(fix);
    }
    Ok(out)
}

/// One analysed interval of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityRecord {
    pub device_id: u16,
    pub interval_start: f64,
    pub interval_s: f64,
    pub head_pitch_deg: f64,
    pub grazing: bool,
    pub interval_distance_m: f64,
    pub cumulative_distance_m: f64,
    pub position: LatLon,
}

/// Turns one device's decoded frames into per-interval records, applying
/// the grazing hysteresis to the transmitted pitch. Frames must be ordered
/// by fix time.
pub fn activity_records(frames: &[TelemetryFrame], interval_s: f64) -> Result<Vec<ActivityRecord>, AnalyticsError> {
    if let Some(first) = frames.first() {
        if let Some(other) = frames.iter().find(|f| f.device_id != first.device_id) {
            return Err(AnalyticsError::MixedDevices(first.device_id, other.device_id));
        }
    }
    let fixes: Vec<GnssFix> = frames
        .iter()
        .map(|f| GnssFix {
            lat: f.latitude_deg(),
            lon: f.longitude_deg(),
            t: f64::from(f.fix_timestamp),
            accuracy_m: f64::from(f.fix_accuracy_dm) / 10.0,
        })
        .collect();
    let distances = interval_distances(&fixes, interval_s)?;
    let mut records = Vec::with_capacity(distances.len());
    let mut state = GrazingState::default();
    let mut frame_iter = frames.iter().zip(&fixes).peekable();
    for d in distances {
        // the last frame inside the bucket carries the reported pitch
        let mut last = None;
        while let Some((f, fix)) = frame_iter.peek() {
            if bucket_start(fix.t, interval_s) != d.interval_start {
                break;
            }
            last = Some((*f, *fix));
            frame_iter.next();
        }
        let (frame, fix) = last.expect("every distance bucket holds a fix");
        let pitch = f64::from(frame.head_pitch_deg);
        state = classify_grazing(state, pitch, d.interval_start);
        records.push(ActivityRecord {
            device_id: frame.device_id,
            interval_start: d.interval_start,
            interval_s,
            head_pitch_deg: pitch,
            grazing: state.label == GrazingLabel::Grazing,
            interval_distance_m: d.distance_m,
            cumulative_distance_m: d.cumulative_m,
            position: fix.position(),
        });
    }
    Ok(records)
}

/// Total seconds classified as grazing.
pub fn grazing_time(records: &[ActivityRecord]) -> Result<f64, AnalyticsError> {
    let Some(first) = records.first() else {
        return Ok(0.0);
    };
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        if r.device_id != first.device_id {
            return Err(AnalyticsError::MixedDevices(first.device_id, r.device_id));
        }
        if i > 0 && r.interval_start < records[i - 1].interval_start {
            return Err(AnalyticsError::Unsorted(i));
        }
        if r.grazing {
            total += r.interval_s;
        }
    }
    Ok(total)
}

/// Values on a uniform time grid; `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub start: f64,
    pub step: f64,
    pub values: Vec<Option<f64>>,
}

impl TimeSeries {
    pub fn from_values(name: &str, start: f64, step: f64, values: Vec<f64>) -> Self {
        TimeSeries {
            name: name.to_string(),
            start,
            step,
            values: values.into_iter().map(Some).collect(),
        }
    }

    /// Nearest sample within half a step of each grid point.
    pub fn resample(name: &str, points: &[(f64, f64)], start: f64, step: f64, len: usize) -> Self {
        let mut values = vec![None; len];
        let mut best = vec![f64::INFINITY; len];
        for &(t, v) in points {
            let k = ((t - start) / step).round();
            if k < 0.0 || k >= len as f64 {
                continue;
            }
            let k = k as usize;
            let dist = (t - (start + k as f64 * step)).abs();
            if dist <= step / 2.0 && dist < best[k] {
                best[k] = dist;
                values[k] = Some(v);
            }
        }
        TimeSeries {
            name: name.to_string(),
            start,
            step,
            values,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.step * self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub lag_seconds: f64,
    /// `None` when a segment has zero variance.
    pub coefficient: Option<f64>,
    pub series_name: String,
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (sa, sb) = pairs.iter().fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a, sb + b));
    let (ma, mb) = (sa / n, sb / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        let (da, db) = (a - ma, b - mb);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson coefficient of `a[i]` against `b[i + k]` for every lag `k` in
/// `[-max_lag, max_lag]` (in grid steps). A positive peak lag means `b`
/// trails `a`. Missing samples are excluded pairwise.
pub fn cross_correlate(
    a: &TimeSeries,
    b: &TimeSeries,
    max_lag_s: f64,
    step_s: f64,
) -> Result<Vec<CorrelationResult>, AnalyticsError> {
    if !(step_s > 0.0) || a.step != step_s || b.step != step_s {
        return Err(AnalyticsError::GridMismatch);
    }
    let offset = (b.start - a.start) / step_s;
    if (offset - offset.round()).abs() > 1e-9 {
        return Err(AnalyticsError::GridMismatch);
    }
    let overlap = a.end().min(b.end()) - a.start.max(b.start);
    if overlap < 4.0 * max_lag_s {
        return Err(AnalyticsError::InsufficientOverlap {
            overlap_s: overlap.max(0.0),
            max_lag_s,
        });
    }
    let offset = offset.round() as i64;
    let max_k = (max_lag_s / step_s).floor() as i64;
    let name = if a.name == b.name {
        a.name.clone()
    } else {
        format!("{}~{}", a.name, b.name)
    };
    let mut out = Vec::with_capacity((2 * max_k + 1) as usize);
    let mut pairs = Vec::with_capacity(a.values.len());
    for k in -max_k..=max_k {
        pairs.clear();
        for (i, va) in a.values.iter().enumerate() {
            // index into b of the grid time a.start + (i + k) * step
            let j = i as i64 + k - offset;
            if j < 0 || j >= b.values.len() as i64 {
                continue;
            }
            if let (Some(x), Some(y)) = (va, b.values[j as usize]) {
                pairs.push((*x, y));
            }
        }
        out.push(CorrelationResult {
            lag_seconds: k as f64 * step_s,
            coefficient: pearson(&pairs),
            series_name: name.clone(),
        });
    }
    Ok(out)
}

/// Maximal coefficient; ties go to the smaller absolute lag, and between
/// `-k` and `+k` to the first one scanned.
pub fn peak_lag(results: &[CorrelationResult]) -> Result<CorrelationResult, AnalyticsError> {
    let mut best: Option<(&CorrelationResult, f64)> = None;
    for r in results {
        let Some(c) = r.coefficient else { continue };
        best = match best {
            None => Some((r, c)),
            Some((b, bc)) if c > bc || (c == bc && r.lag_seconds.abs() < b.lag_seconds.abs()) => Some((r, c)),
            keep => keep,
        };
    }
    best.map(|(r, _)| r.clone()).ok_or(AnalyticsError::NoCoefficient)
}

pub const ACTIVITY_CSV_HEADER: &str = "interval_start,head_pitch_deg,grazing,interval_distance_m,cumulative_distance_m";
pub const CORRELATION_CSV_HEADER: &str = "lag_s,coefficient,series";

pub fn activity_csv(records: &[ActivityRecord]) -> String {
    let mut out = String::new();
    writeln!(out, "{ACTIVITY_CSV_HEADER}").unwrap();
    for r in records {
        writeln!(
            out,
            "{:.0},{:.0},{},{:.2},{:.2}",
            r.interval_start, r.head_pitch_deg, r.grazing as u8, r.interval_distance_m, r.cumulative_distance_m
        )
        .unwrap();
    }
    out
}

/// Absent coefficients are written as an empty field.
pub fn correlation_csv<'a>(results: impl IntoIterator<Item = &'a CorrelationResult>) -> String {
    let mut out = String::new();
    writeln!(out, "{CORRELATION_CSV_HEADER}").unwrap();
    for r in results {
        let c = r.coefficient.map(|c| format!("{c:.4}")).unwrap_or_default();
        writeln!(out, "{:.0},{},{}", r.lag_seconds, c, r.series_name).unwrap();
    }
    out
}
