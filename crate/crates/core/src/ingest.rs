//! Backend: frame-log ingestion, storage, track queries and the analysis
//! pipeline that turns stored frames into activity and correlation tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    activity_csv, activity_records, correlation_csv, cross_correlate, grazing_time, peak_lag, ActivityRecord,
    AnalyticsError, CorrelationResult, TimeSeries,
};
use crate::codec::{decode_frame, TelemetryFrame};
use crate::energy::{
    daily_consumption, energy_report_csv, lifetime_report, reference_budgets, BatteryModel,
    EnergyError, HarvestModel,
};
use crate::simulator::link::{parse_frame_line, FrameLine};
use crate::simulator::{run_simulation, SimConfig, SimError, SimOutput};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt store at line {line}: {reason}")]
    CorruptStore { line: usize, reason: String },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl IngestError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            IngestError::Config(_) | IngestError::Simulation(SimError::Config(_)) => ExitStatus::ConfigError,
            _ => ExitStatus::Failure,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A decoded frame together with its gateway metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredFrame {
    pub receive_time: f64,
    pub device_id: u16,
    pub sequence: u16,
    pub frame: TelemetryFrame,
    pub rssi: i16,
    pub snr: f64,
}

impl StoredFrame {
    /// Uniqueness key: device, sequence and receive time in milliseconds.
    pub fn key(&self) -> FrameKey {
        (self.device_id, self.sequence, (self.receive_time * 1000.0).round() as i64)
    }

    fn to_line(&self) -> FrameLine {
        FrameLine {
            recv_unix_ts: self.receive_time,
            device_id: self.device_id,
            rssi: self.rssi,
            snr: self.snr,
            payload: crate::codec::encode_frame(&self.frame)
                .expect("stored frames were decoded from valid bytes")
                .to_vec(),
        }
    }
}

pub type FrameKey = (u16, u16, i64);

/// A rejected input line, kept with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadLetter {
    pub line: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestOutcome {
    Stored,
    /// Already present; nothing was written.
    Duplicate,
    DeadLettered(String),
}

/// Decodes one frame-log line.
pub fn parse_line(line: &str) -> Result<StoredFrame, String> {
    let parsed = parse_frame_line(line).map_err(|e| e.to_string())?;
    let frame = decode_frame(&parsed.payload).map_err(|e| e.to_string())?;
    if frame.device_id != parsed.device_id {
        return Err(format!(
            "device mismatch: gateway says {}, payload says {}",
            parsed.device_id, frame.device_id
        ));
    }
    Ok(StoredFrame {
        receive_time: parsed.recv_unix_ts,
        device_id: frame.device_id,
        sequence: frame.sequence,
        frame,
        rssi: parsed.rssi,
        snr: parsed.snr,
    })
}

/// Storage boundary. Implementations serialize writes and hand out
/// consistent snapshots.
pub trait FrameStore: Send + Sync {
    /// Returns `false` when the key already exists.
    fn insert(&self, frame: StoredFrame) -> Result<bool, IngestError>;
    fn dead_letter(&self, entry: DeadLetter) -> Result<(), IngestError>;
    /// Frames of one device with `t0 <= frame_timestamp <= t1`, ordered by
    /// frame timestamp, then sequence, then receive time.
    fn frames_for(&self, device_id: u16, t0: f64, t1: f64) -> Vec<StoredFrame>;
    fn devices(&self) -> Vec<u16>;
    fn dead_letters(&self) -> Vec<DeadLetter>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
struct Index {
    /// device -> (frame_ts, sequence, recv_ms) -> frame
    by_device: BTreeMap<u16, BTreeMap<(u32, u16, i64), StoredFrame>>,
    keys: BTreeSet<FrameKey>,
    dead: Vec<DeadLetter>,
}

impl Index {
    fn insert(&mut self, f: StoredFrame) -> bool {
        let key = f.key();
        if !self.keys.insert(key) {
            return false;
        }
        self.by_device
            .entry(f.device_id)
            .or_default()
            .insert((f.frame.frame_timestamp, f.sequence, key.2), f);
        true
    }
}

/// Append-only log with an in-memory index. Without a path it is purely
/// in memory.
#[derive(Debug)]
pub struct LogStore {
    index: RwLock<Index>,
    log: Option<Mutex<BufWriter<File>>>,
}

impl Default for LogStore {
    fn default() -> Self {
        LogStore::in_memory()
    }
}

const STORED_TAG: &str = "S ";
const DEAD_TAG: &str = "D ";

impl LogStore {
    pub fn in_memory() -> Self {
        LogStore {
            index: RwLock::new(Index::default()),
            log: None,
        }
    }

    /// Opens or creates a store file, replaying its contents.
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        let mut index = Index::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                let corrupt = |reason: String| IngestError::CorruptStore { line: i + 1, reason };
                if let Some(rest) = line.strip_prefix(STORED_TAG) {
                    let f = parse_line(rest).map_err(corrupt)?;
                    index.insert(f);
                } else if let Some(rest) = line.strip_prefix(DEAD_TAG) {
                    let (reason, raw) = rest.split_once(' ').ok_or_else(|| corrupt("missing field".into()))?;
                    let text = |h: &str| -> Result<String, IngestError> {
                        let bytes = hex::decode(h).map_err(|e| corrupt(e.to_string()))?;
                        String::from_utf8(bytes).map_err(|e| corrupt(e.to_string()))
                    };
                    index.dead.push(DeadLetter {
                        reason: text(reason)?,
                        line: text(raw)?,
                    });
                } else if !line.is_empty() {
                    return Err(corrupt("unknown record tag".into()));
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(LogStore {
            index: RwLock::new(index),
            log: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    fn append(&self, record: &str) -> Result<(), IngestError> {
        if let Some(log) = &self.log {
            let mut w = log.lock().expect("store log lock poisoned");
            writeln!(w, "{record}")
                .and_then(|_| w.flush())
                .map_err(|source| IngestError::Io {
                    path: PathBuf::from("<store>"),
                    source,
                })?;
        }
        Ok(())
    }
}

impl FrameStore for LogStore {
    fn insert(&self, frame: StoredFrame) -> Result<bool, IngestError> {
        let mut index = self.index.write().expect("store lock poisoned");
        if index.keys.contains(&frame.key()) {
            return Ok(false);
        }
        self.append(&format!("{STORED_TAG}{}", frame.to_line()))?;
        Ok(index.insert(frame))
    }

    fn dead_letter(&self, entry: DeadLetter) -> Result<(), IngestError> {
        let mut index = self.index.write().expect("store lock poisoned");
        self.append(&format!(
            "{DEAD_TAG}{} {}",
            hex::encode(entry.reason.as_bytes()),
            hex::encode(entry.line.as_bytes())
        ))?;
        index.dead.push(entry);
        Ok(())
    }

    fn frames_for(&self, device_id: u16, t0: f64, t1: f64) -> Vec<StoredFrame> {
        let index = self.index.read().expect("store lock poisoned");
        index
            .by_device
            .get(&device_id)
            .map(|frames| {
                frames
                    .values()
                    .filter(|f| {
                        let ts = f64::from(f.frame.frame_timestamp);
                        ts >= t0 && ts <= t1
                    })
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    }

    fn devices(&self) -> Vec<u16> {
        self.index.read().expect("store lock poisoned").by_device.keys().copied().collect()
    }

    fn dead_letters(&self) -> Vec<DeadLetter> {
        self.index.read().expect("store lock poisoned").dead.clone()
    }

    fn len(&self) -> usize {
        self.index.read().expect("store lock poisoned").keys.len()
    }
}

/// Line counters; `stored + duplicates + dead_lettered == ingested`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub ingested: usize,
    pub stored: usize,
    pub duplicates: usize,
    pub dead_lettered: usize,
}

impl IngestStats {
    pub fn record(&mut self, outcome: &IngestOutcome) {
        self.ingested += 1;
        match outcome {
            IngestOutcome::Stored => self.stored += 1,
            IngestOutcome::Duplicate => self.duplicates += 1,
            IngestOutcome::DeadLettered(_) => self.dead_lettered += 1,
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.stored + self.duplicates + self.dead_lettered == self.ingested
    }

    pub fn dead_letter_fraction(&self) -> f64 {
        if self.ingested == 0 {
            0.0
        } else {
            self.dead_lettered as f64 / self.ingested as f64
        }
    }
}

/// Ingests one line; every line ends up stored, recognised as a duplicate
/// or dead-lettered.
pub fn ingest_line<S: FrameStore + ?Sized>(store: &S, line: &str) -> Result<IngestOutcome, IngestError> {
    match parse_line(line) {
        Ok(frame) => Ok(if store.insert(frame)? {
            IngestOutcome::Stored
        } else {
            IngestOutcome::Duplicate
        }),
        Err(reason) => {
            store.dead_letter(DeadLetter {
                line: line.to_string(),
                reason: reason.clone(),
            })?;
            Ok(IngestOutcome::DeadLettered(reason))
        }
    }
}

/// Ingests every line of a reader. Lines that are not valid UTF-8 are
/// dead-lettered in lossy form.
pub fn ingest_reader<S: FrameStore + ?Sized, R: BufRead>(store: &S, mut reader: R) -> Result<IngestStats, IngestError> {
    let mut stats = IngestStats::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(Path::new("<input>")))?;
        if n == 0 {
            break;
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        let outcome = match std::str::from_utf8(&buf) {
            Ok(line) => ingest_line(store, line)?,
            Err(e) => {
                let reason = format!("encoding error: {e}");
                store.dead_letter(DeadLetter {
                    line: String::from_utf8_lossy(&buf).into_owned(),
                    reason: reason.clone(),
                })?;
                IngestOutcome::DeadLettered(reason)
            }
        };
        stats.record(&outcome);
    }
    Ok(stats)
}

/// One point of a device track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: u32,
    pub lat: f64,
    pub lon: f64,
    pub head_pitch_deg: i8,
}

/// Track of one device between `t0` and `t1` (inclusive, frame time).
pub fn query_track<S: FrameStore + ?Sized>(store: &S, device_id: u16, t0: f64, t1: f64) -> Result<Vec<TrackPoint>, IngestError> {
    if !(t0 <= t1) {
        return Err(IngestError::Config(format!("query window [{t0}, {t1}] is empty")));
    }
    Ok(store
        .frames_for(device_id, t0, t1)
        .into_iter()
        .map(|f| TrackPoint {
            t: f.frame.frame_timestamp,
            lat: f.frame.latitude_deg(),
            lon: f.frame.longitude_deg(),
            head_pitch_deg: f.frame.head_pitch_deg,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Analysis interval, matching the measurement period.
    pub interval_s: f64,
    /// Largest lag scanned by the cross-correlation.
    pub max_lag_s: f64,
    /// Exit with status 3 when more than this fraction of lines is rejected.
    pub max_dead_letter_fraction: f64,
    pub harvest_efficiency: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            interval_s: 300.0,
            max_lag_s: 3600.0,
            max_dead_letter_fraction: 0.01,
            harvest_efficiency: crate::energy::DEFAULT_HARVEST_EFFICIENCY,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.interval_s > 0.0 && self.max_lag_s >= 0.0) {
            return Err(IngestError::Config("interval_s must be positive and max_lag_s non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.max_dead_letter_fraction) {
            return Err(IngestError::Config("max_dead_letter_fraction must be in [0, 1]".into()));
        }
        if !(self.harvest_efficiency > 0.0 && self.harvest_efficiency <= 1.0) {
            return Err(IngestError::Config("harvest_efficiency must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Process exit codes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    ConfigError = 2,
    DeadLetterThreshold = 3,
}

/// Result of analysing a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub records: BTreeMap<u16, Vec<ActivityRecord>>,
    pub grazing_s: BTreeMap<u16, f64>,
    pub correlations: Vec<CorrelationResult>,
    /// Peak per correlated pair and series.
    pub peaks: Vec<CorrelationResult>,
    pub energy_csv: String,
    pub lifetime: String,
}

/// Frames of one device for analysis: sorted by fix time, one per
/// (sequence, frame timestamp) even if several gateways logged it.
fn analysis_frames<S: FrameStore + ?Sized>(store: &S, device: u16) -> Vec<TelemetryFrame> {
    let mut seen = BTreeSet::new();
    let mut frames: Vec<TelemetryFrame> = store
        .frames_for(device, f64::NEG_INFINITY, f64::INFINITY)
        .into_iter()
        .filter(|f| seen.insert((f.sequence, f.frame.frame_timestamp)))
        .map(|f| f.frame)
        .collect();
    frames.sort_by_key(|f| (f.fix_timestamp, f.frame_timestamp, f.sequence));
    frames
}

fn series(records: &[ActivityRecord], name: &str, start: f64, step: f64, len: usize, value: fn(&ActivityRecord) -> f64) -> TimeSeries {
    let points: Vec<(f64, f64)> = records.iter().map(|r| (r.interval_start, value(r))).collect();
    TimeSeries::resample(name, &points, start, step, len)
}

/// Runs the analytics over a store snapshot.
pub fn analyze<S: FrameStore + ?Sized>(store: &S, config: &PipelineConfig) -> Result<Analysis, IngestError> {
    config.validate()?;
    let mut records = BTreeMap::new();
    let mut grazing_s = BTreeMap::new();
    for device in store.devices() {
        let frames = analysis_frames(store, device);
        let recs = activity_records(&frames, config.interval_s)?;
        grazing_s.insert(device, grazing_time(&recs)?);
        records.insert(device, recs);
    }

    let mut correlations = Vec::new();
    let mut peaks = Vec::new();
    let step = config.interval_s;
    let (lo, hi) = records
        .values()
        .flat_map(|r| r.iter().map(|x| x.interval_start))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if lo.is_finite() {
        let len = ((hi - lo) / step).round() as usize + 1;
        let devices: Vec<u16> = records.keys().copied().collect();
        for (i, &a) in devices.iter().enumerate() {
            for &b in &devices[i + 1..] {
                let kinds: [(&str, fn(&ActivityRecord) -> f64); 2] = [
                    ("movement", |r| r.interval_distance_m),
                    ("head_angle", |r| r.head_pitch_deg),
                ];
                for (kind, value) in kinds {
                    let name = format!("{kind}_{a}_{b}");
                    let sa = series(&records[&a], &name, lo, step, len, value);
                    let sb = series(&records[&b], &name, lo, step, len, value);
                    match cross_correlate(&sa, &sb, config.max_lag_s, step) {
                        Ok(res) => {
                            if let Ok(p) = peak_lag(&res) {
                                peaks.push(p);
                            }
                            correlations.extend(res);
                        }
                        // too short to correlate: no rows for this pair
                        Err(AnalyticsError::InsufficientOverlap { .. }) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
    }

    let budgets = reference_budgets();
    let energy_csv = energy_report_csv(&budgets)?;
    let consumption = daily_consumption(&budgets)?;
    let harvest = HarvestModel::default().with_efficiency(config.harvest_efficiency);
    let lifetime = lifetime_report(&BatteryModel::default(), consumption, &harvest)?;
    Ok(Analysis {
        records,
        grazing_s,
        correlations,
        peaks,
        energy_csv,
        lifetime,
    })
}

/// Writes `activity_<device>.csv`, `correlation.csv`, `energy.csv` and
/// `lifetime.txt` into `dir`; returns the written paths.
pub fn write_analysis(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| -> Result<(), IngestError> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
        written.push(p);
        Ok(())
    };
    for (device, recs) in &analysis.records {
        put(format!("activity_{device}.csv"), &activity_csv(recs))?;
    }
    put("correlation.csv".into(), &correlation_csv(&analysis.correlations))?;
    put("energy.csv".into(), &analysis.energy_csv)?;
    put("lifetime.txt".into(), &analysis.lifetime)?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub stats: IngestStats,
    pub analysis: Analysis,
    pub written: Vec<PathBuf>,
    pub status: ExitStatus,
}

/// Ingest, analyse and write outputs. The exit status turns to
/// [`ExitStatus::DeadLetterThreshold`] when too many lines were rejected;
/// outputs are written either way.
pub fn run_pipeline<S: FrameStore + ?Sized, R: BufRead>(
    input: R,
    store: &S,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineReport, IngestError> {
    config.validate()?;
    let stats = ingest_reader(store, input)?;
    let analysis = analyze(store, config)?;
    let written = write_analysis(&analysis, out_dir)?;
    let status = if stats.dead_letter_fraction() > config.max_dead_letter_fraction {
        ExitStatus::DeadLetterThreshold
    } else {
        ExitStatus::Success
    };
    Ok(PipelineReport {
        stats,
        analysis,
        written,
        status,
    })
}

/// Outputs of a simulate, ingest and analyse run.
#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub simulation: SimOutput,
    pub report: PipelineReport,
}

/// Simulates the herd, writes `frames.log`, `truth.csv` and the per-node
/// `energy_observed_<device>.csv`, then runs the pipeline on the frame log
/// with a fresh in-memory store.
pub fn run_end_to_end(sim: &SimConfig, pipeline: &PipelineConfig, out_dir: &Path) -> Result<EndToEnd, IngestError> {
    pipeline.validate()?;
    let simulation = run_simulation(sim)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let log = simulation.frame_log_text();
    let write = |name: &str, text: &str| -> Result<(), IngestError> {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(io_err(&p))
    };
    write("frames.log", &log)?;
    write("truth.csv", &simulation.truth_csv())?;
    for a in &simulation.animals {
        let observed = a.firmware.ledger.observed_budgets(a.firmware.elapsed_s);
        write(&format!("energy_observed_{}.csv", a.device_id), &energy_report_csv(&observed)?)?;
    }
    let store = LogStore::in_memory();
    let report = run_pipeline(log.as_bytes(), &store, pipeline, out_dir)?;
    Ok(EndToEnd { simulation, report })
}
