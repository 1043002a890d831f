//! Seeded herd simulation: behaviour, sensors, firmware and uplink.
//!
//! [`run_simulation`] drives one node per animal and returns the gateway
//! frame log together with the ground truth needed to score the backend.

pub mod behavior;
pub mod firmware;
pub mod gnss;
pub mod link;
pub mod pasture;
pub mod sensors;

use std::fmt::Write as _;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::LatLon;
use crate::codec::CodecError;
use crate::energy::EnergyError;
use crate::fusion::{calibrate_mag_offset, FusionError};

pub use behavior::{BehaviorParams, FollowParams, Mode, Trajectory};
pub use firmware::{FirmwareOutput, FirmwareSchedule, NodeConfig};
pub use link::FrameLine;
pub use pasture::Pasture;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// RNG stream identifiers; each animal gets its own block of streams.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Behavior = 0,
    Sensors = 1,
    Gnss = 2,
    Link = 3,
    Calibration = 4,
    Follow = 5,
}

fn rng_for(seed: u64, animal: usize, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(animal as u64 * 8 + stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_s: f64,
    /// Unix time of simulation time zero.
    pub start_unix: u32,
    pub animals: usize,
    pub loss_probability: f64,
    pub utc_offset_h: f64,
    /// Ground-truth CSV sampling period.
    pub truth_period_s: f64,
    /// Pasture corners as `[lat, lon]`; empty selects the built-in pasture.
    pub pasture: Vec<[f64; 2]>,
    pub no_go: Vec<Vec<[f64; 2]>>,
    pub schedule: FirmwareSchedule,
    /// When set, every animal after the first follows the first one.
    pub follow: Option<FollowParams>,
    pub behavior: BehaviorParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            duration_s: 86_400.0,
            start_unix: 1_625_097_600,
            animals: 2,
            loss_probability: 0.0,
            utc_offset_h: 2.0,
            truth_period_s: 60.0,
            pasture: Vec::new(),
            no_go: Vec::new(),
            schedule: FirmwareSchedule::default(),
            follow: None,
            behavior: BehaviorParams::default(),
        }
    }
}

fn to_latlon(v: &[[f64; 2]]) -> Vec<LatLon> {
    v.iter().map(|p| LatLon::new(p[0], p[1])).collect()
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn pasture(&self) -> Result<Pasture, SimError> {
        if self.pasture.is_empty() {
            if !self.no_go.is_empty() {
                return Err(SimError::Config("no-go areas need an explicit pasture".into()));
            }
            return Ok(Pasture::default_alpine());
        }
        Pasture::new(to_latlon(&self.pasture), self.no_go.iter().map(|p| to_latlon(p)).collect())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(SimError::Config("duration_s must be positive".into()));
        }
        if self.animals == 0 || self.animals > usize::from(u16::MAX) {
            return Err(SimError::Config("animals must be between 1 and 65535".into()));
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(SimError::Config("loss_probability must be in [0, 1)".into()));
        }
        if !(self.truth_period_s > 0.0) {
            return Err(SimError::Config("truth_period_s must be positive".into()));
        }
        if u64::from(self.start_unix) + self.duration_s.ceil() as u64 > u64::from(u32::MAX) {
            return Err(SimError::Config("simulation runs past the 32-bit timestamp range".into()));
        }
        self.schedule.validate()?;
        self.behavior.validate()?;
        self.pasture()?;
        Ok(())
    }
}

/// Everything one simulated animal produced.
#[derive(Debug, Clone)]
pub struct AnimalRun {
    pub device_id: u16,
    pub trajectory: Trajectory,
    pub firmware: FirmwareOutput,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub animals: Vec<AnimalRun>,
    /// Delivered frames ordered by receive time, then device.
    pub frame_log: Vec<FrameLine>,
    pub pasture: Pasture,
    pub start_unix: u32,
    pub truth_period_s: f64,
}

impl SimOutput {
    pub fn emitted_frames(&self) -> usize {
        self.animals.iter().map(|a| a.firmware.frames.len()).sum()
    }

    pub fn frame_log_text(&self) -> String {
        let mut out = String::new();
        for l in &self.frame_log {
            writeln!(out, "{l}").unwrap();
        }
        out
    }

    /// `t,device_id,lat,lon,mode,pitch_deg` sampled every `truth_period_s`.
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("t,device_id,lat,lon,mode,pitch_deg\n");
        let frame = self.pasture.frame();
        for a in &self.animals {
            let duration = a.trajectory.duration();
            let mut k = 0u64;
            loop {
                let t = k as f64 * self.truth_period_s;
                if t > duration + 1e-9 {
                    break;
                }
                let p = a.trajectory.at(t);
                let ll = frame.to_latlon(p.position);
                writeln!(
                    out,
                    "{},{},{:.7},{:.7},{},{:.2}",
                    u64::from(self.start_unix) + t.round() as u64,
                    a.device_id,
                    ll.lat,
                    ll.lon,
                    p.mode,
                    p.pitch_deg
                )
                .unwrap();
                k += 1;
            }
        }
        out
    }
}

const TRAJECTORY_DT: f64 = 1.0;
const CALIBRATION_SWEEP_S: f64 = 72.0;

fn run_node(config: &SimConfig, pasture: &Pasture, animal: usize, trajectory: &Trajectory) -> Result<FirmwareOutput, SimError> {
    let seed = config.seed;
    let schedule = &config.schedule;
    let model = sensors::SensorModel::default();
    let sweep = sensors::calibration_sweep(
        &model,
        schedule.mag_rate_hz,
        CALIBRATION_SWEEP_S,
        &mut rng_for(seed, animal, Stream::Calibration),
    );
    let mut node = NodeConfig::new(animal as u16 + 1, config.start_unix);
    node.utc_offset_h = config.utc_offset_h;
    node.mag_offset = calibrate_mag_offset(&sweep)?;
    let stream = sensors::SensorStream::new(
        trajectory,
        model,
        schedule.accel_rate_hz,
        schedule.mag_decimation(),
        config.duration_s,
        rng_for(seed, animal, Stream::Sensors),
    );
    let mut gnss = firmware::TrajectoryGnss {
        trajectory,
        frame: *pasture.frame(),
        receiver: gnss::GnssReceiver::default(),
        rng: rng_for(seed, animal, Stream::Gnss),
    };
    firmware::run_firmware(schedule, &node, stream, &mut gnss, config.duration_s)
}

/// Runs the whole herd. Animals are simulated on separate threads with
/// disjoint RNG streams, so the result depends only on the configuration.
pub fn run_simulation(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let pasture = config.pasture()?;
    let start = pasture
        .interior_point()
        .ok_or_else(|| SimError::Config("pasture has no usable interior".into()))?;

    let mut trajectories = Vec::with_capacity(config.animals);
    let leader = behavior::simulate_trajectory(
        &config.behavior,
        &pasture,
        start,
        config.duration_s,
        TRAJECTORY_DT,
        &mut rng_for(config.seed, 0, Stream::Behavior),
    )?;
    trajectories.push(leader);
    for animal in 1..config.animals {
        let t = match &config.follow {
            Some(follow) => behavior::follow_behavior(
                &trajectories[0],
                follow,
                &config.behavior,
                &pasture,
                &mut rng_for(config.seed, animal, Stream::Follow),
            )?,
            None => behavior::simulate_trajectory(
                &config.behavior,
                &pasture,
                start,
                config.duration_s,
                TRAJECTORY_DT,
                &mut rng_for(config.seed, animal, Stream::Behavior),
            )?,
        };
        trajectories.push(t);
    }

    let outputs: Vec<Result<FirmwareOutput, SimError>> = thread::scope(|scope| {
        let handles: Vec<_> = trajectories
            .iter()
            .enumerate()
            .map(|(animal, traj)| {
                let pasture = &pasture;
                scope.spawn(move || run_node(config, pasture, animal, traj))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });

    let mut animals = Vec::with_capacity(config.animals);
    let mut frame_log = Vec::new();
    for (animal, (trajectory, fw)) in trajectories.into_iter().zip(outputs).enumerate() {
        let fw = fw?;
        let delivered = link::link_deliver(
            &fw.frames,
            config.loss_probability,
            &mut rng_for(config.seed, animal, Stream::Link),
        )?;
        frame_log.extend(delivered);
        animals.push(AnimalRun {
            device_id: animal as u16 + 1,
            trajectory,
            firmware: fw,
        });
    }
    frame_log.sort_by(|a, b| a.recv_unix_ts.total_cmp(&b.recv_unix_ts).then(a.device_id.cmp(&b.device_id)));
    Ok(SimOutput {
        animals,
        frame_log,
        pasture,
        start_unix: config.start_unix,
        truth_period_s: config.truth_period_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> SimConfig {
        SimConfig {
            duration_s: 3_600.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_config_parses_from_empty_toml() {
        assert_eq!(SimConfig::from_toml("").unwrap(), SimConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(SimConfig::from_toml("sead = 1").is_err());
    }

    #[test]
    fn toml_overrides() {
        let c = SimConfig::from_toml(
            "seed = 7\nanimals = 3\n[schedule]\ntransmit_period_s = 300.0\n[follow]\nlag_s = 600.0\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.animals, 3);
        assert_eq!(c.schedule.transmit_period_s, 300.0);
        assert_eq!(c.schedule.measurement_period_s, 300.0);
        assert_eq!(c.follow.unwrap().lag_s, 600.0);
    }

    #[test]
    fn one_hour_run() {
        let out = run_simulation(&short()).unwrap();
        assert_eq!(out.emitted_frames(), 8);
        assert_eq!(out.frame_log.len(), 8);
        for a in &out.animals {
            assert!(a.trajectory.points.iter().all(|p| out.pasture.contains(p.position)));
        }
    }

    #[test]
    fn deterministic() {
        let a = run_simulation(&short()).unwrap();
        let b = run_simulation(&short()).unwrap();
        assert_eq!(a.frame_log_text(), b.frame_log_text());
        assert_eq!(a.truth_csv(), b.truth_csv());
        assert_eq!(a.animals[0].firmware.ledger, b.animals[0].firmware.ledger);
    }

    #[test]
    fn seeds_differ() {
        let a = run_simulation(&short()).unwrap();
        let b = run_simulation(&SimConfig { seed: 43, ..short() }).unwrap();
        assert_ne!(a.frame_log_text(), b.frame_log_text());
    }

    #[test]
    fn truth_csv_shape() {
        let out = run_simulation(&SimConfig { animals: 1, ..short() }).unwrap();
        let csv = out.truth_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,device_id,lat,lon,mode,pitch_deg"));
        assert_eq!(lines.count(), 61);
    }

    #[test]
    fn invalid_configs() {
        assert!(run_simulation(&SimConfig { animals: 0, ..short() }).is_err());
        assert!(run_simulation(&SimConfig { loss_probability: 1.0, ..short() }).is_err());
        assert!(run_simulation(&SimConfig { duration_s: -1.0, ..short() }).is_err());
    }
}
