//! Synthetic accelerometer, gyroscope and magnetometer streams.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::behavior::{Mode, Trajectory};
use crate::fusion::{body_to_mag, SensorSample, Vec3};

/// Earth field at the pasture in NED, microtesla (48 uT, 63 deg inclination).
pub fn reference_field() -> Vec3 {
    let inclination = 63f64.to_radians();
    Vec3::new(inclination.cos(), 0.0, inclination.sin()) * 48.0
}

/// Rotates a world (north, east, down) vector into body axes for the given
/// yaw and pitch with zero roll.
pub fn world_to_body(v: Vec3, yaw_deg: f64, pitch_deg: f64) -> Vec3 {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    let north = v.x * cy + v.y * sy;
    let right = -v.x * sy + v.y * cy;
    Vec3::new(cp * north - sp * v.z, right, sp * north + cp * v.z)
}

/// Noise and vibration levels of the synthetic sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub accel_noise_g: f64,
    pub gyro_noise_dps: f64,
    pub mag_noise: f64,
    /// Hard-iron offset in magnetometer axes.
    pub hard_iron: Vec3,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            accel_noise_g: 0.005,
            gyro_noise_dps: 0.5,
            mag_noise: 0.3,
            hard_iron: Vec3::new(12.0, -7.0, 4.0),
        }
    }
}

/// Amplitude (g) and frequency (Hz) of gait vibration per mode.
pub fn vibration(mode: Mode) -> (f64, f64) {
    match mode {
        Mode::Resting => (0.0, 0.0),
        Mode::Grazing => (0.08, 1.0),
        Mode::Walking => (0.3, 2.0),
    }
}

/// Lazily generated 60 Hz-style sample stream over a trajectory. The
/// magnetometer value is refreshed every `mag_every` samples and held in
/// between.
pub struct SensorStream<'a> {
    trajectory: &'a Trajectory,
    model: SensorModel,
    rate_hz: f64,
    mag_every: u64,
    index: u64,
    count: u64,
    held_mag: Vec3,
    prev_pitch: f64,
    prev_yaw: f64,
    rng: ChaCha8Rng,
}

impl<'a> SensorStream<'a> {
    /// Samples at `k / rate_hz` for `k` in `0..count`.
    pub fn new(trajectory: &'a Trajectory, model: SensorModel, rate_hz: f64, mag_every: u64, duration_s: f64, rng: ChaCha8Rng) -> Self {
        let count = (duration_s * rate_hz).floor() as u64 + 1;
        let first = trajectory.at(0.0);
        SensorStream {
            trajectory,
            model,
            rate_hz,
            mag_every: mag_every.max(1),
            index: 0,
            count,
            held_mag: Vec3::ZERO,
            prev_pitch: first.pitch_deg,
            prev_yaw: first.yaw_deg,
            rng,
        }
    }

    fn noise(&mut self, sd: f64) -> Vec3 {
        let mut n = || -> f64 { StandardNormal.sample(&mut self.rng) };
        Vec3::new(n(), n(), n()) * sd
    }
}

impl Iterator for SensorStream<'_> {
    type Item = SensorSample;

    fn next(&mut self) -> Option<SensorSample> {
        if self.index >= self.count {
            return None;
        }
        let t = self.index as f64 / self.rate_hz;
        let pose = self.trajectory.at(t);
        let pitch = self.trajectory.pitch_at(t);
        let yaw = pose.yaw_deg;
        let (amp, freq) = vibration(pose.mode);
        let scale = 1.0 + amp * (TAU * freq * t).sin();
        let accel = world_to_body(Vec3::new(0.0, 0.0, 1.0), yaw, pitch) * scale + self.noise(self.model.accel_noise_g);
        let dt = 1.0 / self.rate_hz;
        let mut dyaw = yaw - self.prev_yaw;
        if dyaw > 180.0 {
            dyaw -= 360.0;
        } else if dyaw < -180.0 {
            dyaw += 360.0;
        }
        let gyro = Vec3::new(0.0, (pitch - self.prev_pitch) / dt, dyaw / dt) + self.noise(self.model.gyro_noise_dps);
        if self.index % self.mag_every == 0 {
            let field = body_to_mag(world_to_body(reference_field(), yaw, pitch));
            self.held_mag = field + self.model.hard_iron + self.noise(self.model.mag_noise);
        }
        self.prev_pitch = pitch;
        self.prev_yaw = yaw;
        self.index += 1;
        Some(SensorSample {
            t,
            accel,
            gyro,
            mag: self.held_mag,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.index) as usize;
        (left, Some(left))
    }
}

/// Collar handled before fitting: a level turn through a full circle,
/// then a roll end over end about the lateral axis. Together they expose
/// every axis to both signs of the field, which the min/max hard-iron
/// estimate needs.
pub fn calibration_sweep<R: Rng + ?Sized>(model: &SensorModel, mag_rate_hz: f64, duration_s: f64, rng: &mut R) -> Vec<SensorSample> {
    let n = (duration_s * mag_rate_hz).round() as usize;
    let half = duration_s / 2.0;
    let rate = 360.0 / half;
    (0..n)
        .map(|k| {
            let t = k as f64 / mag_rate_hz;
            let (yaw, pitch, gyro) = if t < half {
                (t * rate, 0.0, Vec3::new(0.0, 0.0, rate))
            } else {
                (0.0, (t - half) * rate, Vec3::new(0.0, rate, 0.0))
            };
            let mut noise = |sd: f64| -> Vec3 {
                let mut n = || -> f64 { StandardNormal.sample(&mut *rng) };
                Vec3::new(n(), n(), n()) * sd
            };
            SensorSample {
                t,
                accel: world_to_body(Vec3::new(0.0, 0.0, 1.0), yaw, pitch) + noise(model.accel_noise_g),
                gyro: gyro + noise(model.gyro_noise_dps),
                mag: body_to_mag(world_to_body(reference_field(), yaw, pitch)) + model.hard_iron + noise(model.mag_noise),
            }
        })
        .collect()
}

/// Mean `| |a| - 1 |` of a pure sine vibration in `mode`.
pub fn expected_movement(mode: Mode) -> f64 {
    2.0 * vibration(mode).0 / PI
}
