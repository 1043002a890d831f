//! Task schedule of the collar node: sensor sampling, measurement
//! aggregation, GNSS acquisition and frame transmission.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::behavior::Trajectory;
use super::gnss::GnssReceiver;
use super::pasture::LocalFrame;
use super::SimError;
use crate::analytics::{haversine_m, GnssFix};
use crate::codec::{
    degrees_to_e7, duty_cycle_min_period, encode_frame, heading_to_q8, meters_to_dm_saturating, pitch_to_i8,
    time_on_air, LoraParams, StatusFlags, TelemetryFrame, FRAME_LEN,
};
use crate::energy::{
    BatteryModel, EnergyEvent, EnergyLedger, HarvestModel, ACCELEROMETER, GNSS, LORAWAN, MAGNETOMETER, MCU,
};
use crate::fusion::{update_heading, update_orientation, MovementAccumulator, OrientationState, SensorSample, Vec3};

/// EU868 sub-band limit.
pub const DUTY_CYCLE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirmwareSchedule {
    pub measurement_period_s: f64,
    pub transmit_period_s: f64,
    pub gnss_fix_duration_s: f64,
    pub accel_rate_hz: f64,
    pub mag_rate_hz: f64,
    /// MCU awake time per hour of operation.
    pub mcu_active_s_per_h: f64,
    pub corner_hz: f64,
    pub spreading_factor: u8,
}

impl Default for FirmwareSchedule {
    fn default() -> Self {
        FirmwareSchedule {
            measurement_period_s: 300.0,
            transmit_period_s: 900.0,
            gnss_fix_duration_s: 25.0,
            accel_rate_hz: 60.0,
            mag_rate_hz: 20.0,
            mcu_active_s_per_h: 70.0,
            corner_hz: crate::fusion::CORNER_HZ,
            spreading_factor: 8,
        }
    }
}

fn is_multiple(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 && (r - r.round()).abs() < 1e-9
}

impl FirmwareSchedule {
    /// The schedule of the activity study: transmit at every measurement.
    pub fn five_minute() -> Self {
        FirmwareSchedule {
            transmit_period_s: 300.0,
            ..FirmwareSchedule::default()
        }
    }

    pub fn lora(&self) -> LoraParams {
        LoraParams::eu868(self.spreading_factor)
    }

    /// Accelerometer samples per magnetometer sample.
    pub fn mag_decimation(&self) -> u64 {
        (self.accel_rate_hz / self.mag_rate_hz).round() as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            self.measurement_period_s,
            self.transmit_period_s,
            self.accel_rate_hz,
            self.mag_rate_hz,
            self.corner_hz,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SimError::Config("schedule periods and rates must be positive".into()));
        }
        if !(self.gnss_fix_duration_s >= 0.0 && self.mcu_active_s_per_h >= 0.0 && self.mcu_active_s_per_h <= 3600.0) {
            return Err(SimError::Config("invalid GNSS fix duration or MCU active time".into()));
        }
        if !is_multiple(self.transmit_period_s, self.measurement_period_s) {
            return Err(SimError::Config(format!(
                "transmit period {} s is not a multiple of the measurement period {} s",
                self.transmit_period_s, self.measurement_period_s
            )));
        }
        if !is_multiple(self.accel_rate_hz, self.mag_rate_hz) {
            return Err(SimError::Config("accelerometer rate must be a multiple of the magnetometer rate".into()));
        }
        let min = duty_cycle_min_period(&self.lora(), FRAME_LEN as u32, DUTY_CYCLE)?;
        if self.transmit_period_s < min {
            return Err(SimError::Config(format!(
                "transmit period {} s violates the duty cycle (minimum {min:.1} s)",
                self.transmit_period_s
            )));
        }
        Ok(())
    }
}

/// Where the firmware gets its position fixes from.
pub trait GnssSource {
    fn fix(&mut self, t: f64) -> GnssFix;
}

/// Noisy fixes of a ground-truth trajectory.
pub struct TrajectoryGnss<'a> {
    pub trajectory: &'a Trajectory,
    pub frame: LocalFrame,
    pub receiver: GnssReceiver,
    pub rng: ChaCha8Rng,
}

impl GnssSource for TrajectoryGnss<'_> {
    fn fix(&mut self, t: f64) -> GnssFix {
        let truth = self.frame.to_latlon(self.trajectory.at(t).position);
        self.receiver.sample(truth, t, &mut self.rng)
    }
}

/// Static identity and environment of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeConfig {
    pub device_id: u16,
    /// Unix time of simulation time zero.
    pub start_unix: u32,
    /// Local time offset used for daylight and temperature.
    pub utc_offset_h: f64,
    pub mag_offset: Vec3,
    pub battery: BatteryModel,
    pub harvest: HarvestModel,
}

impl NodeConfig {
    pub fn new(device_id: u16, start_unix: u32) -> Self {
        NodeConfig {
            device_id,
            start_unix,
            utc_offset_h: 2.0,
            mag_offset: Vec3::ZERO,
            battery: BatteryModel::default(),
            harvest: HarvestModel::default(),
        }
    }

    fn local_hour(&self, t: f64) -> f64 {
        ((f64::from(self.start_unix) + t) / 3600.0 + self.utc_offset_h).rem_euclid(24.0)
    }

    fn daylight(&self, t: f64) -> bool {
        (6.0..18.0).contains(&self.local_hour(t))
    }

    /// Harvested joules between 0 and `t`, spread evenly over daylight hours.
    fn harvested_j(&self, t: f64) -> f64 {
        let rate = self.harvest.effective_income_j_per_day() / (12.0 * 3600.0);
        let step: f64 = 60.0;
        let mut acc = 0.0;
        let mut s = 0.0;
        while s < t {
            let d = step.min(t - s);
            if self.daylight(s) {
                acc += rate * d;
            }
            s += step;
        }
        acc
    }

    /// Diurnal air temperature in degrees Celsius.
    fn temperature_c(&self, t: f64) -> f64 {
        let h = self.local_hour(t);
        14.0 + 8.0 * ((h - 9.0) / 24.0 * std::f64::consts::TAU).sin()
    }
}

/// Aggregates produced at each measurement tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub t: f64,
    /// Mean filtered pitch over the measurement window.
    pub pitch_deg: f64,
    /// Heading at the tick.
    pub heading_deg: f64,
    /// Mean `| |a| - 1 |` since the previous measurement, in g.
    pub movement_g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    /// Simulation time of the transmission start.
    pub t: f64,
    pub frame: TelemetryFrame,
    pub bytes: [u8; FRAME_LEN],
    pub airtime_s: f64,
}

impl EmittedFrame {
    pub fn tx_unix(&self) -> f64 {
        f64::from(self.frame.frame_timestamp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirmwareOutput {
    pub frames: Vec<EmittedFrame>,
    pub measurements: Vec<MeasurementRecord>,
    pub ledger: EnergyLedger,
    pub elapsed_s: f64,
}

/// Runs the node over `window_s` seconds of samples.
///
/// Every sample feeds the gravity filter; every `mag_decimation`-th sample
/// updates the heading. Measurement ticks close the pitch and movement
/// windows, and
/// transmit ticks take a fix, encode a frame and charge the radio with its
/// real airtime.
pub fn run_firmware<I, G>(
    schedule: &FirmwareSchedule,
    node: &NodeConfig,
    samples: I,
    gnss: &mut G,
    window_s: f64,
) -> Result<FirmwareOutput, SimError>
where
    I: IntoIterator<Item = SensorSample>,
    G: GnssSource + ?Sized,
{
    schedule.validate()?;
    if !(window_s > 0.0) {
        return Err(SimError::Config("simulation window must be positive".into()));
    }
    let lora = schedule.lora();
    let airtime = time_on_air(&lora, FRAME_LEN as u32)?;
    let decimation = schedule.mag_decimation();
    let tx_every = (schedule.transmit_period_s / schedule.measurement_period_s).round() as u64;
    let mcu_per_measurement = schedule.mcu_active_s_per_h * schedule.measurement_period_s / 3600.0;

    let mut ledger = EnergyLedger::default();
    let mut orientation = OrientationState::with_mag_offset(node.mag_offset);
    let mut movement = MovementAccumulator::default();
    let (mut pitch_sum, mut pitch_n) = (0.0, 0u64);
    let mut frames = Vec::new();
    let mut measurements = Vec::new();
    let mut sequence: u16 = 0;
    let mut last_fix: Option<GnssFix> = None;
    let mut next_measurement = 1u64;
    let mut seen_any = false;
    let mut last_t = f64::NEG_INFINITY;

    for (index, s) in samples.into_iter().enumerate() {
        if s.t > window_s {
            break;
        }
        seen_any = true;
        last_t = s.t;
        orientation = update_orientation(&orientation, &s, schedule.corner_hz)?;
        ledger.accrue(ACCELEROMETER, EnergyEvent::SensorTick)?;
        movement.push(s.accel);
        pitch_sum += orientation.pitch;
        pitch_n += 1;
        if index as u64 % decimation == 0 {
            orientation = update_heading(&orientation, &s)?;
            ledger.accrue(MAGNETOMETER, EnergyEvent::SensorTick)?;
        }

        let tick_t = next_measurement as f64 * schedule.measurement_period_s;
        if s.t + 1e-9 < tick_t {
            continue;
        }
        ledger.accrue(MCU, EnergyEvent::McuActive { duration_s: mcu_per_measurement })?;
        let pitch = pitch_sum / pitch_n as f64;
        (pitch_sum, pitch_n) = (0.0, 0);
        measurements.push(MeasurementRecord {
            t: tick_t,
            pitch_deg: pitch,
            heading_deg: orientation.heading,
            movement_g: movement.take().unwrap_or(0.0),
        });
        if next_measurement % tx_every == 0 {
            let fix = gnss.fix(tick_t);
            ledger.accrue(GNSS, EnergyEvent::GnssFix { duration_s: schedule.gnss_fix_duration_s })?;
            let displacement = last_fix.map_or(0.0, |p| haversine_m(p.position(), fix.position()));
            last_fix = Some(fix);
            ledger.accrue(LORAWAN, EnergyEvent::Tx { airtime_s: airtime })?;

            let consumed = ledger.total_j();
            let stored = node.battery.stored_j() - consumed + node.harvested_j(tick_t);
            let soc = (stored / node.battery.energy_j()).clamp(0.0, 1.0);
            let battery_v = 3.3 + 0.9 * soc;
            let unix = node.start_unix.saturating_add(tick_t.round() as u32);
            let frame = TelemetryFrame {
                device_id: node.device_id,
                sequence,
                frame_timestamp: unix,
                latitude_e7: degrees_to_e7(fix.lat)?,
                longitude_e7: degrees_to_e7(fix.lon)?,
                fix_timestamp: unix,
                fix_accuracy_dm: meters_to_dm_saturating(fix.accuracy_m),
                heading_q8: heading_to_q8(orientation.heading),
                head_pitch_deg: pitch_to_i8(pitch),
                movement_avg_dm: meters_to_dm_saturating(displacement),
                battery_mv_div20: (battery_v * 1000.0 / 20.0).round() as u8,
                temperature_dc: (node.temperature_c(tick_t) * 10.0).round() as i16,
                status_flags: StatusFlags::new(true, node.daylight(tick_t), soc < 0.2),
                ..TelemetryFrame::default()
            };
            let bytes = encode_frame(&frame)?;
            frames.push(EmittedFrame {
                t: tick_t,
                frame,
                bytes,
                airtime_s: airtime,
            });
            sequence = sequence.wrapping_add(1);
        }
        next_measurement += 1;
    }

    if !seen_any {
        return Err(SimError::Config("empty sensor stream".into()));
    }
    if last_t + 1e-9 < window_s {
        return Err(SimError::Config(format!(
            "sensor stream ends at {last_t} s, before the {window_s} s window"
        )));
    }
    Ok(FirmwareOutput {
        frames,
        measurements,
        ledger,
        elapsed_s: window_s,
    })
}
