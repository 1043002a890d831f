//! On-node signal chain: low-pass gravity estimate, head pitch,
//! tilt-compensated heading, movement metric and grazing hysteresis.
//!
//! Device body frame: x forward (towards the nose), y right, z down. The
//! accelerometer reports the gravity direction in that frame, so a level
//! device reads `(0, 0, 1)` g and a nose-down device reads `(1, 0, 0)` g.
//! Pitch is positive nose-up; a grazing animal has a strongly negative pitch.
//!
//! The magnetometer is mounted rotated 180 degrees about x with respect to
//! the accelerometer: its axes are x forward, y left, z up. [`mag_to_body`]
//! maps a reading into the body frame.

use std::f64::consts::PI;
use std::fmt;
use std::io::BufRead;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Default IIR corner frequency.
pub const CORNER_HZ: f64 = 0.1;
/// Samples with a larger angular rate are not used for the gravity estimate.
pub const GYRO_GATE_DPS: f64 = 240.0;
/// Below this pitch the animal is classified as grazing.
pub const GRAZING_ENTER_DEG: f64 = -20.0;
/// Above this pitch the animal is classified as not grazing.
pub const GRAZING_EXIT_DEG: f64 = -10.0;
/// Minimum yaw coverage for a hard-iron calibration window.
pub const MIN_CALIBRATION_COVERAGE_DEG: f64 = 270.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid filter parameters: dt={dt}, corner={corner_hz}")]
    FilterParams { dt: f64, corner_hz: f64 },
    #[error("timestamps must be strictly increasing ({prev} -> {next})")]
    NonMonotonic { prev: f64, next: f64 },
    #[error("insufficient calibration coverage: {coverage_deg:.1} deg of yaw, need {required_deg}")]
    CalibrationCoverage { coverage_deg: f64, required_deg: f64 },
    #[error("empty sample window")]
    EmptyWindow,
    #[error("sensor stream parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Magnetometer axes (x forward, y left, z up) to body axes.
pub fn mag_to_body(m: Vec3) -> Vec3 {
    Vec3::new(m.x, -m.y, -m.z)
}

/// Body axes to magnetometer axes. The mapping is its own inverse.
pub fn body_to_mag(b: Vec3) -> Vec3 {
    mag_to_body(b)
}

/// One IMU reading. `mag` holds the latest magnetometer value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t: f64,
    /// g
    pub accel: Vec3,
    /// deg/s
    pub gyro: Vec3,
    pub mag: Vec3,
}

impl SensorSample {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.accel.is_finite() && self.gyro.is_finite() && self.mag.is_finite()
    }
}

/// Smoothing factor of the single-pole low-pass.
pub fn lowpass_alpha(dt: f64, corner_hz: f64) -> Result<f64, FusionError> {
    if !(dt > 0.0 && corner_hz > 0.0 && corner_hz < 1.0 / (2.0 * dt)) {
        return Err(FusionError::FilterParams { dt, corner_hz });
    }
    let rc = 1.0 / (2.0 * PI * corner_hz);
    Ok(dt / (dt + rc))
}

/// First-order IIR low-pass `y += alpha * (x - y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPass {
    pub y: f64,
}

impl LowPass {
    pub fn new(initial: f64) -> Self {
        LowPass { y: initial }
    }

    /// On error the state is left untouched.
    pub fn step(&mut self, x: f64, dt: f64, corner_hz: f64) -> Result<f64, FusionError> {
        if !x.is_finite() || !self.y.is_finite() {
            return Err(FusionError::NonFinite);
        }
        let alpha = lowpass_alpha(dt, corner_hz)?;
        self.y += alpha * (x - self.y);
        Ok(self.y)
    }
}

/// Applies [`LowPass`] to each component.
pub fn iir_lowpass_step(state: &mut Vec3, x: Vec3, dt: f64, corner_hz: f64) -> Result<Vec3, FusionError> {
    if !x.is_finite() || !state.is_finite() {
        return Err(FusionError::NonFinite);
    }
    let alpha = lowpass_alpha(dt, corner_hz)?;
    *state = *state + (x - *state) * alpha;
    Ok(*state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationState {
    /// Low-passed accelerometer (g).
    pub gravity_est: Vec3,
    /// Degrees, negative is head down.
    pub pitch: f64,
    /// Degrees from magnetic north in `[0, 360)`.
    pub heading: f64,
    /// Hard-iron estimate in magnetometer axes.
    pub mag_offset_est: Vec3,
    /// Set when the last heading update was degenerate and the old heading was kept.
    pub heading_held: bool,
    pub last_t: Option<f64>,
}

impl Default for OrientationState {
    fn default() -> Self {
        OrientationState {
            gravity_est: Vec3::new(0.0, 0.0, 1.0),
            pitch: 0.0,
            heading: 0.0,
            mag_offset_est: Vec3::ZERO,
            heading_held: false,
            last_t: None,
        }
    }
}

impl OrientationState {
    pub fn with_mag_offset(offset: Vec3) -> Self {
        OrientationState {
            mag_offset_est: offset,
            ..OrientationState::default()
        }
    }
}

/// Pitch in degrees from a gravity direction in body axes.
pub fn pitch_from_gravity(g: Vec3) -> Option<f64> {
    let g = g.normalized()?;
    Some((-g.x).clamp(-1.0, 1.0).asin().to_degrees())
}

/// Feeds one accelerometer/gyro sample into the gravity filter.
///
/// The first sample seeds the filter. Samples spinning faster than
/// [`GYRO_GATE_DPS`] advance the clock without touching the estimate.
pub fn update_orientation(
    state: &OrientationState,
    s: &SensorSample,
    corner_hz: f64,
) -> Result<OrientationState, FusionError> {
    if !s.is_finite() {
        return Err(FusionError::NonFinite);
    }
    let mut next = *state;
    match state.last_t {
        None => {
            if s.gyro.norm() <= GYRO_GATE_DPS {
                next.gravity_est = s.accel;
            }
        }
        Some(prev) => {
            let dt = s.t - prev;
            if dt <= 0.0 {
                return Err(FusionError::NonMonotonic { prev, next: s.t });
            }
            if s.gyro.norm() <= GYRO_GATE_DPS {
                iir_lowpass_step(&mut next.gravity_est, s.accel, dt, corner_hz)?;
            }
        }
    }
    next.last_t = Some(s.t);
    if let Some(p) = pitch_from_gravity(next.gravity_est) {
        next.pitch = p;
    }
    Ok(next)
}

/// Heading of the body x axis, or `None` when the geometry is degenerate
/// (field or forward axis within 1% of vertical).
pub fn tilt_compensated_heading(gravity: Vec3, mag_body: Vec3) -> Option<f64> {
    let down = gravity.normalized()?;
    let m_norm = mag_body.norm();
    if m_norm == 0.0 || !m_norm.is_finite() {
        return None;
    }
    let m_horizontal = mag_body - down * mag_body.dot(down);
    if m_horizontal.norm() < 0.01 * m_norm {
        return None;
    }
    let forward = Vec3::new(1.0, 0.0, 0.0);
    let forward_horizontal = forward - down * forward.dot(down);
    if forward_horizontal.norm() < 0.01 {
        return None;
    }
    // world axes expressed in the body frame
    let east = down.cross(mag_body).normalized()?;
    let north = east.cross(down);
    let heading = east.x.atan2(north.x).to_degrees();
    Some(wrap_degrees(heading))
}

pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Offset-corrected, tilt-compensated heading update.
pub fn update_heading(state: &OrientationState, s: &SensorSample) -> Result<OrientationState, FusionError> {
    if !s.mag.is_finite() {
        return Err(FusionError::NonFinite);
    }
    let mut next = *state;
    let m_body = mag_to_body(s.mag - state.mag_offset_est);
    match tilt_compensated_heading(state.gravity_est, m_body) {
        Some(h) => {
            next.heading = h;
            next.heading_held = false;
        }
        None => next.heading_held = true,
    }
    Ok(next)
}

/// Yaw coverage of a set of headings: 360 minus the largest gap.
pub fn heading_coverage(headings: &mut [f64]) -> f64 {
    if headings.len() < 2 {
        return 0.0;
    }
    headings.sort_by(f64::total_cmp);
    let mut largest_gap = 360.0 - (headings[headings.len() - 1] - headings[0]);
    for w in headings.windows(2) {
        largest_gap = f64::max(largest_gap, w[1] - w[0]);
    }
    360.0 - largest_gap
}

/// Hard-iron offset as the midpoint of per-axis extremes.
pub fn calibrate_mag_offset(samples: &[SensorSample]) -> Result<Vec3, FusionError> {
    if samples.is_empty() {
        return Err(FusionError::EmptyWindow);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(FusionError::NonFinite);
    }
    let mut lo = samples[0].mag;
    let mut hi = samples[0].mag;
    for s in &samples[1..] {
        lo = Vec3::new(lo.x.min(s.mag.x), lo.y.min(s.mag.y), lo.z.min(s.mag.z));
        hi = Vec3::new(hi.x.max(s.mag.x), hi.y.max(s.mag.y), hi.z.max(s.mag.z));
    }
    let offset = (lo + hi) * 0.5;
    let mut headings: Vec<f64> = samples
        .iter()
        .filter_map(|s| tilt_compensated_heading(s.accel, mag_to_body(s.mag - offset)))
        .collect();
    let coverage = heading_coverage(&mut headings);
    if coverage < MIN_CALIBRATION_COVERAGE_DEG {
        return Err(FusionError::CalibrationCoverage {
            coverage_deg: coverage,
            required_deg: MIN_CALIBRATION_COVERAGE_DEG,
        });
    }
    Ok(offset)
}

/// Mean of `| |a| - 1 g |` over samples with `t > t_last - window`.
pub fn movement_average(samples: &[SensorSample], window: f64) -> Result<f64, FusionError> {
    let last = samples.last().ok_or(FusionError::EmptyWindow)?;
    let start = last.t - window;
    let (sum, n) = samples
        .iter()
        .rev()
        .take_while(|s| s.t > start)
        .fold((0.0, 0usize), |(sum, n), s| (sum + (s.accel.norm() - 1.0).abs(), n + 1));
    if n == 0 {
        return Err(FusionError::EmptyWindow);
    }
    Ok(sum / n as f64)
}

/// Running form of [`movement_average`] for streams that cannot be buffered.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MovementAccumulator {
    sum: f64,
    count: usize,
}

impl MovementAccumulator {
    pub fn push(&mut self, accel: Vec3) {
        self.sum += (accel.norm() - 1.0).abs();
        self.count += 1;
    }

    /// Mean since the last call, resetting the window.
    pub fn take(&mut self) -> Option<f64> {
        let out = (self.count > 0).then(|| self.sum / self.count as f64);
        *self = MovementAccumulator::default();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrazingLabel {
    Grazing,
    NotGrazing,
}

impl fmt::Display for GrazingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GrazingLabel::Grazing => "grazing",
            GrazingLabel::NotGrazing => "not_grazing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrazingState {
    pub label: GrazingLabel,
    pub since: f64,
}

impl Default for GrazingState {
    fn default() -> Self {
        GrazingState {
            label: GrazingLabel::NotGrazing,
            since: 0.0,
        }
    }
}

/// Two-threshold classifier; inside the dead band the previous label holds.
pub fn classify_grazing(state: GrazingState, pitch: f64, t: f64) -> GrazingState {
    let label = if pitch < GRAZING_ENTER_DEG {
        GrazingLabel::Grazing
    } else if pitch > GRAZING_EXIT_DEG {
        GrazingLabel::NotGrazing
    } else {
        state.label
    };
    if label == state.label {
        state
    } else {
        GrazingState { label, since: t }
    }
}

/// Header of the sensor replay format.
pub const SENSOR_CSV_HEADER: &str = "t,ax,ay,az,gx,gy,gz,mx,my,mz";

pub fn format_sensor_row(s: &SensorSample) -> String {
    format!(
        "{:.4},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
        s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z, s.mag.x, s.mag.y, s.mag.z
    )
}

/// Reads a sensor replay CSV; enforces the header and strictly increasing time.
pub fn read_sensor_csv<R: BufRead>(reader: R) -> Result<Vec<SensorSample>, FusionError> {
    let mut out: Vec<SensorSample> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| FusionError::Parse { line: lineno, reason: e.to_string() })?;
        let line = line.trim();
        if idx == 0 {
            if line != SENSOR_CSV_HEADER {
                return Err(FusionError::Parse { line: 1, reason: format!("bad header `{line}`") });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| FusionError::Parse { line: lineno, reason: e.to_string() })?;
        if v.len() != 10 {
            return Err(FusionError::Parse {
                line: lineno,
                reason: format!("expected 10 columns, got {}", v.len()),
            });
        }
        let s = SensorSample {
            t: v[0],
            accel: Vec3::new(v[1], v[2], v[3]),
            gyro: Vec3::new(v[4], v[5], v[6]),
            mag: Vec3::new(v[7], v[8], v[9]),
        };
        if !s.is_finite() {
            return Err(FusionError::Parse { line: lineno, reason: "non-finite value".into() });
        }
        if let Some(prev) = out.last() {
            if s.t <= prev.t {
                return Err(FusionError::NonMonotonic { prev: prev.t, next: s.t });
            }
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(t: f64, accel: Vec3, mag: Vec3) -> SensorSample {
        SensorSample { t, accel, gyro: Vec3::ZERO, mag }
    }

    fn settle(accel: Vec3, seconds: f64) -> OrientationState {
        let mut st = OrientationState::default();
        let dt = 1.0 / 60.0;
        let n = (seconds / dt) as usize;
        for i in 0..n {
            st = update_orientation(&st, &still(i as f64 * dt, accel, Vec3::ZERO), CORNER_HZ).unwrap();
        }
        st
    }

    /// Oracle: rotate a world-frame (NED) vector into body axes for a given
    /// yaw and pitch (zero roll) using explicit rotation matrices.
    fn world_to_body(v: Vec3, yaw_deg: f64, pitch_deg: f64) -> Vec3 {
        let (sy, cy) = yaw_deg.to_radians().sin_cos();
        let (sp, cp) = pitch_deg.to_radians().sin_cos();
        // R = Ry(pitch) * Rz(yaw), transposed for world->body
        let r = [
            [cp * cy, cp * sy, -sp],
            [-sy, cy, 0.0],
            [sp * cy, sp * sy, cp],
        ];
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    #[test]
    fn rotation_oracle_sanity() {
        let down = world_to_body(Vec3::new(0.0, 0.0, 1.0), 0.0, -90.0);
        assert!((down - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let north = world_to_body(Vec3::new(1.0, 0.0, 0.0), 90.0, 0.0);
        // facing east, north is to the left
        assert!((north - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn dc_converges() {
        let mut f = LowPass::new(-3.0);
        let dt = 1.0 / 60.0;
        let tau = 1.0 / (2.0 * PI * CORNER_HZ);
        let steps = (5.0 * tau / dt).ceil() as usize;
        for _ in 0..steps {
            f.step(2.0, dt, CORNER_HZ).unwrap();
        }
        assert!((f.y - 2.0).abs() < 0.01 * 5.0);
    }

    /// Steady-state amplitude after discarding a settling prefix.
    fn sine_gain(freq: f64) -> f64 {
        let dt = 1.0 / 60.0;
        let mut f = LowPass::new(0.0);
        let total = (40.0 / freq / dt) as usize;
        let mut peak: f64 = 0.0;
        for i in 0..total {
            let t = i as f64 * dt;
            let y = f.step((2.0 * PI * freq * t).sin(), dt, CORNER_HZ).unwrap();
            if i > total / 2 {
                peak = peak.max(y.abs());
            }
        }
        peak
    }

    #[test]
    fn corner_gain_is_half_power() {
        let g = sine_gain(CORNER_HZ);
        assert!((g - 1.0 / 2f64.sqrt()).abs() < 0.02 / 2f64.sqrt(), "{g}");
    }

    #[test]
    fn decade_above_corner_attenuates() {
        let g = sine_gain(10.0 * CORNER_HZ);
        assert!(g <= 0.12, "{g}");
    }

    #[test]
    fn non_finite_leaves_state() {
        let mut f = LowPass::new(1.5);
        assert_eq!(f.step(f64::NAN, 0.01, 0.1), Err(FusionError::NonFinite));
        assert_eq!(f.y, 1.5);
        let mut v = Vec3::new(1.0, 2.0, 3.0);
        assert!(iir_lowpass_step(&mut v, Vec3::new(f64::INFINITY, 0.0, 0.0), 0.01, 0.1).is_err());
        assert_eq!(v, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn filter_params_checked() {
        assert!(lowpass_alpha(0.0, 0.1).is_err());
        assert!(lowpass_alpha(0.01, 0.0).is_err());
        assert!(lowpass_alpha(1.0, 0.6).is_err());
    }

    #[test]
    fn pitch_axis_cases() {
        assert!(settle(Vec3::new(0.0, 0.0, 1.0), 10.0).pitch.abs() < 1e-9);
        assert!((settle(Vec3::new(1.0, 0.0, 0.0), 30.0).pitch + 90.0).abs() < 1e-6);
        let a = world_to_body(Vec3::new(0.0, 0.0, 1.0), 0.0, -30.0);
        assert!((a - Vec3::new(0.5, 0.0, 30f64.to_radians().cos())).norm() < 1e-12);
        let st = settle(a, 30.0);
        assert!((st.pitch + 30.0).abs() < 1.0, "{}", st.pitch);
    }

    #[test]
    fn gyro_gate_freezes_gravity() {
        let mut st = settle(Vec3::new(0.0, 0.0, 1.0), 5.0);
        let before = st.gravity_est;
        let t0 = st.last_t.unwrap();
        for i in 1..100 {
            let s = SensorSample {
                t: t0 + i as f64 / 60.0,
                accel: Vec3::new(1.0, 0.0, 0.0),
                gyro: Vec3::new(0.0, 300.0, 0.0),
                mag: Vec3::ZERO,
            };
            st = update_orientation(&st, &s, CORNER_HZ).unwrap();
        }
        assert_eq!(st.gravity_est, before);
    }

    #[test]
    fn non_monotonic_time_rejected() {
        let st = update_orientation(&OrientationState::default(), &still(1.0, Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO), CORNER_HZ).unwrap();
        assert!(matches!(
            update_orientation(&st, &still(1.0, Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO), CORNER_HZ),
            Err(FusionError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn level_heading_cardinal_points() {
        let st = OrientationState::default();
        let north = update_heading(&st, &still(0.0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0))).unwrap();
        assert!(north.heading.abs() < 1e-9);
        let east = update_heading(&st, &still(0.0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0))).unwrap();
        assert!((east.heading - 90.0).abs() < 1e-9, "{}", east.heading);
    }

    #[test]
    fn pitched_heading_recovered() {
        let inclination = 63f64.to_radians();
        let field = Vec3::new(inclination.cos(), 0.0, inclination.sin()) * 48.0;
        let offset = Vec3::new(12.0, -7.0, 4.0);
        for &(yaw, pitch) in &[(137.0, 30.0), (137.0, -30.0), (10.0, -45.0), (300.0, 20.0)] {
            let gravity = world_to_body(Vec3::new(0.0, 0.0, 1.0), yaw, pitch);
            let mag = body_to_mag(world_to_body(field, yaw, pitch)) + offset;
            let mut st = OrientationState::with_mag_offset(offset);
            st.gravity_est = gravity;
            let st = update_heading(&st, &still(0.0, gravity, mag)).unwrap();
            let err = (st.heading - yaw + 540.0).rem_euclid(360.0) - 180.0;
            assert!(err.abs() < 2.0, "yaw {yaw} pitch {pitch}: {}", st.heading);
        }
    }

    #[test]
    fn vertical_device_holds_heading() {
        let mut st = OrientationState::default();
        st.heading = 42.0;
        st.gravity_est = Vec3::new(1.0, 0.0, 0.0);
        let out = update_heading(&st, &still(0.0, st.gravity_est, Vec3::new(0.3, 0.5, 0.1))).unwrap();
        assert!(out.heading_held);
        assert_eq!(out.heading, 42.0);
    }

    fn circle(center: Vec3, radius: f64, n: usize) -> Vec<SensorSample> {
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                still(
                    i as f64,
                    Vec3::new(0.0, 0.0, 1.0),
                    center + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0),
                )
            })
            .collect()
    }

    #[test]
    fn hard_iron_offset_from_circle() {
        let c = Vec3::new(30.0, -12.0, 5.0);
        let off = calibrate_mag_offset(&circle(c, 40.0, 360)).unwrap();
        assert!((off.x - c.x).abs() <= 0.01 * c.x.abs());
        assert!((off.y - c.y).abs() <= 0.01 * c.y.abs());
        assert!((off.z - c.z).abs() <= 0.01 * c.z.abs());
        let zero = calibrate_mag_offset(&circle(Vec3::ZERO, 40.0, 360)).unwrap();
        assert!(zero.norm() < 1e-9);
    }

    #[test]
    fn identical_samples_fail_coverage() {
        let s = vec![still(0.0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(3.0, 2.0, 1.0)); 50];
        assert!(matches!(
            calibrate_mag_offset(&s),
            Err(FusionError::CalibrationCoverage { .. })
        ));
    }

    #[test]
    fn half_turn_fails_coverage() {
        let s: Vec<_> = circle(Vec3::ZERO, 40.0, 360).into_iter().take(180).collect();
        assert!(calibrate_mag_offset(&s).is_err());
    }

    #[test]
    fn movement_cases() {
        let s: Vec<_> = (0..60).map(|i| still(i as f64, Vec3::new(0.0, 0.0, 1.0), Vec3::ZERO)).collect();
        assert_eq!(movement_average(&s, 60.0).unwrap(), 0.0);
        let s: Vec<_> = (0..60)
            .map(|i| still(i as f64, Vec3::new(0.0, 0.0, if i % 2 == 0 { 0.8 } else { 1.2 }), Vec3::ZERO))
            .collect();
        assert!((movement_average(&s, 100.0).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(movement_average(&[], 1.0), Err(FusionError::EmptyWindow));
    }

    #[test]
    fn walking_bout_movement() {
        // mean |0.3 sin| = 2*0.3/pi
        let s: Vec<_> = (0..60 * 60)
            .map(|i| {
                let t = i as f64 / 60.0;
                let mag = 1.0 + 0.3 * (2.0 * PI * 2.0 * t).sin();
                still(t, Vec3::new(0.0, 0.0, mag), Vec3::ZERO)
            })
            .collect();
        let m = movement_average(&s, 60.0).unwrap();
        let expected = 2.0 * 0.3 / PI;
        assert!((m - expected).abs() < 0.05 * expected, "{m}");
        let mut acc = MovementAccumulator::default();
        s.iter().for_each(|x| acc.push(x.accel));
        assert!((acc.take().unwrap() - m).abs() < 1e-3);
        assert_eq!(acc.take(), None);
    }

    #[test]
    fn grazing_thresholds() {
        let g = GrazingState { label: GrazingLabel::Grazing, since: 0.0 };
        let n = GrazingState { label: GrazingLabel::NotGrazing, since: 0.0 };
        for s in [g, n] {
            assert_eq!(classify_grazing(s, -25.0, 1.0).label, GrazingLabel::Grazing);
            assert_eq!(classify_grazing(s, -5.0, 1.0).label, GrazingLabel::NotGrazing);
        }
        assert_eq!(classify_grazing(g, -15.0, 1.0), g);
        assert_eq!(classify_grazing(n, -15.0, 1.0), n);
        assert_eq!(classify_grazing(n, -20.0, 1.0), n);
        assert_eq!(classify_grazing(g, -10.0, 1.0), g);
        assert_eq!(classify_grazing(n, -21.0, 7.0).since, 7.0);
    }

    #[test]
    fn sensor_csv_round_trip() {
        let samples: Vec<_> = (0..5)
            .map(|i| SensorSample {
                t: i as f64 * 0.5,
                accel: Vec3::new(0.1, -0.2, 0.97),
                gyro: Vec3::new(1.0, 2.0, 3.0),
                mag: Vec3::new(20.0, -3.5, 40.25),
            })
            .collect();
        let mut text = format!("{SENSOR_CSV_HEADER}\n");
        for s in &samples {
            text.push_str(&format_sensor_row(s));
            text.push('\n');
        }
        assert_eq!(read_sensor_csv(text.as_bytes()).unwrap(), samples);
        assert!(read_sensor_csv("t,ax\n".as_bytes()).is_err());
        let backwards = format!("{SENSOR_CSV_HEADER}\n1,0,0,1,0,0,0,1,0,0\n0.5,0,0,1,0,0,0,1,0,0\n");
        assert!(matches!(
            read_sensor_csv(backwards.as_bytes()),
            Err(FusionError::NonMonotonic { .. })
        ));
    }
}
