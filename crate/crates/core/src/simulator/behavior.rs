//! Semi-Markov behaviour model of one animal and the follower derivation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::pasture::{reflect_across, Pasture, Point};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Resting,
    Grazing,
    Walking,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Resting, Mode::Grazing, Mode::Walking];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Resting => "resting",
            Mode::Grazing => "grazing",
            Mode::Walking => "walking",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown mode `{s}`")))
    }
}

/// Parameters of one behavioural mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeParams {
    pub dwell_mean_s: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pitch_mean_deg: f64,
    pub pitch_sd_deg: f64,
    /// Heading diffusion of the correlated random walk, rad/sqrt(s).
    pub turn_sd: f64,
    /// Relative probabilities of the next mode (resting, grazing, walking).
    pub next: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorParams {
    pub resting: ModeParams,
    pub grazing: ModeParams,
    pub walking: ModeParams,
    /// Relaxation time of the head pitch towards the mode mean.
    pub pitch_tau_s: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        BehaviorParams {
            resting: ModeParams {
                dwell_mean_s: 90.0 * 60.0,
                speed_min: 0.0,
                speed_max: 0.05,
                pitch_mean_deg: -5.0,
                pitch_sd_deg: 5.0,
                turn_sd: 0.2,
                next: [0.0, 0.7, 0.3],
            },
            grazing: ModeParams {
                dwell_mean_s: 40.0 * 60.0,
                speed_min: 0.05,
                speed_max: 0.3,
                pitch_mean_deg: -30.0,
                pitch_sd_deg: 5.0,
                turn_sd: 0.08,
                next: [0.4, 0.0, 0.6],
            },
            walking: ModeParams {
                dwell_mean_s: 5.0 * 60.0,
                speed_min: 0.3,
                // 130 m in 5 minutes
                speed_max: 0.43,
                pitch_mean_deg: -5.0,
                pitch_sd_deg: 8.0,
                turn_sd: 0.03,
                next: [0.3, 0.7, 0.0],
            },
            pitch_tau_s: 20.0,
        }
    }
}

impl BehaviorParams {
    pub fn mode(&self, m: Mode) -> &ModeParams {
        match m {
            Mode::Resting => &self.resting,
            Mode::Grazing => &self.grazing,
            Mode::Walking => &self.walking,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for m in Mode::ALL {
            let p = self.mode(m);
            let bad = |what: &str| Err(SimError::Config(format!("behavior.{m}: {what}")));
            if !(p.dwell_mean_s > 0.0) {
                return bad("dwell_mean_s must be positive");
            }
            if !(p.speed_min >= 0.0 && p.speed_max >= p.speed_min && p.speed_max.is_finite()) {
                return bad("need 0 <= speed_min <= speed_max");
            }
            if !(p.pitch_sd_deg >= 0.0 && p.pitch_mean_deg.abs() <= 90.0) {
                return bad("invalid pitch distribution");
            }
            if !(p.turn_sd >= 0.0) {
                return bad("turn_sd must be non-negative");
            }
            if p.next.iter().any(|w| !(*w >= 0.0)) || p.next.iter().sum::<f64>() <= 0.0 {
                return bad("transition weights must be non-negative with a positive sum");
            }
        }
        if !(self.grazing.pitch_mean_deg < -20.0) {
            return Err(SimError::Config("grazing pitch mean must be below -20 deg".into()));
        }
        for m in [Mode::Resting, Mode::Walking] {
            if !(self.mode(m).pitch_mean_deg > -10.0) {
                return Err(SimError::Config(format!("{m} pitch mean must be above -10 deg")));
            }
        }
        if !(self.pitch_tau_s > 0.0) {
            return Err(SimError::Config("pitch_tau_s must be positive".into()));
        }
        Ok(())
    }
}

/// State carried between behaviour steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimalState {
    pub mode: Mode,
    pub dwell_left_s: f64,
    pub position: Point,
    /// Direction of travel and of the body axis, radians clockwise from north.
    pub heading: f64,
    pub speed: f64,
    pub pitch_deg: f64,
}

/// Ground-truth pose at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthPoint {
    /// Seconds since simulation start.
    pub t: f64,
    pub position: Point,
    pub mode: Mode,
    pub pitch_deg: f64,
    /// Body yaw in degrees from north.
    pub yaw_deg: f64,
    pub speed: f64,
}

impl AnimalState {
    pub fn pose(&self, t: f64) -> TruthPoint {
        TruthPoint {
            t,
            position: self.position,
            mode: self.mode,
            pitch_deg: self.pitch_deg,
            yaw_deg: self.heading.to_degrees().rem_euclid(360.0),
            speed: self.speed,
        }
    }
}

fn draw_speed<R: Rng + ?Sized>(p: &ModeParams, rng: &mut R) -> f64 {
    if p.speed_max > p.speed_min {
        rng.random_range(p.speed_min..=p.speed_max)
    } else {
        p.speed_min
    }
}

fn draw_dwell<R: Rng + ?Sized>(p: &ModeParams, rng: &mut R) -> f64 {
    Exp::new(1.0 / p.dwell_mean_s).expect("positive rate").sample(rng)
}

fn draw_next<R: Rng + ?Sized>(p: &ModeParams, rng: &mut R) -> Mode {
    let total: f64 = p.next.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (m, w) in Mode::ALL.into_iter().zip(p.next) {
        if u < w {
            return m;
        }
        u -= w;
    }
    // rounding fallthrough: last mode with positive weight
    Mode::ALL
        .into_iter()
        .zip(p.next)
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(m, _)| m)
        .unwrap_or(Mode::Resting)
}

/// Stationary draw for a fresh animal.
pub fn initial_state<R: Rng + ?Sized>(params: &BehaviorParams, position: Point, rng: &mut R) -> AnimalState {
    let mode = Mode::Resting;
    let p = params.mode(mode);
    AnimalState {
        mode,
        dwell_left_s: draw_dwell(p, rng),
        position,
        heading: rng.random_range(0.0..std::f64::consts::TAU),
        speed: draw_speed(p, rng),
        pitch_deg: p.pitch_mean_deg,
    }
}

/// Ornstein-Uhlenbeck update of the head pitch towards the mode mean.
fn relax_pitch<R: Rng + ?Sized>(pitch: f64, p: &ModeParams, tau: f64, dt: f64, rng: &mut R) -> f64 {
    let decay = (-dt / tau).exp();
    let z: f64 = StandardNormal.sample(rng);
    let next = p.pitch_mean_deg + (pitch - p.pitch_mean_deg) * decay + p.pitch_sd_deg * (1.0 - decay * decay).sqrt() * z;
    next.clamp(-90.0, 90.0)
}

/// Moves the animal from `from` by `step` meters along `heading`, mirroring
/// at fences. Returns the new position and heading.
fn constrained_move(pasture: &Pasture, from: Point, heading: f64, step: f64) -> (Point, f64) {
    let target = Point::new(from.x + step * heading.sin(), from.y + step * heading.cos());
    if pasture.contains(target) {
        return (target, heading);
    }
    if let Some((a, b)) = pasture.blocking_edge(from, target) {
        let mirrored = reflect_across(target, a, b);
        if pasture.contains(mirrored) {
            let new_heading = (mirrored.x - from.x).atan2(mirrored.y - from.y);
            // keep the reflected direction of travel, not the chord
            let d = Point::new(target.x - from.x, target.y - from.y);
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let len2 = ex * ex + ey * ey;
            let along = (d.x * ex + d.y * ey) / len2;
            let rx = 2.0 * along * ex - d.x;
            let ry = 2.0 * along * ey - d.y;
            let reflected = if rx == 0.0 && ry == 0.0 { new_heading } else { rx.atan2(ry) };
            return (mirrored, reflected);
        }
    }
    (from, heading + std::f64::consts::PI)
}

/// Advances one animal by `dt` seconds.
pub fn step_behavior<R: Rng + ?Sized>(
    state: &mut AnimalState,
    params: &BehaviorParams,
    pasture: &Pasture,
    dt: f64,
    rng: &mut R,
) -> Result<(), SimError> {
    if !(dt > 0.0) {
        return Err(SimError::Config(format!("behaviour step {dt} must be positive")));
    }
    state.dwell_left_s -= dt;
    if state.dwell_left_s <= 0.0 {
        let next = draw_next(params.mode(state.mode), rng);
        let p = params.mode(next);
        state.mode = next;
        state.dwell_left_s = draw_dwell(p, rng).max(dt);
        state.speed = draw_speed(p, rng);
    }
    let p = params.mode(state.mode);
    let turn: f64 = StandardNormal.sample(rng);
    state.heading += p.turn_sd * dt.sqrt() * turn;
    if state.speed > 0.0 {
        let (pos, heading) = constrained_move(pasture, state.position, state.heading, state.speed * dt);
        state.position = pos;
        state.heading = heading;
    }
    state.heading = state.heading.rem_euclid(std::f64::consts::TAU);
    state.pitch_deg = relax_pitch(state.pitch_deg, p, params.pitch_tau_s, dt, rng);
    Ok(())
}

/// A sampled ground-truth path on a uniform time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub points: Vec<TruthPoint>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.points.len().saturating_sub(1) as f64 * self.dt
    }

    /// Pose at or immediately before `t`, clamped to the ends.
    pub fn at(&self, t: f64) -> &TruthPoint {
        let i = (t / self.dt).floor().max(0.0) as usize;
        &self.points[i.min(self.points.len() - 1)]
    }

    /// Pitch linearly interpolated between steps.
    pub fn pitch_at(&self, t: f64) -> f64 {
        let x = (t / self.dt).max(0.0);
        let i = (x.floor() as usize).min(self.points.len() - 1);
        let j = (i + 1).min(self.points.len() - 1);
        let frac = (x - i as f64).clamp(0.0, 1.0);
        self.points[i].pitch_deg * (1.0 - frac) + self.points[j].pitch_deg * frac
    }

    /// Mode occupying most of `[t0, t1)`; ties go to the earlier mode in
    /// [`Mode::ALL`].
    pub fn dominant_mode(&self, t0: f64, t1: f64) -> Mode {
        let mut time = [0.0; 3];
        for w in self.points.windows(2) {
            let overlap = w[1].t.min(t1) - w[0].t.max(t0);
            if overlap > 0.0 {
                let i = Mode::ALL.iter().position(|m| *m == w[0].mode).unwrap_or(0);
                time[i] += overlap;
            }
        }
        let mut best = 0;
        for i in 1..3 {
            if time[i] > time[best] {
                best = i;
            }
        }
        Mode::ALL[best]
    }

    /// Seconds spent in `mode`, counting each step by its starting mode.
    pub fn time_in(&self, mode: Mode) -> f64 {
        self.points
            .windows(2)
            .filter(|w| w[0].mode == mode)
            .map(|w| w[1].t - w[0].t)
            .sum()
    }
}

/// Simulates `duration` seconds on a `dt` grid.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    params: &BehaviorParams,
    pasture: &Pasture,
    start: Point,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    if !pasture.contains(start) {
        return Err(SimError::Config("start position outside the pasture".into()));
    }
    let n = (duration / dt).ceil() as usize;
    let mut state = initial_state(params, start, rng);
    let mut points = Vec::with_capacity(n + 1);
    points.push(state.pose(0.0));
    for i in 1..=n {
        step_behavior(&mut state, params, pasture, dt, rng)?;
        points.push(state.pose(i as f64 * dt));
    }
    Ok(Trajectory { dt, points })
}

/// How closely a follower tracks its leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FollowParams {
    pub lag_s: f64,
    /// Stationary standard deviation of the positional offset, per axis.
    pub jitter_m: f64,
    /// Correlation time of the offset.
    pub jitter_tau_s: f64,
    /// Width of the centered moving average applied to the leader path.
    pub smoothing_s: f64,
}

impl Default for FollowParams {
    fn default() -> Self {
        FollowParams {
            lag_s: 1200.0,
            jitter_m: 1.5,
            jitter_tau_s: 300.0,
            smoothing_s: 60.0,
        }
    }
}

/// Centered moving average of positions; falls back to the raw point when
/// the average leaves the pasture.
pub fn smooth_path(leader: &Trajectory, window_s: f64, pasture: &Pasture) -> Vec<Point> {
    let half = ((window_s / leader.dt) / 2.0).floor() as usize;
    let pts = &leader.points;
    if half == 0 {
        return pts.iter().map(|p| p.position).collect();
    }
    let n = pts.len();
    let mut prefix_x = vec![0.0; n + 1];
    let mut prefix_y = vec![0.0; n + 1];
    for (i, p) in pts.iter().enumerate() {
        prefix_x[i + 1] = prefix_x[i] + p.position.x;
        prefix_y[i + 1] = prefix_y[i] + p.position.y;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let k = (hi - lo) as f64;
            let avg = Point::new((prefix_x[hi] - prefix_x[lo]) / k, (prefix_y[hi] - prefix_y[lo]) / k);
            if pasture.contains(avg) {
                avg
            } else {
                pts[i].position
            }
        })
        .collect()
}

/// Derives a follower that repeats the leader's modes and smoothed path
/// `lag_s` later, with its own head-pitch noise and a slowly drifting
/// positional offset. Before the lag has elapsed the follower waits at
/// the leader's starting pose.
pub fn follow_behavior<R: Rng + ?Sized>(
    leader: &Trajectory,
    follow: &FollowParams,
    params: &BehaviorParams,
    pasture: &Pasture,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    if !(follow.lag_s >= 0.0) {
        return Err(SimError::Config("follow lag must be non-negative".into()));
    }
    if follow.lag_s >= leader.duration() {
        return Err(SimError::Config(format!(
            "follow lag {} s exceeds trajectory length {} s",
            follow.lag_s,
            leader.duration()
        )));
    }
    if !(follow.jitter_m >= 0.0 && follow.jitter_tau_s > 0.0 && follow.smoothing_s >= 0.0) {
        return Err(SimError::Config("invalid follow jitter or smoothing".into()));
    }
    let smoothed = smooth_path(leader, follow.smoothing_s, pasture);
    let lag_steps = (follow.lag_s / leader.dt).round() as usize;
    let decay = (-leader.dt / follow.jitter_tau_s).exp();
    let kick = follow.jitter_m * (1.0 - decay * decay).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut offset = Point::new(
        follow.jitter_m * normal.sample(rng),
        follow.jitter_m * normal.sample(rng),
    );
    let mut pitch = leader.points[0].pitch_deg;
    let mut points = Vec::with_capacity(leader.points.len());
    for (i, own) in leader.points.iter().enumerate() {
        let src = i.saturating_sub(lag_steps);
        let lead = &leader.points[src];
        if i > 0 {
            offset = Point::new(
                offset.x * decay + kick * normal.sample(rng),
                offset.y * decay + kick * normal.sample(rng),
            );
            pitch = relax_pitch(pitch, params.mode(lead.mode), params.pitch_tau_s, leader.dt, rng);
        }
        let base = smoothed[src];
        let jittered = Point::new(base.x + offset.x, base.y + offset.y);
        let position = if follow.jitter_m > 0.0 && pasture.contains(jittered) {
            jittered
        } else {
            base
        };
        points.push(TruthPoint {
            t: own.t,
            position,
            mode: lead.mode,
            pitch_deg: pitch,
            yaw_deg: lead.yaw_deg,
            speed: if i < lag_steps { 0.0 } else { lead.speed },
        });
    }
    Ok(Trajectory { dt: leader.dt, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn defaults_validate() {
        BehaviorParams::default().validate().unwrap();
        let mut p = BehaviorParams::default();
        p.grazing.pitch_mean_deg = -15.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn still_animal_stays_put() {
        let pasture = Pasture::default_alpine();
        let mut params = BehaviorParams::default();
        params.resting.speed_max = 0.0;
        params.resting.dwell_mean_s = 1e12;
        let mut r = rng(1);
        let start = pasture.interior_point().unwrap();
        let mut st = initial_state(&params, start, &mut r);
        st.dwell_left_s = 1e12;
        for _ in 0..1000 {
            step_behavior(&mut st, &params, &pasture, 1.0, &mut r).unwrap();
        }
        assert_eq!(st.position, start);
        assert_eq!(st.mode, Mode::Resting);
    }

    #[test]
    fn grazing_pitch_mostly_below_threshold() {
        // N(-30, 5): P(pitch < -20) = Phi(2) = 0.977
        let pasture = Pasture::default_alpine();
        let params = BehaviorParams::default();
        let mut r = rng(2);
        let mut st = initial_state(&params, pasture.interior_point().unwrap(), &mut r);
        st.mode = Mode::Grazing;
        st.pitch_deg = -30.0;
        let mut below = 0;
        let n = 20_000;
        for _ in 0..n {
            st.dwell_left_s = 1e9;
            step_behavior(&mut st, &params, &pasture, 1.0, &mut r).unwrap();
            if st.pitch_deg < -20.0 {
                below += 1;
            }
        }
        assert!(below as f64 / n as f64 >= 0.9, "{below}");
    }

    #[test]
    fn twelve_hours_inside_the_fence() {
        let pasture = Pasture::default_alpine();
        let mut params = BehaviorParams::default();
        // keep the animal moving to stress the reflection
        params.walking.dwell_mean_s = 3600.0;
        let traj = simulate_trajectory(&params, &pasture, pasture.interior_point().unwrap(), 12.0 * 3600.0, 1.0, &mut rng(3)).unwrap();
        assert!(traj.points.iter().all(|p| pasture.contains(p.position)));
        assert!(Mode::ALL.iter().map(|m| traj.time_in(*m)).sum::<f64>() - 12.0 * 3600.0 < 1e-6);
    }

    #[test]
    fn five_minute_displacement_bounded() {
        let pasture = Pasture::default_alpine();
        let traj = simulate_trajectory(&BehaviorParams::default(), &pasture, pasture.interior_point().unwrap(), 24.0 * 3600.0, 1.0, &mut rng(4)).unwrap();
        for w in traj.points.chunks(300) {
            let d = w[0].position.dist(w[w.len() - 1].position);
            assert!(d <= 130.0, "{d}");
        }
    }

    #[test]
    fn follower_without_lag_or_jitter_matches() {
        let pasture = Pasture::default_alpine();
        let params = BehaviorParams::default();
        let leader = simulate_trajectory(&params, &pasture, pasture.interior_point().unwrap(), 4.0 * 3600.0, 1.0, &mut rng(5)).unwrap();
        let f = FollowParams { lag_s: 0.0, jitter_m: 0.0, jitter_tau_s: 1.0, smoothing_s: 0.0 };
        let follower = follow_behavior(&leader, &f, &params, &pasture, &mut rng(6)).unwrap();
        assert!(leader.points.iter().zip(&follower.points).all(|(a, b)| a.mode == b.mode && a.position == b.position));
    }

    #[test]
    fn follower_is_time_shift_of_smoothed_leader() {
        let pasture = Pasture::default_alpine();
        let params = BehaviorParams::default();
        let leader = simulate_trajectory(&params, &pasture, pasture.interior_point().unwrap(), 4.0 * 3600.0, 1.0, &mut rng(7)).unwrap();
        let f = FollowParams { lag_s: 1200.0, jitter_m: 0.0, jitter_tau_s: 1.0, smoothing_s: 60.0 };
        let follower = follow_behavior(&leader, &f, &params, &pasture, &mut rng(8)).unwrap();
        let smoothed = smooth_path(&leader, 60.0, &pasture);
        for i in 1200..leader.points.len() {
            assert_eq!(follower.points[i].position, smoothed[i - 1200]);
            assert_eq!(follower.points[i].mode, leader.points[i - 1200].mode);
        }
    }

    #[test]
    fn lag_longer_than_trajectory_rejected() {
        let pasture = Pasture::default_alpine();
        let params = BehaviorParams::default();
        let leader = simulate_trajectory(&params, &pasture, pasture.interior_point().unwrap(), 600.0, 1.0, &mut rng(9)).unwrap();
        let f = FollowParams { lag_s: 601.0, ..FollowParams::default() };
        assert!(follow_behavior(&leader, &f, &params, &pasture, &mut rng(10)).is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let pasture = Pasture::default_alpine();
        let params = BehaviorParams::default();
        let start = pasture.interior_point().unwrap();
        let a = simulate_trajectory(&params, &pasture, start, 3600.0, 1.0, &mut rng(11)).unwrap();
        let b = simulate_trajectory(&params, &pasture, start, 3600.0, 1.0, &mut rng(11)).unwrap();
        assert_eq!(a, b);
    }
}
