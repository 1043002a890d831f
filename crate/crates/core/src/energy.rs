//! Energy budget, battery and harvest models, lifetime prediction and the
//! per-device ledger the firmware simulation accrues into.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const HOURS_PER_DAY: f64 = 24.0;

pub const LORAWAN: &str = "lorawan";
pub const GNSS: &str = "gnss";
pub const ACCELEROMETER: &str = "accelerometer";
pub const MAGNETOMETER: &str = "magnetometer";
pub const MCU: &str = "mcu";

/// Battery capacity of the tracker.
pub const BATTERY_CAPACITY_AH: f64 = 5.2;
/// Li-ion nominal cell voltage used for the Ah to J conversion.
pub const BATTERY_NOMINAL_V: f64 = 3.7;
/// Measured average solar income of the four cells.
pub const HARVEST_J_PER_DAY: f64 = 184.9;
pub const HARVEST_REFERENCE_AREA_CM2: f64 = 7.36;
pub const DEFAULT_HARVEST_EFFICIENCY: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("no subsystem budgets given")]
    Empty,
    #[error("negative energy for `{0}`")]
    Negative(String),
    #[error("unknown subsystem `{0}`")]
    UnknownSubsystem(String),
    #[error("event {event} does not apply to subsystem `{subsystem}`")]
    EventMismatch { subsystem: String, event: &'static str },
    #[error("negative event duration {0}")]
    NegativeDuration(f64),
    #[error("harvest income must be positive")]
    ZeroIncome,
    #[error("invalid model parameter: {0}")]
    Parameter(String),
}

/// How long a subsystem is active per hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActiveTime {
    SecondsPerHour(f64),
    /// Always on, sampling at the given rate.
    Continuous { rate_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemBudget {
    pub name: String,
    pub active: ActiveTime,
    pub energy_j_per_hour: f64,
}

impl SubsystemBudget {
    pub fn new(name: &str, active: ActiveTime, energy_j_per_hour: f64) -> Self {
        SubsystemBudget {
            name: name.to_string(),
            active,
            energy_j_per_hour,
        }
    }

    /// Energy for one unit of activity: joules per active second, or per
    /// sample for continuous sensors.
    pub fn unit_energy(&self) -> f64 {
        match self.active {
            ActiveTime::SecondsPerHour(s) if s > 0.0 => self.energy_j_per_hour / s,
            ActiveTime::SecondsPerHour(_) => 0.0,
            ActiveTime::Continuous { rate_hz } => self.energy_j_per_hour / (rate_hz * SECONDS_PER_HOUR),
        }
    }
}

/// Measured hourly consumption of each subsystem at the 15-minute baseline.
pub fn reference_budgets() -> Vec<SubsystemBudget> {
    vec![
        SubsystemBudget::new(LORAWAN, ActiveTime::SecondsPerHour(0.2), 0.024),
        SubsystemBudget::new(GNSS, ActiveTime::SecondsPerHour(4.0 * 25.0), 11.53),
        SubsystemBudget::new(ACCELEROMETER, ActiveTime::Continuous { rate_hz: 60.0 }, 0.216),
        SubsystemBudget::new(MAGNETOMETER, ActiveTime::Continuous { rate_hz: 20.0 }, 2.43),
        SubsystemBudget::new(MCU, ActiveTime::SecondsPerHour(70.0), 7.13),
    ]
}

/// Joules per day for a set of hourly budgets.
pub fn daily_consumption(budgets: &[SubsystemBudget]) -> Result<f64, EnergyError> {
    if budgets.is_empty() {
        return Err(EnergyError::Empty);
    }
    let mut per_hour = 0.0;
    for b in budgets {
        if !(b.energy_j_per_hour >= 0.0) {
            return Err(EnergyError::Negative(b.name.clone()));
        }
        per_hour += b.energy_j_per_hour;
    }
    Ok(HOURS_PER_DAY * per_hour)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryModel {
    pub capacity_ah: f64,
    pub nominal_voltage_v: f64,
    pub state_of_charge: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        BatteryModel {
            capacity_ah: BATTERY_CAPACITY_AH,
            nominal_voltage_v: BATTERY_NOMINAL_V,
            state_of_charge: 1.0,
        }
    }
}

impl BatteryModel {
    pub fn new(capacity_ah: f64, nominal_voltage_v: f64, state_of_charge: f64) -> Result<Self, EnergyError> {
        let b = BatteryModel {
            capacity_ah,
            nominal_voltage_v,
            state_of_charge,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.capacity_ah > 0.0 && self.nominal_voltage_v > 0.0 && self.energy_j().is_finite()) {
            return Err(EnergyError::Parameter("battery capacity and voltage must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.state_of_charge) {
            return Err(EnergyError::Parameter(format!(
                "state of charge {} outside [0, 1]",
                self.state_of_charge
            )));
        }
        Ok(())
    }

    /// Full-charge energy.
    pub fn energy_j(&self) -> f64 {
        self.capacity_ah * self.nominal_voltage_v * SECONDS_PER_HOUR
    }

    pub fn stored_j(&self) -> f64 {
        self.energy_j() * self.state_of_charge
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestModel {
    /// Income at the reference cell area.
    pub daily_income_j: f64,
    pub reference_area_cm2: f64,
    pub conversion_efficiency: f64,
    pub area_scale: f64,
}

impl Default for HarvestModel {
    fn default() -> Self {
        HarvestModel {
            daily_income_j: HARVEST_J_PER_DAY,
            reference_area_cm2: HARVEST_REFERENCE_AREA_CM2,
            conversion_efficiency: DEFAULT_HARVEST_EFFICIENCY,
            area_scale: 1.0,
        }
    }
}

impl HarvestModel {
    pub fn with_efficiency(mut self, efficiency: f64) -> Self {
        self.conversion_efficiency = efficiency;
        self
    }

    pub fn with_area_scale(mut self, scale: f64) -> Self {
        self.area_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if !(self.daily_income_j >= 0.0) {
            return Err(EnergyError::Parameter("daily income must be non-negative".into()));
        }
        if !(self.conversion_efficiency > 0.0 && self.conversion_efficiency <= 1.0) {
            return Err(EnergyError::Parameter(format!(
                "conversion efficiency {} outside (0, 1]",
                self.conversion_efficiency
            )));
        }
        if !(self.area_scale > 0.0) {
            return Err(EnergyError::Parameter("area scale must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_income_j_per_day(&self) -> f64 {
        self.daily_income_j * self.area_scale * self.conversion_efficiency
    }

    pub fn cell_area_cm2(&self) -> f64 {
        self.reference_area_cm2 * self.area_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lifetime {
    Days(f64),
    /// Harvest covers consumption.
    SelfSustaining,
}

impl Lifetime {
    pub fn days(self) -> Option<f64> {
        match self {
            Lifetime::Days(d) => Some(d),
            Lifetime::SelfSustaining => None,
        }
    }
}

/// Days from a full battery until depletion.
pub fn battery_lifetime_days(
    battery: &BatteryModel,
    consumption_j_per_day: f64,
    harvest: Option<&HarvestModel>,
) -> Result<Lifetime, EnergyError> {
    battery.validate()?;
    if !(consumption_j_per_day > 0.0) {
        return Err(EnergyError::Parameter("consumption must be positive".into()));
    }
    let income = match harvest {
        Some(h) => {
            h.validate()?;
            h.effective_income_j_per_day()
        }
        None => 0.0,
    };
    let net = consumption_j_per_day - income;
    if net <= 0.0 {
        return Ok(Lifetime::SelfSustaining);
    }
    Ok(Lifetime::Days(battery.energy_j() / net))
}

/// Cell-area multiple at which income equals consumption.
pub fn self_sustainability_area_factor(consumption_j_per_day: f64, harvest: &HarvestModel) -> Result<f64, EnergyError> {
    let income = harvest.daily_income_j * harvest.conversion_efficiency;
    if !(income > 0.0) {
        return Err(EnergyError::ZeroIncome);
    }
    Ok(consumption_j_per_day / income)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargeTrace {
    /// State of charge at the start of day 0 followed by the end of each day.
    pub soc: Vec<f64>,
    /// First day (1-based) that ends with an empty battery.
    pub depleted_on_day: Option<u32>,
}

/// Day-resolution Euler integration of the state of charge.
pub fn simulate_charge(
    battery: &BatteryModel,
    days: u32,
    consumption_j_per_day: f64,
    harvest: Option<&HarvestModel>,
) -> Result<ChargeTrace, EnergyError> {
    battery.validate()?;
    if !(consumption_j_per_day >= 0.0) {
        return Err(EnergyError::Parameter("consumption must be non-negative".into()));
    }
    let income = match harvest {
        Some(h) => {
            h.validate()?;
            h.effective_income_j_per_day()
        }
        None => 0.0,
    };
    let delta = (income - consumption_j_per_day) / battery.energy_j();
    let mut soc = battery.state_of_charge;
    let mut trace = ChargeTrace {
        soc: Vec::with_capacity(days as usize + 1),
        depleted_on_day: None,
    };
    trace.soc.push(soc);
    for day in 1..=days {
        soc = (soc + delta).clamp(0.0, 1.0);
        trace.soc.push(soc);
        if soc <= 0.0 && trace.depleted_on_day.is_none() {
            trace.depleted_on_day = Some(day);
        }
    }
    Ok(trace)
}

/// Activity reported by the firmware simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyEvent {
    /// Radio on air for the given seconds.
    Tx { airtime_s: f64 },
    GnssFix { duration_s: f64 },
    /// One sample of a continuously running sensor.
    SensorTick,
    McuActive { duration_s: f64 },
}

impl EnergyEvent {
    fn name(&self) -> &'static str {
        match self {
            EnergyEvent::Tx { .. } => "tx",
            EnergyEvent::GnssFix { .. } => "gnss_fix",
            EnergyEvent::SensorTick => "sensor_tick",
            EnergyEvent::McuActive { .. } => "mcu_active",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tally {
    budget: SubsystemBudget,
    active_s: f64,
    ticks: u64,
    joules: f64,
}

/// Per-subsystem energy tallies of one simulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    tallies: BTreeMap<String, Tally>,
}

impl Default for EnergyLedger {
    fn default() -> Self {
        EnergyLedger::new(&reference_budgets())
    }
}

impl EnergyLedger {
    /// Per-unit rates are derived from the hourly budgets.
    pub fn new(budgets: &[SubsystemBudget]) -> Self {
        let tallies = budgets
            .iter()
            .map(|b| {
                (
                    b.name.clone(),
                    Tally {
                        budget: b.clone(),
                        active_s: 0.0,
                        ticks: 0,
                        joules: 0.0,
                    },
                )
            })
            .collect();
        EnergyLedger { tallies }
    }

    pub fn accrue(&mut self, subsystem: &str, event: EnergyEvent) -> Result<f64, EnergyError> {
        let tally = self
            .tallies
            .get_mut(subsystem)
            .ok_or_else(|| EnergyError::UnknownSubsystem(subsystem.to_string()))?;
        let continuous = matches!(tally.budget.active, ActiveTime::Continuous { .. });
        let joules = match event {
            EnergyEvent::SensorTick if continuous => {
                tally.ticks += 1;
                tally.budget.unit_energy()
            }
            EnergyEvent::Tx { airtime_s: d }
            | EnergyEvent::GnssFix { duration_s: d }
            | EnergyEvent::McuActive { duration_s: d }
                if !continuous =>
            {
                if !(d >= 0.0) {
                    return Err(EnergyError::NegativeDuration(d));
                }
                tally.active_s += d;
                d * tally.budget.unit_energy()
            }
            _ => {
                return Err(EnergyError::EventMismatch {
                    subsystem: subsystem.to_string(),
                    event: event.name(),
                })
            }
        };
        tally.joules += joules;
        Ok(joules)
    }

    pub fn joules(&self, subsystem: &str) -> Option<f64> {
        self.tallies.get(subsystem).map(|t| t.joules)
    }

    pub fn active_seconds(&self, subsystem: &str) -> Option<f64> {
        self.tallies.get(subsystem).map(|t| t.active_s)
    }

    pub fn ticks(&self, subsystem: &str) -> Option<u64> {
        self.tallies.get(subsystem).map(|t| t.ticks)
    }

    pub fn total_j(&self) -> f64 {
        self.tallies.values().map(|t| t.joules).sum()
    }

    pub fn subsystems(&self) -> impl Iterator<Item = &str> {
        self.tallies.keys().map(String::as_str)
    }

    /// Hourly budgets observed over a run of `elapsed_s` seconds.
    pub fn observed_budgets(&self, elapsed_s: f64) -> Vec<SubsystemBudget> {
        let hours = elapsed_s / SECONDS_PER_HOUR;
        self.tallies
            .values()
            .map(|t| SubsystemBudget {
                name: t.budget.name.clone(),
                active: match t.budget.active {
                    ActiveTime::SecondsPerHour(_) => ActiveTime::SecondsPerHour(t.active_s / hours),
                    ActiveTime::Continuous { .. } => ActiveTime::Continuous {
                        rate_hz: t.ticks as f64 / elapsed_s,
                    },
                },
                energy_j_per_hour: t.joules / hours,
            })
            .collect()
    }
}

pub const ENERGY_CSV_HEADER: &str = "subsystem,active_s_per_h,energy_j_per_h,energy_j_per_day";

/// CSV report with one row per subsystem and a `total` row.
pub fn energy_report_csv(budgets: &[SubsystemBudget]) -> Result<String, EnergyError> {
    let total_day = daily_consumption(budgets)?;
    let mut out = String::new();
    writeln!(out, "{ENERGY_CSV_HEADER}").unwrap();
    for b in budgets {
        let active = match b.active {
            ActiveTime::SecondsPerHour(s) => format!("{s:.3}"),
            ActiveTime::Continuous { rate_hz } => format!("continuous@{rate_hz:.0}Hz"),
        };
        writeln!(
            out,
            "{},{},{:.4},{:.3}",
            b.name,
            active,
            b.energy_j_per_hour,
            b.energy_j_per_hour * HOURS_PER_DAY
        )
        .unwrap();
    }
    writeln!(out, "total,,{:.4},{:.3}", total_day / HOURS_PER_DAY, total_day).unwrap();
    Ok(out)
}

/// Key-value lifetime summary.
pub fn lifetime_report(
    battery: &BatteryModel,
    consumption_j_per_day: f64,
    harvest: &HarvestModel,
) -> Result<String, EnergyError> {
    let without = battery_lifetime_days(battery, consumption_j_per_day, None)?;
    let with = battery_lifetime_days(battery, consumption_j_per_day, Some(harvest))?;
    let factor = self_sustainability_area_factor(consumption_j_per_day, harvest)?;
    let fmt_days = |l: Lifetime| match l {
        Lifetime::Days(d) => format!("{d:.1}"),
        Lifetime::SelfSustaining => "unbounded".to_string(),
    };
    let mut out = String::new();
    writeln!(out, "battery_energy_j={:.0}", battery.energy_j()).unwrap();
    writeln!(out, "consumption_j_per_day={consumption_j_per_day:.2}").unwrap();
    writeln!(out, "harvest_j_per_day={:.2}", harvest.effective_income_j_per_day()).unwrap();
    writeln!(out, "harvest_efficiency={:.2}", harvest.conversion_efficiency).unwrap();
    writeln!(out, "lifetime_days_battery_only={}", fmt_days(without)).unwrap();
    writeln!(out, "lifetime_days_with_harvest={}", fmt_days(with)).unwrap();
    if let (Some(a), Some(b)) = (without.days(), with.days()) {
        writeln!(out, "lifetime_gain_pct={:.1}", (b / a - 1.0) * 100.0).unwrap();
    }
    writeln!(out, "self_sustaining_area_factor={factor:.3}").unwrap();
    writeln!(
        out,
        "self_sustaining_area_cm2={:.2}",
        harvest.reference_area_cm2 * factor
    )
    .unwrap();
    Ok(out)
}
