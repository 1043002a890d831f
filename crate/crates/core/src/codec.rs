//! The 31-byte uplink frame and LoRa airtime arithmetic.
//!
//! Layout (all multi-byte fields little-endian):
//!
//! | offset | size | field             |
//! |--------|------|-------------------|
//! | 0      | 1    | version (`0x01`)  |
//! | 1      | 2    | device_id         |
//! | 3      | 2    | sequence          |
//! | 5      | 4    | frame_timestamp   |
//! | 9      | 4    | latitude_e7       |
//! | 13     | 4    | longitude_e7      |
//! | 17     | 4    | fix_timestamp     |
//! | 21     | 2    | fix_accuracy_dm   |
//! | 23     | 1    | heading_q8        |
//! | 24     | 1    | head_pitch_deg    |
//! | 25     | 2    | movement_avg_dm   |
//! | 27     | 1    | battery_mv_div20  |
//! | 28     | 2    | temperature_dC    |
//! | 30     | 1    | status_flags      |

use std::fmt;

use thiserror::Error;

/// Serialized frame length in bytes.
pub const FRAME_LEN: usize = 31;

/// The only protocol version this codec speaks.
pub const PROTOCOL_VERSION: u8 = 0x01;

/// LoRaWAN MAC framing added on top of the application payload
/// (MHDR 1, FHDR 7, FPort 1, MIC 4).
pub const LORAWAN_MAC_OVERHEAD: u32 = 13;

const MAX_LAT_E7: i32 = 900_000_000;
const MAX_LON_E7: i32 = 1_800_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("length error: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("range error: field `{field}` out of range ({value})")]
    Range { field: &'static str, value: i64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Status bits carried in the last byte of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct StatusFlags(u8);

impl StatusFlags {
    pub const GNSS_VALID: u8 = 0b0000_0001;
    pub const HARVESTING_ACTIVE: u8 = 0b0000_0010;
    pub const LOW_BATTERY: u8 = 0b0000_0100;
    const DEFINED: u8 = Self::GNSS_VALID | Self::HARVESTING_ACTIVE | Self::LOW_BATTERY;

    pub fn new(gnss_valid: bool, harvesting_active: bool, low_battery: bool) -> Self {
        let mut bits = 0;
        if gnss_valid {
            bits |= Self::GNSS_VALID;
        }
        if harvesting_active {
            bits |= Self::HARVESTING_ACTIVE;
        }
        if low_battery {
            bits |= Self::LOW_BATTERY;
        }
        StatusFlags(bits)
    }

    /// Rejects any reserved bit.
    pub fn from_bits(bits: u8) -> Result<Self, CodecError> {
        if bits & !Self::DEFINED != 0 {
            return Err(CodecError::Format(format!(
                "reserved status bits set: {bits:#010b}"
            )));
        }
        Ok(StatusFlags(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn gnss_valid(self) -> bool {
        self.0 & Self::GNSS_VALID != 0
    }

    pub fn harvesting_active(self) -> bool {
        self.0 & Self::HARVESTING_ACTIVE != 0
    }

    pub fn low_battery(self) -> bool {
        self.0 & Self::LOW_BATTERY != 0
    }
}

/// Logical content of one uplink payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TelemetryFrame {
    pub version: u8,
    pub device_id: u16,
    pub sequence: u16,
    pub frame_timestamp: u32,
    pub latitude_e7: i32,
    pub longitude_e7: i32,
    pub fix_timestamp: u32,
    pub fix_accuracy_dm: u16,
    pub heading_q8: u8,
    pub head_pitch_deg: i8,
    pub movement_avg_dm: u16,
    pub battery_mv_div20: u8,
    pub temperature_dc: i16,
    pub status_flags: StatusFlags,
}

impl Default for TelemetryFrame {
    fn default() -> Self {
        TelemetryFrame {
            version: PROTOCOL_VERSION,
            device_id: 0,
            sequence: 0,
            frame_timestamp: 0,
            latitude_e7: 0,
            longitude_e7: 0,
            fix_timestamp: 0,
            fix_accuracy_dm: 0,
            heading_q8: 0,
            head_pitch_deg: 0,
            movement_avg_dm: 0,
            battery_mv_div20: 0,
            temperature_dc: 0,
            status_flags: StatusFlags::default(),
        }
    }
}

impl TelemetryFrame {
    pub fn latitude_deg(&self) -> f64 {
        f64::from(self.latitude_e7) / 1e7
    }

    pub fn longitude_deg(&self) -> f64 {
        f64::from(self.longitude_e7) / 1e7
    }

    pub fn heading_deg(&self) -> f64 {
        q8_to_heading(self.heading_q8)
    }

    pub fn movement_m(&self) -> f64 {
        f64::from(self.movement_avg_dm) / 10.0
    }

    pub fn battery_v(&self) -> f64 {
        f64::from(self.battery_mv_div20) * 0.020
    }

    pub fn temperature_c(&self) -> f64 {
        f64::from(self.temperature_dc) / 10.0
    }

    fn validate(&self) -> Result<(), CodecError> {
        if self.version != PROTOCOL_VERSION {
            return Err(CodecError::Range {
                field: "version",
                value: i64::from(self.version),
            });
        }
        if !(-MAX_LAT_E7..=MAX_LAT_E7).contains(&self.latitude_e7) {
            return Err(CodecError::Range {
                field: "latitude_e7",
                value: i64::from(self.latitude_e7),
            });
        }
        if !(-MAX_LON_E7..=MAX_LON_E7).contains(&self.longitude_e7) {
            return Err(CodecError::Range {
                field: "longitude_e7",
                value: i64::from(self.longitude_e7),
            });
        }
        if !(-90..=90).contains(&self.head_pitch_deg) {
            return Err(CodecError::Range {
                field: "head_pitch_deg",
                value: i64::from(self.head_pitch_deg),
            });
        }
        Ok(())
    }
}

/// Degrees to fixed point, rejecting values that do not fit in `i32`.
pub fn degrees_to_e7(deg: f64) -> Result<i32, CodecError> {
    let scaled = (deg * 1e7).round();
    if !scaled.is_finite() || scaled < f64::from(i32::MIN) || scaled > f64::from(i32::MAX) {
        return Err(CodecError::Range {
            field: "degrees",
            value: scaled as i64,
        });
    }
    Ok(scaled as i32)
}

/// Heading in degrees to the one-byte representation (360/256 deg per LSB).
pub fn heading_to_q8(deg: f64) -> u8 {
    let wrapped = deg.rem_euclid(360.0);
    ((wrapped / 360.0 * 256.0).round() as u32 % 256) as u8
}

pub fn q8_to_heading(q: u8) -> f64 {
    f64::from(q) * 360.0 / 256.0
}

/// Rounds and clamps a pitch angle to the transmitted whole-degree range.
pub fn pitch_to_i8(deg: f64) -> i8 {
    deg.round().clamp(-90.0, 90.0) as i8
}

/// Meters to decimeters, saturating at `u16::MAX`.
pub fn meters_to_dm_saturating(m: f64) -> u16 {
    (m * 10.0).round().clamp(0.0, f64::from(u16::MAX)) as u16
}

pub fn encode_frame(frame: &TelemetryFrame) -> Result<[u8; FRAME_LEN], CodecError> {
    frame.validate()?;
    let mut out = [0u8; FRAME_LEN];
    out[0] = frame.version;
    out[1..3].copy_from_slice(&frame.device_id.to_le_bytes());
    out[3..5].copy_from_slice(&frame.sequence.to_le_bytes());
    out[5..9].copy_from_slice(&frame.frame_timestamp.to_le_bytes());
    out[9..13].copy_from_slice(&frame.latitude_e7.to_le_bytes());
    out[13..17].copy_from_slice(&frame.longitude_e7.to_le_bytes());
    out[17..21].copy_from_slice(&frame.fix_timestamp.to_le_bytes());
    out[21..23].copy_from_slice(&frame.fix_accuracy_dm.to_le_bytes());
    out[23] = frame.heading_q8;
    out[24] = frame.head_pitch_deg.to_le_bytes()[0];
    out[25..27].copy_from_slice(&frame.movement_avg_dm.to_le_bytes());
    out[27] = frame.battery_mv_div20;
    out[28..30].copy_from_slice(&frame.temperature_dc.to_le_bytes());
    out[30] = frame.status_flags.bits();
    Ok(out)
}

pub fn decode_frame(payload: &[u8]) -> Result<TelemetryFrame, CodecError> {
    let bytes: &[u8; FRAME_LEN] = payload.try_into().map_err(|_| CodecError::Length {
        expected: FRAME_LEN,
        actual: payload.len(),
    })?;
    if bytes[0] != PROTOCOL_VERSION {
        return Err(CodecError::Format(format!(
            "unsupported protocol version {:#04x}",
            bytes[0]
        )));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let frame = TelemetryFrame {
        version: bytes[0],
        device_id: u16_at(1),
        sequence: u16_at(3),
        frame_timestamp: u32_at(5),
        latitude_e7: u32_at(9) as i32,
        longitude_e7: u32_at(13) as i32,
        fix_timestamp: u32_at(17),
        fix_accuracy_dm: u16_at(21),
        heading_q8: bytes[23],
        head_pitch_deg: bytes[24] as i8,
        movement_avg_dm: u16_at(25),
        battery_mv_div20: bytes[27],
        temperature_dc: u16_at(28) as i16,
        status_flags: StatusFlags::from_bits(bytes[30])?,
    };
    frame.validate()?;
    Ok(frame)
}

/// Modulation and framing settings of one uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoraParams {
    pub spreading_factor: u8,
    pub bandwidth_hz: u32,
    /// `n` in coding rate 4/(4+n).
    pub coding_rate_index: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    pub low_data_rate_optimize: bool,
    pub mac_overhead_bytes: u32,
}

impl LoraParams {
    /// EU868 uplink defaults: BW 125 kHz, CR 4/5, 8 preamble symbols,
    /// explicit header, CRC on, LoRaWAN MAC framing. Low-data-rate
    /// optimization follows the 16 ms symbol-time rule.
    pub fn eu868(spreading_factor: u8) -> Self {
        let bandwidth_hz = 125_000;
        LoraParams {
            spreading_factor,
            bandwidth_hz,
            coding_rate_index: 1,
            preamble_symbols: 8,
            explicit_header: true,
            crc_on: true,
            low_data_rate_optimize: ldro_required(spreading_factor, bandwidth_hz),
            mac_overhead_bytes: LORAWAN_MAC_OVERHEAD,
        }
    }

    pub fn with_bandwidth(mut self, bandwidth_hz: u32) -> Self {
        self.bandwidth_hz = bandwidth_hz;
        self
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(CodecError::Parameter(format!(
                "spreading factor {} not in 7..=12",
                self.spreading_factor
            )));
        }
        if ![125_000, 250_000, 500_000].contains(&self.bandwidth_hz) {
            return Err(CodecError::Parameter(format!(
                "bandwidth {} Hz not one of 125/250/500 kHz",
                self.bandwidth_hz
            )));
        }
        if !(1..=4).contains(&self.coding_rate_index) {
            return Err(CodecError::Parameter(format!(
                "coding rate index {} not in 1..=4",
                self.coding_rate_index
            )));
        }
        if self.preamble_symbols < 6 {
            return Err(CodecError::Parameter(format!(
                "preamble of {} symbols is shorter than 6",
                self.preamble_symbols
            )));
        }
        if self.low_data_rate_optimize && self.spreading_factor < 9 {
            return Err(CodecError::Parameter(
                "low data rate optimization needs SF >= 9".into(),
            ));
        }
        Ok(())
    }

    pub fn symbol_time_s(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor) / f64::from(self.bandwidth_hz)
    }
}

impl fmt::Display for LoraParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SF{} BW{}k CR4/{}",
            self.spreading_factor,
            self.bandwidth_hz / 1000,
            4 + self.coding_rate_index
        )
    }
}

/// Symbol time above 16 ms requires low-data-rate optimization.
pub fn ldro_required(spreading_factor: u8, bandwidth_hz: u32) -> bool {
    f64::from(1u32 << spreading_factor) / f64::from(bandwidth_hz) > 0.016
}

/// Number of payload symbols (including the 8 fixed symbols after the sync word).
pub fn payload_symbols(params: &LoraParams, payload_len_bytes: u32) -> Result<u32, CodecError> {
    params.validate()?;
    if payload_len_bytes == 0 {
        return Err(CodecError::Parameter("payload must be at least one byte".into()));
    }
    let pl = i64::from(payload_len_bytes + params.mac_overhead_bytes);
    let sf = i64::from(params.spreading_factor);
    let crc = i64::from(params.crc_on);
    let ih = i64::from(!params.explicit_header);
    let de = i64::from(params.low_data_rate_optimize);
    let numerator = 8 * pl - 4 * sf + 28 + 16 * crc - 20 * ih;
    let denominator = 4 * (sf - 2 * de);
    // ceil for possibly negative numerators
    let blocks = (numerator + denominator - 1).div_euclid(denominator);
    let extra = (blocks * (i64::from(params.coding_rate_index) + 4)).max(0);
    Ok(8 + extra as u32)
}

/// Seconds the frame occupies the channel.
pub fn time_on_air(params: &LoraParams, payload_len_bytes: u32) -> Result<f64, CodecError> {
    let n_payload = payload_symbols(params, payload_len_bytes)?;
    let symbols = f64::from(params.preamble_symbols) + 4.25 + f64::from(n_payload);
    Ok(symbols * params.symbol_time_s())
}

/// Shortest transmit period compatible with a duty-cycle limit.
pub fn duty_cycle_min_period(
    params: &LoraParams,
    payload_len_bytes: u32,
    duty_cycle: f64,
) -> Result<f64, CodecError> {
    if !(duty_cycle > 0.0 && duty_cycle <= 1.0) {
        return Err(CodecError::Parameter(format!(
            "duty cycle {duty_cycle} not in (0, 1]"
        )));
    }
    Ok(time_on_air(params, payload_len_bytes)? / duty_cycle)
}
