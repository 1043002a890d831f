//! Lossy uplink from node to gateway and the gateway's frame log format.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::firmware::EmittedFrame;
use super::SimError;
use crate::codec::FRAME_LEN;

/// Fixed gateway processing delay added after the end of the airtime.
pub const GATEWAY_LATENCY_S: f64 = 0.05;

/// One frame as logged by the gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLine {
    pub recv_unix_ts: f64,
    pub device_id: u16,
    pub rssi: i16,
    pub snr: f64,
    pub payload: Vec<u8>,
}

impl fmt::Display for FrameLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.3},{},{},{:.1},{}",
            self.recv_unix_ts,
            self.device_id,
            self.rssi,
            self.snr,
            hex::encode(&self.payload)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineError(pub String);

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for LineError {}

/// Parses `recv_unix_ts,device_id,rssi,snr,hex_payload`. The payload is
/// only hex-decoded here; its length is checked by the frame decoder.
pub fn parse_frame_line(line: &str) -> Result<FrameLine, LineError> {
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 5 {
        return Err(LineError(format!("parse error: expected 5 fields, got {}", fields.len())));
    }
    let num = |i: usize, name: &str| -> Result<f64, LineError> {
        let v: f64 = fields[i]
            .trim()
            .parse()
            .map_err(|_| LineError(format!("parse error: bad {name} `{}`", fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(LineError(format!("parse error: non-finite {name}")))
        }
    };
    let recv_unix_ts = num(0, "recv_unix_ts")?;
    let device_id = fields[1]
        .trim()
        .parse::<u16>()
        .map_err(|_| LineError(format!("parse error: bad device_id `{}`", fields[1])))?;
    let rssi = fields[2]
        .trim()
        .parse::<i16>()
        .map_err(|_| LineError(format!("parse error: bad rssi `{}`", fields[2])))?;
    let snr = num(3, "snr")?;
    let payload = hex::decode(fields[4].trim()).map_err(|e| LineError(format!("hex error: {e}")))?;
    Ok(FrameLine {
        recv_unix_ts,
        device_id,
        rssi,
        snr,
        payload,
    })
}

/// Drops each frame independently with `loss_probability` and stamps the
/// survivors with gateway metadata. Every frame consumes the same number
/// of draws whether or not it is dropped.
pub fn link_deliver<R: Rng + ?Sized>(
    frames: &[EmittedFrame],
    loss_probability: f64,
    rng: &mut R,
) -> Result<Vec<FrameLine>, SimError> {
    if !(0.0..1.0).contains(&loss_probability) {
        return Err(SimError::Config(format!(
            "loss probability {loss_probability} outside [0, 1)"
        )));
    }
    let rssi_dist: Normal<f64> = Normal::new(-105.0, 6.0).expect("valid normal");
    let snr_dist: Normal<f64> = Normal::new(5.0, 3.0).expect("valid normal");
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let u: f64 = rng.random();
        let rssi = rssi_dist.sample(rng).round().clamp(-140.0, -30.0) as i16;
        let snr = (snr_dist.sample(rng) * 10.0).round() / 10.0;
        if u < loss_probability {
            continue;
        }
        debug_assert_eq!(f.bytes.len(), FRAME_LEN);
        let recv = ((f.tx_unix() + f.airtime_s + GATEWAY_LATENCY_S) * 1000.0).round() / 1000.0;
        out.push(FrameLine {
            recv_unix_ts: recv,
            device_id: f.frame.device_id,
            rssi,
            snr,
            payload: f.bytes.to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_frame, TelemetryFrame};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(n: usize) -> Vec<EmittedFrame> {
        (0..n)
            .map(|i| {
                let frame = TelemetryFrame {
                    device_id: 3,
                    sequence: i as u16,
                    frame_timestamp: 1_000 + 900 * i as u32,
                    ..TelemetryFrame::default()
                };
                EmittedFrame {
                    t: 900.0 * i as f64,
                    bytes: encode_frame(&frame).unwrap(),
                    frame,
                    airtime_s: 0.164352,
                }
            })
            .collect()
    }

    #[test]
    fn lossless_delivery_keeps_order() {
        let fs = frames(50);
        let out = link_deliver(&fs, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.len(), 50);
        for (a, b) in fs.iter().zip(&out) {
            assert_eq!(a.bytes.to_vec(), b.payload);
            assert!(b.recv_unix_ts > a.tx_unix());
        }
    }

    #[test]
    fn loss_one_rejected() {
        assert!(link_deliver(&frames(1), 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(link_deliver(&frames(1), -0.1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn binomial_loss() {
        let fs = frames(10_000);
        let out = link_deliver(&fs, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let dropped = 10_000 - out.len();
        assert!((900..=1100).contains(&dropped), "{dropped}");
    }

    #[test]
    fn line_round_trip() {
        let fs = frames(3);
        for l in link_deliver(&fs, 0.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap() {
            let text = l.to_string();
            assert_eq!(text.split(',').nth(4).unwrap().len(), 62);
            assert_eq!(parse_frame_line(&text).unwrap(), l);
        }
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_frame_line("").is_err());
        assert!(parse_frame_line("1,2,3,4").is_err());
        assert!(parse_frame_line("x,1,-100,5.0,00").is_err());
        assert!(parse_frame_line("1.0,70000,-100,5.0,00").is_err());
        assert!(parse_frame_line("1.0,1,-100,5.0,0g").is_err());
        assert!(parse_frame_line("1.0,1,-100,5.0,abc").is_err());
    }
}
