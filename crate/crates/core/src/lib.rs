//! Desk-scale model of a solar-assisted LoRaWAN cattle tracker and its
//! backend.
//!
//! The crate is organised along the data path:
//!
//! * [`simulator`] drives a herd over a pasture and runs the tracker
//!   firmware against synthetic IMU, magnetometer and GNSS streams.
//! * [`fusion`] is the on-node signal chain (gravity low-pass, head pitch,
//!   tilt-compensated heading, movement metric, grazing hysteresis).
//! * [`codec`] packs the 31-byte uplink and computes LoRa airtime.
//! * [`energy`] keeps the per-subsystem ledger and predicts battery lifetime.
//! * [`ingest`] is the server side: frame-log ingestion, storage, queries and
//!   the end-to-end pipeline.
//! * [`analytics`] derives grazing time, travelled distance and
//!   inter-animal cross-correlation from decoded frames.

pub mod analytics;
pub mod codec;
pub mod energy;
pub mod fusion;
pub mod ingest;
pub mod simulator;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/frame.md")]
    mod frame {}
    #[doc = include_str!("../../../book/src/airtime.md")]
    mod airtime {}
    #[doc = include_str!("../../../book/src/orientation.md")]
    mod orientation {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/backend.md")]
    mod backend {}
}
