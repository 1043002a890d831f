//! Simulated GNSS receiver.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analytics::{GnssFix, LatLon, EARTH_RADIUS_M};

/// Horizontal precision (CEP, 50% radius) of the receiver.
pub const CEP_M: f64 = 2.5;

/// CEP of a circular Gaussian is `sigma * sqrt(2 ln 2)`.
pub fn cep_to_sigma(cep_m: f64) -> f64 {
    cep_m / (2.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssReceiver {
    /// Per-axis noise standard deviation.
    pub sigma_m: f64,
    /// Value reported in the accuracy field.
    pub reported_accuracy_m: f64,
}

impl Default for GnssReceiver {
    fn default() -> Self {
        GnssReceiver {
            sigma_m: cep_to_sigma(CEP_M),
            reported_accuracy_m: CEP_M,
        }
    }
}

impl GnssReceiver {
    /// Adds independent north/east Gaussian noise to the true position.
    pub fn sample<R: Rng + ?Sized>(&self, truth: LatLon, t: f64, rng: &mut R) -> GnssFix {
        let north: f64 = StandardNormal.sample(rng);
        let east: f64 = StandardNormal.sample(rng);
        let (dn, de) = (north * self.sigma_m, east * self.sigma_m);
        let lat = truth.lat + (dn / EARTH_RADIUS_M).to_degrees();
        let lon = truth.lon + (de / (EARTH_RADIUS_M * truth.lat.to_radians().cos())).to_degrees();
        GnssFix {
            lat,
            lon,
            t,
            accuracy_m: self.reported_accuracy_m,
        }
    }
}

pub fn sample_gnss<R: Rng + ?Sized>(truth: LatLon, t: f64, rng: &mut R) -> GnssFix {
    GnssReceiver::default().sample(truth, t, rng)
}
