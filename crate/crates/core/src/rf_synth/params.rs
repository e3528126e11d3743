use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::seed::sha256_hex;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW front-end and processing-grid configuration.
///
/// The defaults describe a generic single-chip 77 GHz sensor: 8 virtual
/// receive channels at half-wavelength spacing, 64 chirps of 128 complex
/// samples, and a 64 x 64 Range-Angle grid spanning +/-60 degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    pub num_rx_antennas: usize,
    /// Element spacing as a fraction of the carrier wavelength.
    pub antenna_spacing: f64,
    pub num_chirps: usize,
    pub samples_per_chirp: usize,
    /// Hz/s
    pub chirp_slope: f64,
    /// Hz
    pub sample_rate: f64,
    /// m
    pub carrier_wavelength: f64,
    pub range_bins: usize,
    pub angle_bins: usize,
    /// Half-width of the angle grid in degrees; the grid covers [-span, span].
    pub angle_span: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            num_rx_antennas: 8,
            antenna_spacing: 0.5,
            num_chirps: 64,
            samples_per_chirp: 128,
            chirp_slope: 60e12,
            sample_rate: 5e6,
            carrier_wavelength: SPEED_OF_LIGHT / 77e9,
            range_bins: 64,
            angle_bins: 64,
            angle_span: 60.0,
        }
    }
}

impl RadarParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_rx_antennas", self.num_rx_antennas),
            ("num_chirps", self.num_chirps),
            ("samples_per_chirp", self.samples_per_chirp),
            ("range_bins", self.range_bins),
            ("angle_bins", self.angle_bins),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(GlaError::Validation(format!("{name} must be >= 1")));
            }
        }
        if self.angle_bins < 3 {
            return Err(GlaError::Validation("angle_bins must be >= 3".into()));
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing <= 1.0) {
            return Err(GlaError::Validation(format!(
                "antenna_spacing {} outside (0, 1]",
                self.antenna_spacing
            )));
        }
        if self.range_bins > self.samples_per_chirp {
            return Err(GlaError::Validation(format!(
                "range_bins {} exceeds samples_per_chirp {}",
                self.range_bins, self.samples_per_chirp
            )));
        }
        if !(self.angle_span > 0.0 && self.angle_span < 90.0) {
            return Err(GlaError::Validation(format!(
                "angle_span {} outside (0, 90)",
                self.angle_span
            )));
        }
        let res = self.range_resolution();
        if !(res.is_finite() && res > 0.0) || !(self.carrier_wavelength > 0.0) {
            return Err(GlaError::Validation(
                "chirp_slope, sample_rate and carrier_wavelength must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Range spanned by one fast-time FFT bin, c·f_s / (2·S·N).
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT * self.sample_rate
            / (2.0 * self.chirp_slope * self.samples_per_chirp as f64)
    }

    /// Largest range representable on the Range-Angle grid.
    pub fn max_range(&self) -> f64 {
        self.range_resolution() * self.range_bins as f64
    }

    pub fn beat_frequency(&self, range_m: f64) -> f64 {
        2.0 * self.chirp_slope * range_m / SPEED_OF_LIGHT
    }

    pub fn angle_step(&self) -> f64 {
        2.0 * self.angle_span / (self.angle_bins - 1) as f64
    }

    /// Angle in degrees of grid column `bin`.
    pub fn angle_of_bin(&self, bin: usize) -> f64 {
        -self.angle_span + bin as f64 * self.angle_step()
    }

    pub fn angle_grid(&self) -> Vec<f64> {
        (0..self.angle_bins).map(|k| self.angle_of_bin(k)).collect()
    }

    /// Fractional angle-bin coordinate of an angle in degrees.
    pub fn angle_to_bin(&self, angle_deg: f64) -> f64 {
        (angle_deg + self.angle_span) / self.angle_step()
    }

    /// Fractional range-bin coordinate of a range in metres.
    pub fn range_to_bin(&self, range_m: f64) -> f64 {
        range_m / self.range_resolution()
    }

    pub fn bin_to_range(&self, bin: f64) -> f64 {
        bin * self.range_resolution()
    }

    pub fn bin_to_angle(&self, bin: f64) -> f64 {
        -self.angle_span + bin * self.angle_step()
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("params serialize"))
    }
}
