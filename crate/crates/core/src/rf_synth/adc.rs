use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{RadarParams, SceneSpec};
use crate::error::{GlaError, Result};
use crate::seed::derive_rng;

/// Scatterers used to approximate one multipath band in the signal chain.
const BAND_SCATTERERS: usize = 16;

/// Raw ADC samples, indexed `[rx][chirp][sample]` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub rx: usize,
    pub chirps: usize,
    pub samples: usize,
    pub data: Vec<Complex64>,
}

impl DataCube {
    pub fn zeros(rx: usize, chirps: usize, samples: usize) -> Self {
        Self {
            rx,
            chirps,
            samples,
            data: vec![Complex64::new(0.0, 0.0); rx * chirps * samples],
        }
    }

    #[inline]
    pub fn index(&self, rx: usize, chirp: usize, sample: usize) -> usize {
        (rx * self.chirps + chirp) * self.samples + sample
    }

    pub fn get(&self, rx: usize, chirp: usize, sample: usize) -> Complex64 {
        self.data[self.index(rx, chirp, sample)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Range-Doppler spectrum, indexed `[rx][doppler][range]`.
///
/// Doppler bins are in natural FFT order, so zero velocity is bin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDoppler {
    pub rx: usize,
    pub doppler_bins: usize,
    pub range_bins: usize,
    pub data: Vec<Complex64>,
}

impl RangeDoppler {
    #[inline]
    pub fn get(&self, rx: usize, doppler: usize, range: usize) -> Complex64 {
        self.data[(rx * self.doppler_bins + doppler) * self.range_bins + range]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann if len == 1 => vec![1.0],
            Window::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FftWindows {
    pub range: Window,
    pub doppler: Window,
}

impl Default for FftWindows {
    fn default() -> Self {
        Self {
            range: Window::Hann,
            doppler: Window::Rectangular,
        }
    }
}

impl FftWindows {
    pub fn rectangular() -> Self {
        Self {
            range: Window::Rectangular,
            doppler: Window::Rectangular,
        }
    }
}

struct Scatterer {
    range_m: f64,
    angle_deg: f64,
    amplitude: f64,
    phase: f64,
}

fn scatterers(scene: &SceneSpec, params: &RadarParams, rng: &mut impl Rng) -> Vec<Scatterer> {
    let mut out = Vec::new();
    let mut push = |range_m: f64, angle_deg: f64, amplitude: f64, rng: &mut dyn rand::RngCore| {
        out.push(Scatterer {
            range_m,
            angle_deg,
            amplitude,
            phase: rng.random_range(0.0..2.0 * PI),
        })
    };
    if let Some(p) = &scene.person_target {
        push(p.range_m, p.angle_deg, p.reflectivity, rng);
    }
    for t in &scene.clutter_targets {
        push(t.range_m, t.angle_deg, t.reflectivity, rng);
    }
    let amp_scale = 1.0 / (BAND_SCATTERERS as f64).sqrt();
    for band in &scene.multipath_bands {
        for _ in 0..BAND_SCATTERERS {
            let offset = rng.random_range(-0.5..0.5) * band.thickness_bins;
            let bin = (band.range_bin + offset).clamp(0.0, params.range_bins as f64 - 1.0);
            let angle = rng.random_range(-params.angle_span..params.angle_span);
            push(params.bin_to_range(bin), angle, band.amplitude * amp_scale, rng);
        }
    }
    out
}

/// Simulates the complex baseband ADC cube for a static scene.
///
/// Each scatterer contributes `A·exp(j(φ + 2π·f_b·n/f_s − 2π·m·d·sin θ))` on
/// antenna `m`, sample `n`, identically on every chirp, plus circular complex
/// Gaussian noise of variance `noise_power`.
pub fn simulate_adc(scene: &SceneSpec, params: &RadarParams) -> Result<DataCube> {
    scene.validate(params)?;
    let mut rng = derive_rng(scene.seed, "adc", &[]);
    let targets = scatterers(scene, params, &mut rng);
    let (m_count, chirps, n_count) = (
        params.num_rx_antennas,
        params.num_chirps,
        params.samples_per_chirp,
    );

    // Fast-time signal of one chirp on each antenna; chirps are identical.
    let mut chirp = vec![Complex64::new(0.0, 0.0); m_count * n_count];
    for t in &targets {
        let fb = params.beat_frequency(t.range_m);
        let spatial = 2.0 * PI * params.antenna_spacing * t.angle_deg.to_radians().sin();
        for m in 0..m_count {
            for n in 0..n_count {
                let phase = t.phase + 2.0 * PI * fb * n as f64 / params.sample_rate
                    - spatial * m as f64;
                chirp[m * n_count + n] += Complex64::from_polar(t.amplitude, phase);
            }
        }
    }

    let mut cube = DataCube::zeros(m_count, chirps, n_count);
    for m in 0..m_count {
        for c in 0..chirps {
            let base = cube.index(m, c, 0);
            cube.data[base..base + n_count].copy_from_slice(&chirp[m * n_count..(m + 1) * n_count]);
        }
    }

    if scene.noise_power > 0.0 {
        let normal = Normal::new(0.0, (scene.noise_power / 2.0).sqrt())
            .map_err(|e| GlaError::Validation(e.to_string()))?;
        for v in cube.data.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(cube)
}

/// Windowed FFT along fast time (range), then along chirps (Doppler).
///
/// The transform is unnormalized: with rectangular windows
/// `Σ|out|² = samples · chirps · Σ|in|²`.
pub fn range_doppler_fft(
    cube: &DataCube,
    params: &RadarParams,
    windows: FftWindows,
) -> Result<RangeDoppler> {
    if cube.rx != params.num_rx_antennas
        || cube.chirps != params.num_chirps
        || cube.samples != params.samples_per_chirp
        || cube.data.len() != cube.rx * cube.chirps * cube.samples
    {
        return Err(GlaError::Structural(format!(
            "cube {}x{}x{} does not match params {}x{}x{}",
            cube.rx,
            cube.chirps,
            cube.samples,
            params.num_rx_antennas,
            params.num_chirps,
            params.samples_per_chirp
        )));
    }
    let (rx, chirps, samples) = (cube.rx, cube.chirps, cube.samples);
    let mut planner = FftPlanner::<f64>::new();
    let fft_range = planner.plan_fft_forward(samples);
    let fft_doppler = planner.plan_fft_forward(chirps);
    let w_range = windows.range.coefficients(samples);
    let w_doppler = windows.doppler.coefficients(chirps);

    let mut data = cube.data.clone();
    for row in data.chunks_exact_mut(samples) {
        for (v, w) in row.iter_mut().zip(&w_range) {
            *v *= w;
        }
        fft_range.process(row);
    }

    let mut column = vec![Complex64::new(0.0, 0.0); chirps];
    for m in 0..rx {
        for k in 0..samples {
            for c in 0..chirps {
                column[c] = data[(m * chirps + c) * samples + k] * w_doppler[c];
            }
            fft_doppler.process(&mut column);
            for c in 0..chirps {
                data[(m * chirps + c) * samples + k] = column[c];
            }
        }
    }
    Ok(RangeDoppler {
        rx,
        doppler_bins: chirps,
        range_bins: samples,
        data,
    })
}
