use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::adc::{range_doppler_fft, simulate_adc, FftWindows};
use super::{RadarParams, SceneSpec};
use crate::error::{GlaError, Result};

/// Pivot ratio below which an unloaded covariance is treated as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalLoading {
    /// Adds `value · I`.
    Absolute(f64),
    /// Adds `fraction · trace(R)/M · I`.
    TraceFraction(f64),
}

impl Default for DiagonalLoading {
    fn default() -> Self {
        DiagonalLoading::TraceFraction(1e-3)
    }
}

impl DiagonalLoading {
    fn resolve(self, r: &DMatrix<Complex64>) -> Result<f64> {
        let v = match self {
            DiagonalLoading::Absolute(v) => v,
            DiagonalLoading::TraceFraction(f) => f * r.trace().re / r.nrows() as f64,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(GlaError::Validation(format!("diagonal loading {v} must be >= 0")));
        }
        Ok(v)
    }
}

/// ULA steering vector `a(θ)_m = exp(−j·2π·m·d·sin θ)`.
pub fn steering_vector(params: &RadarParams, angle_deg: f64) -> DVector<Complex64> {
    let spatial = 2.0 * PI * params.antenna_spacing * angle_deg.to_radians().sin();
    DVector::from_iterator(
        params.num_rx_antennas,
        (0..params.num_rx_antennas).map(|m| Complex64::from_polar(1.0, -spatial * m as f64)),
    )
}

pub fn sample_covariance(snapshots: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let k = snapshots.ncols() as f64;
    (snapshots * snapshots.adjoint()).map(|v| v / k)
}

/// Capon / MVDR spatial spectrum `P(θ) = 1 / (a(θ)ᴴ (R + δI)⁻¹ a(θ))` over the
/// angle grid of `params`.
///
/// `snapshots` is `[rx × snapshots]`.
pub fn mvdr_angle_spectrum(
    snapshots: &DMatrix<Complex64>,
    params: &RadarParams,
    loading: DiagonalLoading,
) -> Result<Vec<f64>> {
    let m = params.num_rx_antennas;
    if snapshots.nrows() != m {
        return Err(GlaError::Structural(format!(
            "snapshot matrix has {} rows, expected {m}",
            snapshots.nrows()
        )));
    }
    if snapshots.ncols() == 0 {
        return Err(GlaError::Validation("at least one snapshot required".into()));
    }
    let r = sample_covariance(snapshots);
    mvdr_spectrum_from_covariance(&r, params, loading)
}

pub fn mvdr_spectrum_from_covariance(
    r: &DMatrix<Complex64>,
    params: &RadarParams,
    loading: DiagonalLoading,
) -> Result<Vec<f64>> {
    let m = params.num_rx_antennas;
    let delta = loading.resolve(r)?;
    let mut loaded = r.clone();
    for i in 0..m {
        loaded[(i, i)] += Complex64::new(delta, 0.0);
    }
    let chol = Cholesky::new(loaded).ok_or_else(|| {
        GlaError::Conditioning(
            "covariance is not positive definite; add diagonal loading or snapshots".into(),
        )
    })?;
    let l = chol.l();
    let diag: Vec<f64> = (0..m).map(|i| l[(i, i)].norm()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmax > 0.0) || (dmin / dmax).powi(2) < SINGULAR_PIVOT_RATIO {
        return Err(GlaError::Conditioning(format!(
            "covariance is numerically singular (pivot ratio {:.3e}); add diagonal loading",
            (dmin / dmax).powi(2)
        )));
    }
    let mut out = Vec::with_capacity(params.angle_bins);
    for angle in params.angle_grid() {
        let a = steering_vector(params, angle);
        // aᴴ R⁻¹ a = ‖L⁻¹ a‖²
        let y = l
            .solve_lower_triangular(&a)
            .ok_or_else(|| GlaError::Conditioning("triangular solve failed".into()))?;
        let q = y.norm_squared();
        out.push(1.0 / q);
    }
    Ok(out)
}

/// Range-Angle power map via the full chain: ADC cube, range/Doppler FFT, and
/// per-range-cell MVDR with snapshots pooled over Doppler bins.
///
/// Returned row-major as `[range_bins × angle_bins]` in linear power.
pub fn signal_chain_ra_map(
    scene: &SceneSpec,
    params: &RadarParams,
    windows: FftWindows,
    loading: DiagonalLoading,
) -> Result<Vec<f64>> {
    let cube = simulate_adc(scene, params)?;
    let rd = range_doppler_fft(&cube, params, windows)?;
    let mut map = Vec::with_capacity(params.range_bins * params.angle_bins);
    for k in 0..params.range_bins {
        let snaps = DMatrix::from_fn(rd.rx, rd.doppler_bins, |m, d| rd.get(m, d, k));
        let spectrum = mvdr_angle_spectrum(&snaps, params, loading)?;
        map.extend(spectrum);
    }
    Ok(map)
}
