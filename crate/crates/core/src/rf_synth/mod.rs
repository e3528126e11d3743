//! Labeled Range-Angle heatmap synthesis.
//!
//! Two generators share one [`SceneSpec`]: a full FMCW signal chain (ADC cube,
//! range/Doppler FFT, MVDR angle spectrum per range cell) and a fast
//! image-level renderer that draws the same phenomenology directly.

mod adc;
mod dataset;
mod image;
mod mvdr;
mod params;
mod scene;

pub use adc::{range_doppler_fft, simulate_adc, DataCube, FftWindows, RangeDoppler, Window};
pub use dataset::{generate_dataset, ClutterLayout, DatasetSpec, SceneDistribution};
pub use image::{render_ra_intensity, synth_ra_image, synth_ra_signal_chain, SynthMode, CLUTTER_RADIUS_BINS};
pub use mvdr::{
    mvdr_angle_spectrum, mvdr_spectrum_from_covariance, sample_covariance, signal_chain_ra_map,
    steering_vector, DiagonalLoading,
};
pub use params::{RadarParams, SPEED_OF_LIGHT};
pub use scene::{GroundTruth, MultipathBand, PersonTarget, PointTarget, SceneSpec};
