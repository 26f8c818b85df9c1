//! Respiratory self-navigation for free-breathing cardiac MRI on synthetic data.
//!
//! Pipeline: sampling schedule, phantom acquisition, navigator images,
//! motion extraction, respiratory binning, reconstruction and image metrics.
//! The numeric core is generic over [`Real`] (`f32` or `f64`).

pub mod binning;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod navigator;
pub mod phantom;
pub mod recon;
pub mod sampling;
pub mod scalar;
pub mod wavelet;

pub use binning::{BinSelection, Quantizer, StateKey, StateMap};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentError, ExperimentReport};
pub use metrics::{Metric, MetricsReport};
pub use motion::{MotionConfig, MotionTrace, Trace1d};
pub use navigator::NavImageSeries;
pub use phantom::{PhantomConfig, RawDataset};
pub use recon::{ReconMode, ReconParams, VolumeSeries};
pub use sampling::{PatternConfig, SamplingSchedule};
pub use scalar::{Cplx, Real};

pub type RawDataset32 = RawDataset<f32>;
pub type RawDataset64 = RawDataset<f64>;
pub type NavImageSeries32 = NavImageSeries<f32>;
pub type NavImageSeries64 = NavImageSeries<f64>;
pub type VolumeSeries32 = VolumeSeries<f32>;
pub type VolumeSeries64 = VolumeSeries<f64>;
