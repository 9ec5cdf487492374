//! Raw trials to 4D `T × F × H × W` DE/PSD tensors.
//!
//! ```text
//! trial ──► 1 s windows ──► band-pass (per band) ──► DE, log band power
//!                                                       │
//!            Sample4D ◄── z-normalise ◄── upsample ◄── electrode grid
//! ```

mod bands;
mod filter;
mod grid;
mod samples;
mod spectral;

pub use bands::{Band, BandSet};
pub use filter::{bandpass, Biquad, SosFilter, BUTTER_ORDER};
pub use grid::{gather_from_grid, map_to_grid, upsample_bilinear, ElectrodeLayout, Grid, Placement};
pub use samples::{
    build_raw_samples, build_samples, feature_frame, load_samples, save_samples, FeaturizeConfig, FrameFeatures,
    NormStats, Sample4D,
};
pub use spectral::{band_power_psd, differential_entropy, Psd, PsdEstimator, VARIANCE_FLOOR};
