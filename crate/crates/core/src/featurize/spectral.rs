use std::f64::consts::{E, PI};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to variances and band powers before taking logs.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// ½·ln(2πe·max(σ̂², floor)) with σ̂² the unbiased sample variance.
pub fn differential_entropy(window: &[f64], floor: f64) -> f64 {
    let var = if window.len() < 2 {
        0.0
    } else {
        let n = window.len() as f64;
        let mean = window.iter().sum::<f64>() / n;
        window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    };
    0.5 * (2.0 * PI * E * var.max(floor)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsdEstimator {
    /// Single rectangular-window periodogram over the whole window.
    Periodogram,
    /// Hann-windowed averaged periodograms.
    Welch { segment_seconds: f64, overlap: f64 },
}

impl Default for PsdEstimator {
    fn default() -> Self {
        PsdEstimator::Welch {
            segment_seconds: 0.5,
            overlap: 0.5,
        }
    }
}

impl PsdEstimator {
    pub fn segment_len(&self, len: usize, fs: f64) -> usize {
        match *self {
            PsdEstimator::Periodogram => len,
            PsdEstimator::Welch { segment_seconds, .. } => (segment_seconds * fs).round() as usize,
        }
    }
}

/// One-sided power spectral density estimate (units²/Hz) with mean removal
/// per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub df: f64,
    pub fs: f64,
    pub density: Vec<f64>,
}

impl Psd {
    pub fn estimate(x: &[f64], fs: f64, estimator: PsdEstimator) -> Result<Self> {
        let (seg, step, hann) = match estimator {
            PsdEstimator::Periodogram => (x.len(), x.len().max(1), false),
            PsdEstimator::Welch { segment_seconds, overlap } => {
                let seg = (segment_seconds * fs).round() as usize;
                if !(0.0..1.0).contains(&overlap) {
                    return Err(Error::config("psd_estimator.overlap", "must lie in [0, 1)"));
                }
                let step = ((seg as f64) * (1.0 - overlap)).round().max(1.0) as usize;
                (seg, step, true)
            }
        };
        if seg < 2 || x.len() < seg {
            return Err(Error::SeriesTooShort {
                len: x.len(),
                min: seg.max(2),
            });
        }
        let window: Vec<f64> = if hann {
            (0..seg).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos()).collect()
        } else {
            vec![1.0; seg]
        };
        let wss: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(seg);
        let bins = seg / 2 + 1;
        let mut acc = vec![0.0; bins];
        let mut count = 0usize;
        let mut buf = vec![Complex64::new(0.0, 0.0); seg];
        let mut start = 0;
        while start + seg <= x.len() {
            let chunk = &x[start..start + seg];
            let mean = chunk.iter().sum::<f64>() / seg as f64;
            for ((b, &v), &w) in buf.iter_mut().zip(chunk).zip(&window) {
                *b = Complex64::new((v - mean) * w, 0.0);
            }
            fft.process(&mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
            count += 1;
            start += step;
        }
        let scale = 1.0 / (fs * wss * count as f64);
        let density = acc
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) { 1.0 } else { 2.0 };
                p * scale * one_sided
            })
            .collect();
        Ok(Self {
            df: fs / seg as f64,
            fs,
            density,
        })
    }

    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.df
    }

    /// Rectangle-rule integral over bins with `low ≤ f < high`; the Nyquist
    /// bin is included when `high` reaches fs/2, so adjacent bands partition
    /// the spectrum without double counting.
    pub fn band_power(&self, low: f64, high: f64) -> Result<f64> {
        let nyq = self.fs / 2.0;
        if !(low >= 0.0 && low < high && high <= nyq + 1e-9) {
            return Err(Error::InvalidBand {
                low,
                high,
                fs: self.fs,
            });
        }
        let eps = 1e-9 * self.df;
        Ok(self
            .density
            .iter()
            .enumerate()
            .filter(|&(k, _)| {
                let f = self.frequency(k);
                f >= low - eps && (f < high - eps || (high >= nyq - eps && f <= nyq + eps))
            })
            .map(|(_, p)| p * self.df)
            .sum())
    }
}

/// Power of `window` inside `[low, high]` Hz from the PSD estimate.
pub fn band_power_psd(window: &[f64], band: (f64, f64), fs: f64, estimator: PsdEstimator) -> Result<f64> {
    Psd::estimate(window, fs, estimator)?.band_power(band.0, band.1)
}
