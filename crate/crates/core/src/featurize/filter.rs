//! Zero-phase Butterworth band-pass filtering.
//!
//! The design follows the usual analog-prototype route: Butterworth low-pass
//! poles, low-pass to band-pass transform around the prewarped edges, then
//! the bilinear transform. Poles are grouped into conjugate pairs so the
//! filter runs as a cascade of biquads, which stays well conditioned for
//! narrow low-frequency bands such as δ at 200 Hz.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// Butterworth prototype order. The band-pass filter has twice as many poles.
pub const BUTTER_ORDER: usize = 4;

/// One second-order section, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = self.a[0] + self.a[1] * zi + self.a[2] * zi * zi;
        num / den
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let z0 = (r0 + r1) / (1.0 + a1 + a2);
        [z0, r1 - a2 * z0]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Fourth-order Butterworth band-pass (eight poles) for `[low, high]` Hz.
    pub fn butter_bandpass(low: f64, high: f64, fs: f64) -> Result<Self> {
        if !(low > 0.0 && low < high && high < fs / 2.0) {
            return Err(Error::InvalidBand { low, high, fs });
        }
        let n = BUTTER_ORDER;
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (PI * low / fs).tan();
        let w2 = fs2 * (PI * high / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        let mut poles = Vec::with_capacity(2 * n);
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let proto = Complex64::from_polar(1.0, theta);
            let half = proto * (bw / 2.0);
            let disc = (half * half - w0 * w0).sqrt();
            for s in [half + disc, half - disc] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }
        // Conjugate pairs: keep the upper half-plane representative of each.
        let mut upper: Vec<Complex64> = poles.into_iter().filter(|p| p.im > 0.0).collect();
        upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
        debug_assert_eq!(upper.len(), n);

        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|p| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();

        let wc = 2.0 * (w0 / fs2).atan();
        let zc = Complex64::from_polar(1.0, wc);
        let gain: Complex64 = sections.iter().map(|s| s.response(zc)).product();
        let g = 1.0 / gain.norm();
        for c in sections[0].b.iter_mut() {
            *c *= g;
        }
        Ok(Self { sections })
    }

    /// Edge padding used by [`SosFilter::filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Magnitude response at `freq` Hz for sampling rate `fs`.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / fs);
        self.sections.iter().map(|s| s.response(z)).product::<Complex64>().norm()
    }

    pub fn filter_with_initial(&self, x: &mut [f64], x0: f64) {
        let mut scale = 1.0;
        for s in &self.sections {
            let zi = s.step_state();
            s.run(x, [zi[0] * scale * x0, zi[1] * scale * x0]);
            scale *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd-extension padding and steady-state
    /// initial conditions. Output length equals input length.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        let n = x.len();
        if n <= pad {
            return Err(Error::SeriesTooShort { len: n, min: pad + 1 });
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let first = ext[0];
        self.filter_with_initial(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.filter_with_initial(&mut ext, first);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase band-pass of `signal` into `[low, high]` Hz.
pub fn bandpass(signal: &[f64], band: (f64, f64), fs: f64) -> Result<Vec<f64>> {
    SosFilter::butter_bandpass(band.0, band.1, fs)?.filtfilt(signal)
}
