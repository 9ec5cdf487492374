use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bands::BandSet;
use super::filter::SosFilter;
use super::grid::{map_to_grid, upsample_bilinear, ElectrodeLayout};
use super::spectral::{differential_entropy, Psd, PsdEstimator, VARIANCE_FLOOR};
use crate::container;
use crate::eeg_io::{RecordingSet, Trial};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"EEGF";
pub const FEATURE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub band_set: BandSet,
    pub layout: ElectrodeLayout,
    pub window_seconds: f64,
    pub frames_per_sample: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub psd_estimator: PsdEstimator,
    pub de_floor: f64,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        Self {
            band_set: BandSet::default(),
            layout: ElectrodeLayout::default(),
            window_seconds: 1.0,
            frames_per_sample: 5,
            out_h: 32,
            out_w: 32,
            psd_estimator: PsdEstimator::default(),
            de_floor: VARIANCE_FLOOR,
        }
    }
}

impl FeaturizeConfig {
    pub fn window_len(&self, fs: f64) -> Result<usize> {
        let n = self.window_seconds * fs;
        if !(n >= 2.0 && (n - n.round()).abs() < 1e-9) {
            return Err(Error::config(
                "window_seconds",
                format!("window_seconds × fs = {n} is not an integer sample count ≥ 2"),
            ));
        }
        Ok(n.round() as usize)
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        self.band_set.validate(fs)?;
        self.layout.validate()?;
        self.window_len(fs)?;
        if self.frames_per_sample == 0 {
            return Err(Error::config("frames_per_sample", "must be at least 1"));
        }
        if self.out_h < self.layout.grid_rows || self.out_w < self.layout.grid_cols {
            return Err(Error::config("out_h/out_w", "must be at least the electrode grid size"));
        }
        if !(self.de_floor > 0.0) {
            return Err(Error::config("de_floor", "must be positive"));
        }
        Ok(())
    }

    /// `[T, F, H, W]` of every sample this config produces.
    pub fn sample_shape(&self) -> [usize; 4] {
        [self.frames_per_sample, self.band_set.len(), self.out_h, self.out_w]
    }
}

/// One model input: DE and PSD tensors of shape `T × F × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample4D {
    pub shape: [usize; 4],
    pub de: Vec<f64>,
    pub psd: Vec<f64>,
    pub label: String,
    pub label_index: usize,
    pub subject_id: u32,
    pub session_id: u32,
    pub trial_id: u32,
    /// Index of this temporal block within its trial.
    pub block: u32,
}

impl Sample4D {
    fn offset(&self, t: usize, f: usize) -> usize {
        let [_, nf, h, w] = self.shape;
        (t * nf + f) * h * w
    }

    /// The `H × W` DE map for frame `t`, band `f`.
    pub fn de_map(&self, t: usize, f: usize) -> &[f64] {
        let o = self.offset(t, f);
        &self.de[o..o + self.shape[2] * self.shape[3]]
    }

    pub fn psd_map(&self, t: usize, f: usize) -> &[f64] {
        let o = self.offset(t, f);
        &self.psd[o..o + self.shape[2] * self.shape[3]]
    }
}

/// Per-band DE and log-PSD maps (`F × channels`, row-major) for one window
/// given as `channels × samples` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub bands: usize,
    pub channels: usize,
    pub de: Vec<f64>,
    pub psd: Vec<f64>,
}

impl FrameFeatures {
    pub fn de_at(&self, band: usize, channel: usize) -> f64 {
        self.de[band * self.channels + channel]
    }

    pub fn psd_at(&self, band: usize, channel: usize) -> f64 {
        self.psd[band * self.channels + channel]
    }
}

struct FilterBank {
    filters: Vec<SosFilter>,
}

impl FilterBank {
    fn new(bands: &BandSet, fs: f64) -> Result<Self> {
        let filters = bands
            .bands
            .iter()
            .map(|b| SosFilter::butter_bandpass(b.low, b.high, fs))
            .collect::<Result<_>>()?;
        Ok(Self { filters })
    }
}

fn frame_with(window: &[Vec<f64>], cfg: &FeaturizeConfig, fs: f64, bank: &FilterBank) -> Result<FrameFeatures> {
    let expected = cfg.window_len(fs)?;
    let channels = window.len();
    let nb = cfg.band_set.len();
    let mut de = vec![0.0; nb * channels];
    let mut psd = vec![0.0; nb * channels];
    for (c, series) in window.iter().enumerate() {
        if series.len() != expected {
            return Err(Error::SeriesTooShort {
                len: series.len(),
                min: expected,
            });
        }
        for (f, (band, filter)) in cfg.band_set.bands.iter().zip(&bank.filters).enumerate() {
            let filtered = filter.filtfilt(series)?;
            de[f * channels + c] = differential_entropy(&filtered, cfg.de_floor);
            let power = Psd::estimate(&filtered, fs, cfg.psd_estimator)?.band_power(band.low, band.high)?;
            psd[f * channels + c] = power.max(cfg.de_floor).ln();
        }
    }
    Ok(FrameFeatures {
        bands: nb,
        channels,
        de,
        psd,
    })
}

/// DE and log band power of every channel in every band for one window.
pub fn feature_frame(window: &[Vec<f64>], cfg: &FeaturizeConfig, fs: f64) -> Result<FrameFeatures> {
    let bank = FilterBank::new(&cfg.band_set, fs)?;
    frame_with(window, cfg, fs, &bank)
}

/// Per-band mean and standard deviation of DE and PSD tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub de_mean: Vec<f64>,
    pub de_std: Vec<f64>,
    pub psd_mean: Vec<f64>,
    pub psd_std: Vec<f64>,
}

impl NormStats {
    /// Fits statistics over `samples` in the order given.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a Sample4D>) -> Result<Self> {
        let samples: Vec<&Sample4D> = samples.into_iter().collect();
        let first = samples.first().ok_or(Error::Empty("normalisation population"))?;
        let [t, nf, h, w] = first.shape;
        let stats = |pick: fn(&Sample4D) -> &Vec<f64>| {
            let mut mean = vec![0.0; nf];
            let mut std = vec![0.0; nf];
            let count = (samples.len() * t * h * w) as f64;
            for f in 0..nf {
                let values = || {
                    samples.iter().flat_map(move |s| {
                        (0..t).flat_map(move |ti| {
                            let o = (ti * nf + f) * h * w;
                            pick(s)[o..o + h * w].iter().copied()
                        })
                    })
                };
                let m = values().sum::<f64>() / count;
                let var = values().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
                mean[f] = m;
                std[f] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
            (mean, std)
        };
        let (de_mean, de_std) = stats(|s| &s.de);
        let (psd_mean, psd_std) = stats(|s| &s.psd);
        Ok(Self {
            de_mean,
            de_std,
            psd_mean,
            psd_std,
        })
    }

    pub fn apply(&self, sample: &mut Sample4D) {
        let [t, nf, h, w] = sample.shape;
        for ti in 0..t {
            for f in 0..nf {
                let o = (ti * nf + f) * h * w;
                for v in &mut sample.de[o..o + h * w] {
                    *v = (*v - self.de_mean[f]) / self.de_std[f];
                }
                for v in &mut sample.psd[o..o + h * w] {
                    *v = (*v - self.psd_mean[f]) / self.psd_std[f];
                }
            }
        }
    }
}

fn trial_samples(
    trial: &Trial,
    label_index: usize,
    order: &[usize],
    cfg: &FeaturizeConfig,
    bank: &FilterBank,
) -> Result<Vec<Sample4D>> {
    let win = cfg.window_len(trial.fs)?;
    let t = cfg.frames_per_sample;
    let blocks = trial.samples() / win / t;
    if blocks == 0 {
        return Err(Error::TrialTooShort {
            samples: trial.samples(),
            needed: win * t,
        });
    }
    let shape = cfg.sample_shape();
    let map_len = cfg.out_h * cfg.out_w;
    let mut out = Vec::with_capacity(blocks);
    for block in 0..blocks {
        let mut de = Vec::with_capacity(shape.iter().product());
        let mut psd = Vec::with_capacity(de.capacity());
        for frame in 0..t {
            let start = (block * t + frame) * win;
            let window: Vec<Vec<f64>> = order
                .iter()
                .map(|&c| trial.channel(c)[start..start + win].iter().map(|&v| v as f64).collect())
                .collect();
            let feats = frame_with(&window, cfg, trial.fs, bank)?;
            for f in 0..feats.bands {
                let row = &feats.de[f * feats.channels..(f + 1) * feats.channels];
                let up = upsample_bilinear(&map_to_grid(row, &cfg.layout)?, cfg.out_h, cfg.out_w)?;
                debug_assert_eq!(up.data.len(), map_len);
                de.extend_from_slice(&up.data);
            }
            for f in 0..feats.bands {
                let row = &feats.psd[f * feats.channels..(f + 1) * feats.channels];
                let up = upsample_bilinear(&map_to_grid(row, &cfg.layout)?, cfg.out_h, cfg.out_w)?;
                psd.extend_from_slice(&up.data);
            }
        }
        // de/psd were filled frame-major then band-major, matching T × F × H × W.
        out.push(Sample4D {
            shape,
            de,
            psd,
            label: trial.label.clone(),
            label_index,
            subject_id: trial.subject_id,
            session_id: trial.session_id,
            trial_id: trial.trial_id,
            block: block as u32,
        });
    }
    Ok(out)
}

/// Featurizes every trial without normalisation. Trials are processed in
/// parallel; the output order is the trial order, then block order.
pub fn build_raw_samples(set: &RecordingSet, cfg: &FeaturizeConfig) -> Result<Vec<Sample4D>> {
    let order = cfg.layout.channel_order(&set.channel_names)?;
    let mut rates: Vec<f64> = Vec::new();
    for t in &set.trials {
        if !rates.contains(&t.fs) {
            rates.push(t.fs);
        }
    }
    let banks: Vec<(f64, FilterBank)> = rates
        .into_iter()
        .map(|fs| {
            cfg.validate(fs)?;
            Ok((fs, FilterBank::new(&cfg.band_set, fs)?))
        })
        .collect::<Result<_>>()?;
    let per_trial: Vec<Result<Vec<Sample4D>>> = set
        .trials
        .par_iter()
        .map(|trial| {
            let label_index = set.label_index(&trial.label).ok_or_else(|| Error::UnknownLabel {
                label: trial.label.clone(),
                subject: trial.subject_id,
                session: trial.session_id,
                trial: trial.trial_id,
            })?;
            let bank = &banks.iter().find(|(fs, _)| *fs == trial.fs).expect("bank per fs").1;
            trial_samples(trial, label_index, &order, cfg, bank)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

/// Featurizes and z-normalises per band. When `stats` is `None` they are
/// fitted on the produced samples; the statistics used are returned.
pub fn build_samples(
    set: &RecordingSet,
    cfg: &FeaturizeConfig,
    stats: Option<&NormStats>,
) -> Result<(Vec<Sample4D>, NormStats)> {
    let mut samples = build_raw_samples(set, cfg)?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(&samples)?,
    };
    for s in &mut samples {
        stats.apply(s);
    }
    Ok((samples, stats))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    label_set: Vec<String>,
    shape: [usize; 4],
    samples: Vec<CacheEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    label: String,
    label_index: usize,
    subject: u32,
    session: u32,
    trial: u32,
    block: u32,
}

/// Writes featurized samples (f64 payload: DE then PSD per sample).
pub fn save_samples(path: impl AsRef<Path>, samples: &[Sample4D], label_set: &[String]) -> Result<()> {
    let shape = samples.first().map_or([0; 4], |s| s.shape);
    if samples.iter().any(|s| s.shape != shape) {
        return Err(Error::shape("save_samples", "samples have differing shapes"));
    }
    let header = CacheHeader {
        label_set: label_set.to_vec(),
        shape,
        samples: samples
            .iter()
            .map(|s| CacheEntry {
                label: s.label.clone(),
                label_index: s.label_index,
                subject: s.subject_id,
                session: s.session_id,
                trial: s.trial_id,
                block: s.block,
            })
            .collect(),
    };
    let payload =
        container::f64_payload(samples.iter().flat_map(|s| s.de.iter().chain(s.psd.iter()).copied()));
    container::write_file(
        path.as_ref(),
        &container::encode(FEATURE_MAGIC, FEATURE_SCHEMA, &header, &payload)?,
    )
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<(Vec<Sample4D>, Vec<String>)> {
    let bytes = container::read_file(path.as_ref())?;
    let (header, payload): (CacheHeader, _) = container::decode(FEATURE_MAGIC, FEATURE_SCHEMA, &bytes)?;
    let n: usize = header.shape.iter().product();
    let values = container::read_f64s(payload, 2 * n * header.samples.len())?;
    let samples = header
        .samples
        .into_iter()
        .zip(values.chunks_exact(2 * n.max(1)))
        .map(|(e, chunk)| Sample4D {
            shape: header.shape,
            de: chunk[..n].to_vec(),
            psd: chunk[n..2 * n].to_vec(),
            label: e.label,
            label_index: e.label_index,
            subject_id: e.subject,
            session_id: e.session,
            trial_id: e.trial,
            block: e.block,
        })
        .collect();
    Ok((samples, header.label_set))
}
