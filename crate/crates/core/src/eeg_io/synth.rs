use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RecordingSet, Trial};
use crate::error::{Error, Result};
use crate::featurize::{BandSet, ElectrodeLayout};
use crate::rng;

/// Band and power boost that characterise one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandBoost {
    pub band: usize,
    pub boost: f64,
}

/// Class-conditional generator settings.
///
/// Each channel of a trial is white noise with standard deviation
/// `noise_floor` plus, when the trial's label has a signature, a sinusoid
/// inside that band whose power is `boost × noise_floor²`, scaled by a
/// per-subject amplitude factor and per-subject channel gains drawn from
/// `[1 - subject_jitter, 1 + subject_jitter]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: u32,
    pub n_sessions: u32,
    pub trials_per_class: u32,
    pub label_set: Vec<String>,
    pub fs: f64,
    pub trial_seconds: f64,
    pub band_signature: BTreeMap<String, BandBoost>,
    pub subject_jitter: f64,
    pub noise_floor: f64,
    pub channels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let label_set: Vec<String> = ["negative", "neutral", "positive"].map(String::from).to_vec();
        let band_signature = BTreeMap::from([
            ("negative".to_string(), BandBoost { band: 1, boost: 4.0 }),
            ("neutral".to_string(), BandBoost { band: 3, boost: 4.0 }),
            ("positive".to_string(), BandBoost { band: 2, boost: 4.0 }),
        ]);
        Self {
            n_subjects: 8,
            n_sessions: 2,
            trials_per_class: 2,
            label_set,
            fs: 200.0,
            trial_seconds: 10.0,
            band_signature,
            subject_jitter: 0.2,
            noise_floor: 1.0,
            channels: 62,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn samples_per_trial(&self) -> usize {
        (self.trial_seconds * self.fs).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bands = BandSet::default();
        if self.n_subjects == 0 || self.n_sessions == 0 || self.trials_per_class == 0 {
            return Err(Error::config("n_subjects/n_sessions/trials_per_class", "must be positive"));
        }
        if self.label_set.len() < 2 {
            return Err(Error::config("label_set", "need at least two labels"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        let n = self.trial_seconds * self.fs;
        if !(n > 0.0 && (n - n.round()).abs() < 1e-9) {
            return Err(Error::config("trial_seconds", "trial_seconds × fs must be a positive integer"));
        }
        if !(self.noise_floor > 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::config("noise_floor", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.subject_jitter) {
            return Err(Error::config("subject_jitter", "must lie in [0, 1)"));
        }
        for (label, sig) in &self.band_signature {
            if !self.label_set.contains(label) {
                return Err(Error::config(format!("band_signature.{label}"), "label not in label_set"));
            }
            if sig.band >= bands.len() {
                return Err(Error::config(
                    format!("band_signature.{label}.band"),
                    format!("band index must be < {}", bands.len()),
                ));
            }
            if !(sig.boost > 1.0 && sig.boost.is_finite()) {
                return Err(Error::config(format!("band_signature.{label}.boost"), "power boost factor must be > 1"));
            }
            if bands.bands[sig.band].high * 2.0 >= self.fs {
                return Err(Error::SamplingRateBelowNyquist {
                    fs: self.fs,
                    ceiling: bands.bands[sig.band].high,
                });
            }
        }
        Ok(())
    }

    fn channel_names(&self) -> Vec<String> {
        let layout = ElectrodeLayout::default();
        if layout.len() == self.channels {
            layout.names()
        } else {
            (0..self.channels).map(|c| format!("CH{c:02}")).collect()
        }
    }
}

/// Deterministic class-conditional synthetic recording.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<RecordingSet> {
    cfg.validate()?;
    let bands = BandSet::default();
    let n = cfg.samples_per_trial();
    let noise = Normal::new(0.0, cfg.noise_floor).expect("validated noise floor");
    let mut trials = Vec::new();

    for subject in 1..=cfg.n_subjects {
        let mut srng = rng::rng(cfg.seed, &[0x5b, subject as u64]);
        let scale = 1.0 + cfg.subject_jitter * srng.random_range(-1.0..=1.0);
        let gains: Vec<f64> = (0..cfg.channels)
            .map(|_| 1.0 + cfg.subject_jitter * srng.random_range(-1.0..=1.0))
            .collect();

        for session in 1..=cfg.n_sessions {
            for (li, label) in cfg.label_set.iter().enumerate() {
                for k in 0..cfg.trials_per_class {
                    let trial_id = li as u32 * cfg.trials_per_class + k + 1;
                    let mut trng = rng::rng(cfg.seed, &[0x7a, subject as u64, session as u64, trial_id as u64]);
                    let tone = cfg.band_signature.get(label).map(|sig| {
                        let b = &bands.bands[sig.band];
                        let w = b.high - b.low;
                        let freq = trng.random_range(b.low + 0.25 * w..=b.high - 0.25 * w);
                        let amp = cfg.noise_floor * (2.0 * sig.boost).sqrt() * scale;
                        (freq, amp)
                    });
                    let mut data = Vec::with_capacity(cfg.channels * n);
                    for gain in &gains {
                        let phase = trng.random_range(0.0..2.0 * PI);
                        for i in 0..n {
                            let mut v = noise.sample(&mut trng);
                            if let Some((freq, amp)) = tone {
                                v += amp * gain * (2.0 * PI * freq * i as f64 / cfg.fs + phase).sin();
                            }
                            data.push(v as f32);
                        }
                    }
                    trials.push(Trial {
                        subject_id: subject,
                        session_id: session,
                        trial_id,
                        label: label.clone(),
                        fs: cfg.fs,
                        channels: cfg.channels,
                        data,
                    });
                }
            }
        }
    }

    Ok(RecordingSet {
        trials,
        label_set: cfg.label_set.clone(),
        channel_names: cfg.channel_names(),
        meta: format!(
            "synthetic: {} subjects × {} sessions × {} trials/class, seed {}",
            cfg.n_subjects, cfg.n_sessions, cfg.trials_per_class, cfg.seed
        ),
    })
}
