//! Raw EEG recordings: the in-memory trial collection, its on-disk container,
//! a CSV interchange hook and a class-conditional synthetic generator.

mod csv_interchange;
mod synth;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub use csv_interchange::{import_csv_manifest, read_csv_trial, write_csv_trial};
pub use synth::{generate_synthetic, SynthConfig};

pub const RECORDING_MAGIC: &[u8; 4] = b"EEGC";
pub const RECORDING_SCHEMA: u32 = 1;

/// Highest band edge of the default band set, used when loading without
/// explicit options.
pub const DEFAULT_BAND_CEILING_HZ: f64 = 75.0;

/// One labelled recording of `channels × samples` microvolt values.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject_id: u32,
    pub session_id: u32,
    pub trial_id: u32,
    pub label: String,
    pub fs: f64,
    pub channels: usize,
    /// Row-major, one row per channel.
    pub data: Vec<f32>,
}

impl Trial {
    pub fn samples(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.samples();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn key(&self) -> (u32, u32, u32) {
        (self.subject_id, self.session_id, self.trial_id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordingSet {
    pub trials: Vec<Trial>,
    pub label_set: Vec<String>,
    pub channel_names: Vec<String>,
    pub meta: String,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Highest band edge that will be extracted downstream; fs must be at
    /// least twice this.
    pub band_ceiling: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            band_ceiling: DEFAULT_BAND_CEILING_HZ,
        }
    }
}

impl RecordingSet {
    /// Checks every type invariant, naming the first offending trial.
    pub fn validate(&self, opts: &LoadOptions) -> Result<()> {
        let labels: HashSet<&str> = self.label_set.iter().map(String::as_str).collect();
        if labels.len() != self.label_set.len() {
            return Err(Error::config("label_set", "duplicate label"));
        }
        let mut seen = HashSet::with_capacity(self.trials.len());
        for t in &self.trials {
            let (subject, session, trial) = t.key();
            if subject == 0 || session == 0 || trial == 0 {
                return Err(Error::MalformedHeader(format!(
                    "ids must be positive (subject {subject}, session {session}, trial {trial})"
                )));
            }
            if !labels.contains(t.label.as_str()) {
                return Err(Error::UnknownLabel {
                    label: t.label.clone(),
                    subject,
                    session,
                    trial,
                });
            }
            if !seen.insert(t.key()) {
                return Err(Error::DuplicateTrial { subject, session, trial });
            }
            if t.channels != self.channel_names.len() || t.data.len() % t.channels.max(1) != 0 {
                return Err(Error::MalformedHeader(format!(
                    "trial (subject {subject}, session {session}, trial {trial}) has {} channels, \
                     recording declares {}",
                    t.channels,
                    self.channel_names.len()
                )));
            }
            if !(t.fs.is_finite() && t.fs >= 2.0 * opts.band_ceiling) {
                return Err(Error::SamplingRateBelowNyquist {
                    fs: t.fs,
                    ceiling: opts.band_ceiling,
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample { subject, session, trial });
            }
        }
        Ok(())
    }

    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trials.iter().map(|t| t.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn sessions(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.trials.iter().map(|t| t.session_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == label)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    label_set: Vec<String>,
    channel_names: Vec<String>,
    meta: String,
    trials: Vec<TrialEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialEntry {
    subject: u32,
    session: u32,
    trial: u32,
    label: String,
    fs: f64,
    channels: usize,
    samples: usize,
}

pub fn encode_recording(set: &RecordingSet) -> Result<Vec<u8>> {
    let header = Header {
        label_set: set.label_set.clone(),
        channel_names: set.channel_names.clone(),
        meta: set.meta.clone(),
        trials: set
            .trials
            .iter()
            .map(|t| TrialEntry {
                subject: t.subject_id,
                session: t.session_id,
                trial: t.trial_id,
                label: t.label.clone(),
                fs: t.fs,
                channels: t.channels,
                samples: t.samples(),
            })
            .collect(),
    };
    let payload = container::f32_payload(set.trials.iter().flat_map(|t| t.data.iter().copied()));
    container::encode(RECORDING_MAGIC, RECORDING_SCHEMA, &header, &payload)
}

pub fn decode_recording(bytes: &[u8], opts: &LoadOptions) -> Result<RecordingSet> {
    let (header, mut payload): (Header, _) = container::decode(RECORDING_MAGIC, RECORDING_SCHEMA, bytes)?;
    let mut trials = Vec::with_capacity(header.trials.len());
    for e in header.trials {
        let count = e
            .channels
            .checked_mul(e.samples)
            .ok_or_else(|| Error::MalformedHeader(format!("trial {} size overflows", e.trial)))?;
        let data = container::read_f32s(payload, count).map_err(|err| match err {
            Error::TruncatedPayload { expected, found } => Error::MalformedHeader(format!(
                "truncated payload in trial (subject {}, session {}, trial {}): need {expected} bytes, {found} left",
                e.subject, e.session, e.trial
            )),
            other => other,
        })?;
        payload = &payload[count * 4..];
        trials.push(Trial {
            subject_id: e.subject,
            session_id: e.session,
            trial_id: e.trial,
            label: e.label,
            fs: e.fs,
            channels: e.channels,
            data,
        });
    }
    if !payload.is_empty() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing payload bytes after the last trial",
            payload.len()
        )));
    }
    let set = RecordingSet {
        trials,
        label_set: header.label_set,
        channel_names: header.channel_names,
        meta: header.meta,
    };
    set.validate(opts)?;
    Ok(set)
}

pub fn save_recording(set: &RecordingSet, path: impl AsRef<Path>) -> Result<()> {
    set.validate(&LoadOptions {
        band_ceiling: 0.0,
    })?;
    container::write_file(path.as_ref(), &encode_recording(set)?)
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<RecordingSet> {
    load_recording_with(path, &LoadOptions::default())
}

pub fn load_recording_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<RecordingSet> {
    decode_recording(&container::read_file(path.as_ref())?, opts)
}
