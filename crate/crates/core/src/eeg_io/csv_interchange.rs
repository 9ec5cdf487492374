//! CSV interchange for bringing external exports in.
//!
//! A trial file has a header row of channel names and one row per sample.
//! A manifest file lists trial files with their metadata:
//!
//! ```text
//! file,subject,session,trial,label,fs
//! s01_se1_t01.csv,1,1,1,positive,200
//! ```
//!
//! Relative `file` entries resolve against the manifest's directory.

use std::path::Path;

use serde::Deserialize;

use super::{LoadOptions, RecordingSet, Trial};
use crate::error::{Error, Result};

/// Reads one trial file, returning the channel names and the row-major
/// `channels × samples` matrix.
pub fn read_csv_trial(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f32>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let channels = names.len();
    let mut columns: Vec<Vec<f32>> = vec![Vec::new(); channels];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != channels {
            return Err(Error::MalformedHeader(format!(
                "{}: row {} has {} fields, header has {channels}",
                path.display(),
                row + 2,
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::MalformedHeader(format!("{}: row {} column {c}: bad number {field:?}", path.display(), row + 2))
            })?;
            columns[c].push(v);
        }
    }
    Ok((names, columns.concat()))
}

pub fn write_csv_trial(path: impl AsRef<Path>, channel_names: &[String], trial: &Trial) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(channel_names)?;
    let n = trial.samples();
    for s in 0..n {
        w.write_record((0..trial.channels).map(|c| trial.data[c * n + s].to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    file: String,
    subject: u32,
    session: u32,
    trial: u32,
    label: String,
    fs: f64,
}

/// Builds a recording from a manifest of per-trial CSV files. The label set
/// is the sorted set of labels that occur, and every file must share the
/// first file's channel header.
pub fn import_csv_manifest(manifest: impl AsRef<Path>, opts: &LoadOptions) -> Result<RecordingSet> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut rdr = csv::Reader::from_path(manifest)?;
    let mut set = RecordingSet {
        meta: format!("imported from {}", manifest.display()),
        ..Default::default()
    };
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let (names, data) = read_csv_trial(base.join(&row.file))?;
        if set.channel_names.is_empty() {
            set.channel_names = names;
        } else if set.channel_names != names {
            return Err(Error::MalformedHeader(format!("{}: channel header differs from first file", row.file)));
        }
        if !set.label_set.contains(&row.label) {
            set.label_set.push(row.label.clone());
        }
        set.trials.push(Trial {
            subject_id: row.subject,
            session_id: row.session,
            trial_id: row.trial,
            label: row.label,
            fs: row.fs,
            channels: set.channel_names.len(),
            data,
        });
    }
    set.label_set.sort();
    set.validate(opts)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_import_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["FP1".to_string(), "FPZ".to_string()];
        let trial = Trial {
            subject_id: 1,
            session_id: 1,
            trial_id: 1,
            label: "positive".into(),
            fs: 200.0,
            channels: 2,
            data: vec![0.5, 1.5, -2.25, 3.0, 4.0, 5.0],
        };
        write_csv_trial(dir.path().join("t1.csv"), &names, &trial).unwrap();
        std::fs::write(
            dir.path().join("manifest.csv"),
            "file,subject,session,trial,label,fs\nt1.csv,1,1,1,positive,200\n",
        )
        .unwrap();
        let set = import_csv_manifest(dir.path().join("manifest.csv"), &LoadOptions::default()).unwrap();
        assert_eq!(set.channel_names, names);
        assert_eq!(set.trials[0], trial);
    }
}
