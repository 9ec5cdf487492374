use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Sample4D;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Loso,
    CrossTime,
    Train,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::CrossTime => "cross_time",
            Protocol::Train => "train",
        }
    }
}

/// Identifies a fold. `test_subject` is set for LOSO; `train_session` and
/// `test_session` for cross-time; `session` for LOSO.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
pub struct FoldDescriptor {
    pub protocol: Protocol,
    pub fold_id: usize,
    pub session: Option<u32>,
    pub test_subject: Option<u32>,
    pub subject: Option<u32>,
    pub train_session: Option<u32>,
    pub test_session: Option<u32>,
}

impl FoldDescriptor {
    /// Short stable label, e.g. `loso-s1-sub3` or `cross_time-sub2-1to3`.
    pub fn tag(&self) -> String {
        match self.protocol {
            Protocol::Loso => format!(
                "loso-s{}-sub{}",
                self.session.unwrap_or(0),
                self.test_subject.unwrap_or(0)
            ),
            Protocol::CrossTime => format!(
                "cross_time-sub{}-{}to{}",
                self.subject.unwrap_or(0),
                self.train_session.unwrap_or(0),
                self.test_session.unwrap_or(0)
            ),
            Protocol::Train => format!("train-{}", self.fold_id),
        }
    }
}

/// Indices into a sample collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub descriptor: FoldDescriptor,
    pub train: Vec<usize>,
    pub adapt: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Checks pairwise disjointness and, for LOSO, that the test subject
    /// contributes no training samples.
    pub fn check_hygiene(&self, samples: &[Sample4D]) -> Result<()> {
        let fail = |m: String| Err(Error::Split(format!("{}: {m}", self.descriptor.tag())));
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        let adapt: BTreeSet<usize> = self.adapt.iter().copied().collect();
        if test.len() != self.test.len() || train.len() != self.train.len() || adapt.len() != self.adapt.len() {
            return fail("duplicate sample reference".into());
        }
        if !train.is_disjoint(&test) || !adapt.is_disjoint(&test) || !train.is_disjoint(&adapt) {
            return fail("train, adapt and test overlap".into());
        }
        if let Some(&bad) = self.train.iter().chain(&self.adapt).chain(&self.test).find(|&&i| i >= samples.len()) {
            return fail(format!("sample index {bad} out of range"));
        }
        match self.descriptor.protocol {
            Protocol::Loso => {
                let subj = self.descriptor.test_subject;
                if self.train.iter().any(|&i| Some(samples[i].subject_id) == subj) {
                    return fail("test subject appears in training data".into());
                }
            }
            Protocol::CrossTime => {
                let ts = self.descriptor.test_session;
                if self.train.iter().any(|&i| Some(samples[i].session_id) == ts) {
                    return fail("test session appears in training data".into());
                }
            }
            Protocol::Train => {}
        }
        Ok(())
    }
}

/// Per session, one fold per subject: that subject's session samples are
/// the test set and every other subject's samples of the same session are
/// the training set.
pub fn loso_folds(samples: &[Sample4D]) -> Result<Vec<SplitPlan>> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let subjects: BTreeSet<u32> = samples.iter().map(|s| s.subject_id).collect();
    let sessions: BTreeSet<u32> = samples.iter().map(|s| s.session_id).collect();
    let mut plans = Vec::new();
    for &session in &sessions {
        for &subject in &subjects {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..samples.len())
                .filter(|&i| samples[i].session_id == session)
                .partition(|&i| samples[i].subject_id == subject);
            if test.is_empty() {
                return Err(Error::Split(format!("subject {subject} has no samples in session {session}")));
            }
            if train.is_empty() {
                return Err(Error::Split(format!("session {session} has only one subject")));
            }
            plans.push(SplitPlan {
                descriptor: FoldDescriptor {
                    protocol: Protocol::Loso,
                    fold_id: plans.len(),
                    session: Some(session),
                    test_subject: Some(subject),
                    subject: None,
                    train_session: None,
                    test_session: None,
                },
                train,
                adapt: vec![],
                test,
            });
        }
    }
    Ok(plans)
}

/// The three train→test session pairs, by position among a subject's
/// sorted session ids.
pub const CROSS_TIME_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Per subject: train on one session, test on a later one, for each pair in
/// [`CROSS_TIME_PAIRS`].
pub fn cross_time_folds(samples: &[Sample4D]) -> Result<Vec<SplitPlan>> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let mut by_subject: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for s in samples {
        by_subject.entry(s.subject_id).or_default().insert(s.session_id);
    }
    let mut plans = Vec::new();
    for (&subject, sessions) in &by_subject {
        let sessions: Vec<u32> = sessions.iter().copied().collect();
        if sessions.len() < 3 {
            return Err(Error::Split(format!(
                "subject {subject} has {} session(s); cross-time needs 3",
                sessions.len()
            )));
        }
        for (a, b) in CROSS_TIME_PAIRS {
            let (tr, te) = (sessions[a], sessions[b]);
            let pick = |sess| {
                (0..samples.len())
                    .filter(|&i| samples[i].subject_id == subject && samples[i].session_id == sess)
                    .collect::<Vec<_>>()
            };
            plans.push(SplitPlan {
                descriptor: FoldDescriptor {
                    protocol: Protocol::CrossTime,
                    fold_id: plans.len(),
                    session: None,
                    test_subject: None,
                    subject: Some(subject),
                    train_session: Some(tr),
                    test_session: Some(te),
                },
                train: pick(tr),
                adapt: vec![],
                test: pick(te),
            });
        }
    }
    Ok(plans)
}

/// Draws exactly `n` samples per class from `test` (seeded, without
/// replacement). Returns `(adapt, remaining_test)`, both in ascending order.
pub fn nshot_sample(
    samples: &[Sample4D],
    test: &[usize],
    labels: &[String],
    n: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Ok((vec![], test.to_vec()));
    }
    let mut adapt = Vec::with_capacity(n * labels.len());
    for (k, label) in labels.iter().enumerate() {
        let mut pool: Vec<usize> = test.iter().copied().filter(|&i| samples[i].label_index == k).collect();
        if pool.len() < n {
            return Err(Error::InsufficientSamples {
                label: label.clone(),
                needed: n,
                available: pool.len(),
            });
        }
        pool.sort_unstable();
        let mut r = rng::rng(seed, &[k as u64, n as u64]);
        pool.shuffle(&mut r);
        adapt.extend_from_slice(&pool[..n]);
    }
    adapt.sort_unstable();
    let chosen: BTreeSet<usize> = adapt.iter().copied().collect();
    let rest = test.iter().copied().filter(|i| !chosen.contains(i)).collect();
    Ok((adapt, rest))
}

/// Seeded split of `indices` into `(fit, validation)` with
/// `floor(fraction·n)` validation samples.
pub fn validation_split(indices: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((indices.len() as f64) * fraction).floor() as usize;
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut rng::rng(seed, &[0x76616c]));
    let mut val = shuffled[..n_val].to_vec();
    let mut fit = shuffled[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (fit, val)
}
