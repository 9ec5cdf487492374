use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::fit::{evaluate, train, Metrics};
use super::splits::{cross_time_folds, loso_folds, nshot_sample, FoldDescriptor, SplitPlan, CROSS_TIME_PAIRS};
use crate::eeg_io::RecordingSet;
use crate::error::{Error, Result};
use crate::featurize::{build_raw_samples, NormStats, Sample4D};
use crate::model::{HeadKind, Model};
use crate::rng;
use crate::text_bank::TextBank;

/// Un-normalised samples plus their label set. Normalisation happens per
/// fold, with statistics fitted on that fold's train and adapt samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample4D>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn from_recording(set: &RecordingSet, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            samples: build_raw_samples(set, &cfg.featurize)?,
            labels: set.label_set.clone(),
        })
    }
}

/// Which model a fold trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Encoder + projection matched against the text bank.
    Matching,
    /// Encoder + K-way linear head, plain cross-entropy.
    Linear,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Matching => "matching",
            Arm::Linear => "linear",
        }
    }

    /// `cfg` with this arm's head.
    pub fn configure(self, cfg: &RunConfig, classes: usize) -> RunConfig {
        let mut c = cfg.clone();
        c.model.head = match self {
            Arm::Matching => HeadKind::Matching,
            Arm::Linear => HeadKind::Linear { classes },
        };
        c
    }
}

/// One evaluated fold; a row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub descriptor: FoldDescriptor,
    pub arm: Arm,
    pub n_shot: usize,
    pub n_train: usize,
    pub n_adapt: usize,
    pub n_test: usize,
    pub correct: usize,
    pub acc: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub bank_hash_before: String,
    pub bank_hash_after: String,
}

/// Everything needed to run one fold.
#[derive(Debug, Clone)]
pub struct FoldJob {
    pub plan: SplitPlan,
    pub arm: Arm,
    pub n_shot: usize,
}

/// Copies of the samples referenced by `plan`, z-normalised with
/// statistics fitted on `train ∪ adapt` only. Indices are preserved.
pub fn normalize_for_plan(raw: &[Sample4D], plan: &SplitPlan) -> Result<Vec<Sample4D>> {
    let stats = NormStats::fit(plan.train.iter().chain(&plan.adapt).map(|&i| &raw[i]))?;
    let mut out = raw.to_vec();
    for &i in plan.train.iter().chain(&plan.adapt).chain(&plan.test) {
        stats.apply(&mut out[i]);
    }
    Ok(out)
}

fn fold_seed(cfg: &RunConfig, job: &FoldJob) -> u64 {
    let d = &job.plan.descriptor;
    rng::derive_seed(
        cfg.seed,
        &[d.protocol as u64, d.fold_id as u64, job.n_shot as u64],
    )
}

/// Trains and evaluates one fold. `n_shot = 0` with a non-empty adapt set
/// is rejected; with `zero_shot` set the fold is evaluated without any
/// training.
fn run_fold(ds: &Dataset, job: &FoldJob, cfg: &RunConfig, bank: &TextBank, zero_shot: bool) -> Result<FoldResult> {
    let plan = &job.plan;
    plan.check_hygiene(&ds.samples)?;
    if plan.test.is_empty() {
        return Err(Error::Split(format!("{}: empty test set", plan.descriptor.tag())));
    }
    let hash_before = bank.content_hash();
    let cfg = job.arm.configure(cfg, ds.labels.len());
    let seed = fold_seed(&cfg, job);
    let samples = normalize_for_plan(&ds.samples, plan)?;
    let bank_ref = (job.arm == Arm::Matching).then_some(bank);
    let (model, epochs_run, best_epoch) = if zero_shot {
        (Model::new(cfg.model.clone(), rng::derive_seed(seed, &[1]))?, 0, 0)
    } else {
        let pool: Vec<usize> = plan.train.iter().chain(&plan.adapt).copied().collect();
        let out = train(&samples, &pool, bank_ref, &cfg, seed)?;
        let (e, b) = (out.epochs_run(), out.best_epoch);
        (out.model, e, b)
    };
    let test: Vec<&Sample4D> = plan.test.iter().map(|&i| &samples[i]).collect();
    let ev = evaluate(&model, bank_ref, &test, cfg.eval_batch)?;
    let hash_after = bank.content_hash();
    if hash_after != hash_before {
        return Err(Error::TextBank(format!("{}: bank changed during the fold", plan.descriptor.tag())));
    }
    Ok(FoldResult {
        descriptor: plan.descriptor.clone(),
        arm: job.arm,
        n_shot: job.n_shot,
        n_train: if zero_shot { 0 } else { plan.train.len() },
        n_adapt: plan.adapt.len(),
        n_test: plan.test.len(),
        correct: ev.correct,
        acc: ev.acc,
        epochs_run,
        best_epoch,
        bank_hash_before: hash_before,
        bank_hash_after: hash_after,
    })
}

/// Runs jobs on a pool of `jobs` threads; results keep the job order.
fn run_jobs(
    ds: &Dataset,
    jobs_list: &[FoldJob],
    cfg: &RunConfig,
    bank: &TextBank,
    jobs: usize,
    zero_shot: impl Fn(&FoldJob) -> bool + Sync,
) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    if bank.labels() != ds.labels.as_slice() {
        return Err(Error::TextBank(format!(
            "bank labels {:?} differ from dataset labels {:?}",
            bank.labels(),
            ds.labels
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let results: Vec<Result<FoldResult>> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|job| run_fold(ds, job, cfg, bank, zero_shot(job)))
            .collect()
    });
    results.into_iter().collect()
}

/// Results of one protocol: per-fold rows and aggregate accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub results: Vec<FoldResult>,
    pub metrics: Metrics,
}

fn with_shots(ds: &Dataset, plans: Vec<SplitPlan>, n: usize, seed: u64, arm: Arm) -> Result<Vec<FoldJob>> {
    Ok(shot_plans(ds, plans, n, seed)?
        .into_iter()
        .map(|plan| FoldJob { plan, arm, n_shot: n })
        .collect())
}

fn shot_plans(ds: &Dataset, plans: Vec<SplitPlan>, n: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    plans
        .into_iter()
        .map(|mut plan| {
            let s = rng::derive_seed(seed, &[plan.descriptor.fold_id as u64]);
            let (adapt, rest) = nshot_sample(&ds.samples, &plan.test, &ds.labels, n, s)?;
            plan.adapt = adapt;
            plan.test = rest;
            Ok(plan)
        })
        .collect()
}

/// LOSO folds with `n` adaptation samples per class moved from each test
/// set into its adapt set, exactly as the protocols draw them.
pub fn nshot_plans(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    shot_plans(ds, loso_folds(&ds.samples)?, n, seed)
}

/// Leave-one-subject-out per session, with `cfg.n_shot` adaptation
/// samples per class taken from the held-out subject.
pub fn run_loso(ds: &Dataset, cfg: &RunConfig, bank: &TextBank, jobs: usize) -> Result<ProtocolRun> {
    let plans = loso_folds(&ds.samples)?;
    let fold_jobs = with_shots(ds, plans, cfg.n_shot, cfg.seed, Arm::Matching)?;
    let results = run_jobs(ds, &fold_jobs, cfg, bank, jobs, |_| false)?;
    let metrics = Metrics::from_folds(results.iter().map(|r| r.acc).collect())?;
    Ok(ProtocolRun { results, metrics })
}

/// Cross-time result: fold rows plus, per session pair, the mean over
/// subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTimeRun {
    pub results: Vec<FoldResult>,
    /// One entry per [`CROSS_TIME_PAIRS`] element, in order.
    pub per_pair: Vec<Metrics>,
}

pub fn run_cross_time(ds: &Dataset, cfg: &RunConfig, bank: &TextBank, jobs: usize) -> Result<CrossTimeRun> {
    let plans = cross_time_folds(&ds.samples)?;
    let fold_jobs = with_shots(ds, plans, cfg.n_shot, cfg.seed, Arm::Matching)?;
    let results = run_jobs(ds, &fold_jobs, cfg, bank, jobs, |_| false)?;
    // Folds come in subject-major order, three pairs per subject.
    let per_pair = (0..CROSS_TIME_PAIRS.len())
        .map(|p| {
            Metrics::from_folds(
                results
                    .iter()
                    .skip(p)
                    .step_by(CROSS_TIME_PAIRS.len())
                    .map(|r| r.acc)
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;
    Ok(CrossTimeRun { results, per_pair })
}

/// The N-shot curve over LOSO folds. `N = 0` evaluates the untrained model
/// against the bank (pure matching, no adaptation). `N > 0` trains on the
/// source subjects plus `N` labelled samples per class from the held-out
/// subject, which are then removed from its test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NshotRun {
    pub results: Vec<FoldResult>,
    /// `(N, metrics)` in the order requested.
    pub curve: Vec<(usize, Metrics)>,
}

pub const DEFAULT_SHOTS: [usize; 7] = [0, 1, 2, 4, 8, 16, 32];

pub fn run_nshot(ds: &Dataset, cfg: &RunConfig, bank: &TextBank, shots: &[usize], jobs: usize) -> Result<NshotRun> {
    if shots.is_empty() {
        return Err(Error::Empty("shot list"));
    }
    let plans = loso_folds(&ds.samples)?;
    let mut fold_jobs = Vec::new();
    for &n in shots {
        fold_jobs.extend(with_shots(ds, plans.clone(), n, cfg.seed, Arm::Matching)?);
    }
    let results = run_jobs(ds, &fold_jobs, cfg, bank, jobs, |j| j.n_shot == 0)?;
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &results {
        by_n.entry(r.n_shot).or_default().push(r.acc);
    }
    let curve = shots
        .iter()
        .map(|&n| Ok((n, Metrics::from_folds(by_n[&n].clone())?)))
        .collect::<Result<_>>()?;
    Ok(NshotRun { results, curve })
}

/// Paired comparison of a linear-head encoder and the matching model on the
/// same LOSO folds and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub linear: ProtocolRun,
    pub matching: ProtocolRun,
    /// `matching.acc − linear.acc` per fold.
    pub delta: Vec<f64>,
}

pub fn run_ablation(ds: &Dataset, cfg: &RunConfig, bank: &TextBank, jobs: usize) -> Result<AblationRun> {
    let plans = loso_folds(&ds.samples)?;
    let mut fold_jobs = with_shots(ds, plans.clone(), cfg.n_shot, cfg.seed, Arm::Linear)?;
    fold_jobs.extend(with_shots(ds, plans, cfg.n_shot, cfg.seed, Arm::Matching)?);
    let mut results = run_jobs(ds, &fold_jobs, cfg, bank, jobs, |_| false)?;
    let matching = results.split_off(results.len() / 2);
    let linear = results;
    for (a, b) in linear.iter().zip(&matching) {
        if a.descriptor != b.descriptor || a.n_test != b.n_test {
            return Err(Error::Split(format!("unpaired folds {} and {}", a.descriptor.tag(), b.descriptor.tag())));
        }
    }
    let delta = linear.iter().zip(&matching).map(|(a, b)| b.acc - a.acc).collect();
    let metrics = |rs: &[FoldResult]| Metrics::from_folds(rs.iter().map(|r| r.acc).collect());
    Ok(AblationRun {
        linear: ProtocolRun {
            metrics: metrics(&linear)?,
            results: linear,
        },
        matching: ProtocolRun {
            metrics: metrics(&matching)?,
            results: matching,
        },
        delta,
    })
}

/// Trains one model on every sample (no held-out test set).
pub fn train_all(ds: &Dataset, cfg: &RunConfig, bank: &TextBank) -> Result<super::fit::TrainOutcome> {
    let all: Vec<usize> = (0..ds.samples.len()).collect();
    let stats = NormStats::fit(&ds.samples)?;
    let mut samples = ds.samples.clone();
    samples.iter_mut().for_each(|s| stats.apply(s));
    let bank_ref = matches!(cfg.model.head, HeadKind::Matching).then_some(bank);
    let hash = bank.content_hash();
    let out = train(&samples, &all, bank_ref, cfg, cfg.seed)?;
    if bank.content_hash() != hash {
        return Err(Error::TextBank("bank changed during training".into()));
    }
    Ok(out)
}
