//! Optimisation, fold construction and the evaluation protocols:
//! leave-one-subject-out, cross-session, N-shot and the head ablation.

mod config;
mod fit;
mod optim;
mod protocols;
mod splits;

pub use config::RunConfig;
pub use fit::{evaluate, train, EpochRecord, Evaluation, Metrics, TrainOutcome};
pub use optim::{adamw_step, cosine_lr, AdamHyper, AdamState, EarlyStopper, StopDecision};
pub use protocols::{
    normalize_for_plan, nshot_plans, run_ablation, run_cross_time, run_loso, run_nshot, train_all, AblationRun, Arm,
    CrossTimeRun, Dataset, FoldJob, FoldResult, NshotRun, ProtocolRun, DEFAULT_SHOTS,
};
pub use splits::{
    cross_time_folds, loso_folds, nshot_sample, validation_split, FoldDescriptor, Protocol, SplitPlan,
    CROSS_TIME_PAIRS,
};
