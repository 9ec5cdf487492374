//! Command-line front end. Each command resolves its configuration
//! (flag > file > default), writes `manifest.json`, then its results.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::eeg_io::{encode_recording, generate_synthetic, load_recording, save_recording, RecordingSet, SynthConfig};
use crate::error::{Error, Result};
use crate::featurize::{load_samples, save_samples, NormStats};
use crate::report::{self, AccStd, ResultRow, RunManifest, Series};
use crate::text_bank::{build_bank, BankSource, PromptTemplateSet, TextBank};
use crate::training_eval::{
    cross_time_folds, loso_folds, run_ablation, run_cross_time, run_loso, run_nshot, train_all, Dataset,
    FoldDescriptor, FoldResult, Metrics, RunConfig, CROSS_TIME_PAIRS, DEFAULT_SHOTS,
};

/// Where an experiment's recordings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    /// An `EEGC` recording container.
    Recording(PathBuf),
    /// An `EEGF` file of un-normalised samples written by `featurize`.
    Features(PathBuf),
}

/// The configuration file schema shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub run: RunConfig,
    /// Shot counts for `eval-nshot`.
    pub shots: Vec<usize>,
    /// Prompt template file; the built-in set when absent.
    pub templates: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            run: RunConfig::default(),
            shots: DEFAULT_SHOTS.to_vec(),
            templates: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "eegtext", version, about = "EEG-to-text matching experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides the run seed (the generator seed for `synth`).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Folds trained in parallel. Results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// `stub` for hashed embeddings, otherwise an embedding file.
    #[arg(long, global = true, value_name = "stub|FILE")]
    pub bank: Option<String>,
    /// Side of the interpolated electrode map.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    pub grid: Option<String>,
    /// Comma-separated shot counts for `eval-nshot`.
    #[arg(long, global = true, value_delimiter = ',', value_name = "N,...")]
    pub shots: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording.
    Synth,
    /// Featurize recordings into un-normalised 4D samples.
    Featurize,
    /// Train one model on every sample.
    Train,
    /// Leave-one-subject-out evaluation per session.
    #[command(name = "eval-loso")]
    EvalLoso,
    /// Train on one session, test on a later one.
    #[command(name = "eval-crosstime")]
    EvalCrosstime,
    /// Accuracy as a function of target-domain shots per class.
    #[command(name = "eval-nshot")]
    EvalNshot,
    /// Linear head versus text matching on the same folds.
    Ablate,
    /// Render SVG charts from results CSVs.
    Report {
        /// Results CSVs; defaults to `<out>/results.csv`.
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::EvalLoso => "eval-loso",
            Command::EvalCrosstime => "eval-crosstime",
            Command::EvalNshot => "eval-nshot",
            Command::Ablate => "ablate",
            Command::Report { .. } => "report",
        }
    }
}

/// Applies command-line overrides to a loaded configuration.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match (&cli.command, &mut cfg.data) {
            (Command::Synth, DataSource::Synth(s)) => s.seed = seed,
            _ => cfg.run.seed = seed,
        }
    }
    if let Some(g) = &cli.grid {
        let side: usize = g.parse().expect("clap restricts --grid");
        cfg.run.featurize.out_h = side;
        cfg.run.featurize.out_w = side;
        cfg.run.sync_model_input();
    }
    if let Some(b) = &cli.bank {
        cfg.run.bank = if b == "stub" {
            let seed = match cfg.run.bank {
                BankSource::Stub { seed, .. } => seed,
                BankSource::File { .. } => 0,
            };
            BankSource::Stub {
                dim: cfg.run.model.proj_dim,
                seed,
            }
        } else {
            BankSource::File { path: PathBuf::from(b) }
        };
    }
    if let Some(s) = &cli.shots {
        cfg.shots = s.clone();
    }
    if cli.jobs == 0 {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    Ok(cfg)
}

struct Inputs {
    dataset: Dataset,
    hashes: BTreeMap<String, String>,
}

fn load_recording_input(cfg: &ExperimentConfig) -> Result<(RecordingSet, String)> {
    match &cfg.data {
        DataSource::Synth(s) => {
            let set = generate_synthetic(s)?;
            let hash = report::sha256_hex(&encode_recording(&set)?);
            Ok((set, hash))
        }
        DataSource::Recording(p) => Ok((load_recording(p)?, report::sha256_file(p)?)),
        DataSource::Features(_) => Err(Error::config("data", "this command needs recordings, not features")),
    }
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let mut hashes = BTreeMap::new();
    let dataset = match &cfg.data {
        DataSource::Features(p) => {
            let (samples, labels) = load_samples(p)?;
            if samples.first().is_some_and(|s| s.shape != cfg.run.featurize.sample_shape()) {
                return Err(Error::config(
                    "data.features",
                    format!("sample shape {:?} does not match run.featurize", samples[0].shape),
                ));
            }
            hashes.insert("features".to_string(), report::sha256_file(p)?);
            Dataset { samples, labels }
        }
        _ => {
            let (set, hash) = load_recording_input(cfg)?;
            hashes.insert("recording".to_string(), hash);
            Dataset::from_recording(&set, &cfg.run)?
        }
    };
    Ok(Inputs { dataset, hashes })
}

fn templates(cfg: &ExperimentConfig) -> Result<PromptTemplateSet> {
    match &cfg.templates {
        Some(p) => PromptTemplateSet::from_file(p),
        None => Ok(PromptTemplateSet::default()),
    }
}

fn bank_for(cfg: &ExperimentConfig, labels: &[String], manifest: &mut RunManifest) -> Result<TextBank> {
    let t = templates(cfg)?;
    let bank = build_bank(labels, &t, &cfg.run.bank)?;
    manifest.inputs.insert(
        "templates".to_string(),
        report::sha256_hex(t.templates().join("\n").as_bytes()),
    );
    manifest.bank = Some(bank.provenance().clone());
    manifest.bank_hash = Some(bank.content_hash());
    Ok(bank)
}

struct Ctx<'a> {
    out: &'a Path,
    cfg: &'a ExperimentConfig,
    jobs: usize,
    command: &'a str,
}

impl Ctx<'_> {
    fn manifest(&self, seed: u64) -> Result<RunManifest> {
        Ok(RunManifest::new(self.command, seed, serde_json::to_value(self.cfg)?))
    }

    fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        report::write_json(self.out.join("manifest.json"), m)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn acc(m: &Metrics) -> serde_json::Value {
    json!({ "acc_pct": AccStd::from(m).acc_pct, "std_pct": AccStd::from(m).std_pct, "per_fold": m.per_fold })
}

fn check_frozen(results: &[FoldResult], bank: &TextBank) -> Result<()> {
    let want = bank.content_hash();
    for r in results {
        if r.bank_hash_before != want || r.bank_hash_after != want {
            return Err(Error::TextBank(format!("{}: bank hash changed", r.descriptor.tag())));
        }
    }
    Ok(())
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let DataSource::Synth(s) = &ctx.cfg.data else {
        return Err(Error::config("data", "synth needs a `synth` data section"));
    };
    let mut m = ctx.manifest(s.seed)?;
    let set = generate_synthetic(s)?;
    let bytes = encode_recording(&set)?;
    m.inputs.insert("recording".to_string(), report::sha256_hex(&bytes));
    ctx.write_manifest(&m)?;
    save_recording(&set, ctx.path("recording.eegc"))?;
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "trials": set.trials.len(),
            "subjects": set.subjects(),
            "sessions": set.sessions(),
            "labels": set.label_set,
        }),
    )
}

fn cmd_featurize(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest(ctx.cfg.run.seed)?;
    let (set, hash) = load_recording_input(ctx.cfg)?;
    m.inputs.insert("recording".to_string(), hash);
    ctx.write_manifest(&m)?;
    let ds = Dataset::from_recording(&set, &ctx.cfg.run)?;
    save_samples(ctx.path("features.eegf"), &ds.samples, &ds.labels)?;
    let stats = NormStats::fit(&ds.samples)?;
    report::write_json(ctx.path("norm_stats.json"), &stats)?;
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "samples": ds.samples.len(),
            "shape": ds.samples.first().map(|s| s.shape),
            "labels": ds.labels,
        }),
    )
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let run = &ctx.cfg.run;
    run.validate()?;
    let mut m = ctx.manifest(run.seed)?;
    let inputs = load_inputs(ctx.cfg)?;
    m.inputs.extend(inputs.hashes);
    let bank = bank_for(ctx.cfg, &inputs.dataset.labels, &mut m)?;
    ctx.write_manifest(&m)?;
    let out = train_all(&inputs.dataset, run, &bank)?;
    out.model.params.save(ctx.path("params.eegp"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for h in &out.history {
        w.serialize(h)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    std::fs::write(ctx.path("history.csv"), bytes).map_err(|e| Error::io(ctx.path("history.csv"), e))?;
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "bank": bank.provenance(),
            "bank_hash": bank.content_hash(),
            "param_count": out.model.param_count(),
            "params_sha256": out.model.params.content_hash(),
            "epochs_run": out.epochs_run(),
            "best_epoch": out.best_epoch,
            "best_monitored_acc": out.best_acc,
        }),
    )
}

fn write_results(ctx: &Ctx, results: &[FoldResult]) -> Result<()> {
    report::write_text(ctx.path("results.csv"), &report::results_csv(results)?)
}

fn experiment_setup(ctx: &Ctx, folds: impl Fn(&Dataset) -> Result<Vec<FoldDescriptor>>) -> Result<(Dataset, TextBank)> {
    ctx.cfg.run.validate()?;
    let mut m = ctx.manifest(ctx.cfg.run.seed)?;
    let inputs = load_inputs(ctx.cfg)?;
    m.inputs.extend(inputs.hashes);
    let bank = bank_for(ctx.cfg, &inputs.dataset.labels, &mut m)?;
    m.folds = folds(&inputs.dataset)?;
    ctx.write_manifest(&m)?;
    Ok((inputs.dataset, bank))
}

fn loso_descriptors(ds: &Dataset) -> Result<Vec<FoldDescriptor>> {
    Ok(loso_folds(&ds.samples)?.into_iter().map(|p| p.descriptor).collect())
}

fn session_breakdown(results: &[FoldResult]) -> Result<BTreeMap<String, serde_json::Value>> {
    let mut by: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in results {
        by.entry(r.descriptor.session.unwrap_or(0)).or_default().push(r.acc);
    }
    by.into_iter()
        .map(|(s, accs)| Ok((format!("session{s}"), acc(&Metrics::from_folds(accs)?))))
        .collect()
}

fn cmd_loso(ctx: &Ctx) -> Result<()> {
    let (ds, bank) = experiment_setup(ctx, loso_descriptors)?;
    let run = run_loso(&ds, &ctx.cfg.run, &bank, ctx.jobs)?;
    check_frozen(&run.results, &bank)?;
    write_results(ctx, &run.results)?;
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "bank": bank.provenance(),
            "bank_hash": bank.content_hash(),
            "n_shot": ctx.cfg.run.n_shot,
            "overall": acc(&run.metrics),
            "per_session": session_breakdown(&run.results)?,
        }),
    )
}

fn cmd_crosstime(ctx: &Ctx) -> Result<()> {
    let (ds, bank) = experiment_setup(ctx, |ds| {
        Ok(cross_time_folds(&ds.samples)?.into_iter().map(|p| p.descriptor).collect())
    })?;
    let run = run_cross_time(&ds, &ctx.cfg.run, &bank, ctx.jobs)?;
    check_frozen(&run.results, &bank)?;
    write_results(ctx, &run.results)?;
    let pairs: Vec<serde_json::Value> = CROSS_TIME_PAIRS
        .iter()
        .zip(&run.per_pair)
        .map(|((a, b), m)| json!({ "train_session_rank": a + 1, "test_session_rank": b + 1, "metrics": acc(m) }))
        .collect();
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "bank": bank.provenance(),
            "bank_hash": bank.content_hash(),
            "pairs": pairs,
        }),
    )
}

fn cmd_nshot(ctx: &Ctx) -> Result<()> {
    let (ds, bank) = experiment_setup(ctx, loso_descriptors)?;
    let run = run_nshot(&ds, &ctx.cfg.run, &bank, &ctx.cfg.shots, ctx.jobs)?;
    check_frozen(&run.results, &bank)?;
    write_results(ctx, &run.results)?;
    let curve: Vec<serde_json::Value> = run
        .curve
        .iter()
        .map(|(n, m)| json!({ "n_shot": n, "metrics": acc(m) }))
        .collect();
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "bank": bank.provenance(),
            "bank_hash": bank.content_hash(),
            "zero_shot": "untrained encoder matched against the bank",
            "curve": curve,
        }),
    )
}

fn cmd_ablate(ctx: &Ctx) -> Result<()> {
    let (ds, bank) = experiment_setup(ctx, loso_descriptors)?;
    let run = run_ablation(&ds, &ctx.cfg.run, &bank, ctx.jobs)?;
    check_frozen(&run.matching.results, &bank)?;
    let mut all = run.linear.results.clone();
    all.extend(run.matching.results.iter().cloned());
    write_results(ctx, &all)?;
    let table = report::acc_std_table(&[
        ("encoder + linear head", &run.linear.metrics),
        ("encoder + text matching", &run.matching.metrics),
    ]);
    report::write_text(ctx.path("ablation_table.csv"), &table)?;
    report::write_json(
        ctx.path("summary.json"),
        &json!({
            "command": ctx.command,
            "bank": bank.provenance(),
            "bank_hash": bank.content_hash(),
            "linear": acc(&run.linear.metrics),
            "matching": acc(&run.matching.metrics),
            "delta_per_fold": run.delta,
            "delta_mean_pct": (run.matching.metrics.mean - run.linear.metrics.mean) * 100.0,
        }),
    )
}

fn cmd_report(ctx: &Ctx, inputs: &[PathBuf]) -> Result<()> {
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        vec![ctx.path("results.csv")]
    } else {
        inputs.to_vec()
    };
    let mut m = ctx.manifest(0)?;
    let mut tables = Vec::new();
    for p in &inputs {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("results").to_string();
        m.inputs.insert(format!("{stem}.csv"), report::sha256_file(p)?);
        tables.push((stem, report::read_results_csv(p)?));
    }
    ctx.write_manifest(&m)?;
    let mut written = Vec::new();
    for (stem, rows) in &tables {
        let mut groups: BTreeMap<(String, usize), Vec<ResultRow>> = BTreeMap::new();
        for r in rows {
            groups.entry((r.arm.clone(), r.n_shot)).or_default().push(r.clone());
        }
        for ((arm, n), g) in &groups {
            let name = format!("{stem}_{arm}_n{n}_folds.svg");
            let title = format!("{stem}: per-fold accuracy ({arm}, N={n})");
            report::write_text(ctx.path(&name), &report::bar_chart_svg(&title, &report::per_fold_bars(g)))?;
            written.push(name);
        }
        let series: Vec<Series> = report::nshot_series(rows);
        if series.iter().any(|s| s.points.len() > 1) {
            let name = format!("{stem}_nshot.svg");
            let title = format!("{stem}: accuracy vs shots per class");
            report::write_text(ctx.path(&name), &report::curve_svg(&title, "N", &series))?;
            written.push(name);
        }
    }
    report::write_json(ctx.path("summary.json"), &json!({ "command": ctx.command, "charts": written }))
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let ctx = Ctx {
        out: &cli.out,
        cfg: &cfg,
        jobs: cli.jobs,
        command: cli.command.name(),
    };
    match &cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Featurize => cmd_featurize(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::EvalLoso => cmd_loso(&ctx),
        Command::EvalCrosstime => cmd_crosstime(&ctx),
        Command::EvalNshot => cmd_nshot(&ctx),
        Command::Ablate => cmd_ablate(&ctx),
        Command::Report { inputs } => cmd_report(&ctx, inputs),
    }
}

/// Exit code for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
