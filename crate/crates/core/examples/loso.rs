use std::time::Instant;

use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::text_bank::{build_bank, PromptTemplateSet};
use eegtext::training_eval::{run_loso, Dataset, RunConfig};

fn main() -> eegtext::Result<()> {
    let cfg = RunConfig::toy();
    let set = generate_synthetic(&SynthConfig::default())?;
    let t = Instant::now();
    let ds = Dataset::from_recording(&set, &cfg)?;
    println!("featurized {} samples in {:.1?}", ds.samples.len(), t.elapsed());
    let bank = build_bank(&ds.labels, &PromptTemplateSet::default(), &cfg.bank)?;
    let t = Instant::now();
    let run = run_loso(&ds, &cfg, &bank, 1)?;
    for r in &run.results {
        println!("{:<16} acc {:.3} epochs {} best {}", r.descriptor.tag(), r.acc, r.epochs_run, r.best_epoch);
    }
    println!("mean {:.4} std {:.4} in {:.1?}", run.metrics.mean, run.metrics.std, t.elapsed());
    Ok(())
}
