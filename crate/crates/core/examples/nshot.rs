//! N-shot curve: N labelled samples per class from the held-out subject are
//! added to training. N = 0 evaluates the untrained model.

use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::text_bank::{build_bank, PromptTemplateSet};
use eegtext::training_eval::{run_nshot, Dataset, RunConfig};

fn main() -> eegtext::Result<()> {
    let mut cfg = RunConfig::toy();
    cfg.batch_size = 8;
    cfg.max_epochs = 20;
    cfg.patience = 20;
    let set = generate_synthetic(&SynthConfig {
        n_subjects: 3,
        n_sessions: 1,
        trials_per_class: 4,
        ..SynthConfig::default()
    })?;
    let ds = Dataset::from_recording(&set, &cfg)?;
    let bank = build_bank(&ds.labels, &PromptTemplateSet::default(), &cfg.bank)?;
    let run = run_nshot(&ds, &cfg, &bank, &[0, 1, 4, 16], 1)?;
    for (n, m) in &run.curve {
        println!("N = {n:>2}: mean {:.3} std {:.3}", m.mean, m.std);
    }
    Ok(())
}
