//! Cross-session evaluation: train on one session of a subject, test on a
//! later one, for the pairs 1→2, 1→3 and 2→3.

use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::text_bank::{build_bank, PromptTemplateSet};
use eegtext::training_eval::{run_cross_time, Dataset, RunConfig, CROSS_TIME_PAIRS};

fn main() -> eegtext::Result<()> {
    let mut cfg = RunConfig::toy();
    cfg.batch_size = 8;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    let set = generate_synthetic(&SynthConfig {
        n_subjects: 2,
        n_sessions: 3,
        trials_per_class: 4,
        ..SynthConfig::default()
    })?;
    let ds = Dataset::from_recording(&set, &cfg)?;
    let bank = build_bank(&ds.labels, &PromptTemplateSet::default(), &cfg.bank)?;
    let run = run_cross_time(&ds, &cfg, &bank, 1)?;
    for r in &run.results {
        println!("{:<22} acc {:.3}", r.descriptor.tag(), r.acc);
    }
    for ((a, b), m) in CROSS_TIME_PAIRS.iter().zip(&run.per_pair) {
        println!("session {} -> {}: mean {:.3} std {:.3}", a + 1, b + 1, m.mean, m.std);
    }
    Ok(())
}
