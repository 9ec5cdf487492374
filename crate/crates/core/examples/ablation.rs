//! Head ablation: the same encoder trained with a K-way linear head and with
//! bank matching, on identical folds and seeds.

use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::report::acc_std_table;
use eegtext::text_bank::{build_bank, PromptTemplateSet};
use eegtext::training_eval::{run_ablation, Dataset, RunConfig};

fn main() -> eegtext::Result<()> {
    let mut cfg = RunConfig::toy();
    cfg.batch_size = 8;
    cfg.max_epochs = 30;
    cfg.patience = 30;
    let set = generate_synthetic(&SynthConfig {
        n_subjects: 4,
        n_sessions: 1,
        trials_per_class: 2,
        ..SynthConfig::default()
    })?;
    let ds = Dataset::from_recording(&set, &cfg)?;
    let bank = build_bank(&ds.labels, &PromptTemplateSet::default(), &cfg.bank)?;
    let run = run_ablation(&ds, &cfg, &bank, 1)?;
    for ((l, m), d) in run.linear.results.iter().zip(&run.matching.results).zip(&run.delta) {
        println!("{:<16} linear {:.3} matching {:.3} delta {:+.3}", l.descriptor.tag(), l.acc, m.acc, d);
    }
    print!(
        "{}",
        acc_std_table(&[("linear", &run.linear.metrics), ("matching", &run.matching.metrics)])
    );
    Ok(())
}
