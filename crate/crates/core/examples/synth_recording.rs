//! Generates a synthetic recording, writes it as a container file and reads
//! it back.

use eegtext::eeg_io::{generate_synthetic, load_recording, save_recording, SynthConfig};

fn main() -> eegtext::Result<()> {
    let cfg = SynthConfig {
        n_subjects: 2,
        trials_per_class: 1,
        ..SynthConfig::default()
    };
    let set = generate_synthetic(&cfg)?;
    println!(
        "{} trials, {} channels at {} Hz, subjects {:?}, sessions {:?}",
        set.trials.len(),
        set.channel_names.len(),
        cfg.fs,
        set.subjects(),
        set.sessions()
    );
    for t in set.trials.iter().take(3) {
        println!("  key {:?} label {} samples {}", t.key(), t.label, t.samples());
    }

    let dir = std::env::temp_dir().join("eegtext-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let path = dir.join("recording.eegc");
    save_recording(&set, &path)?;
    let back = load_recording(&path)?;
    println!("round trip through {}: identical = {}", path.display(), back == set);
    Ok(())
}
