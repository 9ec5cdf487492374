//! Turns a synthetic recording into 4D DE/PSD samples and shows the class
//! signature in the band means.

use eegtext::eeg_io::{generate_synthetic, SynthConfig};
use eegtext::featurize::{build_samples, FeaturizeConfig};

fn main() -> eegtext::Result<()> {
    let set = generate_synthetic(&SynthConfig {
        n_subjects: 2,
        n_sessions: 1,
        trials_per_class: 1,
        ..SynthConfig::default()
    })?;
    let cfg = FeaturizeConfig {
        frames_per_sample: 2,
        out_h: 16,
        out_w: 16,
        ..FeaturizeConfig::default()
    };
    let (samples, _stats) = build_samples(&set, &cfg, None)?;
    println!("{} samples of shape {:?}", samples.len(), cfg.sample_shape());

    let bands: Vec<&str> = cfg.band_set.bands.iter().map(|b| b.name.as_str()).collect();
    println!("{:<10} {}", "label", bands.iter().map(|b| format!("{b:>8}")).collect::<String>());
    for label in &set.label_set {
        let mine: Vec<_> = samples.iter().filter(|s| &s.label == label).collect();
        let means: String = (0..bands.len())
            .map(|f| {
                let m = mine.iter().map(|s| mean(s.de_map(0, f))).sum::<f64>() / mine.len() as f64;
                format!("{m:>8.3}")
            })
            .collect();
        println!("{label:<10} {means}");
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}
