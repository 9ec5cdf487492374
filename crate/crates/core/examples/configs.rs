//! Writes the default and toy experiment configurations as JSON, the
//! format accepted by `eegtext --config`.

use eegtext::cli::ExperimentConfig;
use eegtext::training_eval::RunConfig;

fn main() -> eegtext::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "configs".into());
    std::fs::create_dir_all(&dir).map_err(|e| eegtext::Error::Io {
        path: dir.clone().into(),
        source: e,
    })?;
    let full = ExperimentConfig::default();
    let toy = ExperimentConfig {
        run: RunConfig::toy(),
        ..ExperimentConfig::default()
    };
    for (name, cfg) in [("default", &full), ("toy", &toy)] {
        let path = format!("{dir}/{name}.json");
        eegtext::report::write_json(&path, cfg)?;
        println!("wrote {path}");
    }
    Ok(())
}
