//! Renders SVG charts and a results table from hand-written fold results.

use eegtext::report::{acc_std_table, bar_chart_svg, curve_svg, write_text, Series};
use eegtext::training_eval::Metrics;

fn main() -> eegtext::Result<()> {
    let folds: Vec<(String, f64)> = (1..=4).map(|s| (format!("sub{s}"), 0.6 + 0.08 * s as f64)).collect();
    let m = Metrics::from_folds(folds.iter().map(|f| f.1).collect())?;
    print!("{}", acc_std_table(&[("example", &m)]));

    let curve = Series {
        name: "matching".into(),
        points: vec![(0.0, 0.33), (1.0, 0.52), (4.0, 0.71), (16.0, 0.86)],
    };
    let dir = std::env::temp_dir().join("eegtext-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    write_text(dir.join("folds.svg"), &bar_chart_svg("per-fold accuracy", &folds))?;
    write_text(dir.join("curve.svg"), &curve_svg("N-shot", "N", &[curve]))?;
    println!("charts written to {}", dir.display());
    Ok(())
}
