//! Run artifacts: manifests, per-fold result CSVs, summary JSON, and SVG
//! charts. Every writer is byte-deterministic for identical inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text_bank::Provenance;
use crate::training_eval::{FoldDescriptor, FoldResult, Metrics};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// The fully resolved configuration.
    pub config: serde_json::Value,
    /// Input name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub bank: Option<Provenance>,
    pub bank_hash: Option<String>,
    pub folds: Vec<FoldDescriptor>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            bank: None,
            bank_hash: None,
            folds: Vec::new(),
        }
    }
}

/// One row of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub tag: String,
    pub protocol: String,
    pub fold_id: usize,
    pub arm: String,
    pub n_shot: usize,
    pub session: Option<u32>,
    pub test_subject: Option<u32>,
    pub subject: Option<u32>,
    pub train_session: Option<u32>,
    pub test_session: Option<u32>,
    pub n_train: usize,
    pub n_adapt: usize,
    pub n_test: usize,
    pub correct: usize,
    pub acc: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub bank_hash: String,
}

impl From<&FoldResult> for ResultRow {
    fn from(r: &FoldResult) -> Self {
        let d = &r.descriptor;
        Self {
            tag: d.tag(),
            protocol: d.protocol.as_str().to_string(),
            fold_id: d.fold_id,
            arm: r.arm.as_str().to_string(),
            n_shot: r.n_shot,
            session: d.session,
            test_subject: d.test_subject,
            subject: d.subject,
            train_session: d.train_session,
            test_session: d.test_session,
            n_train: r.n_train,
            n_adapt: r.n_adapt,
            n_test: r.n_test,
            correct: r.correct,
            acc: r.acc,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            bank_hash: r.bank_hash_after.clone(),
        }
    }
}

pub fn results_csv(results: &[FoldResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(ResultRow::from(r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("results CSV"));
    }
    Ok(rows)
}

/// Accuracy summary in percent, two decimals, as in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccStd {
    pub acc_pct: f64,
    pub std_pct: f64,
    pub folds: usize,
}

impl From<&Metrics> for AccStd {
    fn from(m: &Metrics) -> Self {
        Self {
            acc_pct: m.mean * 100.0,
            std_pct: m.std * 100.0,
            folds: m.per_fold.len(),
        }
    }
}

/// `Method,ACC(%),STD(%)` table, one row per method.
pub fn acc_std_table(rows: &[(&str, &Metrics)]) -> String {
    let mut s = String::from("Method,ACC(%),STD(%)\n");
    for (name, m) in rows {
        let a = AccStd::from(*m);
        let _ = writeln!(s, "{name},{:.2},{:.2}", a.acc_pct, a.std_pct);
    }
    s
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    // Accuracy axis 0..1.
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r##"<line x1="{MARGIN}" y1="{y0}" x2="{}" y2="{y0}" stroke="#333"/>"##, WIDTH - MARGIN / 2.0);
    let _ = writeln!(s, r##"<line x1="{MARGIN}" y1="{y0}" x2="{MARGIN}" y2="{y1}" stroke="#333"/>"##);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, MARGIN - 4.0, y + 4.0);
    }
    s
}

fn y_of(v: f64) -> f64 {
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    y0 - v.clamp(0.0, 1.0) * (y0 - y1)
}

/// Bar chart of accuracies in `[0, 1]`. Each bar carries `data-label` and
/// `data-value` attributes holding the exact input.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = svg_open(title);
    let n = bars.len().max(1) as f64;
    let slot = (WIDTH - 1.5 * MARGIN) / n;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let y = y_of(*v);
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#4a78b5" data-label="{}" data-value="{v}"/>"##,
            slot * 0.7,
            HEIGHT - MARGIN - y,
            escape(label)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-45 {:.1} {:.1})">{}</text>"#,
            x + slot * 0.35,
            HEIGHT - MARGIN + 12.0,
            x + slot * 0.35,
            HEIGHT - MARGIN + 12.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One line of a curve chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, accuracy)` points; x values are placed at equal spacing in the
    /// order given.
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 4] = ["#4a78b5", "#c0504d", "#9bbb59", "#8064a2"];

/// Accuracy-versus-x chart. Points carry `data-series`, `data-x` and
/// `data-value` attributes.
pub fn curve_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let mut s = svg_open(title);
    let n = series.iter().map(|c| c.points.len()).max().unwrap_or(1).max(2) as f64;
    let span = WIDTH - 2.0 * MARGIN;
    let x_at = |i: usize| MARGIN + 16.0 + i as f64 * (span - 16.0) / (n - 1.0);
    if let Some(first) = series.first() {
        for (i, (x, _)) in first.points.iter().enumerate() {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#, x_at(i), HEIGHT - MARGIN + 14.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 10.0, escape(x_label));
    for (k, c) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .enumerate()
            .map(|(i, (_, v))| format!("{:.1},{:.1}", x_at(i), y_of(*v)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for (i, (x, v)) in c.points.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.1}" cy="{:.1}" r="3" fill="{color}" data-series="{}" data-x="{x}" data-value="{v}"/>"#,
                x_at(i),
                y_of(*v),
                escape(&c.name)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN * 2.5,
            MARGIN + 14.0 * k as f64,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-fold accuracy bars for one arm and shot count.
pub fn per_fold_bars(rows: &[ResultRow]) -> Vec<(String, f64)> {
    rows.iter().map(|r| (r.tag.clone(), r.acc)).collect()
}

/// Mean accuracy per shot count, one series per arm.
pub fn nshot_series(rows: &[ResultRow]) -> Vec<Series> {
    let mut by_arm: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        by_arm.entry(&r.arm).or_default().entry(r.n_shot).or_default().push(r.acc);
    }
    by_arm
        .into_iter()
        .map(|(arm, by_n)| Series {
            name: arm.to_string(),
            points: by_n
                .into_iter()
                .map(|(n, accs)| (n as f64, accs.iter().sum::<f64>() / accs.len() as f64))
                .collect(),
        })
        .collect()
}
