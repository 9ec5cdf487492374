use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_LAYOUT: &str = include_str!("../../data/layout_62ch_9x9.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub name: String,
    pub row: usize,
    pub col: usize,
}

/// Electrode positions on a coarse 2D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub placements: Vec<Placement>,
}

impl Default for ElectrodeLayout {
    /// The shipped 62-channel 10-20 arrangement on a 9×9 grid.
    fn default() -> Self {
        Self::parse(DEFAULT_LAYOUT, 9, 9).expect("bundled layout is valid")
    }
}

impl ElectrodeLayout {
    pub fn new(grid_rows: usize, grid_cols: usize, placements: Vec<Placement>) -> Result<Self> {
        let layout = Self {
            grid_rows,
            grid_cols,
            placements,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Parses the plain-text format: one `NAME row col` line per channel,
    /// blank lines and `#` comments ignored.
    pub fn parse(text: &str, grid_rows: usize, grid_cols: usize) -> Result<Self> {
        let mut placements = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Layout(format!("line {}: expected `NAME row col`, got {line:?}", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            placements.push(Placement {
                name: parts[0].to_string(),
                row: parts[1].parse().map_err(|_| bad())?,
                col: parts[2].parse().map_err(|_| bad())?,
            });
        }
        Self::new(grid_rows, grid_cols, placements)
    }

    pub fn from_file(path: impl AsRef<Path>, grid_rows: usize, grid_cols: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, grid_rows, grid_cols)
    }

    pub fn validate(&self) -> Result<()> {
        let mut cells = HashSet::new();
        let mut names = HashSet::new();
        for p in &self.placements {
            if p.row >= self.grid_rows || p.col >= self.grid_cols {
                return Err(Error::Layout(format!(
                    "{} at ({}, {}) lies outside the {}×{} grid",
                    p.name, p.row, p.col, self.grid_rows, self.grid_cols
                )));
            }
            if !cells.insert((p.row, p.col)) {
                return Err(Error::Layout(format!("duplicate placement at ({}, {})", p.row, p.col)));
            }
            if !names.insert(p.name.as_str()) {
                return Err(Error::Layout(format!("channel {} placed twice", p.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.placements.iter().map(|p| p.name.clone()).collect()
    }

    /// For each placement, the index of the recording channel with that
    /// name. Every recording channel must be placed exactly once.
    pub fn channel_order(&self, channel_names: &[String]) -> Result<Vec<usize>> {
        for name in channel_names {
            if !self.placements.iter().any(|p| p.name.eq_ignore_ascii_case(name)) {
                return Err(Error::Layout(format!("channel {name} has no placement")));
            }
        }
        self.placements
            .iter()
            .map(|p| {
                channel_names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(&p.name))
                    .ok_or_else(|| Error::Layout(format!("placement {} has no matching channel", p.name)))
            })
            .collect()
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Scatters per-placement values (in layout order) onto the grid; unplaced
/// cells are zero.
pub fn map_to_grid(values: &[f64], layout: &ElectrodeLayout) -> Result<Grid> {
    if values.len() != layout.len() {
        return Err(Error::Layout(format!(
            "{} values for {} placements",
            values.len(),
            layout.len()
        )));
    }
    let mut grid = Grid::zeros(layout.grid_rows, layout.grid_cols);
    for (p, &v) in layout.placements.iter().zip(values) {
        grid.set(p.row, p.col, v);
    }
    Ok(grid)
}

/// Reads the values back out at each placement.
pub fn gather_from_grid(grid: &Grid, layout: &ElectrodeLayout) -> Vec<f64> {
    layout.placements.iter().map(|p| grid.get(p.row, p.col)).collect()
}

fn axis_weights(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 2);
            (lo, lo + 1, pos - lo as f64)
        })
        .collect()
}

/// Align-corners bilinear upsampling.
pub fn upsample_bilinear(grid: &Grid, out_h: usize, out_w: usize) -> Result<Grid> {
    if out_h < grid.rows || out_w < grid.cols || grid.rows == 0 || grid.cols == 0 {
        return Err(Error::config(
            "out_h/out_w",
            format!(
                "output {out_h}×{out_w} must be at least the input {}×{}",
                grid.rows, grid.cols
            ),
        ));
    }
    let wy = axis_weights(grid.rows, out_h);
    let wx = axis_weights(grid.cols, out_w);
    let mut out = Grid::zeros(out_h, out_w);
    for (i, &(y0, y1, fy)) in wy.iter().enumerate() {
        for (j, &(x0, x1, fx)) in wx.iter().enumerate() {
            let top = grid.get(y0, x0) * (1.0 - fx) + grid.get(y0, x1) * fx;
            let bottom = grid.get(y1, x0) * (1.0 - fx) + grid.get(y1, x1) * fx;
            out.set(i, j, top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}
