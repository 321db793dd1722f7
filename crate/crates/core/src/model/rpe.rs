//! Export of relative-position tables as per-head grids (PGM images and CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::fmt_f64;
use crate::error::{Error, Result};
use crate::model::BlockState;

pub const RPE_CSV_HEADER: &str = "head,row,col,value";

/// One head's `(2W−1) × (2W−1)` bias grid; row is the vertical offset.
#[derive(Clone, Debug, PartialEq)]
pub struct RpeGrid {
    pub head: usize,
    pub side: usize,
    pub values: Vec<f64>,
}

impl RpeGrid {
    /// Plain PGM (`P2`), min-max normalized to 0..=255; a constant grid is mid-gray.
    pub fn to_pgm(&self) -> String {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = format!("P2\n{} {}\n255\n", self.side, self.side);
        for row in self.values.chunks(self.side) {
            let line: Vec<String> = row
                .iter()
                .map(|&v| {
                    let level = if max > min {
                        ((v - min) / (max - min) * 255.0).round() as u8
                    } else {
                        128
                    };
                    level.to_string()
                })
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

pub fn export_rpe(state: &BlockState) -> Result<Vec<RpeGrid>> {
    let table = state.rpe_table.as_ref().ok_or(Error::NoRpe)?;
    let side = 2 * state.window - 1;
    let heads = state.heads;
    Ok((0..heads)
        .map(|head| RpeGrid {
            head,
            side,
            values: (0..side * side)
                .map(|slot| table.data()[slot * heads + head])
                .collect(),
        })
        .collect())
}

pub fn grids_to_csv(grids: &[RpeGrid]) -> String {
    let mut s = String::from(RPE_CSV_HEADER);
    s.push('\n');
    for g in grids {
        for (i, v) in g.values.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{}",
                g.head,
                i / g.side,
                i % g.side,
                fmt_f64(*v)
            )
            .expect("string write");
        }
    }
    s
}

pub fn grids_from_csv(text: &str) -> Result<Vec<RpeGrid>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RPE_CSV_HEADER) {
        return Err(Error::Domain("RPE CSV is missing its header".into()));
    }
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let bad = || Error::Domain(format!("malformed RPE row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push((
            f[0].parse().map_err(|_| bad())?,
            f[1].parse().map_err(|_| bad())?,
            f[2].parse().map_err(|_| bad())?,
            f[3].parse().map_err(|_| bad())?,
        ));
    }
    let heads = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let side = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut grids: Vec<RpeGrid> = (0..heads)
        .map(|head| RpeGrid {
            head,
            side,
            values: vec![0.0; side * side],
        })
        .collect();
    for (h, r, c, v) in rows {
        grids[h].values[r * side + c] = v;
    }
    Ok(grids)
}

/// Writes `block{index}_head{h}.pgm` per head plus `block{index}.csv` into `dir`.
pub fn write_rpe(dir: &Path, block_index: usize, state: &BlockState) -> Result<Vec<PathBuf>> {
    let grids = export_rpe(state)?;
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for g in &grids {
        let p = dir.join(format!("block{block_index}_head{}.pgm", g.head));
        fs::write(&p, g.to_pgm())?;
        paths.push(p);
    }
    let p = dir.join(format!("block{block_index}.csv"));
    fs::write(&p, grids_to_csv(&grids))?;
    paths.push(p);
    Ok(paths)
}
