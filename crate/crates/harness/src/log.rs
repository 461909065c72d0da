//! Per-run evaluation log and its CSV form. Steps must increase strictly
//! and every numeric field must be finite; violations are rejected at push
//! time so a divergent run can never produce a quietly poisoned log.

use anyhow::{anyhow, bail, Context, Result};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub step: u64,
    pub success_rate: f64,
    pub td_loss: f64,
    pub bc_loss: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

pub const CSV_HEADER: &str = "step,success_rate,td_loss,bc_loss,wall_s";

impl RunLog {
    pub fn new(config_hash: String, seed: u64) -> Self {
        RunLog { config_hash, seed, rows: Vec::new() }
    }

    pub fn push(&mut self, row: EvalRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                bail!("log steps must increase: {} after {}", row.step, last.step);
            }
        }
        for (name, v) in [
            ("success_rate", row.success_rate),
            ("td_loss", row.td_loss),
            ("bc_loss", row.bc_loss),
            ("wall_s", row.wall_s),
        ] {
            if !v.is_finite() {
                bail!("non-finite {name} ({v}) at step {}", row.step);
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn final_success(&self) -> Option<f64> {
        self.rows.last().map(|r| r.success_rate)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.success_rate, r.td_loss, r.bc_loss, r.wall_s
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<EvalRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty csv"))?;
    if header != CSV_HEADER {
        bail!("unexpected csv header {header:?}");
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            bail!("row {}: expected 5 columns, got {}", i + 2, cells.len());
        }
        rows.push(EvalRow {
            step: cells[0].parse().with_context(|| format!("row {} step", i + 2))?,
            success_rate: cells[1].parse().with_context(|| format!("row {} success", i + 2))?,
            td_loss: cells[2].parse().with_context(|| format!("row {} td", i + 2))?,
            bc_loss: cells[3].parse().with_context(|| format!("row {} bc", i + 2))?,
            wall_s: cells[4].parse().with_context(|| format!("row {} wall", i + 2))?,
        });
    }
    Ok(rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<EvalRow>> {
    parse_csv(
        &std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?,
    )
}

/// Row equality for determinism checks; wall time is the one field a
/// repeated run cannot reproduce.
pub fn rows_match_ignoring_wall(a: &[EvalRow], b: &[EvalRow]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.step == y.step
                && x.success_rate == y.success_rate
                && x.td_loss == y.td_loss
                && x.bc_loss == y.bc_loss
        })
}
