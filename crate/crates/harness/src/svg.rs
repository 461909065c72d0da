//! Hand-rolled static SVG learning curves: per-seed traces, a bold mean
//! line, and a shaded band labeled as the min-max range over seeds.

use anyhow::{bail, Result};
use std::collections::BTreeSet;
use std::fmt::Write;

/// One sweep arm: a label and one (step, value) trace per seed.
pub struct Series {
    pub label: String,
    pub runs: Vec<Vec<(f64, f64)>>,
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const ML: f64 = 64.0; // left margin
const MR: f64 = 16.0;
const MT: f64 = 34.0;
const MB: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// A run that stopped early holds its final value to the chart's right
/// edge, so solved-and-stopped seeds stay comparable with full-length ones.
fn value_at(run: &[(f64, f64)], x: f64) -> Option<f64> {
    if run.is_empty() || x < run[0].0 {
        return None;
    }
    let mut v = run[0].1;
    for &(rx, ry) in run {
        if rx <= x {
            v = ry;
        } else {
            break;
        }
    }
    Some(v)
}

pub fn learning_curves(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.runs.iter().all(|r| r.is_empty())) {
        bail!("nothing to plot");
    }
    let xs: BTreeSet<u64> = series
        .iter()
        .flat_map(|s| s.runs.iter().flatten().map(|&(x, _)| x as u64))
        .collect();
    let grid: Vec<f64> = xs.into_iter().map(|x| x as f64).collect();
    let (x_min, x_max) = (grid[0], *grid.last().unwrap());
    let x_span = (x_max - x_min).max(1.0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for r in &s.runs {
            for &(_, y) in r {
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !(y_min.is_finite() && y_max.is_finite()) {
        bail!("non-finite values in plot data");
    }
    let pad = ((y_max - y_min) * 0.05).max(0.02);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);
    let y_span = y_hi - y_lo;
    let px = |x: f64| ML + (x - x_min) / x_span * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / y_span * (H - MT - MB);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="Helvetica,Arial,sans-serif" font-size="12">"#
    )?;
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    )?;

    // axes with ticks
    writeln!(
        out,
        r#"<line x1="{ML}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        H - MB,
        W - MR
    )?;
    writeln!(out, r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/>"#, H - MB)?;
    for i in 0..=5 {
        let fx = x_min + x_span * i as f64 / 5.0;
        let x = px(fx);
        writeln!(out, r#"<line x1="{x}" y1="{0}" x2="{x}" y2="{1}" stroke="black"/>"#, H - MB, H - MB + 5.0)?;
        writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            H - MB + 20.0,
            format_tick(fx)
        )?;
        let fy = y_lo + y_span * i as f64 / 5.0;
        let y = py(fy);
        writeln!(out, r#"<line x1="{}" y1="{y}" x2="{ML}" y2="{y}" stroke="black"/>"#, ML - 5.0)?;
        writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            ML - 9.0,
            y + 4.0,
            format_tick(fy)
        )?;
    }
    writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0,
        escape(xlabel)
    )?;
    writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (MT + H - MB) / 2.0,
        escape(ylabel)
    )?;

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        // min-max band over seeds on the union step grid
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        let mut mean = Vec::new();
        for &x in &grid {
            let vals: Vec<f64> = s.runs.iter().filter_map(|r| value_at(r, x)).collect();
            if vals.is_empty() {
                continue;
            }
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            upper.push((px(x), py(hi)));
            lower.push((px(x), py(lo)));
            mean.push((px(x), py(mu)));
        }
        if mean.is_empty() {
            continue;
        }
        if s.runs.len() > 1 {
            let mut pts = String::new();
            for &(x, y) in &upper {
                write!(pts, "{x:.1},{y:.1} ")?;
            }
            for &(x, y) in lower.iter().rev() {
                write!(pts, "{x:.1},{y:.1} ")?;
            }
            writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" opacity="0.15" stroke="none"/>"#,
                pts.trim_end()
            )?;
        }
        for r in &s.runs {
            let pts: String = r
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(
                out,
                r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="0.8" opacity="0.45"/>"#
            )?;
        }
        let pts: String = mean
            .iter()
            .map(|&(x, y)| format!("{x:.1},{y:.1}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            out,
            r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2.2"/>"#
        )?;
        let ly = MT + 16.0 * si as f64 + 10.0;
        let n = s.runs.len();
        let band = if n > 1 { format!(" (mean, min-max over {n} seeds)") } else { String::new() };
        writeln!(
            out,
            r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/>"#,
            ML + 10.0,
            ly - 4.0
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="{ly}">{}{}</text>"#,
            ML + 28.0,
            escape(&s.label),
            band
        )?;
    }
    writeln!(out, "</svg>")?;
    Ok(out)
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{}k", (v / 1000.0 * 10.0).round() / 10.0)
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{:.2}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
        points.to_vec()
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(learning_curves("t", "x", "y", &[]).is_err());
        let s = Series { label: "a".into(), runs: vec![vec![]] };
        assert!(learning_curves("t", "x", "y", &[s]).is_err());
    }

    #[test]
    fn three_seed_sweep_gets_one_band() {
        let s = Series {
            label: "K=8".into(),
            runs: vec![
                run(&[(1000.0, 0.2), (2000.0, 0.7), (3000.0, 0.9)]),
                run(&[(1000.0, 0.1), (2000.0, 0.5), (3000.0, 1.0)]),
                run(&[(1000.0, 0.3), (2000.0, 0.6), (3000.0, 0.95)]),
            ],
        };
        let svg = learning_curves("curves", "env step", "success rate", &[s]).unwrap();
        assert_eq!(svg.matches("<polygon").count(), 1, "exactly one band");
        assert!(svg.contains("min-max over 3 seeds"), "band is labeled");
        assert_eq!(svg.matches("<polyline").count(), 4, "three seeds plus the mean");
        assert!(svg.contains("env step") && svg.contains("success rate"));
    }

    #[test]
    fn early_stopped_runs_hold_their_final_value() {
        let short = run(&[(1000.0, 1.0)]);
        assert_eq!(value_at(&short, 3000.0), Some(1.0));
        assert_eq!(value_at(&short, 500.0), None);
        let s = Series {
            label: "arm".into(),
            runs: vec![short, run(&[(1000.0, 0.2), (2000.0, 0.4), (3000.0, 0.5)])],
        };
        let svg = learning_curves("t", "x", "y", &[s]).unwrap();
        assert!(svg.contains("<polygon"));
    }

    #[test]
    fn labels_are_escaped() {
        let s = Series { label: "a<b&c".into(), runs: vec![run(&[(0.0, 0.0), (1.0, 1.0)])] };
        let svg = learning_curves("t", "x", "y", &[s]).unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
