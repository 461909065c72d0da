//! Ablation sweeps: run the training loop across the values of one config
//! key and a set of seeds, then emit per-run CSVs and one SVG with a
//! min-max band per arm.

use crate::config::Config;
use crate::log::RunLog;
use crate::run::{run_training, TrainOutcome};
use crate::svg::{learning_curves, Series};
use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

pub struct ArmResult {
    pub value: String,
    pub logs: Vec<RunLog>,
}

pub fn run_sweep(
    base: &Config,
    key: &str,
    values: &[String],
    seeds: &[u64],
    mut on_run: impl FnMut(&str, u64, &TrainOutcome),
) -> Result<Vec<ArmResult>> {
    let mut arms = Vec::with_capacity(values.len());
    for value in values {
        let mut logs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.set(key, value)?;
            cfg.seed = seed;
            cfg.validate()?;
            let out = run_training(&cfg, |_| {})?;
            on_run(value, seed, &out);
            logs.push(out.log);
        }
        arms.push(ArmResult { value: value.clone(), logs });
    }
    Ok(arms)
}

pub fn to_series(key: &str, arms: &[ArmResult]) -> Vec<Series> {
    arms.iter()
        .map(|arm| Series {
            label: format!("{key}={}", arm.value),
            runs: arm
                .logs
                .iter()
                .map(|l| l.rows.iter().map(|r| (r.step as f64, r.success_rate)).collect())
                .collect(),
        })
        .collect()
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `seed_N.csv` per run plus `curves.svg`, returns the SVG path.
pub fn write_artifacts(out_dir: &Path, key: &str, arms: &[ArmResult]) -> Result<PathBuf> {
    let dir = out_dir.join(format!("sweep_{}", sanitize(key)));
    for arm in arms {
        let arm_dir = dir.join(sanitize(&arm.value));
        std::fs::create_dir_all(&arm_dir)
            .with_context(|| format!("creating {}", arm_dir.display()))?;
        for log in &arm.logs {
            log.write_csv(&arm_dir.join(format!("seed_{}.csv", log.seed)))?;
        }
    }
    let svg_path = dir.join("curves.svg");
    let svg = learning_curves(
        &format!("sweep over {key}"),
        "env step",
        "success rate",
        &to_series(key, arms),
    )?;
    std::fs::write(&svg_path, svg).with_context(|| format!("writing {}", svg_path.display()))?;
    Ok(svg_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::read_csv_file;

    #[test]
    fn sweep_runs_every_arm_and_writes_artifacts() {
        let mut base = Config::default();
        base.total_steps = 20;
        base.eval_every = 10;
        base.eval_episodes = 1;
        base.horizon = 2;
        base.levels = 2;
        base.bins = 3;
        base.atoms = 5;
        base.hidden = 8;
        base.batch = 4;
        base.demo_count = 2;
        base.early_stop = 0.0;

        let mut n = 0;
        let arms = run_sweep(
            &base,
            "horizon",
            &["1".into(), "2".into()],
            &[0, 1],
            |_, _, _| n += 1,
        )
        .unwrap();
        assert_eq!(n, 4);
        assert_eq!(arms.len(), 2);
        assert!(arms.iter().all(|a| a.logs.len() == 2));

        let dir = tempfile::tempdir().unwrap();
        let svg_path = write_artifacts(dir.path(), "horizon", &arms).unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("horizon=1") && svg.contains("horizon=2"));

        let rows =
            read_csv_file(&dir.path().join("sweep_horizon/1/seed_0.csv")).unwrap();
        assert_eq!(rows.len(), arms[0].logs[0].rows.len());
    }

    #[test]
    fn bad_sweep_key_fails_before_running() {
        let base = Config::default();
        let err = run_sweep(&base, "horizn", &["1".into()], &[0], |_, _, _| {});
        assert!(err.is_err());
    }
}
