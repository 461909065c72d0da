//! Flat key=value run configuration: a diffable text file, command-line
//! overrides, strict unknown-key rejection, and a content hash that
//! identifies the experiment independent of seed and output location.

use anyhow::{anyhow, bail, Context, Result};
use cqn_as::critic::CriticConfig;
use cqn_as::learning::TrainConfig;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub enum ExecMode {
    Ensemble,
    Receding,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub env: String,
    pub seed: u64,
    pub total_steps: u64,
    pub horizon: usize,
    pub levels: usize,
    pub bins: usize,
    pub atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub hidden: usize,
    pub batch: usize,
    pub gamma: f64,
    pub nstep: usize,
    /// Optimizer steps per environment step.
    pub utd: f64,
    /// Optimizer steps on the demo-seeded store before the first env step,
    /// so the agent starts acting as a demo clone rather than from noise.
    pub warmup: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub target_interval: u64,
    pub rl_scale: f64,
    pub bc_scale: f64,
    pub margin: f64,
    pub sigma: f64,
    /// Temporal-ensemble age weight magnitude.
    pub m: f64,
    pub mode: ExecMode,
    pub demo_count: usize,
    pub demo_noise: f64,
    pub demo_pause: f64,
    /// When nonempty, demos are loaded from episode files in this directory
    /// instead of being generated in-process.
    pub demo_dir: String,
    pub replay_capacity: usize,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Stop once an evaluation reaches this success rate; 0 disables.
    pub early_stop: f64,
    /// Wall-clock budget; the run aborts cleanly when exceeded.
    pub time_limit_s: f64,
    pub out_dir: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            env: "reach2d".into(),
            seed: 0,
            total_steps: 30_000,
            horizon: 8,
            levels: 3,
            bins: 5,
            atoms: 51,
            v_min: -2.0,
            v_max: 2.0,
            hidden: 64,
            batch: 32,
            gamma: 0.99,
            nstep: 3,
            utd: 0.5,
            warmup: 1000,
            lr: 3e-4,
            weight_decay: 0.1,
            tau: 0.02,
            target_interval: 1,
            rl_scale: 0.1,
            bc_scale: 1.0,
            margin: 0.1,
            sigma: 0.01,
            m: 0.01,
            mode: ExecMode::Ensemble,
            demo_count: 20,
            demo_noise: 0.1,
            demo_pause: 0.1,
            demo_dir: String::new(),
            replay_capacity: 100_000,
            eval_every: 1000,
            eval_episodes: 25,
            early_stop: 0.95,
            time_limit_s: 1200.0,
            out_dir: "runs".into(),
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("config key {key}: cannot parse {value:?}"))
}

impl Config {
    /// Applies one key=value assignment; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = value.into(),
            "seed" => self.seed = parse_as(key, value)?,
            "total_steps" => self.total_steps = parse_as(key, value)?,
            "horizon" => self.horizon = parse_as(key, value)?,
            "levels" => self.levels = parse_as(key, value)?,
            "bins" => self.bins = parse_as(key, value)?,
            "atoms" => self.atoms = parse_as(key, value)?,
            "v_min" => self.v_min = parse_as(key, value)?,
            "v_max" => self.v_max = parse_as(key, value)?,
            "hidden" => self.hidden = parse_as(key, value)?,
            "batch" => self.batch = parse_as(key, value)?,
            "gamma" => self.gamma = parse_as(key, value)?,
            "nstep" => self.nstep = parse_as(key, value)?,
            "utd" => self.utd = parse_as(key, value)?,
            "warmup" => self.warmup = parse_as(key, value)?,
            "lr" => self.lr = parse_as(key, value)?,
            "weight_decay" => self.weight_decay = parse_as(key, value)?,
            "tau" => self.tau = parse_as(key, value)?,
            "target_interval" => self.target_interval = parse_as(key, value)?,
            "rl_scale" => self.rl_scale = parse_as(key, value)?,
            "bc_scale" => self.bc_scale = parse_as(key, value)?,
            "margin" => self.margin = parse_as(key, value)?,
            "sigma" => self.sigma = parse_as(key, value)?,
            "m" => self.m = parse_as(key, value)?,
            "mode" => {
                self.mode = match value {
                    "ensemble" => ExecMode::Ensemble,
                    "receding" => ExecMode::Receding,
                    _ => bail!("config key mode: {value:?} is not ensemble or receding"),
                }
            }
            "demo_count" => self.demo_count = parse_as(key, value)?,
            "demo_noise" => self.demo_noise = parse_as(key, value)?,
            "demo_pause" => self.demo_pause = parse_as(key, value)?,
            "demo_dir" => self.demo_dir = value.into(),
            "replay_capacity" => self.replay_capacity = parse_as(key, value)?,
            "eval_every" => self.eval_every = parse_as(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_as(key, value)?,
            "early_stop" => self.early_stop = parse_as(key, value)?,
            "time_limit_s" => self.time_limit_s = parse_as(key, value)?,
            "out_dir" => self.out_dir = value.into(),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Reads `key = value` lines; '#' starts a comment, blanks are skipped.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Config::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), ln + 1))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Parses raw trailing CLI tokens of the form `--key value`.
    pub fn apply_cli_overrides(&mut self, tokens: &[String]) -> Result<()> {
        let mut it = tokens.iter();
        while let Some(tok) = it.next() {
            let key = tok
                .strip_prefix("--")
                .ok_or_else(|| anyhow!("expected --key, got {tok:?}"))?;
            let value = it
                .next()
                .ok_or_else(|| anyhow!("override --{key} is missing a value"))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        cqn_as::envs::make_env(&self.env).map_err(|e| anyhow!("config key env: {e}"))?;
        let check = |ok: bool, field: &str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("config key {field}: {why}"))
            }
        };
        check(self.total_steps >= 1, "total_steps", "must be at least 1")?;
        check(self.horizon >= 1, "horizon", "must be at least 1")?;
        check(self.levels >= 1, "levels", "must be at least 1")?;
        check(self.bins >= 2, "bins", "must be at least 2")?;
        check(self.atoms >= 2, "atoms", "must be at least 2")?;
        check(self.v_min < self.v_max, "v_min", "must be below v_max")?;
        check(self.hidden >= 1, "hidden", "must be at least 1")?;
        check(self.utd > 0.0, "utd", "must be positive")?;
        check(self.sigma >= 0.0, "sigma", "must be nonnegative")?;
        check(self.m >= 0.0, "m", "must be nonnegative")?;
        check(self.demo_count >= 1, "demo_count", "must be at least 1")?;
        check((0.0..=1.0).contains(&self.demo_noise), "demo_noise", "must be in [0, 1]")?;
        check((0.0..=1.0).contains(&self.demo_pause), "demo_pause", "must be in [0, 1]")?;
        check(self.replay_capacity >= 1, "replay_capacity", "must be at least 1")?;
        check(self.eval_every >= 1, "eval_every", "must be at least 1")?;
        check(self.eval_episodes >= 1, "eval_episodes", "must be at least 1")?;
        // 0 disables; values above 1 are legal and mean "never stop early".
        check(
            self.early_stop >= 0.0 && self.early_stop.is_finite(),
            "early_stop",
            "must be nonnegative and finite",
        )?;
        check(self.time_limit_s > 0.0, "time_limit_s", "must be positive")?;
        self.train_config()
            .validate()
            .map_err(|e| anyhow!("config key {e}"))?;
        Ok(())
    }

    pub fn critic_config(&self, obs_dim: usize, action_dims: usize) -> CriticConfig {
        let mut c = CriticConfig::new(obs_dim, action_dims, self.horizon);
        c.levels = self.levels;
        c.bins = self.bins;
        c.atoms = self.atoms;
        c.v_min = self.v_min;
        c.v_max = self.v_max;
        c.hidden = self.hidden;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            nstep: self.nstep,
            tau: self.tau,
            target_interval: self.target_interval,
            rl_scale: self.rl_scale,
            bc_scale: self.bc_scale,
            margin: self.margin,
            exploration_sigma: self.sigma,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch,
        }
    }

    /// Canonical `key = value` lines in fixed order, covering every key.
    pub fn canonical_lines(&self) -> String {
        let mode = match self.mode {
            ExecMode::Ensemble => "ensemble",
            ExecMode::Receding => "receding",
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("env", self.env.clone());
        put("seed", self.seed.to_string());
        put("total_steps", self.total_steps.to_string());
        put("horizon", self.horizon.to_string());
        put("levels", self.levels.to_string());
        put("bins", self.bins.to_string());
        put("atoms", self.atoms.to_string());
        put("v_min", self.v_min.to_string());
        put("v_max", self.v_max.to_string());
        put("hidden", self.hidden.to_string());
        put("batch", self.batch.to_string());
        put("gamma", self.gamma.to_string());
        put("nstep", self.nstep.to_string());
        put("utd", self.utd.to_string());
        put("warmup", self.warmup.to_string());
        put("lr", self.lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("tau", self.tau.to_string());
        put("target_interval", self.target_interval.to_string());
        put("rl_scale", self.rl_scale.to_string());
        put("bc_scale", self.bc_scale.to_string());
        put("margin", self.margin.to_string());
        put("sigma", self.sigma.to_string());
        put("m", self.m.to_string());
        put("mode", mode.to_string());
        put("demo_count", self.demo_count.to_string());
        put("demo_noise", self.demo_noise.to_string());
        put("demo_pause", self.demo_pause.to_string());
        put("demo_dir", self.demo_dir.clone());
        put("replay_capacity", self.replay_capacity.to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("early_stop", self.early_stop.to_string());
        put("time_limit_s", self.time_limit_s.to_string());
        put("out_dir", self.out_dir.clone());
        s
    }

    /// FNV-1a over the canonical form minus seed and output location, so
    /// the hash names the experiment, not one particular run of it.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for line in self.canonical_lines().lines() {
            if line.starts_with("seed ") || line.starts_with("out_dir ") {
                continue;
            }
            for b in line.bytes().chain([b'\n']) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }
}
