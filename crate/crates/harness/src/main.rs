use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cqn_as::autodiff::{load_checkpoint, save_checkpoint};
use cqn_as::critic::CriticParams;
use cqn_as::envs::make_env;
use cqn_as::error::CoreError;
use cqn_as_harness::config::Config;
use cqn_as_harness::{demos, log as runlog, rtg, run, svg, sweep};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cqn-as", version, about = "Coarse-to-fine Q-learning over action sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as repeated `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a critic; writes log.csv, config.txt and params.ckpt.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint with the noise-free ensembled policy.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate scripted demonstrations as episode files.
    GenDemos(ConfigArgs),
    /// Return-to-go regression across sequence lengths.
    RtgExp {
        /// Comma-separated sequence lengths to compare.
        #[arg(long, default_value = "1,2,4,8")]
        ks: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train across the values of one config key and several seeds.
    Sweep {
        #[arg(long)]
        key: String,
        /// Comma-separated values for the swept key.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-plot existing CSV logs; inputs are grouped into one curve per
    /// parent directory.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "learning curves")]
        title: String,
        csvs: Vec<PathBuf>,
    },
}

/// Marker wrapper: anything that went wrong while assembling or validating
/// the configuration, reported with exit code 2.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn build_config(args: &ConfigArgs) -> Result<Config> {
    let build = || -> Result<Config> {
        let mut cfg = match &args.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_cli_overrides(&args.overrides)?;
        if let Ok(dir) = std::env::var("CQN_AS_OUT_DIR") {
            if !dir.is_empty() {
                cfg.out_dir = dir;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    };
    build().map_err(|e| anyhow::Error::new(ConfigError(e)))
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| anyhow!("cannot parse {what} entry {t:?}")))
        .collect()
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let run_dir = Path::new(&cfg.out_dir)
        .join(format!("{}-{}-seed{}", cfg.env, cfg.hash(), cfg.seed));
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating {}", run_dir.display()))?;
    println!("training {} into {}", cfg.env, run_dir.display());
    let out = run::run_training(&cfg, |row| {
        println!(
            "step {:>7}  success {:.3}  td {:.4}  bc {:.4}  [{:.0}s]",
            row.step, row.success_rate, row.td_loss, row.bc_loss, row.wall_s
        );
    })?;
    std::fs::write(run_dir.join("config.txt"), cfg.canonical_lines())?;
    out.log.write_csv(&run_dir.join("log.csv"))?;
    save_checkpoint(&run_dir.join("params.ckpt"), &out.params.tensors())?;
    let why = if out.stopped_early {
        "stopped early at success threshold"
    } else if out.hit_time_limit {
        "hit the wall-clock limit"
    } else {
        "ran to the step budget"
    };
    println!(
        "done: {} env steps, {} updates, final success {} ({why})",
        out.steps_done,
        out.updates,
        out.log.final_success().map_or("n/a".into(), |s| format!("{s:.3}")),
    );
    Ok(())
}

fn cmd_eval(ckpt: &Path, args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let tensors = load_checkpoint(ckpt)?;
    let spec = make_env(&cfg.env)?.spec().clone();
    let mut params: CriticParams<f32> =
        CriticParams::zeroed(cfg.critic_config(spec.obs_dim, spec.action_dims));
    params.load_values(&tensors)?;
    let sr = run::evaluate_critic(&params, &cfg, 0)?;
    println!("success rate over {} episodes: {sr:.3}", cfg.eval_episodes);
    Ok(())
}

fn cmd_gen_demos(args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let records = demos::generate_demos(&cfg)?;
    let dir = if cfg.demo_dir.is_empty() {
        Path::new(&cfg.out_dir).join("demos")
    } else {
        PathBuf::from(&cfg.demo_dir)
    };
    demos::save_demo_files(&dir, &records, &cfg)?;
    let wins = records.iter().filter(|r| r.success).count();
    let steps: usize = records.iter().map(|r| r.transitions.len()).sum();
    println!(
        "wrote {} episodes ({} successful, {:.1} steps on average) to {}",
        records.len(),
        wins,
        steps as f64 / records.len() as f64,
        dir.display()
    );
    Ok(())
}

fn cmd_rtg(ks: &str, args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let ks: Vec<usize> = parse_list("ks", ks).map_err(|e| anyhow::Error::new(ConfigError(e)))?;
    let records = if cfg.demo_dir.is_empty() {
        demos::generate_demos(&cfg)?
    } else {
        demos::load_demo_files(Path::new(&cfg.demo_dir))?
    };
    let semantics = make_env(&cfg.env)?.spec().semantics;
    let rows = rtg::rtg_regression(&records, &ks, cfg.gamma, semantics, cfg.seed)?;
    println!("K   validation L1");
    let mut csv = String::from("k,val_l1\n");
    for r in &rows {
        println!("{:<3} {:.5}", r.k, r.val_l1);
        csv.push_str(&format!("{},{}\n", r.k, r.val_l1));
    }
    let out = Path::new(&cfg.out_dir);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("rtg.csv"), csv)?;
    Ok(())
}

fn cmd_sweep(key: &str, values: &str, seeds: &str, args: &ConfigArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let values: Vec<String> = parse_list("values", values)
        .map_err(|e| anyhow::Error::new(ConfigError(e)))?;
    let seeds: Vec<u64> =
        parse_list("seeds", seeds).map_err(|e| anyhow::Error::new(ConfigError(e)))?;
    if values.is_empty() || seeds.is_empty() {
        return Err(anyhow::Error::new(ConfigError(anyhow!(
            "sweep needs at least one value and one seed"
        ))));
    }
    let arms = sweep::run_sweep(&cfg, key, &values, &seeds, |value, seed, out| {
        println!(
            "{key}={value} seed {seed}: final success {} after {} steps",
            out.log.final_success().map_or("n/a".into(), |s| format!("{s:.3}")),
            out.steps_done
        );
    })?;
    let svg_path = sweep::write_artifacts(Path::new(&cfg.out_dir), key, &arms)?;
    for arm in &arms {
        let finals: Vec<f64> = arm.logs.iter().filter_map(|l| l.final_success()).collect();
        let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
        println!("{key}={}: mean final success {mean:.3}", arm.value);
    }
    println!("sweep artifacts under {}", svg_path.parent().unwrap().display());
    Ok(())
}

fn cmd_plot(out: &Path, title: &str, csvs: &[PathBuf]) -> Result<()> {
    if csvs.is_empty() {
        bail!("no CSV files given");
    }
    let mut groups: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for path in csvs {
        let rows = runlog::read_csv_file(path)?;
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| "runs".to_string(), |n| n.to_string_lossy().into_owned());
        groups
            .entry(label)
            .or_default()
            .push(rows.iter().map(|r| (r.step as f64, r.success_rate)).collect());
    }
    let series: Vec<svg::Series> = groups
        .into_iter()
        .map(|(label, runs)| svg::Series { label, runs })
        .collect();
    let image = svg::learning_curves(title, "env step", "success rate", &series)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, image).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval { ckpt, cfg } => cmd_eval(ckpt, cfg),
        Cmd::GenDemos(args) => cmd_gen_demos(args),
        Cmd::RtgExp { ks, cfg } => cmd_rtg(ks, cfg),
        Cmd::Sweep { key, values, seeds, cfg } => cmd_sweep(key, values, seeds, cfg),
        Cmd::Plot { out, title, csvs } => cmd_plot(out, title, csvs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(2)
            } else if e
                .chain()
                .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Diverged(_))))
            {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
