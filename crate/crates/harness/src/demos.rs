//! Demonstration supply for a run: scripted generation, episode-file
//! persistence, and seeding of the replay store. Failed demos are kept and
//! routed to the online buffer by the store itself.

use crate::config::Config;
use crate::seeds;
use anyhow::{bail, Context, Result};
use cqn_as::envs::{make_env, scripted_demo, EpisodeRecord, EpisodeSource};
use cqn_as::replay::{load_episode_file, save_episode_file, ReplayStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub fn generate_demos(cfg: &Config) -> Result<Vec<EpisodeRecord>> {
    let mut env = make_env(&cfg.env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::DEMO_NOISE, 0));
    let mut out = Vec::with_capacity(cfg.demo_count);
    for i in 0..cfg.demo_count {
        let ep_seed = seeds::derive(cfg.seed, seeds::DEMO_EPISODE, i as u64);
        out.push(scripted_demo(
            env.as_mut(),
            ep_seed,
            cfg.demo_noise,
            cfg.demo_pause,
            &mut rng,
        ));
    }
    Ok(out)
}

pub fn save_demo_files(dir: &Path, records: &[EpisodeRecord], cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let semantics = make_env(&cfg.env)?.spec().semantics;
    for (i, rec) in records.iter().enumerate() {
        let path = dir.join(format!("demo_{i:03}.ep"));
        save_episode_file(&path, &rec.transitions, semantics, rec.success)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn load_demo_files(dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading demo dir {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ep"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .ep episode files in {}", dir.display());
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let (transitions, _semantics, success) =
            load_episode_file(&p).with_context(|| format!("loading {}", p.display()))?;
        out.push(EpisodeRecord { transitions, success, source: EpisodeSource::ScriptedDemo });
    }
    Ok(out)
}

/// Loads or generates demos per config and feeds them to the store.
/// Returns (episodes, successes).
pub fn seed_store(cfg: &Config, store: &mut ReplayStore) -> Result<(usize, usize)> {
    let records = if cfg.demo_dir.is_empty() {
        generate_demos(cfg)?
    } else {
        load_demo_files(Path::new(&cfg.demo_dir))?
    };
    let total = records.len();
    let mut successes = 0;
    for rec in records {
        successes += rec.success as usize;
        store.add_demo_episode(rec.transitions, rec.success)?;
    }
    Ok((total, successes))
}
