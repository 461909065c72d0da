//! The demo-driven training loop and policy evaluation.
//!
//! One thread trains; evaluation may fan out over worker threads on a
//! frozen parameter snapshot, with episode seeds keyed by global episode
//! index so the result is identical for any worker count.

use crate::config::{Config, ExecMode};
use crate::demos;
use crate::log::{EvalRow, RunLog};
use crate::seeds;
use anyhow::{anyhow, Result};
use cqn_as::critic::{greedy_sequence_batch, CriticParams};
use cqn_as::envs::{make_env, Env};
use cqn_as::executor::{explore, RecedingHorizon, TemporalEnsemble};
use cqn_as::learning::{soft_update, train_update, AtomGrid};
use cqn_as::autodiff::AdamW;
use cqn_as::replay::{ReplayStore, Transition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

pub struct TrainOutcome {
    pub log: RunLog,
    pub params: CriticParams<f32>,
    pub steps_done: u64,
    pub updates: u64,
    pub stopped_early: bool,
    pub hit_time_limit: bool,
}

enum Executor {
    Ensemble(TemporalEnsemble),
    Receding(RecedingHorizon),
}

impl Executor {
    fn fresh(cfg: &Config) -> Executor {
        match cfg.mode {
            ExecMode::Ensemble => {
                Executor::Ensemble(TemporalEnsemble::new(cfg.horizon, cfg.m))
            }
            ExecMode::Receding => Executor::Receding(RecedingHorizon::new(cfg.horizon)),
        }
    }

    /// Greedy-predicts when this step needs it, then yields the step action.
    fn act(
        &mut self,
        params: &CriticParams<f32>,
        obs: &[f64],
        t_ep: u64,
    ) -> Result<Vec<f64>> {
        match self {
            Executor::Ensemble(e) => {
                e.record(t_ep, greedy_sequence_batch(params, obs, 1)?[0].actions());
                Ok(e.ensembled_action(t_ep)?)
            }
            Executor::Receding(r) => {
                if r.needs_prediction(t_ep) {
                    r.record(t_ep, greedy_sequence_batch(params, obs, 1)?[0].actions());
                }
                Ok(r.action(t_ep)?)
            }
        }
    }
}

pub fn run_training(cfg: &Config, mut on_eval: impl FnMut(&EvalRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = make_env(&cfg.env)?;
    let spec = env.spec().clone();
    let ccfg = cfg.critic_config(spec.obs_dim, spec.action_dims);
    let tc = cfg.train_config();
    let grid = AtomGrid::new(cfg.atoms, cfg.v_min, cfg.v_max);

    let mut online: CriticParams<f32> =
        CriticParams::init(ccfg, seeds::derive(cfg.seed, seeds::INIT, 0));
    let mut target = online.clone();
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);

    let mut store = ReplayStore::new(spec.action_dims, cfg.replay_capacity);
    demos::seed_store(cfg, &mut store)?;

    let mut explore_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::EXPLORE, 0));
    let mut sample_rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::SAMPLE, 0));
    let mut log = RunLog::new(cfg.hash(), cfg.seed);
    let start = Instant::now();

    let mut exec = Executor::fresh(cfg);
    let mut episode: Option<(u64, u64, bool)> = None; // (store id, step in episode, reached)
    let mut episode_idx: u64 = 0;
    let mut obs: Vec<f64> = Vec::new();
    let mut acc = 0.0_f64;
    let (mut last_td, mut last_bc) = (0.0, 0.0);
    let mut updates: u64 = 0;

    // Clone the demos before touching the environment; otherwise the
    // untrained policy's early lucky episodes get relabeled into the demo
    // buffer and can outnumber the scripted demonstrations for good.
    for _ in 0..cfg.warmup {
        let batch = store.sample_mixed_batch(
            cfg.batch,
            cfg.horizon,
            cfg.nstep,
            spec.semantics,
            &mut sample_rng,
        )?;
        let rep = train_update(&mut online, &target, &opt, &tc, &grid, &batch)?;
        (last_td, last_bc) = (rep.td, rep.bc);
        updates += 1;
        if updates % cfg.target_interval == 0 {
            soft_update(&mut target, &online, cfg.tau)?;
        }
    }
    let mut steps_done: u64 = 0;
    let mut stopped_early = false;
    let mut hit_time_limit = false;

    for t in 0..cfg.total_steps {
        if episode.is_none() {
            let ep_seed = seeds::derive(cfg.seed, seeds::TRAIN_EPISODE, episode_idx);
            episode_idx += 1;
            obs = env.reset(ep_seed);
            episode = Some((store.begin_episode(), 0, false));
            exec = Executor::fresh(cfg);
        }
        let (id, t_ep, reached) = episode.as_mut().unwrap();
        let base = exec.act(&online, &obs, *t_ep)?;
        let action = explore(&base, cfg.sigma, &mut explore_rng);
        let out = env.step(&action);
        let rewarded = out.reward > 0.0;
        store.append(
            *id,
            Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: out.reward,
                next_obs: out.obs.clone(),
                terminal: out.done && rewarded,
                demo: false,
            },
        )?;
        obs = out.obs;
        *t_ep += 1;
        *reached |= rewarded;
        if out.done {
            let (eid, success) = (*id, *reached);
            episode = None;
            store.finalize_episode(eid, success)?;
        }
        steps_done = t + 1;

        acc += cfg.utd;
        while acc >= 1.0 {
            acc -= 1.0;
            let batch = store.sample_mixed_batch(
                cfg.batch,
                cfg.horizon,
                cfg.nstep,
                spec.semantics,
                &mut sample_rng,
            )?;
            let rep = train_update(&mut online, &target, &opt, &tc, &grid, &batch)?;
            (last_td, last_bc) = (rep.td, rep.bc);
            updates += 1;
            if updates % cfg.target_interval == 0 {
                soft_update(&mut target, &online, cfg.tau)?;
            }
        }

        if (t + 1) % cfg.eval_every == 0 {
            let round = (t + 1) / cfg.eval_every - 1;
            let sr = evaluate_critic(&online, cfg, round)?;
            let row = EvalRow {
                step: t + 1,
                success_rate: sr,
                td_loss: last_td,
                bc_loss: last_bc,
                wall_s: start.elapsed().as_secs_f64(),
            };
            log.push(row)?;
            on_eval(&row);
            if cfg.early_stop > 0.0 && sr >= cfg.early_stop {
                stopped_early = true;
                break;
            }
        }
        if start.elapsed().as_secs_f64() > cfg.time_limit_s {
            hit_time_limit = true;
            break;
        }
    }

    Ok(TrainOutcome {
        log,
        params: online,
        steps_done,
        updates,
        stopped_early,
        hit_time_limit,
    })
}

/// Success rate of the frozen critic under the noise-free ensembled policy.
pub fn evaluate_critic(params: &CriticParams<f32>, cfg: &Config, round: u64) -> Result<f64> {
    evaluate_policy(
        &|| {
            move |obs: &[f64]| Ok(greedy_sequence_batch(params, obs, 1)?[0].actions())
        },
        &cfg.env,
        cfg.eval_episodes,
        cfg.horizon,
        cfg.m,
        cfg.seed,
        round,
    )
}

/// Runs `episodes` fresh seeded episodes of the sequence policy through a
/// temporal ensemble (no exploration noise) and returns the success rate.
/// The factory builds one policy per worker thread.
pub fn evaluate_policy<F, P>(
    factory: &F,
    env_name: &str,
    episodes: usize,
    horizon: usize,
    m: f64,
    seed: u64,
    round: u64,
) -> Result<f64>
where
    F: Fn() -> P + Sync,
    P: FnMut(&[f64]) -> Result<Vec<Vec<f64>>> + Send,
{
    if episodes == 0 {
        return Err(anyhow!("evaluation needs at least one episode"));
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(episodes);
    let chunk = episodes.div_ceil(workers);
    let wins = std::thread::scope(|s| -> Result<usize> {
        let mut handles = Vec::new();
        for w in 0..workers {
            let (lo, hi) = (w * chunk, ((w + 1) * chunk).min(episodes));
            if lo >= hi {
                break;
            }
            handles.push(s.spawn(move || -> Result<usize> {
                let mut env = make_env(env_name)?;
                let mut policy = factory();
                let mut wins = 0;
                for i in lo..hi {
                    let ep_seed = seeds::derive(
                        seed,
                        seeds::EVAL_EPISODE,
                        round * episodes as u64 + i as u64,
                    );
                    wins += run_eval_episode(env.as_mut(), &mut policy, horizon, m, ep_seed)?
                        as usize;
                }
                Ok(wins)
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .sum()
    })?;
    Ok(wins as f64 / episodes as f64)
}

fn run_eval_episode<P: FnMut(&[f64]) -> Result<Vec<Vec<f64>>>>(
    env: &mut dyn Env,
    policy: &mut P,
    horizon: usize,
    m: f64,
    ep_seed: u64,
) -> Result<bool> {
    let mut ens = TemporalEnsemble::new(horizon, m);
    let mut obs = env.reset(ep_seed);
    let mut t = 0u64;
    loop {
        ens.record(t, policy(&obs)?);
        let out = env.step(&ens.ensembled_action(t)?);
        if out.reward > 0.0 {
            return Ok(true);
        }
        if out.done {
            return Ok(false);
        }
        obs = out.obs;
        t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::rows_match_ignoring_wall;
    use rand::Rng;

    fn tiny_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.total_steps = 40;
        cfg.eval_every = 20;
        cfg.eval_episodes = 2;
        cfg.horizon = 2;
        cfg.levels = 2;
        cfg.bins = 3;
        cfg.atoms = 5;
        cfg.hidden = 8;
        cfg.batch = 4;
        cfg.demo_count = 2;
        cfg.early_stop = 0.0;
        cfg.warmup = 0;
        cfg
    }

    #[test]
    fn zero_eval_episodes_is_an_error() {
        let err = evaluate_policy(
            &|| |_: &[f64]| Ok(vec![vec![0.0; 2]; 2]),
            "reach2d",
            0,
            2,
            0.01,
            0,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("episode"));
    }

    #[test]
    fn expert_policy_evaluates_to_one() {
        // reach2d observations end with the goal gap; the expert reads it
        // directly, so the sequence is the current action repeated
        let sr = evaluate_policy(
            &|| {
                |obs: &[f64]| {
                    let a = vec![
                        (2.0 * obs[4]).clamp(-1.0, 1.0),
                        (2.0 * obs[5]).clamp(-1.0, 1.0),
                    ];
                    Ok(vec![a; 4])
                }
            },
            "reach2d",
            10,
            4,
            0.01,
            0,
            0,
        )
        .unwrap();
        assert_eq!(sr, 1.0);
    }

    #[test]
    fn random_policy_rarely_succeeds_on_sparse_reach() {
        let sr = evaluate_policy(
            &|| {
                let mut rng = ChaCha8Rng::seed_from_u64(0xBAD);
                move |_: &[f64]| {
                    Ok((0..4)
                        .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                        .collect())
                }
            },
            "reach2d",
            25,
            4,
            0.01,
            1,
            0,
        )
        .unwrap();
        assert!(sr < 0.1, "random policy scored {sr}");
    }

    #[test]
    fn training_is_deterministic_and_honors_utd() {
        let cfg = tiny_cfg();
        let a = run_training(&cfg, |_| {}).unwrap();
        let b = run_training(&cfg, |_| {}).unwrap();
        assert!(rows_match_ignoring_wall(&a.log.rows, &b.log.rows));
        assert_eq!(a.steps_done, 40);
        assert_eq!(a.updates, 20, "utd 0.5 means one update per two env steps");
        assert_eq!(a.log.rows.len(), 2);
        assert_eq!(a.log.rows[0].step, 20);
        assert_eq!(a.log.rows[1].step, 40);
        for (x, y) in a.params.tensors().iter().zip(b.params.tensors()) {
            assert_eq!(x.values, y.values, "parameters must reproduce bit-exactly");
        }

        let mut double = tiny_cfg();
        double.utd = 2.0;
        let c = run_training(&double, |_| {}).unwrap();
        assert_eq!(c.updates, 80);
    }

    #[test]
    fn receding_horizon_mode_runs_the_same_loop() {
        let mut cfg = tiny_cfg();
        cfg.mode = ExecMode::Receding;
        let out = run_training(&cfg, |_| {}).unwrap();
        assert_eq!(out.steps_done, 40);
        assert_eq!(out.updates, 20);
    }

    #[test]
    fn time_limit_aborts_cleanly() {
        let mut cfg = tiny_cfg();
        cfg.time_limit_s = 1e-9;
        let out = run_training(&cfg, |_| {}).unwrap();
        assert!(out.hit_time_limit);
        assert!(out.steps_done < 40);
    }
}
