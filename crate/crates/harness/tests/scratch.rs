//! Throwaway diagnostics; deleted before release.

use cqn_as::critic::{greedy_sequence_batch, CriticParams};
use cqn_as::envs::make_env;
use cqn_as::executor::TemporalEnsemble;
use cqn_as::autodiff::load_checkpoint;
use cqn_as_harness::config::Config;
use cqn_as_harness::demos::generate_demos;
use cqn_as_harness::seeds;

#[test]
#[ignore]
fn demo_quality() {
    let cfg = Config::default();
    let recs = generate_demos(&cfg).unwrap();
    let succ = recs.iter().filter(|r| r.success).count();
    let lens: Vec<usize> = recs.iter().map(|r| r.transitions.len()).collect();
    println!("demos {} success {} lens {:?}", recs.len(), succ, lens);
    let total: usize = recs
        .iter()
        .filter(|r| r.success)
        .map(|r| r.transitions.len())
        .sum();
    println!("successful demo transitions: {total}");
}

#[test]
#[ignore]
fn offline_bc_only() {
    use cqn_as::learning::{soft_update, train_update, AtomGrid};
    use cqn_as::autodiff::AdamW;
    use cqn_as::replay::ReplayStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut cfg = Config::default();
    if let Ok(h) = std::env::var("HID") {
        cfg.hidden = h.parse().unwrap();
    }
    if let Ok(b) = std::env::var("BATCH") {
        cfg.batch = b.parse().unwrap();
    }
    if let Ok(l) = std::env::var("LR") {
        cfg.lr = l.parse().unwrap();
    }
    let updates: u64 = std::env::var("UPD").map(|v| v.parse().unwrap()).unwrap_or(8000);
    let mut env = make_env(&cfg.env).unwrap();
    let spec = env.spec().clone();
    let ccfg = cfg.critic_config(spec.obs_dim, spec.action_dims);
    let mut tc = cfg.train_config();
    tc.rl_scale = 0.0;
    let grid = AtomGrid::new(cfg.atoms, cfg.v_min, cfg.v_max);
    let mut online: CriticParams<f32> = CriticParams::init(ccfg, 1);
    let mut target = online.clone();
    let opt = AdamW::new(cfg.lr, cfg.weight_decay);

    let mut store = ReplayStore::new(spec.action_dims, cfg.replay_capacity);
    let recs = generate_demos(&cfg).unwrap();
    for r in recs {
        store.add_demo_episode(r.transitions, r.success).unwrap();
    }
    println!("demo transitions {}", store.demo_len());

    // all demo states with their expert level-1 step-0 bins
    let demo_obs: Vec<(Vec<f64>, Vec<usize>)> = {
        use cqn_as::c2f::{action_to_level_path, ActionSpaceSpec, Semantics};
        let aspec =
            ActionSpaceSpec::new(spec.action_dims, cfg.levels, cfg.bins, Semantics::Position);
        let recs = generate_demos(&cfg).unwrap();
        recs.iter()
            .flat_map(|r| r.transitions.iter())
            .map(|t| {
                let p = action_to_level_path(&aspec, &t.action).unwrap();
                (t.obs.clone(), p.bins[0].clone())
            })
            .collect()
    };
    let agreement = |params: &CriticParams<f32>| -> f64 {
        let mut hit = 0usize;
        let mut all = 0usize;
        for (obs, bins) in &demo_obs {
            let p = &greedy_sequence_batch(params, obs, 1).unwrap()[0];
            for n in 0..spec.action_dims {
                hit += (p.bins[0][0][n] == bins[n]) as usize;
                all += 1;
            }
        }
        hit as f64 / all as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for u in 0..updates {
        let batch = store
            .sample_mixed_batch(cfg.batch, cfg.horizon, cfg.nstep, spec.semantics, &mut rng)
            .unwrap();
        let rep = train_update(&mut online, &target, &opt, &tc, &grid, &batch).unwrap();
        if u % 1000 == 0 {
            println!("update {u}: bc {:.4} level1-step0 agreement {:.3}", rep.bc, agreement(&online));
        }
        soft_update(&mut target, &online, cfg.tau).unwrap();
    }
    println!("final agreement {:.3}", agreement(&online));

    // greedy closed-loop evaluation, no ensemble
    let mut wins = 0;
    let mut slow = 0;
    for i in 0..50u64 {
        let ep_seed = seeds::derive(cfg.seed, seeds::EVAL_EPISODE, i);
        let mut obs = env.reset(ep_seed);
        let mut t = 0;
        let won = loop {
            let a = greedy_sequence_batch(&online, &obs, 1).unwrap()[0].actions();
            let out = env.step(&a[0]);
            if out.reward > 0.0 {
                break true;
            }
            if out.done {
                break false;
            }
            obs = out.obs;
            t += 1;
        };
        wins += won as usize;
        slow += (t >= 25) as usize;
    }
    println!("offline BC greedy: {wins}/50 wins, {slow} episodes ran 25+ steps");
}

#[test]
#[ignore]
fn failure_geometry() {
    let cfg = Config::default();
    let ckpt = std::env::var("CKPT")
        .unwrap_or_else(|_| "/tmp/c7/reach2d-0b5ae5fddce89e89-seed0/params.ckpt".into());
    let named = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let mut env = make_env(&cfg.env).unwrap();
    let spec = env.spec().clone();
    let mut params: CriticParams<f32> =
        CriticParams::zeroed(cfg.critic_config(spec.obs_dim, spec.action_dims));
    params.load_values(&named).unwrap();

    let mut fails = 0;
    for i in 0..100u64 {
        let ep_seed = seeds::derive(cfg.seed, seeds::EVAL_EPISODE, i);
        let mut obs = env.reset(ep_seed);
        let start = (obs[0], obs[1]);
        let goal = (obs[2], obs[3]);
        let mut ens = TemporalEnsemble::new(cfg.horizon, cfg.m);
        let mut t = 0u64;
        let mut min_d = f64::INFINITY;
        let mut traj = vec![start];
        let won = loop {
            let seq = greedy_sequence_batch(&params, &obs, 1).unwrap()[0].actions();
            ens.record(t, seq);
            let out = env.step(&ens.ensembled_action(t).unwrap());
            let gap = (out.obs[4], out.obs[5]);
            let dist = (gap.0 * gap.0 + gap.1 * gap.1).sqrt();
            min_d = min_d.min(dist);
            traj.push((out.obs[0], out.obs[1]));
            if out.reward > 0.0 {
                break true;
            }
            if out.done {
                break false;
            }
            obs = out.obs;
            t += 1;
        };
        if !won {
            fails += 1;
            let last = traj.last().unwrap();
            println!(
                "FAIL ep {i}: start ({:+.2},{:+.2}) goal ({:+.2},{:+.2}) end ({:+.2},{:+.2}) min_d {:.3} len {}",
                start.0, start.1, goal.0, goal.1, last.0, last.1, min_d, traj.len()
            );
            if fails <= 3 {
                for (j, p) in traj.iter().enumerate() {
                    println!("   t{j:02} ({:+.3},{:+.3})", p.0, p.1);
                }
            }
        }
    }
    println!("fails: {fails}/100");
}

#[test]
#[ignore]
fn mode_compare() {
    let cfg = Config::default();
    let ckpt = std::env::var("CKPT").unwrap();
    let named = load_checkpoint(std::path::Path::new(&ckpt)).unwrap();
    let mut env = make_env(&cfg.env).unwrap();
    let spec = env.spec().clone();
    let mut params: CriticParams<f32> =
        CriticParams::zeroed(cfg.critic_config(spec.obs_dim, spec.action_dims));
    params.load_values(&named).unwrap();

    for m in [cfg.m, 1e6] {
        let mut wins = 0usize;
        let mut len_sum = 0usize;
        for i in 0..200u64 {
            let ep_seed = seeds::derive(cfg.seed, seeds::EVAL_EPISODE, i);
            let mut obs = env.reset(ep_seed);
            let mut ens = TemporalEnsemble::new(cfg.horizon, m);
            let mut t = 0u64;
            let won = loop {
                let seq = greedy_sequence_batch(&params, &obs, 1).unwrap()[0].actions();
                ens.record(t, seq);
                let out = env.step(&ens.ensembled_action(t).unwrap());
                if out.reward > 0.0 {
                    break true;
                }
                if out.done {
                    break false;
                }
                obs = out.obs;
                t += 1;
            };
            if won {
                wins += 1;
                len_sum += t as usize + 1;
            }
        }
        println!(
            "m {m:>8}: success {}/200, mean winning length {:.1}",
            wins,
            len_sum as f64 / wins.max(1) as f64
        );
    }
}
