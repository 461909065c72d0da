//! Desk-scale continuous-control environments with sparse rewards, plus a
//! scripted demonstration generator that injects Gaussian noise and idle
//! pauses to emulate human-collected demos.
//!
//! All actions live in [-1,1]^N. Rewards are 0/1 and granted once per
//! episode on first success, after which the episode ends, so discounted
//! returns stay inside the critic's value support.

mod pendulum;
mod reach;

pub use pendulum::Pendulum;
pub use reach::ReachEnv;

use crate::c2f::Semantics;
use crate::error::{CoreError, Result};
use crate::replay::Transition;
use rand::Rng;

/// Static description of an environment instance.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action_dims: usize,
    pub semantics: Semantics,
    pub max_steps: usize,
    pub success_radius: f64,
}

pub struct StepOut {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; the seed fully determines it given the
    /// subsequent action stream.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOut;
    /// Analytic expert (proportional controller) for the current state.
    fn expert_action(&self) -> Vec<f64>;
}

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "reach2d" => Ok(Box::new(ReachEnv::reach2d())),
        "arm_reach" => Ok(Box::new(ReachEnv::arm_reach())),
        "pendulum" => Ok(Box::new(Pendulum::new())),
        _ => Err(CoreError::InvalidInput(format!(
            "unknown environment {name:?}; expected reach2d, arm_reach or pendulum"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeSource {
    ScriptedDemo,
    Online,
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub success: bool,
    pub source: EpisodeSource,
}

fn idle_action(semantics: Semantics, last: &Option<Vec<f64>>, dims: usize) -> Vec<f64> {
    match (semantics, last) {
        // a held position target is re-issued; torque pauses apply nothing
        (Semantics::Position, Some(a)) => a.clone(),
        _ => vec![0.0; dims],
    }
}

/// Rolls out the environment's expert with Gaussian action noise; with
/// probability `pause_prob` per emitted step a run of 1 to 5 idle actions
/// is inserted instead. The success flag reflects what actually happened.
pub fn scripted_demo(
    env: &mut dyn Env,
    episode_seed: u64,
    noise: f64,
    pause_prob: f64,
    rng: &mut impl Rng,
) -> EpisodeRecord {
    let (dims, semantics) = (env.spec().action_dims, env.spec().semantics);
    let mut obs = env.reset(episode_seed);
    let mut transitions = Vec::new();
    let mut last_action: Option<Vec<f64>> = None;
    let mut pending_idle = 0usize;
    loop {
        let action = if pending_idle > 0 {
            pending_idle -= 1;
            idle_action(semantics, &last_action, dims)
        } else if pause_prob > 0.0 && rng.gen::<f64>() < pause_prob {
            pending_idle = rng.gen_range(1..=5) - 1;
            idle_action(semantics, &last_action, dims)
        } else {
            crate::executor::explore(&env.expert_action(), noise, rng)
        };
        let out = env.step(&action);
        transitions.push(Transition {
            obs: obs.clone(),
            action: action.clone(),
            reward: out.reward,
            next_obs: out.obs.clone(),
            terminal: out.done && out.reward > 0.0,
            demo: true,
        });
        last_action = Some(action);
        obs = out.obs;
        if out.done {
            break;
        }
    }
    let success = transitions.iter().any(|t| t.reward > 0.0);
    EpisodeRecord { transitions, success, source: EpisodeSource::ScriptedDemo }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factory_knows_all_environments() {
        for name in ["reach2d", "arm_reach", "pendulum"] {
            let env = make_env(name).unwrap();
            assert_eq!(env.spec().name, name);
        }
        assert!(make_env("walker").is_err());
    }

    #[test]
    fn clean_expert_succeeds_on_every_env() {
        for name in ["reach2d", "arm_reach", "pendulum"] {
            let mut env = make_env(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for ep in 0..5 {
                let rec = scripted_demo(env.as_mut(), ep, 0.0, 0.0, &mut rng);
                assert!(rec.success, "{name} episode {ep} failed without noise");
                assert_eq!(rec.transitions.iter().filter(|t| t.reward > 0.0).count(), 1);
                let last = rec.transitions.last().unwrap();
                assert_eq!(last.reward, 1.0);
                assert!(last.terminal);
            }
        }
    }

    #[test]
    fn constant_pausing_times_out() {
        let mut env = make_env("reach2d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = scripted_demo(env.as_mut(), 3, 0.0, 1.0, &mut rng);
        assert!(!rec.success);
        assert_eq!(rec.transitions.len(), env.spec().max_steps);
        assert!(!rec.transitions.last().unwrap().terminal, "timeout is not termination");
        // nothing but idle actions was ever issued
        for t in &rec.transitions {
            assert!(t.action.iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn noisy_paused_demos_mostly_succeed() {
        let mut env = make_env("reach2d").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut successes = 0;
        for ep in 0..20 {
            if scripted_demo(env.as_mut(), 100 + ep, 0.1, 0.1, &mut rng).success {
                successes += 1;
            }
        }
        assert!(successes >= 10, "only {successes}/20 noisy demos succeeded");
    }

    #[test]
    fn same_seed_gives_bit_identical_episodes() {
        for name in ["reach2d", "arm_reach", "pendulum"] {
            let mut a = make_env(name).unwrap();
            let mut b = make_env(name).unwrap();
            let mut ra = ChaCha8Rng::seed_from_u64(9);
            let mut rb = ChaCha8Rng::seed_from_u64(9);
            let ea = scripted_demo(a.as_mut(), 42, 0.05, 0.2, &mut ra);
            let eb = scripted_demo(b.as_mut(), 42, 0.05, 0.2, &mut rb);
            assert_eq!(ea.transitions.len(), eb.transitions.len());
            for (x, y) in ea.transitions.iter().zip(&eb.transitions) {
                assert_eq!(x.obs, y.obs, "{name} diverged");
                assert_eq!(x.action, y.action);
                assert_eq!(x.reward, y.reward);
            }
        }
    }

    #[test]
    fn observations_stay_bounded_under_random_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for name in ["reach2d", "arm_reach", "pendulum"] {
            let mut env = make_env(name).unwrap();
            let dims = env.spec().action_dims;
            for ep in 0..3 {
                let mut obs = env.reset(ep);
                loop {
                    assert!(obs.iter().all(|v| v.is_finite() && v.abs() < 50.0), "{name}");
                    let a: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let out = env.step(&a);
                    obs = out.obs;
                    assert!(out.reward == 0.0 || out.reward == 1.0);
                    if out.done {
                        break;
                    }
                }
            }
        }
    }
}
