//! Reaching tasks under position semantics: actions command target-position
//! offsets that the state tracks with a first-order lag. `reach2d` moves a
//! single 2-d point; `arm_reach` couples three lagged 2-d segments whose sum
//! is the end effector, giving six action dimensions with a shared goal.

use super::{Env, EnvSpec, StepOut};
use crate::c2f::Semantics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct ReachEnv {
    spec: EnvSpec,
    segments: usize,
    /// Fraction of the commanded offset covered per step.
    gain: f64,
    /// Workspace units of offset per unit of action.
    reach_scale: f64,
    /// Expert proportional gain on the goal gap.
    kp: f64,
    /// Per-axis clamp on each segment position.
    limit: f64,
    joints: Vec<f64>,
    goal: [f64; 2],
    steps: usize,
}

impl ReachEnv {
    pub fn reach2d() -> Self {
        ReachEnv {
            spec: EnvSpec {
                name: "reach2d",
                obs_dim: 6,
                action_dims: 2,
                semantics: Semantics::Position,
                max_steps: 30,
                success_radius: 0.05,
            },
            segments: 1,
            gain: 0.1,
            reach_scale: 1.0,
            kp: 2.0,
            limit: 1.2,
            joints: vec![0.0; 2],
            goal: [0.0; 2],
            steps: 0,
        }
    }

    pub fn arm_reach() -> Self {
        ReachEnv {
            spec: EnvSpec {
                name: "arm_reach",
                obs_dim: 10,
                action_dims: 6,
                semantics: Semantics::Position,
                max_steps: 30,
                success_radius: 0.05,
            },
            segments: 3,
            gain: 0.1,
            reach_scale: 1.0,
            kp: 2.0,
            limit: 0.8,
            joints: vec![0.0; 6],
            goal: [0.0; 2],
            steps: 0,
        }
    }

    fn end_effector(&self) -> [f64; 2] {
        let mut e = [0.0; 2];
        for j in 0..self.segments {
            e[0] += self.joints[2 * j];
            e[1] += self.joints[2 * j + 1];
        }
        e
    }

    fn distance(&self) -> f64 {
        let e = self.end_effector();
        ((e[0] - self.goal[0]).powi(2) + (e[1] - self.goal[1]).powi(2)).sqrt()
    }

    fn observe(&self) -> Vec<f64> {
        let e = self.end_effector();
        let mut obs = self.joints.clone();
        obs.extend_from_slice(&self.goal);
        obs.push(self.goal[0] - e[0]);
        obs.push(self.goal[1] - e[1]);
        obs
    }
}

impl Env for ReachEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(2).wrapping_add(self.segments as u64));
        let start_range = if self.segments == 1 { 0.8 } else { 0.25 };
        for j in self.joints.iter_mut() {
            *j = rng.gen_range(-start_range..start_range);
        }
        let goal_range = if self.segments == 1 { 0.8 } else { 0.9 };
        loop {
            self.goal = [
                rng.gen_range(-goal_range..goal_range),
                rng.gen_range(-goal_range..goal_range),
            ];
            if self.distance() >= 0.3 {
                break;
            }
        }
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        assert_eq!(action.len(), self.spec.action_dims);
        for (j, &a) in self.joints.iter_mut().zip(action) {
            let target = *j + a.clamp(-1.0, 1.0) * self.reach_scale;
            *j += self.gain * (target - *j);
            *j = j.clamp(-self.limit, self.limit);
        }
        self.steps += 1;
        let reward = if self.distance() < self.spec.success_radius { 1.0 } else { 0.0 };
        let done = reward > 0.0 || self.steps >= self.spec.max_steps;
        StepOut { obs: self.observe(), reward, done }
    }

    fn expert_action(&self) -> Vec<f64> {
        let e = self.end_effector();
        let diff = [self.goal[0] - e[0], self.goal[1] - e[1]];
        let per_seg = self.kp / (self.segments as f64 * self.reach_scale);
        let mut a = Vec::with_capacity(self.spec.action_dims);
        for _ in 0..self.segments {
            a.push((diff[0] * per_seg).clamp(-1.0, 1.0));
            a.push((diff[1] * per_seg).clamp(-1.0, 1.0));
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn at_goal_rewards_immediately() {
        let mut env = ReachEnv::reach2d();
        env.reset(0);
        env.joints = vec![0.3, -0.2];
        env.goal = [0.3, -0.2];
        let out = env.step(&[0.0, 0.0]);
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
    }

    #[test]
    fn zero_action_holds_position() {
        let mut env = ReachEnv::reach2d();
        let obs = env.reset(5);
        let out = env.step(&[0.0, 0.0]);
        assert_eq!(out.obs[..2], obs[..2], "lagged tracking of the current position is a fixed point");
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn one_step_success_from_the_edge_of_the_radius() {
        let mut env = ReachEnv::reach2d();
        env.reset(0);
        env.joints = vec![0.1, 0.4];
        env.goal = [0.15, 0.4];
        assert_relative_eq!(env.distance(), 0.05, epsilon = 1e-15);
        // commanded target exactly the goal; the lag covers 10% of the gap
        let out = env.step(&[0.05, 0.0]);
        assert_relative_eq!(env.distance(), 0.045, epsilon = 1e-12);
        assert_eq!(out.reward, 1.0);
        assert!(out.done);
    }

    #[test]
    fn expert_reaches_goal_within_budget() {
        for mut env in [ReachEnv::reach2d(), ReachEnv::arm_reach()] {
            for seed in 0..10 {
                env.reset(seed);
                let mut rewarded = false;
                for _ in 0..env.spec.max_steps {
                    let out = env.step(&env.expert_action());
                    if out.done {
                        rewarded = out.reward > 0.0;
                        break;
                    }
                }
                assert!(rewarded, "{} seed {seed} did not reach", env.spec.name);
            }
        }
    }

    #[test]
    fn timeout_ends_episode_without_reward() {
        let mut env = ReachEnv::reach2d();
        env.reset(2);
        let mut last = None;
        for _ in 0..env.spec.max_steps {
            last = Some(env.step(&[0.0, 0.0]));
        }
        let last = last.unwrap();
        assert!(last.done);
        assert_eq!(last.reward, 0.0);
        assert_eq!(env.steps, env.spec.max_steps);
    }

    #[test]
    fn arm_exposes_goal_gap_of_the_summed_segments() {
        let mut env = ReachEnv::arm_reach();
        env.reset(0);
        env.joints = vec![0.1, 0.2, -0.3, 0.1, 0.25, -0.05];
        env.goal = [0.4, -0.1];
        let obs = env.observe();
        assert_eq!(obs.len(), 10);
        assert_relative_eq!(obs[8], 0.4 - 0.05, epsilon = 1e-15);
        assert_relative_eq!(obs[9], -0.1 - 0.25, epsilon = 1e-15);
    }

    #[test]
    fn segments_clamp_at_workspace_walls() {
        let mut env = ReachEnv::arm_reach();
        env.reset(1);
        for _ in 0..200 {
            env.steps = 0; // keep stepping past the usual timeout
            env.step(&[1.0; 6]);
        }
        for &j in &env.joints {
            assert!(j <= env.limit + 1e-12);
        }
        assert_relative_eq!(env.joints[0], env.limit, epsilon = 1e-9);
    }
}
