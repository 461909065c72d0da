//! Torque-controlled pendulum stabilization. The angle is measured from
//! upright; an episode starts displaced and earns its single reward by
//! arriving upright slowly enough. Integration is semi-implicit Euler, so
//! the undamped, unforced system conserves energy to first order.

use super::{Env, EnvSpec, StepOut};
use crate::c2f::Semantics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub struct Pendulum {
    spec: EnvSpec,
    /// Gravity acceleration term g/L in rad/s^2.
    gravity: f64,
    /// Angular acceleration per unit of action.
    torque_gain: f64,
    damping: f64,
    dt: f64,
    /// Upright tolerance on |angular velocity|.
    omega_tol: f64,
    theta: f64,
    omega: f64,
    steps: usize,
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                action_dims: 1,
                semantics: Semantics::Torque,
                max_steps: 100,
                success_radius: 0.15,
            },
            gravity: 3.0,
            torque_gain: 5.0,
            damping: 0.1,
            dt: 0.05,
            omega_tol: 1.0,
            theta: 0.0,
            omega: 0.0,
            steps: 0,
        }
    }

    fn wrapped_theta(&self) -> f64 {
        let mut t = self.theta % (2.0 * PI);
        if t > PI {
            t -= 2.0 * PI;
        } else if t < -PI {
            t += 2.0 * PI;
        }
        t
    }

    fn upright(&self) -> bool {
        self.wrapped_theta().abs() < self.spec.success_radius
            && self.omega.abs() < self.omega_tol
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.omega / 2.0]
    }

    #[cfg(test)]
    fn energy(&self) -> f64 {
        0.5 * self.omega * self.omega + self.gravity * self.theta.cos()
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(3).wrapping_add(17));
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        self.theta = side * rng.gen_range(0.3..0.9);
        self.omega = rng.gen_range(-0.5..0.5);
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        assert_eq!(action.len(), 1);
        let u = action[0].clamp(-1.0, 1.0);
        let accel = self.gravity * self.theta.sin() + self.torque_gain * u
            - self.damping * self.omega;
        self.omega += self.dt * accel;
        self.theta += self.dt * self.omega;
        self.steps += 1;
        let reward = if self.upright() { 1.0 } else { 0.0 };
        let done = reward > 0.0 || self.steps >= self.spec.max_steps;
        StepOut { obs: self.observe(), reward, done }
    }

    fn expert_action(&self) -> Vec<f64> {
        let t = self.wrapped_theta();
        vec![(-2.0 * t - 0.8 * self.omega).clamp(-1.0, 1.0)]
    }
}
