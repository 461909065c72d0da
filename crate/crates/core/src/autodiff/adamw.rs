use super::{ParamTensor, Scalar};

/// AdamW hyperparameters. Weight decay is decoupled: applied directly to the
/// parameters before the moment update, never entering the moments.
#[derive(Clone, Copy, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One optimizer step over every tensor, consuming the current grads
/// (grads are not zeroed here; callers do that before the next backward).
pub fn adamw_step<F: Scalar>(tensors: &mut [&mut ParamTensor<F>], opt: &AdamW) {
    let lr = F::from_f64(opt.lr);
    let decay = F::from_f64(1.0 - opt.lr * opt.weight_decay);
    let b1 = F::from_f64(opt.beta1);
    let b2 = F::from_f64(opt.beta2);
    let eps = F::from_f64(opt.eps);
    for t in tensors.iter_mut() {
        t.steps += 1;
        let bc1 = F::one() - F::from_f64(opt.beta1.powi(t.steps as i32));
        let bc2 = F::one() - F::from_f64(opt.beta2.powi(t.steps as i32));
        for idx in 0..t.values.len() {
            let g = t.grad[idx];
            t.values[idx] = t.values[idx] * decay;
            t.adam_m[idx] = b1 * t.adam_m[idx] + (F::one() - b1) * g;
            t.adam_v[idx] = b2 * t.adam_v[idx] + (F::one() - b2) * g * g;
            let m_hat = t.adam_m[idx] / bc1;
            let v_hat = t.adam_v[idx] / bc2;
            t.values[idx] = t.values[idx] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(v: f64, g: f64) -> ParamTensor<f64> {
        let mut t = ParamTensor::zeros("t", 1, 1);
        t.values[0] = v;
        t.grad[0] = g;
        t
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut t = single(1.7, 0.0);
        adamw_step(&mut [&mut t], &AdamW::new(0.1, 0.0));
        assert_relative_eq!(t.values[0], 1.7, epsilon = 1e-15);
    }

    #[test]
    fn decay_only_step() {
        let mut t = single(1.0, 0.0);
        adamw_step(&mut [&mut t], &AdamW::new(0.1, 0.1));
        assert_relative_eq!(t.values[0], 0.99, epsilon = 1e-15);
    }

    #[test]
    fn unit_gradient_first_step() {
        let mut t = single(0.0, 1.0);
        adamw_step(&mut [&mut t], &AdamW::new(0.1, 0.0));
        // bias-corrected m_hat = v_hat = 1, so the step is -lr/(1 + eps)
        assert_relative_eq!(t.values[0], -0.1, epsilon = 1e-6);
        assert_eq!(t.steps, 1);
    }
}
