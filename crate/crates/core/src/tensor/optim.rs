use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// One bias-corrected Adam step for a single parameter buffer. `step` is the
/// 1-based step count of the owning parameter group. The L2 term
/// `weight_decay * param` is folded into the gradient before the moments.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    h: &AdamHyper,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - h.beta1.powi(step as i32);
    let bc2 = 1.0 - h.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i] + h.weight_decay * param[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

/// Adam over a fixed list of parameters. Moments are per parameter and shared
/// by every group; each group keeps its own step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &[Tensor], n_groups: usize) -> Self {
        Adam {
            hyper,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: vec![0; n_groups],
        }
    }

    pub fn steps(&self, group: usize) -> u64 {
        self.steps[group]
    }

    pub fn moments(&self, param: usize) -> (&[f64], &[f64]) {
        (&self.m[param], &self.v[param])
    }

    /// Advances `group`'s counter and updates every listed parameter from its
    /// gradient buffer, then zeroes those buffers.
    pub fn step(&mut self, params: &mut [Tensor], group: usize, members: &[usize]) {
        self.steps[group] += 1;
        let t = self.steps[group];
        for &i in members {
            let (data, grad) = params[i].data_and_grad_mut();
            let Some(grad) = grad else { continue };
            adam_update(data, grad, &mut self.m[i], &mut self.v[i], t, &self.hyper);
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(lr: f64, wd: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let h = hyper(2e-4, 0.0);
        for g in [3.7, -0.02, 1e-3] {
            let mut p = [1.0];
            adam_update(&mut p, &[g], &mut [0.0], &mut [0.0], 1, &h);
            let expected = h.lr * g / (g.abs() + h.eps);
            assert!((1.0 - p[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p[0]) - h.lr * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let h = hyper(0.1, 0.0);
        let mut p = [0.3, -1.2];
        adam_update(&mut p, &[0.0, 0.0], &mut [0.0; 2], &mut [0.0; 2], 1, &h);
        assert_eq!(p, [0.3, -1.2]);
    }

    /// Textbook Adam written independently of `adam_update`.
    fn reference_trace(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        let mut out = vec![];
        for t in 1..=steps {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
            out.push(x);
        }
        out
    }

    #[test]
    fn three_step_quadratic_matches_reference() {
        let h = hyper(0.05, 0.0);
        let expected = reference_trace(0.5, 0.05, 3);
        let mut params = vec![Tensor::scalar(0.5).with_grad()];
        let mut adam = Adam::new(h, &params, 1);
        for want in expected {
            let x = params[0].data()[0];
            params[0].grad_mut().unwrap()[0] = 2.0 * (x - 3.0);
            adam.step(&mut params, 0, &[0]);
            assert!((params[0].data()[0] - want).abs() <= 1e-12);
        }
        assert_eq!(adam.steps(0), 3);
    }

    #[test]
    fn groups_count_steps_independently() {
        let mut params = vec![Tensor::scalar(0.0).with_grad(), Tensor::scalar(0.0).with_grad()];
        let mut adam = Adam::new(hyper(1e-3, 0.0), &params, 2);
        adam.step(&mut params, 0, &[0, 1]);
        adam.step(&mut params, 0, &[0]);
        adam.step(&mut params, 1, &[1]);
        assert_eq!((adam.steps(0), adam.steps(1)), (2, 1));
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = [2.0];
        adam_update(&mut p, &[0.0], &mut [0.0], &mut [0.0], 1, &hyper(1e-2, 0.1));
        assert!(p[0] < 2.0);
    }
}
