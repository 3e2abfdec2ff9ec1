//! Adam with bias correction and a staircase step-size decay
//! r(t) = r0 * D^floor(t / decay_step).

use ndarray::{Array1, Array2};

use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS_STAB: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    /// Completed steps (the bias-correction exponent).
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> AdamState {
        AdamState {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
        }
    }

    /// Effective step size at global step `step` (0-based).
    pub fn rate(r0: f64, decay_rate: f64, decay_step: u64, step: u64) -> f64 {
        r0 * decay_rate.powi((step / decay_step) as i32)
    }

    /// One update in place; `rate` is the decayed step size for this step.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, rate: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for k in 0..net.weights.len() {
            let g = &grads.weights[k];
            self.m_w[k].zip_mut_with(g, |m, &gv| *m = BETA1 * *m + (1.0 - BETA1) * gv);
            self.v_w[k].zip_mut_with(g, |v, &gv| *v = BETA2 * *v + (1.0 - BETA2) * gv * gv);
            let (m, v) = (&self.m_w[k], &self.v_w[k]);
            ndarray::Zip::from(&mut net.weights[k])
                .and(m)
                .and(v)
                .for_each(|w, &m, &v| {
                    *w -= rate * (m / c1) / ((v / c2).sqrt() + EPS_STAB);
                });

            let g = &grads.biases[k];
            self.m_b[k].zip_mut_with(g, |m, &gv| *m = BETA1 * *m + (1.0 - BETA1) * gv);
            self.v_b[k].zip_mut_with(g, |v, &gv| *v = BETA2 * *v + (1.0 - BETA2) * gv * gv);
            let (m, v) = (&self.m_b[k], &self.v_b[k]);
            ndarray::Zip::from(&mut net.biases[k])
                .and(m)
                .and(v)
                .for_each(|b, &m, &v| {
                    *b -= rate * (m / c1) / ((v / c2).sqrt() + EPS_STAB);
                });
        }
        let finite = self
            .m_w
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.v_w.iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Diverged("non-finite optimizer moments".into()));
        }
        Ok(())
    }
}

/// Sign-preserving clamp of a prediction to [-M, M].
pub fn truncate(value: f64, m_clip: f64) -> f64 {
    debug_assert!(m_clip > 0.0);
    value.signum() * value.abs().min(m_clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn truncate_cases() {
        assert_eq!(truncate(0.5, 1.0), 0.5);
        assert_eq!(truncate(-7.0, 1.0), -1.0);
        assert_eq!(truncate(1.0, 1.0), 1.0);
        assert_eq!(truncate(-0.0, 1.0), -0.0);
    }

    #[test]
    fn decay_schedule() {
        // Step 1000 with decay 0.95 every 1000 steps uses 0.95 * r0.
        assert_eq!(AdamState::rate(0.001, 0.95, 1000, 999), 0.001);
        assert!((AdamState::rate(0.001, 0.95, 1000, 1000) - 0.00095).abs() < 1e-18);
        assert!((AdamState::rate(0.001, 0.95, 1000, 2500) - 0.001 * 0.95 * 0.95).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = Mlp::init(&[1, 2, 1], 1).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net);
        let zeros = Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        };
        for _ in 0..10 {
            adam.step(&mut net, &zeros, 0.1).unwrap();
        }
        for (a, b) in net.weights.iter().zip(&before.weights) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_step_is_signed_rate() {
        // With constant gradient g, the first update is
        // rate * g / (|g| + eps) ~ rate * sign(g).
        let mut net = Mlp::init(&[1, 1], 2).unwrap();
        let w0 = net.weights[0][[0, 0]];
        let mut adam = AdamState::new(&net);
        let g = Gradients {
            weights: vec![array![[3.0]]],
            biases: vec![array![0.0]],
        };
        adam.step(&mut net, &g, 0.01).unwrap();
        let moved = w0 - net.weights[0][[0, 0]];
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }
}
