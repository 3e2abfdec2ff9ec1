//! Trainable fully connected ReLU network with exact reverse-mode gradients
//! of the mean-squared loss. Separate from the constructive `net` module:
//! this one is dense, mutable, and batch-oriented.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense MLP: hidden layers apply ReLU, the output layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    /// Layer widths including input and output, e.g. [10, 60, 60, 1].
    pub shape: Vec<usize>,
    /// weights[k] has shape (shape[k+1], shape[k]).
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Mlp {
    /// Fan-balanced uniform initialization U(-a, a) with
    /// a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    /// Deterministic for a given seed.
    pub fn init(shape: &[usize], seed: u64) -> Result<Mlp> {
        if shape.len() < 2 || shape.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParam(
                "shape needs >= 2 positive layer widths".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(shape.len() - 1);
        let mut biases = Vec::with_capacity(shape.len() - 1);
        for k in 0..shape.len() - 1 {
            let (fan_in, fan_out) = (shape[k], shape[k + 1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-a..a));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            shape: shape.to_vec(),
            weights,
            biases,
        })
    }

    pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.shape.len() - 2
    }

    /// Total parameter slots: sum over layers of d_k * d_{k-1} + d_k.
    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Batch forward pass; rows of x are samples. Returns pre-activations
    /// per layer (the output layer's entry is the prediction).
    fn forward_all(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = x.clone();
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.dot(&w.t());
            z += &b.view().insert_axis(Axis(0));
            if k + 1 < self.weights.len() {
                h = z.mapv(|v| v.max(0.0));
            }
            pre.push(z);
        }
        pre
    }

    /// Predictions for a batch (single-output nets give one column).
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_all(x).pop().expect("at least one layer")
    }

    pub fn predict_scalar(&self, x: &Array2<f64>) -> Array1<f64> {
        let out = self.predict(x);
        out.index_axis(Axis(1), 0).to_owned()
    }

    /// Mean squared error over a batch.
    pub fn mse(&self, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let pred = self.predict_scalar(x);
        let diff = &pred - y;
        diff.mapv(|v| v * v).mean().unwrap_or(f64::NAN)
    }

    /// Exact reverse-mode gradient of (1/m) sum (f(x_i) - y_i)^2.
    /// The ReLU subgradient at exactly zero is taken as zero.
    pub fn grad_mse(&self, x: &Array2<f64>, y: &Array1<f64>) -> Result<Gradients> {
        let m = x.nrows();
        if m == 0 {
            return Err(Error::InvalidParam("empty batch".into()));
        }
        let pre = self.forward_all(x);
        if pre.iter().any(|z| z.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged("non-finite activation".into()));
        }
        // Activations entering each layer.
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        acts.push(x.clone());
        for z in &pre[..pre.len() - 1] {
            acts.push(z.mapv(|v| v.max(0.0)));
        }
        let pred = pre.last().expect("nonempty");
        let ycol = y.view().insert_axis(Axis(1));
        let mut delta = (pred - &ycol) * (2.0 / m as f64);

        let mut gw: Vec<Array2<f64>> = Vec::with_capacity(self.weights.len());
        let mut gb: Vec<Array1<f64>> = Vec::with_capacity(self.weights.len());
        for k in (0..self.weights.len()).rev() {
            gw.push(delta.t().dot(&acts[k]));
            gb.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let back = delta.dot(&self.weights[k]);
                delta = back * pre[k - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
        }
        gw.reverse();
        gb.reverse();
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }
}
