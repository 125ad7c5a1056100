use ndarray::{Array1, Array2, Zip};

use super::{AeModel, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &AeModel) -> Self {
        let zeros: Vec<_> = model
            .layers
            .iter()
            .map(|l| {
                (
                    Array2::zeros(l.weights.raw_dim()),
                    Array1::zeros(l.bias.len()),
                )
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn update(&mut self, model: &mut AeModel, grads: &Gradients, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let step = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            Zip::from(&mut layer.weights)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(&step);
            Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(&step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr·g/(|g|+eps) ≈ lr·sign(g).
        let mut model = AeModel::new(16, 4, 1.0, 0).unwrap();
        let before = model.clone();
        let mut grads = super::super::backward(&model, &[0.5; 16], &[0.1; 16]).unwrap();
        grads.layers[0].0[(0, 0)] = 3.0;
        let mut st = AdamState::new(&model);
        let cfg = AdamConfig::default();
        st.update(&mut model, &grads, &cfg);
        assert_eq!(st.step, 1);
        let moved = before.layers[0].weights[(0, 0)] - model.layers[0].weights[(0, 0)];
        assert!((moved - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut model = AeModel::new(16, 4, 1.0, 0).unwrap();
        let before = model.clone();
        let grads = super::super::backward(&model, &[0.5; 16], &[0.1; 16]).unwrap();
        let mut st = AdamState::new(&model);
        st.update(
            &mut model,
            &grads,
            &AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
        );
        assert_eq!(model, before);
    }
}
