//! Dense autoencoder mapping a discretized arrival flux to the dead-time
//! distorted registration PDF.
//!
//! The encoder halves the width at every layer down to a small latent code,
//! the decoder doubles it back to the input width. Hidden layers use a leaky
//! rectifier, the output layer is linear.

mod adam;
mod io;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, SimError};
use crate::grid::{normalize, DiscretizedFunction};
use crate::rng::RngHandle;

pub use adam::{AdamConfig, AdamState};
pub use io::{load_model, load_model_for_bins, save_model, MODEL_MAGIC};
pub use train::{evaluate, train, EpochLoss, TrainConfig, TrainReport};

pub const DEFAULT_LATENT: usize = 16;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::LeakyRelu => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Identity),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
        }
    }

    fn derivative(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => Array2::ones(z.raw_dim()),
            Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { 1.0 } else { LEAKY_SLOPE }),
        }
    }
}

/// One affine layer `y = W x + b`, `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub layers: Vec<Dense>,
    /// Multiplier applied to raw flux values before the first layer.
    pub input_scale: f64,
}

/// Layer widths `[k, k/2, …, latent, …, k/2, k]`.
pub fn layer_dims(n_bins: usize, latent: usize) -> Result<Vec<usize>> {
    if latent == 0
        || n_bins < latent
        || !n_bins.is_multiple_of(latent)
        || !(n_bins / latent).is_power_of_two()
    {
        return Err(SimError::param(format!(
            "input width {n_bins} must be a power-of-two multiple of latent width {latent}"
        )));
    }
    let mut down = vec![n_bins];
    while *down.last().unwrap() > latent {
        down.push(down.last().unwrap() / 2);
    }
    let mut dims = down.clone();
    dims.extend(down.iter().rev().skip(1));
    if dims.len() < 2 {
        // identity-width model: a single affine map
        dims.push(n_bins);
    }
    Ok(dims)
}

pub(crate) fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(SimError::format("model needs at least one layer"));
    }
    let latent = *dims.iter().min().unwrap();
    let expected = layer_dims(dims[0], latent)?;
    if expected != dims {
        return Err(SimError::format(format!(
            "layer widths {dims:?} do not follow the halving/doubling layout {expected:?}"
        )));
    }
    Ok(())
}

/// Parameter gradients, shaped like the model layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|v| v * c);
            b.mapv_inplace(|v| v * c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

impl AeModel {
    /// Fresh model with uniform fan-in initialization and zero biases.
    pub fn new(n_bins: usize, latent: usize, input_scale: f64, seed: u64) -> Result<Self> {
        let dims = layer_dims(n_bins, latent)?;
        let mut rng = RngHandle::new(seed, 0x5eed).rng();
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                let activation = if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::LeakyRelu
                };
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self {
            layers,
            input_scale,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.ncols()];
        d.extend(self.layers.iter().map(|l| l.weights.nrows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(SimError::Shape {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Raw network output for one (already scaled) input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut a = Array1::from(input.to_vec());
        for layer in &self.layers {
            let mut z = layer.weights.dot(&a);
            z += &layer.bias;
            if layer.activation == Activation::LeakyRelu {
                z.mapv_inplace(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
            }
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Row-per-sample batch forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let z = a.dot(&layer.weights.t()) + &layer.bias;
            a = layer.activation.apply(&z);
        }
        Ok(a)
    }

    /// Batch loss and gradients of `loss_weight · mean-over-batch MSE`.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        loss_weight: f64,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x.ncols())?;
        if y.dim() != (x.nrows(), self.output_dim()) {
            return Err(SimError::Shape {
                expected: x.nrows() * self.output_dim(),
                actual: y.len(),
            });
        }
        let mut acts = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = acts.last().unwrap().dot(&layer.weights.t()) + &layer.bias;
            acts.push(layer.activation.apply(&z));
            pre.push(z);
        }
        let out = acts.last().unwrap();
        let diff = out - &y;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = diff * (2.0 * loss_weight / n);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            delta = delta * layer.activation.derivative(&pre[l]);
            let gw = delta.t().dot(&acts[l]);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        Ok((loss * loss_weight, Gradients { layers: grads }))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Mean squared error `(1/K)·Σ(pred − label)²`.
pub fn loss_mse(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(SimError::Shape {
            expected: label.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred
        .iter()
        .zip(label)
        .map(|(p, l)| (p - l).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Gradient of [`loss_mse`] for a single sample.
pub fn backward(model: &AeModel, input: &[f64], label: &[f64]) -> Result<Gradients> {
    model.check_input(input.len())?;
    if label.len() != model.output_dim() {
        return Err(SimError::Shape {
            expected: model.output_dim(),
            actual: label.len(),
        });
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let y = ArrayView2::from_shape((1, label.len()), label).expect("row vector");
    Ok(model.backward_batch(x, y, 1.0)?.1)
}

/// Registration PDF on the flux grid: scaled forward pass, negative bins
/// clamped to zero, renormalized.
pub fn predict_pdf(model: &AeModel, flux: &DiscretizedFunction) -> Result<DiscretizedFunction> {
    let input: Vec<f64> = flux
        .values()
        .iter()
        .map(|v| v * model.input_scale)
        .collect();
    let raw = model.forward(&input)?;
    pdf_from_raw(flux, raw)
}

pub(crate) fn pdf_from_raw(
    flux: &DiscretizedFunction,
    raw: Vec<f64>,
) -> Result<DiscretizedFunction> {
    let clamped: Vec<f64> = raw
        .into_iter()
        .map(|v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
        .collect();
    if clamped.iter().all(|&v| v == 0.0) {
        return Err(SimError::Degenerate(
            "network output is non-positive everywhere".into(),
        ));
    }
    normalize(&DiscretizedFunction::new(*flux.grid(), clamped)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    #[test]
    fn dims_layout() {
        assert_eq!(
            layer_dims(1024, 16).unwrap(),
            vec![1024, 512, 256, 128, 64, 32, 16, 32, 64, 128, 256, 512, 1024]
        );
        assert_eq!(layer_dims(16, 4).unwrap(), vec![16, 8, 4, 8, 16]);
        assert!(layer_dims(24, 16).is_err());
        assert!(layer_dims(100, 16).is_err());
        assert!(check_dims(&[16, 8, 4, 8, 16]).is_ok());
        assert!(check_dims(&[16, 8, 5, 8, 16]).is_err());
    }

    #[test]
    fn full_size_parameter_count() {
        let m = AeModel::new(1024, 16, 1.0, 0).unwrap();
        assert_eq!(m.layers.len(), 12);
        // 2·(1024·512 + 512·256 + 256·128 + 128·64 + 64·32 + 32·16) weights plus biases
        let weights = 2 * (1024 * 512 + 512 * 256 + 256 * 128 + 128 * 64 + 64 * 32 + 32 * 16);
        let biases = 512 + 256 + 128 + 64 + 32 + 16 + 32 + 64 + 128 + 256 + 512 + 1024;
        assert_eq!(m.n_params(), weights + biases);
    }

    #[test]
    fn zero_final_layer_outputs_bias() {
        let mut m = AeModel::new(16, 4, 1.0, 3).unwrap();
        let last = m.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias = Array1::from_iter((0..16).map(|i| i as f64 * 0.5 - 2.0));
        let out = m.forward(&[0.7; 16]).unwrap();
        assert_eq!(out, last_bias(&m));
    }

    fn last_bias(m: &AeModel) -> Vec<f64> {
        m.layers.last().unwrap().bias.to_vec()
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let a = AeModel::new(64, 16, 1.0, 9).unwrap();
        let b = AeModel::new(64, 16, 1.0, 9).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let ya = a.forward(&x).unwrap();
        assert_eq!(ya, b.forward(&x).unwrap());
        assert!(ya.iter().all(|v| v.is_finite()));
        assert!(matches!(a.forward(&x[..10]), Err(SimError::Shape { .. })));
    }

    #[test]
    fn mse_values() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(loss_mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_matches_quadratic_form() {
        // (p−l)ᵀ I (p−l) / K computed independently as a dot product
        let p: Vec<f64> = (0..37).map(|i| (i as f64 * 1.3).cos()).collect();
        let l: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        let d = ndarray::Array1::from_iter(p.iter().zip(&l).map(|(a, b)| a - b));
        let q = d.dot(&d) / 37.0;
        assert!((loss_mse(&p, &l).unwrap() - q).abs() < 1e-14);
    }

    #[test]
    fn zero_everything_zero_gradient() {
        let mut m = AeModel::new(16, 4, 1.0, 1).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let g = backward(&m, &[0.3; 16], &[0.0; 16]).unwrap();
        assert!(g
            .layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let m = AeModel::new(16, 4, 1.0, 2).unwrap();
        let x = Array2::from_shape_fn((3, 16), |(i, j)| ((i * 16 + j) as f64 * 0.11).sin().abs());
        let y = Array2::from_shape_fn((3, 16), |(i, j)| ((i + j) as f64 * 0.05).cos());
        let (l1, g1) = m.backward_batch(x.view(), y.view(), 1.0).unwrap();
        let (l2, g2) = m.backward_batch(x.view(), y.view(), 2.0).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-14);
        let mut doubled = g1.clone();
        doubled.scale(2.0);
        for ((wa, ba), (wb, bb)) in doubled.layers.iter().zip(&g2.layers) {
            assert!(wa
                .iter()
                .zip(wb.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
            assert!(ba
                .iter()
                .zip(bb.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
        }
    }

    #[test]
    fn predict_pdf_clamps_and_renormalizes() {
        let grid = TimeGrid::new(4, 4.0).unwrap();
        let flux = DiscretizedFunction::constant(grid, 1.0).unwrap();
        let pdf = pdf_from_raw(&flux, vec![0.25; 4]).unwrap();
        assert_eq!(pdf.values(), &[0.25; 4]);
        let pdf = pdf_from_raw(&flux, vec![0.5, -1.0, 0.25, 0.25]).unwrap();
        assert_eq!(pdf.values(), &[0.5, 0.0, 0.25, 0.25]);
        assert!(pdf.is_pdf());
        let pdf = pdf_from_raw(&flux, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pdf.values()[1], 0.0);
        assert!(pdf.is_pdf());
        assert!(matches!(
            pdf_from_raw(&flux, vec![-1.0, 0.0, -2.0, f64::NAN]),
            Err(SimError::Degenerate(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = AeModel::new(16, 4, 1.0, 11).unwrap();
        let x: Vec<f64> = (0..16)
            .map(|i| 0.1 + (i as f64 * 0.9).sin().abs())
            .collect();
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 0.4).cos()).collect();
        let g = backward(&model, &x, &y).unwrap();
        let h = 1e-5;
        let loss = |m: &AeModel| loss_mse(&m.forward(&x).unwrap(), &y).unwrap();
        for (l, (gw, gb)) in g.layers.iter().enumerate() {
            for idx in [(0usize, 0usize), (gw.nrows() - 1, gw.ncols() - 1)] {
                let mut p = model.clone();
                p.layers[l].weights[idx] += h;
                let mut n = model.clone();
                n.layers[l].weights[idx] -= h;
                let fd = (loss(&p) - loss(&n)) / (2.0 * h);
                assert!(
                    (gw[idx] - fd).abs() / (gw[idx].abs() + 1e-8) < 1e-4,
                    "layer {l} w{idx:?}"
                );
            }
            let mut p = model.clone();
            p.layers[l].bias[0] += h;
            let mut n = model.clone();
            n.layers[l].bias[0] -= h;
            let fd = (loss(&p) - loss(&n)) / (2.0 * h);
            assert!(
                (gb[0] - fd).abs() / (gb[0].abs() + 1e-8) < 1e-4,
                "layer {l} b0"
            );
        }
    }
}
